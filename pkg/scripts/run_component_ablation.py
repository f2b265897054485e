"""Component and hyperparameter ablations on the synthetic benchmark.

Axes:
    components  six on/off combinations of stage 1 (S), the consistency
                loss (R), EMA tracking (E), and final fine-tuning (F)
    beta        EMA smoothing grid {0.3, 0.5, 0.7, 0.9, 0.99, 0.999}
    alpha       annealing modes {adaptive, constant, none}
    strategy    sampling strategies {coarse2fine, coarse, random}

Usage:
    python scripts/run_component_ablation.py --axis components [--jobs 2]
"""

import argparse

from uika.cli import ablation_cells
from uika.evaluation import ablate, results_to_text
from uika.synth import SynthConfig, generate_benchmark

from run_benchmark import benchmark_config


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--axis", default="components",
                        choices=["components", "beta", "alpha", "strategy"])
    parser.add_argument("--values", help="comma-separated grid values")
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--sd-size", type=int, default=5000)
    parser.add_argument("--baseline", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    bench = generate_benchmark(SynthConfig(sd_size=args.sd_size))
    cells = ablation_cells(args.axis, args.values)
    results = ablate(cells, bench.sd, bench.td_train, bench.td_test, benchmark_config(),
                     bench.lexicon, bench.table,
                     seeds=tuple(int(s) for s in args.seeds.split(",")),
                     baseline=args.baseline, jobs=args.jobs)
    print(results_to_text(results), end="")


if __name__ == "__main__":
    main()
