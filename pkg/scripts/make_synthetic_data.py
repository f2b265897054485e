"""Generate the synthetic domain-shift benchmark and a ready-to-run config.

Usage:
    python scripts/make_synthetic_data.py --out data/synth [--sd-size 5000] [--seed 2024]
"""

import argparse
from pathlib import Path

from uika.synth import SynthConfig, generate_benchmark, write_benchmark


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--sd-size", type=int, default=5000)
    parser.add_argument("--train-size", type=int, default=600)
    parser.add_argument("--test-size", type=int, default=200)
    parser.add_argument("--embed-dim", type=int, default=24)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    cfg = SynthConfig(sd_size=args.sd_size, td_train_size=args.train_size,
                      td_test_size=args.test_size, embed_dim=args.embed_dim, seed=args.seed)
    bench = generate_benchmark(cfg)
    paths = write_benchmark(bench, args.out)

    out = Path(args.out)
    config_lines = [
        f"sd_path = {paths['sd']}",
        f"td_train_path = {paths['td_train']}",
        f"td_test_path = {paths['td_test']}",
        f"embeddings_path = {paths['embeddings']}",
        f"nouns_path = {paths['nouns']}",
        f"stopwords_path = {paths['stopwords']}",
        "out_dir = runs",
        "seeds = 0,1,2,3,4",
        "sample.n = 50",
        "sample.k = 30",
        "sample.strategy = coarse2fine",
        f"model.embed_dim = {args.embed_dim}",
        "model.kernel_widths = 3,4",
        "model.filters = 12",
        "model.dropout = 0.2",
        "stage1.epochs = 10",
        "stage1.batch_size = 256",
        "stage2.epochs = 10",
        "stage2.batch_size = 64",
        "stage2.beta = 0.99",
        "stage2.alpha_mode = adaptive",
        "stage3.epochs = 10",
        "stage3.batch_size = 64",
    ]
    config_path = out / "run.conf"
    config_path.write_text("\n".join(config_lines) + "\n", encoding="utf-8")
    print(f"wrote {len(bench.sd)} source records, {len(bench.td_train)}/{len(bench.td_test)} "
          f"target train/test instances to {out}")
    print(f"run config: {config_path}")


if __name__ == "__main__":
    main()
