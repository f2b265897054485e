"""Command-line entry point.

Subcommands: sample, pseudo, pretrain, guide, finetune, eval, pipeline,
ablate.  Every command reads a flat key=value config file plus ``--set``
overrides, writes its artifacts under a timestamped run directory with
the config echoed, and exits nonzero on validation or I/O errors.
Logging verbosity comes from the UIKA_LOG env var (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import evaluation as E
from . import model as M
from .config import ConfigError, RunConfig, apply_keys, config_to_text, load_config, require_paths
from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocab,
    load_aspect_dataset,
    load_lexicon,
    load_sentence_corpus,
    pseudo_label_corpus,
    save_aspect_dataset,
    save_sentence_corpus,
    tokenize,
)
from .retrieval import RetrievalError, build_index, build_sampled_dataset, load_embeddings
from .training import (
    TrainingError,
    build_embedding_init,
    derive_seeds,
    run_pipeline,
    stage1_pretrain,
    stage2_guidance,
    stage3_finetune,
)
from .seeds import stream_rng

log = logging.getLogger("uika")

_ERRORS = (ConfigError, CorpusError, RetrievalError, TrainingError, M.ModelError,
           E.EvalError, ckpt.CheckpointError, OSError)

BETA_GRID = (0.3, 0.5, 0.7, 0.9, 0.99, 0.999)
COMPONENT_MODES = (
    ("F", {"sampling_pretrain": False, "consistency": False, "ema": False, "finetune": True}),
    ("S.F", {"sampling_pretrain": True, "consistency": False, "ema": False, "finetune": True}),
    ("S.R.F", {"sampling_pretrain": True, "consistency": True, "ema": False, "finetune": True}),
    ("S.E.F", {"sampling_pretrain": True, "consistency": False, "ema": True, "finetune": True}),
    ("S.R.E", {"sampling_pretrain": True, "consistency": True, "ema": True, "finetune": False}),
    ("S.R.E.F", {"sampling_pretrain": True, "consistency": True, "ema": True, "finetune": True}),
)


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    raw = os.environ.get("UIKA_LOG", "info").lower()
    logging.basicConfig(level=levels.get(raw, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _atomic_save_checkpoint(params, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    ckpt.save_checkpoint(params, tmp)
    os.replace(tmp, path)


def _curves_csv(report: dict) -> str:
    lines = ["stage,epoch,loss,alpha"]
    for row in report.get("epochs", []):
        alpha = "" if row.get("alpha") is None else repr(row["alpha"])
        lines.append(f"{row['stage']},{row['epoch']},{row['loss']!r},{alpha}")
    return "\n".join(lines) + "\n"


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config:
        config = load_config(args.config, base=config)
    # overrides are batched so cross-field invariants see the final state
    items: list[tuple[str, str]] = []
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        items.append((key.strip(), value.strip()))
    direct = [("n", "sample.n"), ("k", "sample.k"), ("strategy", "sample.strategy"),
              ("k1", "bm25_k1"), ("b", "bm25_b"), ("seed", "seed")]
    for flag, key in direct:
        value = getattr(args, flag, None)
        if value is not None:
            items.append((key, str(value)))
    config = apply_keys(config, items)
    if getattr(args, "out_dir", None):
        config = replace(config, out_dir=args.out_dir)
    return config


def _make_run_dir(config: RunConfig, run_name: str | None) -> Path:
    name = run_name or datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = Path(config.out_dir) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(run_dir / "config.txt", config_to_text(config))
    return run_dir


def _load_table(config: RunConfig):
    if config.embeddings_path is None:
        return None
    return load_embeddings(config.embeddings_path)


def _load_lexicon(config: RunConfig):
    return load_lexicon(config.nouns_path, config.stopwords_path,
                        noun_suffixes=config.noun_suffixes)


def _build_vocab_like_pipeline(config: RunConfig):
    sd = load_sentence_corpus(config.sd_path)
    td_train = load_aspect_dataset(config.td_train_path)
    vocab = build_vocab(
        [tokenize(r.text) for r in sd] + [list(inst.tokens) for inst in td_train],
        min_count=config.pipeline.vocab_min_count,
    )
    return sd, td_train, vocab


# -- commands ----------------------------------------------------------------


def cmd_sample(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "sd_path", "td_train_path")
    pipeline = derive_seeds(config.pipeline)
    if pipeline.sample.strategy == "coarse2fine" and config.embeddings_path is None:
        raise ConfigError("strategy 'coarse2fine' requires embeddings_path")
    sd = load_sentence_corpus(config.sd_path)
    td_train = load_aspect_dataset(config.td_train_path)
    table = _load_table(config) if pipeline.sample.strategy == "coarse2fine" else None
    index = None
    if pipeline.sample.strategy != "random":
        index = build_index(sd, k1=pipeline.bm25_k1, b=pipeline.bm25_b)

    sampled = build_sampled_dataset(td_train, sd, pipeline.sample, index, table)
    run_dir = _make_run_dir(config, args.run_name)
    out_path = run_dir / "sd_r.jsonl"
    tmp = out_path.with_name(out_path.name + ".tmp")
    save_sentence_corpus(sampled, tmp)
    os.replace(tmp, out_path)
    print(f"sampled {len(sampled)} of {len(sd)} source records "
          f"({pipeline.sample.strategy}, N={pipeline.sample.n}, K={pipeline.sample.k}) -> {out_path}")
    return 0


def cmd_pseudo(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "nouns_path", "stopwords_path")
    lexicon = _load_lexicon(config)
    records = load_sentence_corpus(args.input)
    instances, dropped = pseudo_label_corpus(records, lexicon)
    run_dir = _make_run_dir(config, args.run_name)
    out_path = run_dir / "sd_r_prime.jsonl"
    tmp = out_path.with_name(out_path.name + ".tmp")
    save_aspect_dataset(instances, tmp)
    os.replace(tmp, out_path)
    if dropped:
        log.warning("dropped %d records without a noun candidate", dropped)
    print(f"converted {len(instances)} records ({dropped} dropped) -> {out_path}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "sd_path", "td_train_path")
    pipeline = derive_seeds(config.pipeline)
    _, _, vocab = _build_vocab_like_pipeline(config)
    data = load_aspect_dataset(args.data)
    table = _load_table(config)
    embed_init = build_embedding_init(vocab, table, pipeline.model.embed_dim,
                                      stream_rng(pipeline.seed, "embed-init"))
    stage1_model = replace(pipeline.model, num_classes=2)
    params, history = stage1_pretrain(data, stage1_model, pipeline.stage1, vocab,
                                      pretrained_embedding=embed_init)

    run_dir = _make_run_dir(config, args.run_name)
    _atomic_save_checkpoint(params, run_dir / "m1.ckpt")
    vocab.save(run_dir / "vocab.json")
    report = {"epochs": history}
    _atomic_write_json(run_dir / "report.json", report)
    _atomic_write_text(run_dir / "curves.csv", _curves_csv(report))
    print(f"pretrained on {len(data)} instances for {pipeline.stage1.epochs} epochs -> {run_dir / 'm1.ckpt'}")
    return 0


def cmd_guide(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "td_train_path")
    pipeline = derive_seeds(config.pipeline)
    vocab = Vocabulary.load(args.vocab)
    td_train = load_aspect_dataset(config.td_train_path)
    base = ckpt.load_checkpoint(args.m1)
    comp = pipeline.components
    params, history = stage2_guidance(
        base, td_train, pipeline.model, pipeline.stage2, vocab,
        use_consistency=comp.consistency, use_ema=comp.ema,
    )
    run_dir = _make_run_dir(config, args.run_name)
    _atomic_save_checkpoint(params, run_dir / "m2.ckpt")
    report = {"epochs": history}
    _atomic_write_json(run_dir / "report.json", report)
    _atomic_write_text(run_dir / "curves.csv", _curves_csv(report))
    print(f"guidance stage done ({pipeline.stage2.epochs} epochs) -> {run_dir / 'm2.ckpt'}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "td_train_path")
    pipeline = derive_seeds(config.pipeline)
    vocab = Vocabulary.load(args.vocab)
    td_train = load_aspect_dataset(config.td_train_path)
    expected = M.param_shapes(pipeline.model, len(vocab))
    base = ckpt.load_checkpoint(args.m2, expected_shapes=expected)
    params, history = stage3_finetune(base, td_train, pipeline.model, pipeline.stage3, vocab)
    run_dir = _make_run_dir(config, args.run_name)
    _atomic_save_checkpoint(params, run_dir / "m3.ckpt")
    report = {"epochs": history}
    _atomic_write_json(run_dir / "report.json", report)
    _atomic_write_text(run_dir / "curves.csv", _curves_csv(report))
    print(f"fine-tuned for {pipeline.stage3.epochs} epochs -> {run_dir / 'm3.ckpt'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    pipeline = config.pipeline
    vocab = Vocabulary.load(args.vocab)
    expected = M.param_shapes(pipeline.model, len(vocab))
    params = ckpt.load_checkpoint(args.checkpoint, expected_shapes=expected)
    dataset = load_aspect_dataset(args.data)
    metrics = E.evaluate(params, dataset, pipeline.model, vocab)
    payload = {
        "accuracy": metrics.accuracy,
        "macro_f1": metrics.macro_f1,
        "precision": list(metrics.precision),
        "recall": list(metrics.recall),
        "f1": list(metrics.f1),
        "confusion": [list(row) for row in metrics.confusion],
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        _atomic_write_json(Path(args.out), payload)
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "sd_path", "td_train_path", "nouns_path", "stopwords_path")
    comp = config.pipeline.components
    if (comp.sampling_pretrain and config.pipeline.sample.strategy == "coarse2fine"
            and config.embeddings_path is None):
        raise ConfigError("strategy 'coarse2fine' requires embeddings_path")
    sd = load_sentence_corpus(config.sd_path)
    td_train = load_aspect_dataset(config.td_train_path)
    lexicon = _load_lexicon(config)
    table = _load_table(config)
    run_dir = _make_run_dir(config, args.run_name)

    def on_stage(name: str, params, report: dict) -> None:
        _atomic_save_checkpoint(params, run_dir / f"{name}.ckpt")
        report = dict(report)
        report["checkpoints"] = {n: str(run_dir / f"{n}.ckpt") for n in ("m1", "m2", "m3")
                                 if (run_dir / f"{n}.ckpt").exists() or n == name}
        _atomic_write_json(run_dir / "report.json", report)
        _atomic_write_text(run_dir / "curves.csv", _curves_csv(report))
        log.info("stage %s complete", name)

    result = run_pipeline(sd, td_train, config.pipeline, lexicon, table, stage_callback=on_stage)
    result.vocab.save(run_dir / "vocab.json")
    if result.sampled is not None:
        save_sentence_corpus(result.sampled, run_dir / "sd_r.jsonl")
    if result.pseudo is not None:
        save_aspect_dataset(result.pseudo, run_dir / "sd_r_prime.jsonl")

    if config.td_test_path:
        td_test = load_aspect_dataset(config.td_test_path)
        metrics = E.evaluate(result.params, td_test, config.pipeline.model, result.vocab)
        result.report["metrics"] = {"accuracy": metrics.accuracy, "macro_f1": metrics.macro_f1}
        _atomic_write_json(run_dir / "metrics.json", result.report["metrics"])
        print(f"test accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f}")
    result.report["checkpoints"] = {n: str(run_dir / f"{n}.ckpt") for n in ("m1", "m2", "m3")
                                    if (run_dir / f"{n}.ckpt").exists()}
    _atomic_write_json(run_dir / "report.json", result.report)
    _atomic_write_text(run_dir / "curves.csv", _curves_csv(result.report))
    print(f"pipeline artifacts in {run_dir}")
    return 0


def ablation_cells(axis: str, values: str | None) -> list[E.AblationCell]:
    if axis == "beta":
        grid = [float(v) for v in values.split(",")] if values else list(BETA_GRID)
        return [E.AblationCell(name=f"beta={v}", overrides={"stage2.beta": v}) for v in grid]
    if axis == "alpha":
        modes = values.split(",") if values else ["adaptive", "constant", "none"]
        return [E.AblationCell(name=f"alpha={m}", overrides={"stage2.alpha_mode": m}) for m in modes]
    if axis == "strategy":
        strategies = values.split(",") if values else ["coarse2fine", "coarse", "random"]
        return [E.AblationCell(name=f"strategy={s}", overrides={"sample.strategy": s}) for s in strategies]
    if axis == "components":
        return [
            E.AblationCell(name=name, overrides={f"components.{key}": val for key, val in spec.items()})
            for name, spec in COMPONENT_MODES
        ]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    require_paths(config, "sd_path", "td_train_path", "td_test_path", "nouns_path", "stopwords_path")
    sd = load_sentence_corpus(config.sd_path)
    td_train = load_aspect_dataset(config.td_train_path)
    td_test = load_aspect_dataset(config.td_test_path)
    lexicon = _load_lexicon(config)
    table = _load_table(config)

    cells = ablation_cells(args.axis, args.values)
    results = E.ablate(cells, sd, td_train, td_test, config.pipeline, lexicon, table,
                       seeds=config.seeds, baseline=args.baseline, jobs=args.jobs)
    run_dir = _make_run_dir(config, args.run_name)
    _atomic_write_text(run_dir / "results.jsonl", E.results_to_jsonl(results))
    table_text = E.results_to_text(results)
    _atomic_write_text(run_dir / "results.txt", table_text)
    print(table_text, end="")
    print(f"ablation artifacts in {run_dir}")
    failed = [r.name for r in results if r.error is not None]
    if failed:
        log.error("cells failed: %s", ", ".join(failed))
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uika", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out-dir", help="base output directory")
        p.add_argument("--run-name", help="fixed run directory name (default: timestamp)")
        p.add_argument("--seed", type=int, help="root random seed")

    p = sub.add_parser("sample", help="write the sampled source corpus (SD_R)")
    common(p)
    p.add_argument("--n", type=int, help="coarse candidates per query")
    p.add_argument("--k", type=int, help="fine candidates per query")
    p.add_argument("--strategy", choices=["random", "coarse", "coarse2fine"])
    p.add_argument("--k1", type=float, help="BM25 k1")
    p.add_argument("--b", type=float, help="BM25 b")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pseudo", help="convert SD_R into pseudo aspect instances")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="SD_R JSON-lines file")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("pretrain", help="stage 1: pretrain on pseudo aspect data")
    common(p)
    p.add_argument("--data", required=True, help="SD_R' JSON-lines file")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("guide", help="stage 2: knowledge-guidance training")
    common(p)
    p.add_argument("--m1", required=True, help="stage-1 checkpoint")
    p.add_argument("--vocab", required=True, help="vocab.json from pretraining")
    p.set_defaults(func=cmd_guide)

    p = sub.add_parser("finetune", help="stage 3: fine-tune the learner")
    common(p)
    p.add_argument("--m2", required=True, help="stage-2 checkpoint")
    p.add_argument("--vocab", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an aspect dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run all three stages end to end")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=["random", "coarse", "coarse2fine"])
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ablate", help="run an ablation grid with per-cell t-tests")
    common(p)
    p.add_argument("--axis", required=True, choices=["beta", "alpha", "strategy", "components"])
    p.add_argument("--values", help="comma-separated grid values (axis default otherwise)")
    p.add_argument("--baseline", type=int, default=0, help="index of the baseline cell")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
