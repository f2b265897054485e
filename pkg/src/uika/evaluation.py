"""Metrics, multi-seed significance testing, and the ablation harness."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace, asdict
from typing import NamedTuple, Sequence

import numpy as np

from . import model as M
from .corpus import AspectInstance, PosLexicon, SentenceRecord, Vocabulary
from .optim import ParamSet
from .retrieval import EmbeddingTable
from .training import PipelineConfig, run_pipeline


class EvalError(ValueError):
    """Raised for invalid metric or test inputs."""


@dataclass(frozen=True)
class Metrics:
    """Classification quality summary; macro_f1 averages per-class F1."""

    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    macro_f1: float
    confusion: tuple[tuple[int, ...], ...]


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> Metrics:
    """Confusion-matrix metrics with the 0-when-undefined convention."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise EvalError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise EvalError("empty evaluation set")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    precision, recall, f1 = [], [], []
    for c in range(num_classes):
        tp = confusion[c, c]
        pred_c = confusion[:, c].sum()
        true_c = confusion[c, :].sum()
        p = tp / pred_c if pred_c else 0.0
        r = tp / true_c if true_c else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(f))

    return Metrics(
        accuracy=float(np.trace(confusion) / y_true.size),
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        macro_f1=float(np.mean(f1)),
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
    )


def predict(params: ParamSet, dataset: Sequence[AspectInstance], config: M.ModelConfig,
            vocab: Vocabulary, batch_size: int = 256) -> np.ndarray:
    """Argmax class per instance, eval mode; ties go to the lowest class id."""
    if not dataset:
        raise EvalError("empty dataset")
    min_len = max(config.kernel_widths)
    out = []
    for start in range(0, len(dataset), batch_size):
        batch = M.encode_batch(dataset[start : start + batch_size], vocab, min_length=min_len)
        probs = M.forward(params, batch, config, mode="eval")
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out)


def evaluate(params: ParamSet, dataset: Sequence[AspectInstance], config: M.ModelConfig,
             vocab: Vocabulary) -> Metrics:
    preds = predict(params, dataset, config, vocab)
    labels = np.array([inst.label for inst in dataset], dtype=np.int64)
    return compute_metrics(labels, preds, config.num_classes)


# -- Student's t ------------------------------------------------------------


class TTestResult(NamedTuple):
    t: float
    p: float
    degenerate: bool


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise EvalError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not (0.0 <= x <= 1.0):
        raise EvalError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_p_value(t: float, df: float) -> float:
    """Two-sided p for a Student-t statistic with df degrees of freedom."""
    if df <= 0:
        raise EvalError(f"degrees of freedom must be > 0, got {df}")
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def t_test(a: Sequence[float], b: Sequence[float], welch: bool = False) -> TTestResult:
    """Two-sample unpaired Student's t-test, pooled variance by default."""
    xs = np.asarray(a, dtype=np.float64)
    ys = np.asarray(b, dtype=np.float64)
    na, nb = xs.size, ys.size
    if na < 2 or nb < 2:
        raise EvalError(f"each sample needs >= 2 runs, got {na} and {nb}")
    ma, mb = xs.mean(), ys.mean()
    va, vb = xs.var(ddof=1), ys.var(ddof=1)

    if welch:
        se2 = va / na + vb / nb
        if se2 == 0.0:
            return _degenerate_result(ma, mb)
        df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
        t = float((ma - mb) / math.sqrt(se2))
    else:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        if pooled == 0.0:
            return _degenerate_result(ma, mb)
        t = float((ma - mb) / math.sqrt(pooled * (1.0 / na + 1.0 / nb)))
    return TTestResult(t=t, p=student_t_p_value(t, df), degenerate=False)


def _degenerate_result(ma: float, mb: float) -> TTestResult:
    if ma == mb:
        return TTestResult(t=0.0, p=1.0, degenerate=False)
    return TTestResult(t=math.copysign(math.inf, ma - mb), p=0.0, degenerate=True)


# -- Ablation harness --------------------------------------------------------


@dataclass(frozen=True)
class AblationCell:
    """One grid point: a name and dotted-path config overrides."""

    name: str
    overrides: dict


@dataclass
class SeedRunSet:
    """Per-seed metrics for one configuration."""

    name: str
    seeds: list[int]
    metrics: list[Metrics]

    @property
    def accuracies(self) -> list[float]:
        return [m.accuracy for m in self.metrics]

    @property
    def macro_f1s(self) -> list[float]:
        return [m.macro_f1 for m in self.metrics]


@dataclass
class CellResult:
    name: str
    overrides: dict
    runs: SeedRunSet | None
    error: str | None = None
    mean_acc: float = float("nan")
    std_acc: float = float("nan")
    mean_f1: float = float("nan")
    std_f1: float = float("nan")
    p_vs_baseline_acc: float | None = None
    p_vs_baseline_f1: float | None = None


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply dotted-path overrides (e.g. {"stage2.beta": 0.3}) to a config."""
    for path, value in overrides.items():
        head, _, rest = path.partition(".")
        if not hasattr(config, head):
            raise EvalError(f"unknown config field {path!r}")
        if rest:
            section = getattr(config, head)
            if not hasattr(section, rest):
                raise EvalError(f"unknown config field {path!r}")
            config = replace(config, **{head: replace(section, **{rest: value})})
        else:
            config = replace(config, **{head: value})
    return config


def _run_cell_seed(args) -> Metrics:
    sd, td_train, td_test, config, lexicon, table = args
    result = run_pipeline(sd, td_train, config, lexicon, table)
    return evaluate(result.params, td_test, config.model, result.vocab)


def run_seeded(
    sd: Sequence[SentenceRecord],
    td_train: Sequence[AspectInstance],
    td_test: Sequence[AspectInstance],
    config: PipelineConfig,
    lexicon: PosLexicon,
    table: EmbeddingTable | None,
    seeds: Sequence[int],
    name: str = "run",
    jobs: int = 1,
) -> SeedRunSet:
    """Run one configuration across seeds and collect test metrics."""
    tasks = [(sd, td_train, td_test, replace(config, seed=seed), lexicon, table) for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            metrics = list(pool.map(_run_cell_seed, tasks))
    else:
        metrics = [_run_cell_seed(task) for task in tasks]
    return SeedRunSet(name=name, seeds=list(seeds), metrics=metrics)


def ablate(
    cells: Sequence[AblationCell],
    sd: Sequence[SentenceRecord],
    td_train: Sequence[AspectInstance],
    td_test: Sequence[AspectInstance],
    base_config: PipelineConfig,
    lexicon: PosLexicon,
    table: EmbeddingTable | None = None,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    baseline: int = 0,
    jobs: int = 1,
) -> list[CellResult]:
    """Run every grid cell across seeds; t-test each against the baseline cell.

    Per-cell failures are recorded and the rest of the grid continues.
    """
    if not cells:
        raise EvalError("empty ablation grid")
    if not (0 <= baseline < len(cells)):
        raise EvalError(f"baseline index {baseline} outside grid of {len(cells)} cells")

    results: list[CellResult] = []
    for cell in cells:
        try:
            config = apply_overrides(base_config, cell.overrides)
            runs = run_seeded(sd, td_train, td_test, config, lexicon, table, seeds,
                              name=cell.name, jobs=jobs)
            accs, f1s = runs.accuracies, runs.macro_f1s
            results.append(
                CellResult(
                    name=cell.name,
                    overrides=cell.overrides,
                    runs=runs,
                    mean_acc=float(np.mean(accs)),
                    std_acc=float(np.std(accs)),
                    mean_f1=float(np.mean(f1s)),
                    std_f1=float(np.std(f1s)),
                )
            )
        except Exception as exc:  # keep the rest of the grid alive
            results.append(CellResult(name=cell.name, overrides=cell.overrides, runs=None, error=str(exc)))

    base = results[baseline]
    for i, result in enumerate(results):
        if i == baseline or result.runs is None or base.runs is None:
            continue
        if len(result.runs.seeds) < 2 or len(base.runs.seeds) < 2:
            continue  # significance needs at least two runs per side
        result.p_vs_baseline_acc = t_test(result.runs.accuracies, base.runs.accuracies).p
        result.p_vs_baseline_f1 = t_test(result.runs.macro_f1s, base.runs.macro_f1s).p
    return results


def results_to_jsonl(results: Sequence[CellResult]) -> str:
    lines = []
    for r in results:
        obj = {
            "config": r.name,
            "overrides": {k: _jsonable(v) for k, v in r.overrides.items()},
            "seeds": r.runs.seeds if r.runs else [],
            "mean_acc": r.mean_acc,
            "std_acc": r.std_acc,
            "mean_f1": r.mean_f1,
            "std_f1": r.std_f1,
            "p_vs_baseline_acc": r.p_vs_baseline_acc,
            "p_vs_baseline_f1": r.p_vs_baseline_f1,
            "error": r.error,
        }
        lines.append(json.dumps(obj))
    return "\n".join(lines) + "\n"


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    if hasattr(value, "__dataclass_fields__"):
        return asdict(value)
    return value


def results_to_text(results: Sequence[CellResult]) -> str:
    """Fixed-width table of the grid results."""
    headers = ["config", "acc", "std", "f1", "std", "p(acc)", "p(f1)"]
    rows = []
    for r in results:
        if r.error is not None:
            rows.append([r.name, "error: " + r.error, "", "", "", "", ""])
            continue
        rows.append(
            [
                r.name,
                f"{r.mean_acc:.4f}",
                f"{r.std_acc:.4f}",
                f"{r.mean_f1:.4f}",
                f"{r.std_f1:.4f}",
                "-" if r.p_vs_baseline_acc is None else f"{r.p_vs_baseline_acc:.4g}",
                "-" if r.p_vs_baseline_f1 is None else f"{r.p_vs_baseline_f1:.4g}",
            ]
        )
    widths = [max(len(row[i]) for row in [headers] + rows) for i in range(len(headers))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    lines.extend(fmt.format(*row) for row in rows)
    return "\n".join(lines) + "\n"
