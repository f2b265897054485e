"""The three-stage training schedule.

Stage 1 pretrains a binary classifier on the pseudo aspect-level
corpus sampled from the source domain.  Stage 2 re-heads that model into
a guidance model and a learner that start identical: the guidance model
is trained on the target data under an annealed mix of classification
and prediction-consistency losses, while the learner only tracks it
through an exponential moving average.  Stage 3 fine-tunes the learner
on the target data.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .corpus import AspectInstance, PosLexicon, SentenceRecord, Vocabulary, build_vocab, pseudo_label_corpus, tokenize
from .optim import AdamState, ParamSet, adam_step
from .retrieval import EmbeddingTable, SampleConfig, build_index, build_sampled_dataset
from .seeds import stream_rng, stream_seed


class TrainingError(ValueError):
    """Raised for invalid stage configs or datasets."""


ALPHA_MODES = ("adaptive", "constant", "none")


@dataclass(frozen=True)
class StageConfig:
    """Per-stage hyperparameters; stage 2 additionally uses beta and alpha."""

    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    beta: float = 0.99
    alpha_mode: str = "adaptive"
    alpha_const: float = 0.7
    alpha_zero_based: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        # beta = 1 is allowed as the degenerate "learner frozen" setting.
        if not (0.0 <= self.beta <= 1.0):
            raise TrainingError(f"beta must be in [0, 1], got {self.beta}")
        if self.alpha_mode not in ALPHA_MODES:
            raise TrainingError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        if not (0.0 <= self.alpha_const <= 1.0):
            raise TrainingError(f"alpha_const must be in [0, 1], got {self.alpha_const}")


def alpha(e: int, total_epochs: int, mode: str = "adaptive", const: float = 0.7,
          zero_based: bool = False) -> float:
    """Annealing weight for the guidance loss at epoch ``e``.

    Adaptive mode follows the linear schedule 1 - e/(E+1); epochs are
    1-indexed unless ``zero_based``.
    """
    low, high = (0, total_epochs - 1) if zero_based else (1, total_epochs)
    if not (low <= e <= high):
        raise TrainingError(f"epoch index {e} outside [{low}, {high}]")
    if mode == "adaptive":
        return 1.0 - e / (total_epochs + 1.0)
    if mode == "constant":
        return const
    if mode == "none":
        return 0.0
    raise TrainingError(f"unknown alpha mode {mode!r}")


def guidance_loss(
    p_g: np.ndarray, p_l: np.ndarray, labels: np.ndarray, alpha_value: float
) -> tuple[float, float, float]:
    """(L_G, L_c, L_r) for probability matrices of guidance and learner.

    L_c is the batch-mean cross entropy of the guidance predictions,
    L_r the batch-mean summed squared difference between the two
    prediction matrices, and L_G their alpha-weighted mix.
    """
    p_g = np.asarray(p_g, dtype=np.float64)
    p_l = np.asarray(p_l, dtype=np.float64)
    if p_g.shape != p_l.shape:
        raise TrainingError(f"probability shapes differ: {p_g.shape} vs {p_l.shape}")
    if not (0.0 <= alpha_value <= 1.0):
        raise TrainingError(f"alpha must be in [0, 1], got {alpha_value}")
    batch = p_g.shape[0]
    rows = np.arange(batch)
    l_c = float(-np.log(p_g[rows, labels]).sum() / batch)
    l_r = float(((p_g - p_l) ** 2).sum() / batch)
    return alpha_value * l_c + (1.0 - alpha_value) * l_r, l_c, l_r


def ema_update(theta_l: ParamSet, theta_g: ParamSet, beta: float) -> ParamSet:
    """Elementwise theta_l <- beta * theta_l + (1 - beta) * theta_g."""
    if set(theta_l) != set(theta_g):
        raise TrainingError(
            f"parameter names differ: {sorted(set(theta_l) ^ set(theta_g))}"
        )
    out: ParamSet = {}
    for name, left in theta_l.items():
        right = theta_g[name]
        if left.shape != right.shape:
            raise TrainingError(f"shape mismatch for {name!r}: {left.shape} vs {right.shape}")
        out[name] = beta * left + (1.0 - beta) * right
    return out


@dataclass
class GuidanceState:
    """Live state of the second stage."""

    theta_g: ParamSet
    theta_l: ParamSet
    epoch: int
    iteration: int
    adam: AdamState


def guidance_grads(
    theta_g: ParamSet,
    batch: M.Batch,
    learner_probs: np.ndarray,
    alpha_value: float,
    model_config: M.ModelConfig,
    use_consistency: bool = True,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[ParamSet, float, float, float]:
    """Gradients of the guidance loss w.r.t. the guidance parameters.

    The learner predictions enter as constants: the learner is never
    updated by this loss.  Returns (grads, L_G, L_c, L_r).
    """
    log_probs_g, probs_g, _, nodes = M.forward_graph(theta_g, batch, model_config,
                                                     train=train, rng=rng)
    loss_c = M.cross_entropy_graph(log_probs_g, batch.labels)
    if use_consistency:
        diff = probs_g - T.Tensor(np.asarray(learner_probs, dtype=np.float64))
        loss_r = (diff * diff).sum() * T.Tensor(1.0 / batch.size)
    else:
        loss_r = T.Tensor(0.0)
    loss_g = loss_c * T.Tensor(alpha_value) + loss_r * T.Tensor(1.0 - alpha_value)
    loss_g.backward()
    grads = M.collect_grads(nodes)
    M.check_finite(float(loss_g.data), grads, theta_g)
    return grads, float(loss_g.data), float(loss_c.data), float(loss_r.data)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _epoch_mean(total: float, count: int) -> float:
    return total / count if count else float("nan")


def stage1_pretrain(
    data: Sequence[AspectInstance],
    model_config: M.ModelConfig,
    cfg: StageConfig,
    vocab: Vocabulary,
    pretrained_embedding: np.ndarray | None = None,
) -> tuple[ParamSet, list[dict]]:
    """Cross-entropy pretraining on the pseudo aspect-level corpus."""
    if not data:
        raise TrainingError("stage 1: empty pretraining dataset")
    labels = {inst.label for inst in data}
    if not labels <= {0, 1}:
        raise TrainingError(f"stage 1 expects binary labels, saw {sorted(labels)}")
    if model_config.num_classes != 2:
        raise TrainingError(f"stage 1 model must be 2-class, got {model_config.num_classes}")

    params = M.init_params(model_config, len(vocab), stream_rng(cfg.seed, "init"),
                           pretrained_embedding=pretrained_embedding)
    return _train_cross_entropy(params, data, model_config, cfg, vocab, stage="stage1")


def stage3_finetune(
    m2_params: ParamSet,
    td_train: Sequence[AspectInstance],
    model_config: M.ModelConfig,
    cfg: StageConfig,
    vocab: Vocabulary,
) -> tuple[ParamSet, list[dict]]:
    """Fine-tune the stage-2 learner on the target data; head is kept."""
    if not td_train:
        raise TrainingError("stage 3: empty target dataset")
    if m2_params["head.w"].shape[0] != model_config.num_classes:
        raise TrainingError(
            f"stage 3 expects a {model_config.num_classes}-class head, "
            f"got {m2_params['head.w'].shape[0]}"
        )
    params = {name: value.copy() for name, value in m2_params.items()}
    return _train_cross_entropy(params, td_train, model_config, cfg, vocab, stage="stage3")


def _train_cross_entropy(
    params: ParamSet,
    data: Sequence[AspectInstance],
    model_config: M.ModelConfig,
    cfg: StageConfig,
    vocab: Vocabulary,
    stage: str,
) -> tuple[ParamSet, list[dict]]:
    shuffle_rng = stream_rng(cfg.seed, "shuffle")
    dropout_rng = stream_rng(cfg.seed, "dropout")
    min_len = max(model_config.kernel_widths)
    state = AdamState(lr=cfg.lr)
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, shuffle_rng):
            batch = M.encode_batch([data[i] for i in idx], vocab, min_length=min_len)
            grads, loss = M.backward(params, batch, model_config, train=True, rng=dropout_rng)
            params, state = adam_step(params, grads, state)
            total += loss * batch.size
            seen += batch.size
        history.append({"stage": stage, "epoch": epoch, "loss": _epoch_mean(total, seen), "alpha": None})
    return params, history


def stage2_guidance(
    base_params: ParamSet,
    td_train: Sequence[AspectInstance],
    model_config: M.ModelConfig,
    cfg: StageConfig,
    vocab: Vocabulary,
    use_consistency: bool = True,
    use_ema: bool = True,
) -> tuple[ParamSet, list[dict]]:
    """Knowledge-guidance training on the target data.

    Both models start from ``base_params`` with one shared freshly drawn
    head (the pretraining head has a different class count and is
    discarded).  Only the guidance model sees label supervision; the
    learner is advanced purely by EMA tracking after each optimizer
    step.  Returns the learner, or the guidance model when EMA is
    disabled.
    """
    if not td_train:
        raise TrainingError("stage 2: empty target dataset")
    max_label = max(inst.label for inst in td_train)
    if max_label >= model_config.num_classes:
        raise TrainingError(
            f"target labels go up to {max_label} but the model has {model_config.num_classes} classes"
        )

    theta_g = M.reinit_head(base_params, model_config.num_classes, stream_rng(cfg.seed, "head"))
    theta_l = {name: value.copy() for name, value in theta_g.items()}
    state = GuidanceState(theta_g=theta_g, theta_l=theta_l, epoch=0, iteration=0,
                          adam=AdamState(lr=cfg.lr))

    shuffle_rng = stream_rng(cfg.seed, "shuffle")
    dropout_rng = stream_rng(cfg.seed, "dropout")
    min_len = max(model_config.kernel_widths)
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch
        e_value = epoch - 1 if cfg.alpha_zero_based else epoch
        a = alpha(e_value, cfg.epochs, cfg.alpha_mode, cfg.alpha_const, cfg.alpha_zero_based)
        totals = {"loss": 0.0, "loss_c": 0.0, "loss_r": 0.0}
        seen = 0
        for idx in _batches(len(td_train), cfg.batch_size, shuffle_rng):
            batch = M.encode_batch([td_train[i] for i in idx], vocab, min_length=min_len)
            learner_probs = M.forward(state.theta_l, batch, model_config, mode="eval")
            grads, l_g, l_c, l_r = guidance_grads(
                state.theta_g, batch, learner_probs, a, model_config,
                use_consistency=use_consistency, train=True, rng=dropout_rng,
            )

            state.theta_g, state.adam = adam_step(state.theta_g, grads, state.adam)
            if use_ema:
                state.theta_l = ema_update(state.theta_l, state.theta_g, cfg.beta)
            state.iteration += 1

            totals["loss"] += l_g * batch.size
            totals["loss_c"] += l_c * batch.size
            totals["loss_r"] += l_r * batch.size
            seen += batch.size
        history.append(
            {
                "stage": "stage2",
                "epoch": epoch,
                "loss": _epoch_mean(totals["loss"], seen),
                "loss_c": _epoch_mean(totals["loss_c"], seen),
                "loss_r": _epoch_mean(totals["loss_r"], seen),
                "alpha": a,
            }
        )
    return (state.theta_l if use_ema else state.theta_g), history


@dataclass(frozen=True)
class Components:
    """On/off switches for the pipeline pieces (ablation rows)."""

    sampling_pretrain: bool = True  # stage-1 pretraining on sampled source data
    consistency: bool = True        # prediction-consistency term in stage 2
    ema: bool = True                # EMA learner tracking in stage 2
    finetune: bool = True           # stage-3 fine-tuning

    @property
    def run_stage2(self) -> bool:
        return self.consistency or self.ema


@dataclass(frozen=True)
class PipelineConfig:
    sample: SampleConfig = field(default_factory=SampleConfig)
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(batch_size=256))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(batch_size=64))
    stage3: StageConfig = field(default_factory=lambda: StageConfig(batch_size=64))
    components: Components = field(default_factory=Components)
    seed: int = 0
    vocab_min_count: int = 1
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


def derive_seeds(config: PipelineConfig) -> PipelineConfig:
    """Expand the root seed into per-stage seeds via named streams.

    Running a stage standalone with a config derived from the same root
    therefore reproduces its in-pipeline behaviour exactly.
    """
    return replace(
        config,
        sample=replace(config.sample, seed=stream_seed(config.seed, "sample")),
        stage1=replace(config.stage1, seed=stream_seed(config.seed, "stage1")),
        stage2=replace(config.stage2, seed=stream_seed(config.seed, "stage2")),
        stage3=replace(config.stage3, seed=stream_seed(config.seed, "stage3")),
    )


@dataclass
class PipelineResult:
    params: ParamSet
    vocab: Vocabulary
    report: dict
    m1: ParamSet | None = None
    m2: ParamSet | None = None
    sampled: list[SentenceRecord] | None = None
    pseudo: list[AspectInstance] | None = None


def build_embedding_init(vocab: Vocabulary, table: EmbeddingTable | None, embed_dim: int,
                         rng: np.random.Generator) -> np.ndarray | None:
    """Initial embedding matrix seeded from the table where tokens are known."""
    if table is None:
        return None
    if table.dim != embed_dim:
        raise TrainingError(f"embedding table dim {table.dim} != model embed_dim {embed_dim}")
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), embed_dim))
    for token, idx in vocab.token_to_id.items():
        vec = table.vectors.get(token)
        if vec is not None:
            matrix[idx] = vec
    return matrix


def run_pipeline(
    sd: Sequence[SentenceRecord],
    td_train: Sequence[AspectInstance],
    config: PipelineConfig,
    lexicon: PosLexicon,
    table: EmbeddingTable | None = None,
    stage_callback=None,
) -> PipelineResult:
    """Compose sampling, pseudo-labeling, and the three training stages.

    Components may be switched off individually: without stage 1 the
    models start from scratch; without both stage-2 components stage 2
    is skipped; without stage 3 the stage-2 output is returned as the
    final model.  ``stage_callback(name, params, report)`` fires after
    each completed stage so callers can persist partial progress.
    """
    if not sd:
        raise TrainingError("empty source corpus")
    if not td_train:
        raise TrainingError("empty target training set")
    config = derive_seeds(config)
    comp = config.components
    report: dict = {"config": asdict(config), "epochs": [], "counts": {}, "wall_time_s": {}}

    vocab = build_vocab(
        [tokenize(r.text) for r in sd] + [list(inst.tokens) for inst in td_train],
        min_count=config.vocab_min_count,
    )
    embed_init = build_embedding_init(vocab, table, config.model.embed_dim,
                                      stream_rng(config.seed, "embed-init"))

    m1: ParamSet | None = None
    sampled: list[SentenceRecord] | None = None
    pseudo: list[AspectInstance] | None = None
    if comp.sampling_pretrain:
        t0 = time.perf_counter()
        index = build_index(sd, k1=config.bm25_k1, b=config.bm25_b)
        sampled = build_sampled_dataset(td_train, sd, config.sample, index, table)
        pseudo, dropped = pseudo_label_corpus(sampled, lexicon)
        report["counts"]["sampled"] = len(sampled)
        report["counts"]["pseudo"] = len(pseudo)
        report["counts"]["pseudo_dropped"] = dropped
        report["wall_time_s"]["sampling"] = time.perf_counter() - t0
        if not pseudo:
            raise TrainingError("sampling produced no pseudo aspect instances")

        t0 = time.perf_counter()
        stage1_model = replace(config.model, num_classes=2)
        m1, history = stage1_pretrain(pseudo, stage1_model, config.stage1, vocab,
                                      pretrained_embedding=embed_init)
        report["epochs"].extend(history)
        report["wall_time_s"]["stage1"] = time.perf_counter() - t0
        if stage_callback:
            stage_callback("m1", m1, report)

    if m1 is not None:
        base = m1
    else:
        base = M.init_params(config.model, len(vocab), stream_rng(config.seed, "scratch-init"),
                             pretrained_embedding=embed_init)

    if comp.run_stage2:
        t0 = time.perf_counter()
        m2, history = stage2_guidance(
            base, td_train, config.model, config.stage2, vocab,
            use_consistency=comp.consistency, use_ema=comp.ema,
        )
        report["epochs"].extend(history)
        report["wall_time_s"]["stage2"] = time.perf_counter() - t0
    elif m1 is not None:
        # Vanilla pretrain-finetune: carry the body over under a fresh head,
        # drawn from the same stream stage 2 would have used.
        m2 = M.reinit_head(m1, config.model.num_classes, stream_rng(config.stage2.seed, "head"))
    else:
        m2 = base
    if stage_callback:
        stage_callback("m2", m2, report)

    if comp.finetune:
        t0 = time.perf_counter()
        m3, history = stage3_finetune(m2, td_train, config.model, config.stage3, vocab)
        report["epochs"].extend(history)
        report["wall_time_s"]["stage3"] = time.perf_counter() - t0
    else:
        m3 = m2
    if stage_callback:
        stage_callback("m3", m3, report)

    return PipelineResult(params=m3, vocab=vocab, report=report, m1=m1, m2=m2,
                          sampled=sampled, pseudo=pseudo)
