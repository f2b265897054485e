"""Acceptance suite: one test per criterion, one printed line per result.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines live.
The two benchmark criteria share their pipeline runs through a module
cache, so whichever runs first pays for the common configurations.
"""

import functools
import math
import time

import numpy as np
import pytest
from scipy import stats as scipy_stats

from uika import model as M
from uika.corpus import (
    AspectInstance,
    SentenceRecord,
    Vocabulary,
    build_vocab,
    extract_pseudo_aspect,
    tokenize,
)
from uika.evaluation import compute_metrics, run_seeded, t_test
from uika.optim import AdamState, adam_step
from uika.retrieval import (
    EmbeddingTable,
    SampleConfig,
    build_index,
    build_sampled_dataset,
    coarse_sample,
    cosine,
    fine_sample,
    sentence_embedding,
)
from uika.synth import SynthConfig, generate_benchmark
from uika.training import (
    Components,
    PipelineConfig,
    StageConfig,
    alpha,
    ema_update,
    guidance_grads,
)

SEEDS = (0, 1, 2, 3, 4)


def criterion(number, budget_s, description):
    """Time the check, enforce its runtime budget, and print one result line."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                elapsed = time.perf_counter() - start
                print(f"criterion {number:2d} FAIL ({elapsed:6.1f}s) {description}")
                raise
            elapsed = time.perf_counter() - start
            print(f"criterion {number:2d} PASS ({elapsed:6.1f}s) {description}")
            assert elapsed < budget_s, f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"

        return wrapper

    return decorate


# -- 1: annealing schedule ----------------------------------------------------


@criterion(1, 1.0, "alpha schedule matches the closed form with constant steps")
def test_c01_schedule_exactness():
    total = 10
    values = [alpha(e, total) for e in range(1, total + 1)]
    for e, value in zip(range(1, total + 1), values):
        assert abs(value - (1.0 - e / (total + 1.0))) < 1e-12
    for first, second in zip(values, values[1:]):
        assert abs((first - second) - 1.0 / (total + 1.0)) < 1e-12


# -- 2: EMA closed form ---------------------------------------------------------


@criterion(2, 1.0, "100 EMA iterations against a constant target match the closed form")
def test_c02_ema_closed_form():
    rng = np.random.default_rng(0)
    theta0 = {"w": rng.normal(size=(5, 3)), "b": rng.normal(size=7)}
    target = {"w": rng.normal(size=(5, 3)), "b": rng.normal(size=7)}
    for beta in (0.3, 0.99):
        theta = {k: v.copy() for k, v in theta0.items()}
        t = 100
        for _ in range(t):
            theta = ema_update(theta, target, beta)
        for name in theta:
            expected = beta**t * theta0[name] + (1.0 - beta**t) * target[name]
            assert np.max(np.abs(theta[name] - expected)) < 1e-10


# -- 3: gradient fidelity --------------------------------------------------------


def _tiny_vocab20():
    vocab = Vocabulary()
    for i in range(18):  # plus the two reserved ids -> 20 rows
        vocab.add(f"w{i}")
    assert len(vocab) == 20
    return vocab


def _tiny_batch(vocab, labels):
    instances = []
    for i, label in enumerate(labels):
        tokens = tuple(f"w{(i * 3 + j) % 18}" for j in range(4 + i % 2))
        instances.append(AspectInstance(id=str(i), tokens=tokens, aspect_start=1,
                                        aspect_end=2 + i % 2, label=label))
    return M.encode_batch(instances, vocab, min_length=3)


def _sweep_gradients(params, grads, loss_fn, h=1e-5, tol=1e-4):
    for name in sorted(params):
        grad = grads.get(name, np.zeros_like(params[name]))
        it = np.nditer(params[name], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            bumped = {k: v.copy() for k, v in params.items()}
            bumped[name][idx] += h
            plus = loss_fn(bumped)
            bumped[name][idx] -= 2 * h
            minus = loss_fn(bumped)
            fd = (plus - minus) / (2 * h)
            assert abs(fd - grad[idx]) <= tol * max(1.0, abs(fd), abs(grad[idx])), (
                f"{name}{idx}: fd={fd}, ad={grad[idx]}"
            )


@criterion(3, 30.0, "every parameter passes finite-difference checks for both losses")
def test_c03_gradient_fidelity():
    vocab = _tiny_vocab20()
    rng = np.random.default_rng(42)

    # cross-entropy on the 2-class pretraining model
    config2 = M.ModelConfig(embed_dim=8, kernel_widths=(3,), filters=4, num_classes=2, dropout=0.0)
    params2 = M.init_params(config2, len(vocab), rng)
    batch2 = _tiny_batch(vocab, labels=[0, 1, 1, 0])
    grads2, _ = M.backward(params2, batch2, config2, train=False)
    _sweep_gradients(params2, grads2,
                     lambda p: M.backward(p, batch2, config2, train=False)[1])

    # guidance loss on the 3-class model, learner held constant
    config3 = M.ModelConfig(embed_dim=8, kernel_widths=(3,), filters=4, num_classes=3, dropout=0.0)
    params3 = M.init_params(config3, len(vocab), rng)
    batch3 = _tiny_batch(vocab, labels=[0, 1, 2, 1])
    learner = rng.dirichlet(np.ones(3), size=batch3.size)
    a = 10.0 / 11.0
    grads3, *_ = guidance_grads(params3, batch3, learner, a, config3, train=False)
    _sweep_gradients(params3, grads3,
                     lambda p: guidance_grads(p, batch3, learner, a, config3, train=False)[1])


# -- 4/5: retrieval oracle equivalence and structure ------------------------------


def _okapi_oracle(query, doc_id, doc_tokens_by_id, k1=1.2, b=0.75):
    n = len(doc_tokens_by_id)
    avg = sum(len(t) for t in doc_tokens_by_id.values()) / n
    tokens = doc_tokens_by_id[doc_id]
    ratio = len(tokens) / avg if avg > 0 else 0.0
    norm = k1 * (1.0 - b + b * ratio)
    score = 0.0
    for term in query:
        freq = tokens.count(term)
        if freq == 0:
            continue
        df = sum(1 for t in doc_tokens_by_id.values() if term in t)
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * freq * (k1 + 1.0) / (freq + norm)
    return score


def _rank_oracle(scored, top):
    return [d for d, _ in sorted(scored, key=lambda p: (-p[1], p[0]))[:top]]


def _random_corpus(n_docs, rng, vocab):
    records = []
    for i in range(n_docs):
        words = [vocab[int(rng.integers(len(vocab)))] for _ in range(int(rng.integers(1, 10)))]
        records.append(SentenceRecord(id=f"d{i:05d}", text=" ".join(words), label=int(rng.integers(2))))
    return records


@criterion(4, 10.0, "coarse and fine sampling equal brute-force oracles, ties included")
def test_c04_retrieval_oracle_equivalence():
    rng = np.random.default_rng(404)
    vocab = [f"t{i}" for i in range(25)]
    records = _random_corpus(1000, rng, vocab)
    doc_tokens = {r.id: tokenize(r.text) for r in records}
    index = build_index(records)
    table = EmbeddingTable(dim=6, vectors={w: rng.normal(size=6) for w in vocab})

    for q in range(50):
        query = [vocab[int(rng.integers(len(vocab)))] for _ in range(int(rng.integers(1, 6)))]
        n, k = 20, 8
        coarse = coarse_sample(query, index, n)
        expected_coarse = _rank_oracle(
            [(doc_id, _okapi_oracle(query, doc_id, doc_tokens)) for doc_id in doc_tokens], n
        )
        assert coarse == expected_coarse, f"coarse mismatch on query {q}"

        query_emb = sentence_embedding(query, table)
        fine = fine_sample(query_emb, [(d, index.doc_tokens[d]) for d in coarse], table, k)
        expected_fine = _rank_oracle(
            [(d, cosine(query_emb, sentence_embedding(doc_tokens[d], table))) for d in coarse], k
        )
        assert fine == expected_fine, f"fine mismatch on query {q}"


@criterion(5, 10.0, "sampling invariants hold and results are parallelism-independent")
def test_c05_algorithm_structure():
    rng = np.random.default_rng(505)
    vocab = [f"t{i}" for i in range(15)]
    records = _random_corpus(300, rng, vocab)
    index = build_index(records)
    table = EmbeddingTable(dim=5, vectors={w: rng.normal(size=5) for w in vocab})

    for trial in range(100):
        k = int(rng.integers(1, 12))
        n = int(rng.integers(k, 40))
        query = [vocab[int(rng.integers(len(vocab)))] for _ in range(int(rng.integers(1, 6)))]
        coarse = coarse_sample(query, index, n)
        fine = fine_sample(sentence_embedding(query, table),
                           [(d, index.doc_tokens[d]) for d in coarse], table, k)
        assert set(fine) <= set(coarse)
        assert len(fine) <= k <= n

    td = [AspectInstance(id=f"q{i}", tokens=(vocab[i], vocab[(i * 2) % 15]),
                         aspect_start=0, aspect_end=1, label=0) for i in range(10)]
    cfg = SampleConfig(n=25, k=10, strategy="coarse2fine", seed=3)
    runs = [build_sampled_dataset(td, records, cfg, index, table) for _ in range(3)]
    ids = [[r.id for r in run] for run in runs]
    assert ids[0] == ids[1] == ids[2]

    # worker-count independence at the harness level
    bench = generate_benchmark(SynthConfig(sd_size=120, td_train_size=40, td_test_size=20,
                                           embed_dim=8, seed=99))
    config = PipelineConfig(
        sample=SampleConfig(n=10, k=5),
        model=M.ModelConfig(embed_dim=8, kernel_widths=(2, 3), filters=4, num_classes=3),
        stage1=StageConfig(epochs=1, batch_size=32),
        stage2=StageConfig(epochs=1, batch_size=16),
        stage3=StageConfig(epochs=1, batch_size=16),
    )
    serial = run_seeded(bench.sd, bench.td_train, bench.td_test, config, bench.lexicon,
                        bench.table, seeds=(0, 1), jobs=1)
    parallel = run_seeded(bench.sd, bench.td_train, bench.td_test, config, bench.lexicon,
                          bench.table, seeds=(0, 1), jobs=2)
    assert serial.accuracies == parallel.accuracies
    assert serial.macro_f1s == parallel.macro_f1s


# -- 6: aspect extraction ----------------------------------------------------------


@criterion(6, 1.0, "repeated noun phrase beats a singleton; zero-noun reviews drop out")
def test_c06_aspect_extraction(lexicon):
    review = SentenceRecord(
        id="r3",
        text=("The phone is great. But the battery life is terrible. "
              "Also there is no battery life indicator to let you know when its low."),
        label=1,
    )
    inst = extract_pseudo_aspect(review, lexicon)
    assert inst is not None
    assert inst.aspect_tokens == ("battery", "life")
    assert inst.label == 1

    assert extract_pseudo_aspect(SentenceRecord(id="x", text="it was great !", label=0), lexicon) is None


# -- 7: metrics and significance ----------------------------------------------------


@criterion(7, 1.0, "hand-computed macro-F1 and t-test values match the oracles")
def test_c07_metric_correctness():
    metrics = compute_metrics([0, 1, 2, 0], [0, 1, 1, 0], 3)
    assert abs(metrics.macro_f1 - 5.0 / 9.0) < 1e-9
    assert abs(metrics.accuracy - 0.75) < 1e-12

    same = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert same.t == 0.0 and same.p == 1.0
    shifted = t_test([1.0, 2.0, 3.0], [11.0, 12.0, 13.0])
    assert shifted.p < 0.001

    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.normal(size=int(rng.integers(2, 8)))
        b = rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(2, 8)))
        ours = t_test(a, b)
        ref = scipy_stats.ttest_ind(a, b, equal_var=True)
        assert abs(ours.p - ref.pvalue) < 1e-6
        assert abs(ours.t - ref.statistic) < 1e-9


# -- 8: overfit sanity ----------------------------------------------------------------


@criterion(8, 60.0, "32-example toy set reaches 100% train accuracy for 5/5 seeds")
def test_c08_overfit_sanity():
    pos = ["good", "tasty", "nice", "fresh"]
    neg = ["bad", "awful", "slow", "stale"]
    instances = []
    for i in range(32):
        label = i % 2
        word = (pos if label == 0 else neg)[(i // 2) % 4]
        tokens = ("the", "food", "is", word) if i % 3 else ("food", word, "today")
        start = tokens.index("food")
        instances.append(AspectInstance(id=str(i), tokens=tokens, aspect_start=start,
                                        aspect_end=start + 1, label=label))
    vocab = build_vocab([list(i.tokens) for i in instances])
    config = M.ModelConfig(embed_dim=12, kernel_widths=(2, 3), filters=6, num_classes=2, dropout=0.0)

    for seed in SEEDS:
        params = M.init_params(config, len(vocab), np.random.default_rng(seed))
        batch = M.encode_batch(instances, vocab, min_length=3)
        state = AdamState(lr=1e-2)
        fit = False
        for _ in range(200):
            grads, _ = M.backward(params, batch, config, train=False)
            params, state = adam_step(params, grads, state)
            preds = np.argmax(M.forward(params, batch, config), axis=1)
            if (preds == batch.labels).all():
                fit = True
                break
        assert fit, f"seed {seed} failed to reach 100% train accuracy"


# -- 9/10: the synthetic end-to-end benchmark ------------------------------------------


_RUN_CACHE: dict = {}


def _benchmark():
    if "bench" not in _RUN_CACHE:
        _RUN_CACHE["bench"] = generate_benchmark(SynthConfig())
    return _RUN_CACHE["bench"]


def _benchmark_config() -> PipelineConfig:
    return PipelineConfig(
        sample=SampleConfig(n=50, k=30, strategy="coarse2fine"),
        model=M.ModelConfig(embed_dim=24, kernel_widths=(3, 4), filters=12,
                            num_classes=3, dropout=0.2),
        stage1=StageConfig(epochs=10, batch_size=256),
        stage2=StageConfig(epochs=10, batch_size=64, beta=0.99, alpha_mode="adaptive"),
        stage3=StageConfig(epochs=10, batch_size=64),
    )


MODE_SWITCHES = {
    "F": Components(sampling_pretrain=False, consistency=False, ema=False, finetune=True),
    "S.F": Components(sampling_pretrain=True, consistency=False, ema=False, finetune=True),
    "S.R.F": Components(sampling_pretrain=True, consistency=True, ema=False, finetune=True),
    "S.E.F": Components(sampling_pretrain=True, consistency=False, ema=True, finetune=True),
    "S.R.E": Components(sampling_pretrain=True, consistency=True, ema=True, finetune=False),
    "S.R.E.F": Components(sampling_pretrain=True, consistency=True, ema=True, finetune=True),
}


def _mode_runs(name: str):
    """Five-seed test metrics for one component mode (cached across criteria)."""
    key = f"mode:{name}"
    if key not in _RUN_CACHE:
        bench = _benchmark()
        from dataclasses import replace

        config = replace(_benchmark_config(), components=MODE_SWITCHES[name])
        _RUN_CACHE[key] = run_seeded(bench.sd, bench.td_train, bench.td_test, config,
                                     bench.lexicon, bench.table, seeds=SEEDS, name=name)
    return _RUN_CACHE[key]


def _random_strategy_runs():
    if "random" not in _RUN_CACHE:
        bench = _benchmark()
        from dataclasses import replace

        config = _benchmark_config()
        config = replace(config, sample=replace(config.sample, strategy="random"))
        _RUN_CACHE["random"] = run_seeded(bench.sd, bench.td_train, bench.td_test, config,
                                          bench.lexicon, bench.table, seeds=SEEDS, name="random")
    return _RUN_CACHE["random"]


@criterion(9, 600.0, "full pipeline beats the fine-tune-only baseline (p < 0.05); "
                     "coarse-to-fine sampling is at least as good as random")
def test_c09_end_to_end_benchmark():
    full = _mode_runs("S.R.E.F")
    baseline = _mode_runs("F")
    random_runs = _random_strategy_runs()

    mean_full = float(np.mean(full.accuracies))
    mean_base = float(np.mean(baseline.accuracies))
    result = t_test(full.accuracies, baseline.accuracies)
    print(f"  full={mean_full:.4f} baseline={mean_base:.4f} p={result.p:.2e} "
          f"random={float(np.mean(random_runs.accuracies)):.4f}")
    assert mean_full > mean_base
    assert result.p < 0.05
    assert mean_full >= float(np.mean(random_runs.accuracies))


@criterion(10, 900.0, "all six component modes complete; skipping the final "
                      "fine-tune scores strictly worst")
def test_c10_component_protocol():
    means = {}
    for name in MODE_SWITCHES:
        runs = _mode_runs(name)
        means[name] = float(np.mean(runs.accuracies))
    print("  " + "  ".join(f"{name}={mean:.4f}" for name, mean in means.items()))
    no_finetune = means["S.R.E"]
    for name, mean in means.items():
        if name != "S.R.E":
            assert no_finetune < mean, f"mode {name} ({mean:.4f}) not above S.R.E ({no_finetune:.4f})"
