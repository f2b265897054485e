"""Synthetic domain-shift benchmark.

Two review domains (electronics, kitchen) share a sentiment lexicon.
The target task is 3-way aspect-level classification in the electronics
domain; the source corpus is sentence-level, binary, and dominated by
kitchen reviews.  Transfer pressure comes from two places:

* held-out opinion words appear abundantly in the source corpus but
  never in the target training split (only in the test split), so their
  polarity is only learnable through pretraining;
* flip words carry opposite polarity in the two domains, so pretraining
  on badly sampled (kitchen-heavy) data teaches the wrong sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import AspectInstance, PosLexicon, SentenceRecord, save_aspect_dataset, save_sentence_corpus
from .retrieval import EmbeddingTable, save_embeddings
from .seeds import stream_rng

POSITIVE, NEUTRAL, NEGATIVE = 0, 1, 2  # target label codes
SENT_POSITIVE, SENT_NEGATIVE = 0, 1    # sentence-level label codes

ELECTRONICS_ASPECTS = (
    ("battery", "life"), ("screen",), ("keyboard",), ("camera",), ("charger",),
    ("speaker",), ("processor",), ("memory",), ("trackpad",), ("display",),
    ("software",), ("warranty",),
)
KITCHEN_ASPECTS = (
    ("blender",), ("oven",), ("knife",), ("pan",), ("mixer",), ("toaster",),
    ("kettle",), ("grill",), ("skillet",), ("spatula",), ("cutting", "board"),
    ("freezer",),
)

COMMON_POSITIVE = ("great", "excellent", "wonderful", "fantastic", "superb", "amazing", "lovely", "brilliant")
HELDOUT_POSITIVE = ("delightful", "impressive", "outstanding", "remarkable", "splendid", "terrific")
COMMON_NEGATIVE = ("terrible", "awful", "horrible", "dreadful", "disappointing", "useless", "lousy", "atrocious")
HELDOUT_NEGATIVE = ("miserable", "defective", "flimsy", "faulty", "shoddy", "abysmal")
NEUTRAL_WORDS = ("okay", "average", "ordinary", "passable", "unremarkable")

# Polarity in the electronics domain; the kitchen domain flips the sign.
FLIP_WORDS = {"heavy": NEGATIVE, "loud": NEGATIVE, "sharp": POSITIVE, "compact": POSITIVE}

STOPWORDS = ("the", "a", "an", "i", "it", "is", "this", "and", "to", "of", "too",
             "very", "really", "quite", "me", "my", "was", "are", "but", "in", "on")
FILLERS = ("think", "seems", "looks", "feels", "overall", "honestly", "frankly")


@dataclass(frozen=True)
class SynthConfig:
    sd_size: int = 5000
    td_train_size: int = 600
    td_test_size: int = 200
    kitchen_fraction: float = 0.8
    embed_dim: int = 24
    seed: int = 2024


@dataclass
class SynthBenchmark:
    sd: list[SentenceRecord]
    td_train: list[AspectInstance]
    td_test: list[AspectInstance]
    lexicon: PosLexicon
    table: EmbeddingTable


def build_lexicon() -> PosLexicon:
    nouns = set()
    for phrase in ELECTRONICS_ASPECTS + KITCHEN_ASPECTS:
        nouns.update(phrase)
    nouns.update({"thing", "product", "purchase", "quality"})
    return PosLexicon(nouns=frozenset(nouns), stopwords=frozenset(STOPWORDS))


def build_embeddings(cfg: SynthConfig) -> EmbeddingTable:
    """Random vectors with a shared domain direction added to each domain's nouns.

    Opinion words stay unstructured on purpose: the table should help
    the retrieval stage separate domains without handing the classifier
    a ready-made sentiment axis.
    """
    rng = stream_rng(cfg.seed, "synth", "embeddings")
    dim = cfg.embed_dim
    axis_e = rng.normal(size=dim)
    axis_e /= np.linalg.norm(axis_e)
    axis_k = rng.normal(size=dim)
    axis_k -= axis_k @ axis_e * axis_e
    axis_k /= np.linalg.norm(axis_k)

    words = set(STOPWORDS) | set(FILLERS) | set(NEUTRAL_WORDS) | set(FLIP_WORDS)
    words |= set(COMMON_POSITIVE) | set(HELDOUT_POSITIVE) | set(COMMON_NEGATIVE) | set(HELDOUT_NEGATIVE)
    electronics = {t for phrase in ELECTRONICS_ASPECTS for t in phrase}
    kitchen = {t for phrase in KITCHEN_ASPECTS for t in phrase}
    words |= electronics | kitchen | {"."}

    vectors = {}
    for word in sorted(words):
        vec = 0.3 * rng.normal(size=dim)
        if word in electronics:
            vec += axis_e
        elif word in kitchen:
            vec += axis_k
        vectors[word] = vec
    return EmbeddingTable(dim=dim, vectors=vectors)


def _source_text(rng: np.random.Generator, domain_aspects, opinion: str, opinion2: str) -> str:
    aspect = " ".join(domain_aspects[rng.integers(len(domain_aspects))])
    aspect2 = " ".join(domain_aspects[rng.integers(len(domain_aspects))])
    style = rng.random()
    if style < 0.03:
        return f"It is {opinion}."
    if style < 0.30:
        return f"The {aspect} is {opinion}."
    if style < 0.55:
        return f"The {aspect} is {opinion}. This {aspect} is really {opinion2}."
    if style < 0.75:
        return f"I think the {aspect} is {opinion}."
    if style < 0.90:
        return f"The {aspect} seems {opinion} and the {aspect2} is {opinion2}."
    return f"{opinion.capitalize()} {aspect}. Really {opinion2} overall."


def generate_source_corpus(cfg: SynthConfig) -> list[SentenceRecord]:
    rng = stream_rng(cfg.seed, "synth", "source")
    records = []
    flip_words = sorted(FLIP_WORDS)
    for i in range(cfg.sd_size):
        kitchen = rng.random() < cfg.kitchen_fraction
        aspects = KITCHEN_ASPECTS if kitchen else ELECTRONICS_ASPECTS
        positive = rng.random() < 0.5
        pool = COMMON_POSITIVE + HELDOUT_POSITIVE if positive else COMMON_NEGATIVE + HELDOUT_NEGATIVE
        opinion = pool[rng.integers(len(pool))]
        opinion2 = pool[rng.integers(len(pool))]
        if rng.random() < 0.15:
            # Flip words obey the domain's polarity, not the global lexicon:
            # the kitchen domain reverses their electronics sign.
            wanted = POSITIVE if positive else NEGATIVE
            if kitchen:
                matching = [w for w in flip_words if FLIP_WORDS[w] != wanted]
            else:
                matching = [w for w in flip_words if FLIP_WORDS[w] == wanted]
            opinion = matching[rng.integers(len(matching))]
        label = SENT_POSITIVE if positive else SENT_NEGATIVE
        records.append(SentenceRecord(id=f"sd-{i:05d}", text=_source_text(rng, aspects, opinion, opinion2), label=label))
    return records


def _target_tokens(rng: np.random.Generator, aspect: tuple[str, ...], opinion: str) -> tuple[list[str], int]:
    """Token list and the aspect start position."""
    style = int(rng.integers(4))
    if style == 0:
        return ["the", *aspect, "is", opinion, "."], 1
    if style == 1:
        return ["i", "think", "the", *aspect, "is", "really", opinion, "."], 3
    if style == 2:
        return ["the", *aspect, "looks", opinion, "to", "me", "."], 1
    return ["this", *aspect, "seems", "quite", opinion, "."], 1


def generate_target_split(cfg: SynthConfig, split: str, size: int) -> list[AspectInstance]:
    """Aspect-level electronics instances.

    The train split uses only the common opinion words; the test split
    mixes in held-out and flip words to probe transferred knowledge.
    """
    rng = stream_rng(cfg.seed, "synth", "target", split)
    heldout_rate = 0.0 if split == "train" else 0.30
    flip_rate = 0.0 if split == "train" else 0.20
    flip_words = sorted(FLIP_WORDS)
    instances = []
    for i in range(size):
        label = int(rng.integers(3))
        if label == NEUTRAL:
            opinion = NEUTRAL_WORDS[rng.integers(len(NEUTRAL_WORDS))]
        else:
            draw = rng.random()
            if draw < flip_rate:
                matching = [w for w in flip_words if FLIP_WORDS[w] == label]
                opinion = matching[rng.integers(len(matching))]
            elif draw < flip_rate + heldout_rate:
                pool = HELDOUT_POSITIVE if label == POSITIVE else HELDOUT_NEGATIVE
                opinion = pool[rng.integers(len(pool))]
            else:
                pool = COMMON_POSITIVE if label == POSITIVE else COMMON_NEGATIVE
                opinion = pool[rng.integers(len(pool))]
        aspect = ELECTRONICS_ASPECTS[rng.integers(len(ELECTRONICS_ASPECTS))]
        tokens, start = _target_tokens(rng, aspect, opinion)
        instances.append(
            AspectInstance(
                id=f"td-{split}-{i:04d}",
                tokens=tuple(tokens),
                aspect_start=start,
                aspect_end=start + len(aspect),
                label=label,
            )
        )
    return instances


def generate_benchmark(cfg: SynthConfig | None = None) -> SynthBenchmark:
    cfg = cfg or SynthConfig()
    return SynthBenchmark(
        sd=generate_source_corpus(cfg),
        td_train=generate_target_split(cfg, "train", cfg.td_train_size),
        td_test=generate_target_split(cfg, "test", cfg.td_test_size),
        lexicon=build_lexicon(),
        table=build_embeddings(cfg),
    )


def write_benchmark(bench: SynthBenchmark, outdir: str | Path) -> dict[str, Path]:
    """Write every benchmark artifact in the formats the CLI consumes."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "sd": outdir / "sd.jsonl",
        "td_train": outdir / "td_train.jsonl",
        "td_test": outdir / "td_test.jsonl",
        "embeddings": outdir / "embeddings.txt",
        "nouns": outdir / "nouns.txt",
        "stopwords": outdir / "stopwords.txt",
    }
    save_sentence_corpus(bench.sd, paths["sd"])
    save_aspect_dataset(bench.td_train, paths["td_train"])
    save_aspect_dataset(bench.td_test, paths["td_test"])
    save_embeddings(bench.table, paths["embeddings"])
    paths["nouns"].write_text("\n".join(sorted(bench.lexicon.nouns)) + "\n", encoding="utf-8")
    paths["stopwords"].write_text("\n".join(sorted(bench.lexicon.stopwords)) + "\n", encoding="utf-8")
    return paths
