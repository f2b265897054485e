"""Coarse-to-fine instance sampling over a sentence-level corpus.

Coarse stage: Okapi BM25 over an inverted index selects the top-N
candidates per query.  Fine stage: cosine similarity between mean-pooled
word embeddings reranks the candidates down to top-K.  The union of the
per-query results, de-duplicated by doc id, is the sampled pretraining
corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import AspectInstance, SentenceRecord, tokenize
from .seeds import stream_rng


class RetrievalError(ValueError):
    """Raised for invalid index builds, configs, or embedding files."""


STRATEGIES = ("random", "coarse", "coarse2fine")


@dataclass(frozen=True)
class SampleConfig:
    """Coarse-to-fine sampling knobs: N coarse and K fine instances per query."""

    n: int = 500
    k: int = 300
    strategy: str = "coarse2fine"
    seed: int = 0

    def __post_init__(self) -> None:
        if not (1 <= self.k <= self.n):
            raise RetrievalError(f"need 1 <= K <= N, got K={self.k}, N={self.n}")
        if self.strategy not in STRATEGIES:
            raise RetrievalError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")


@dataclass
class Bm25Index:
    """Okapi BM25 inverted index with per-document statistics."""

    k1: float
    b: float
    doc_ids: list[str]
    doc_tokens: dict[str, tuple[str, ...]]
    doc_len: dict[str, int]
    postings: dict[str, list[tuple[str, int]]]  # term -> [(doc_id, tf)], sorted by doc id
    n_docs: int
    avg_doc_len: float
    _tf: dict[str, dict[str, int]] = field(repr=False, default_factory=dict)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def term_freq(self, term: str, doc_id: str) -> int:
        return self._tf.get(doc_id, {}).get(term, 0)


def build_index(corpus: Sequence[SentenceRecord], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Tokenize the corpus and build the inverted index."""
    if not corpus:
        raise RetrievalError("cannot build an index over an empty corpus")
    if k1 <= 0:
        raise RetrievalError(f"k1 must be > 0, got {k1}")
    if not (0.0 <= b <= 1.0):
        raise RetrievalError(f"b must be in [0, 1], got {b}")

    doc_ids: list[str] = []
    doc_tokens: dict[str, tuple[str, ...]] = {}
    doc_len: dict[str, int] = {}
    tf: dict[str, dict[str, int]] = {}
    for record in corpus:
        if record.id in doc_tokens:
            raise RetrievalError(f"duplicate doc id {record.id!r}")
        tokens = tuple(tokenize(record.text))
        doc_ids.append(record.id)
        doc_tokens[record.id] = tokens
        doc_len[record.id] = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        tf[record.id] = counts

    postings: dict[str, list[tuple[str, int]]] = {}
    for doc_id in sorted(doc_ids):
        for term, count in tf[doc_id].items():
            postings.setdefault(term, []).append((doc_id, count))

    n = len(doc_ids)
    return Bm25Index(
        k1=k1,
        b=b,
        doc_ids=doc_ids,
        doc_tokens=doc_tokens,
        doc_len=doc_len,
        postings=postings,
        n_docs=n,
        avg_doc_len=sum(doc_len.values()) / n,
        _tf=tf,
    )


def bm25_score(query: Sequence[str], doc_id: str, index: Bm25Index) -> float:
    """Okapi BM25 score of one document for a tokenized query."""
    if doc_id not in index.doc_len:
        raise KeyError(f"unknown doc id {doc_id!r}")
    dl = index.doc_len[doc_id]
    ratio = dl / index.avg_doc_len if index.avg_doc_len > 0 else 0.0
    norm = index.k1 * (1.0 - index.b + index.b * ratio)
    score = 0.0
    for term in query:
        freq = index.term_freq(term, doc_id)
        if freq == 0:
            continue
        score += index.idf(term) * freq * (index.k1 + 1.0) / (freq + norm)
    return score


def _ranked(scored: Iterable[tuple[str, float]], top: int) -> list[str]:
    # Descending score, ties broken by ascending doc id.
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0]))
    return [doc_id for doc_id, _ in ordered[:top]]


def coarse_sample(query: Sequence[str], index: Bm25Index, n: int) -> list[str]:
    """Top-N doc ids by BM25 score against the query."""
    if n < 1:
        raise RetrievalError(f"N must be >= 1, got {n}")
    # Accumulate per-term contributions via the posting lists; docs never
    # touched by a query term keep score 0 and compete on the tie rule.
    scores = {doc_id: 0.0 for doc_id in index.doc_ids}
    for term in query:
        postings = index.postings.get(term)
        if not postings:
            continue
        idf = index.idf(term)
        for doc_id, freq in postings:
            dl = index.doc_len[doc_id]
            ratio = dl / index.avg_doc_len if index.avg_doc_len > 0 else 0.0
            norm = index.k1 * (1.0 - index.b + index.b * ratio)
            scores[doc_id] += idf * freq * (index.k1 + 1.0) / (freq + norm)
    return _ranked(scores.items(), n)


@dataclass
class EmbeddingTable:
    """Token to dense-vector map of fixed dimension."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise RetrievalError(f"embedding dimension must be >= 1, got {self.dim}")
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise RetrievalError(f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a text embedding file: one line per token, "token v1 ... vd"."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim < 1:
                raise RetrievalError(f"{path}:{lineno}: no vector components")
        elif len(values) != dim:
            raise RetrievalError(f"{path}:{lineno}: expected {dim} components, got {len(values)}")
        try:
            vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise RetrievalError(f"{path}:{lineno}: bad float: {exc}") from exc
    if dim is None:
        raise RetrievalError(f"{path}: empty embedding file")
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in sorted(table.vectors):
            values = " ".join(repr(float(v)) for v in table.vectors[token])
            fh.write(f"{token} {values}\n")


def sentence_embedding(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Mean of the vectors of in-table tokens; zero vector if none match."""
    hits = [table.vectors[t] for t in tokens if t in table.vectors]
    if not hits:
        return np.zeros(table.dim, dtype=np.float64)
    return np.mean(hits, axis=0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise RetrievalError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def fine_sample(
    query_emb: np.ndarray,
    candidates: Sequence[tuple[str, Sequence[str]]],
    table: EmbeddingTable,
    k: int,
) -> list[str]:
    """Top-K candidate doc ids by cosine similarity to the query embedding.

    Candidates are (doc_id, tokens) pairs; ties break by ascending doc id.
    """
    if k < 1:
        raise RetrievalError(f"K must be >= 1, got {k}")
    scored = [(doc_id, cosine(query_emb, sentence_embedding(tokens, table))) for doc_id, tokens in candidates]
    return _ranked(scored, k)


def build_sampled_dataset(
    td: Sequence[AspectInstance],
    sd: Sequence[SentenceRecord],
    cfg: SampleConfig,
    index: Bm25Index | None = None,
    table: EmbeddingTable | None = None,
) -> list[SentenceRecord]:
    """Sample target-related records from the source corpus.

    Each target sentence is a query; per-query results are unioned and
    de-duplicated by doc id, keeping first-encounter order.  The random
    strategy draws min(K * |TD|, |SD|) records uniformly without
    replacement, seeded by the config.
    """
    by_id: dict[str, SentenceRecord] = {}
    for record in sd:
        if record.id in by_id:
            raise RetrievalError(f"duplicate doc id {record.id!r} in source corpus")
        by_id[record.id] = record

    if cfg.strategy == "random":
        rng = stream_rng(cfg.seed, "sample", "random")
        size = min(cfg.k * len(td), len(sd))
        chosen = rng.choice(len(sd), size=size, replace=False)
        return [sd[int(i)] for i in chosen]

    if index is None:
        raise RetrievalError(f"strategy {cfg.strategy!r} requires a BM25 index")
    if cfg.strategy == "coarse2fine" and table is None:
        raise RetrievalError("strategy 'coarse2fine' requires an embedding table")

    selected: list[str] = []
    seen: set[str] = set()
    for instance in td:
        query = list(instance.tokens)
        if cfg.strategy == "coarse":
            # No reranking; keep per-query counts comparable across strategies.
            result = coarse_sample(query, index, cfg.k)
        else:
            candidates = coarse_sample(query, index, cfg.n)
            pairs = [(doc_id, index.doc_tokens[doc_id]) for doc_id in candidates]
            result = fine_sample(sentence_embedding(query, table), pairs, table, cfg.k)
        for doc_id in result:
            if doc_id not in seen:
                seen.add(doc_id)
                selected.append(doc_id)
    return [by_id[doc_id] for doc_id in selected]
