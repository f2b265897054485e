"""Corpus ingestion: records, tokenization, pseudo aspect extraction, vocabulary.

Sentence-level records carry a binary polarity; aspect-level instances
carry a token span and a 2- or 3-way polarity.  Sampled sentence-level
data is converted to pseudo aspect-level data by extracting the most
frequent noun phrase of each review as its aspect term and annotating it
with the review's sentence-level label.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

# Word runs or single non-space punctuation marks, on lowercased text.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

DEFAULT_NOUN_SUFFIXES = ("tion", "sion", "ness", "ity", "ment", "ship", "ism")


class CorpusError(ValueError):
    """Raised for malformed records, files, or lexicons."""


@dataclass(frozen=True)
class SentenceRecord:
    """A raw review with a sentence-level binary label (0=positive, 1=negative)."""

    id: str
    text: str
    label: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError(f"record {self.id!r}: text is empty")
        if self.label not in (0, 1):
            raise CorpusError(f"record {self.id!r}: sentence label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class AspectInstance:
    """A tokenized sentence with an aspect span [start, end) and polarity code."""

    id: str
    tokens: tuple[str, ...]
    aspect_start: int
    aspect_end: int
    label: int

    def __post_init__(self) -> None:
        if not (0 <= self.aspect_start < self.aspect_end <= len(self.tokens)):
            raise CorpusError(
                f"instance {self.id!r}: span [{self.aspect_start},{self.aspect_end}) "
                f"invalid for {len(self.tokens)} tokens"
            )
        if self.label not in (0, 1, 2):
            raise CorpusError(f"instance {self.id!r}: label must be in {{0,1,2}}, got {self.label}")

    @property
    def aspect_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.aspect_start : self.aspect_end]


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word tokens and standalone punctuation."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split on ``.!?`` followed by whitespace; terminators are retained."""
    parts = _SENTENCE_SPLIT_RE.split(text.strip())
    return [p for p in parts if p]


@dataclass(frozen=True)
class PosLexicon:
    """Lexicon-plus-suffix noun tagger with a stopword filter.

    Stands in for a full part-of-speech toolkit: a token counts as a noun
    if it is listed in the noun lexicon or ends in a known noun suffix,
    and is not a stopword.
    """

    nouns: frozenset[str]
    stopwords: frozenset[str]
    noun_suffixes: tuple[str, ...] = DEFAULT_NOUN_SUFFIXES

    def __post_init__(self) -> None:
        overlap = self.nouns & self.stopwords
        if overlap:
            raise CorpusError(f"stopwords overlap noun lexicon: {sorted(overlap)[:5]}")

    def is_noun(self, token: str) -> bool:
        if token in self.stopwords:
            return False
        if token in self.nouns:
            return True
        return any(token.endswith(s) and len(token) > len(s) for s in self.noun_suffixes)


def load_lexicon(nouns_path: str | Path, stopwords_path: str | Path,
                 noun_suffixes: Sequence[str] = DEFAULT_NOUN_SUFFIXES) -> PosLexicon:
    """Load noun and stopword lists from one-token-per-line text files."""

    def read_words(path: str | Path) -> frozenset[str]:
        words = set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
        return frozenset(words)

    return PosLexicon(
        nouns=read_words(nouns_path),
        stopwords=read_words(stopwords_path),
        noun_suffixes=tuple(noun_suffixes),
    )


def tag_nouns(tokens: Sequence[str], lex: PosLexicon) -> list[bool]:
    return [lex.is_noun(t) for t in tokens]


def _noun_runs(mask: Sequence[bool]) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True positions, as [start, end) pairs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def _count_phrase(tokens: Sequence[str], phrase: tuple[str, ...]) -> int:
    n, m = len(tokens), len(phrase)
    return sum(1 for i in range(n - m + 1) if tuple(tokens[i : i + m]) == phrase)


def _find_phrase(tokens: Sequence[str], phrase: tuple[str, ...]) -> int:
    n, m = len(tokens), len(phrase)
    for i in range(n - m + 1):
        if tuple(tokens[i : i + m]) == phrase:
            return i
    raise CorpusError(f"phrase {phrase!r} not found")  # unreachable: phrases come from runs


def extract_pseudo_aspect(record: SentenceRecord, lex: PosLexicon) -> AspectInstance | None:
    """Extract one pseudo aspect-level instance from a review, or None.

    Candidate terms are the maximal noun runs of the tokenized review.
    The candidate whose full phrase occurs most often anywhere in the
    review wins; ties go to the earliest first occurrence.  The instance
    inherits the review's sentence-level label.
    """
    tokens = tokenize(record.text)
    mask = tag_nouns(tokens, lex)
    candidates = {tuple(tokens[s:e]) for s, e in _noun_runs(mask)}
    if not candidates:
        return None

    def rank(phrase: tuple[str, ...]) -> tuple[int, int]:
        # Most frequent first, then earliest first occurrence.
        return (-_count_phrase(tokens, phrase), _find_phrase(tokens, phrase))

    # Sorted so the winner never depends on set iteration order.
    best = min(sorted(candidates), key=rank)
    start = _find_phrase(tokens, best)
    return AspectInstance(
        id=record.id,
        tokens=tuple(tokens),
        aspect_start=start,
        aspect_end=start + len(best),
        label=record.label,
    )


@dataclass
class Vocabulary:
    """Token-to-id map with reserved padding (0) and unknown (1) ids."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.token_to_id[token] = idx
        self.id_to_token.append(token)
        return idx

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        payload = {"pad": PAD_TOKEN, "unk": UNK_TOKEN, "tokens": self.id_to_token[2:]}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = cls()
        for token in payload["tokens"]:
            vocab.add(token)
        return vocab


def build_vocab(token_seqs: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary over token sequences.

    Tokens with frequency >= min_count get ids in (frequency desc, token
    asc) order, after the reserved padding and unknown ids.
    """
    if min_count < 1:
        raise CorpusError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for seq in token_seqs:
        counts.update(seq)
    vocab = Vocabulary()
    for token, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if counts[token] >= min_count:
            vocab.add(token)
    return vocab


def load_sentence_corpus(path: str | Path) -> list[SentenceRecord]:
    """Read a JSON-lines sentence corpus: {"id", "text", "label"} per line."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(SentenceRecord(id=str(obj["id"]), text=obj["text"], label=int(obj["label"])))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad sentence record: {exc}") from exc
    return records


def save_sentence_corpus(records: Iterable[SentenceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "text": r.text, "label": r.label}) + "\n")


def load_aspect_dataset(path: str | Path) -> list[AspectInstance]:
    """Read a JSON-lines aspect dataset:
    {"id", "tokens", "aspect_start", "aspect_end", "label"} per line."""
    instances = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            instances.append(
                AspectInstance(
                    id=str(obj["id"]),
                    tokens=tuple(obj["tokens"]),
                    aspect_start=int(obj["aspect_start"]),
                    aspect_end=int(obj["aspect_end"]),
                    label=int(obj["label"]),
                )
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad aspect instance: {exc}") from exc
    return instances


def save_aspect_dataset(instances: Iterable[AspectInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                json.dumps(
                    {
                        "id": inst.id,
                        "tokens": list(inst.tokens),
                        "aspect_start": inst.aspect_start,
                        "aspect_end": inst.aspect_end,
                        "label": inst.label,
                    }
                )
                + "\n"
            )


def pseudo_label_corpus(records: Iterable[SentenceRecord],
                        lex: PosLexicon) -> tuple[list[AspectInstance], int]:
    """Convert sampled sentence records into pseudo aspect instances.

    Records without any noun candidate are dropped; returns (instances,
    dropped_count).
    """
    instances = []
    dropped = 0
    for record in records:
        inst = extract_pseudo_aspect(record, lex)
        if inst is None:
            dropped += 1
        else:
            instances.append(inst)
    return instances, dropped
