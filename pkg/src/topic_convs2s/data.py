"""Corpus ingestion, vocabularies, batching and the synthetic toy corpus."""

from __future__ import annotations

import hashlib
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")

MAX_SOURCE_LEN = 128
MAX_TARGET_LEN = 64

Pair = tuple[list[str], list[str]]


class CorpusFormatError(ValueError):
    """A corpus line could not be parsed."""


class Vocabulary:
    """Token/id maps with the four reserved ids fixed at 0-3."""

    def __init__(self, tokens: Sequence[str] = (), counts: dict[str, int] | None = None):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        self.counts: dict[str, int] = dict(counts or {})
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS):
                continue
            if strip and i == EOS:
                break
            out.append(self.itos[i])
        return out

    def to_text(self) -> str:
        lines = [f"{tok}\t{self.counts.get(tok, 0)}" for tok in self.itos[len(SPECIALS):]]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens, counts = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, _, count = line.partition("\t")
            tokens.append(tok)
            counts[tok] = int(count or 0)
        return cls(tokens, counts)

    def hash(self) -> str:
        # token order only: counts are informational
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def load_corpus(path) -> list[Pair]:
    """Read ``source<TAB>target`` lines; raises on malformed lines."""
    pairs: list[Pair] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                skipped += 1
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected exactly one TAB separating source and target, "
                    f"found {len(parts) - 1}"
                )
            pairs.append((parts[0].split(), parts[1].split()))
    if skipped:
        logger.info("skipped %d empty lines in %s", skipped, path)
    return pairs


def save_corpus(pairs: Iterable[Pair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            fh.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")


def build_vocab(pairs: Iterable[Pair], max_size: int = 50_000, min_count: int = 1) -> Vocabulary:
    """Keep the most frequent tokens (ties broken lexicographically).

    ``max_size`` counts the four reserved entries.
    """
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed {len(SPECIALS)}")
    counts: Counter[str] = Counter()
    for src, tgt in pairs:
        counts.update(src)
        counts.update(tgt)
    for special in SPECIALS:
        counts.pop(special, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    kept = ranked[: max_size - len(SPECIALS)]
    return Vocabulary(kept, {t: counts[t] for t in kept})


@dataclass
class Batch:
    source: np.ndarray          # (B, m) PAD-right
    target: np.ndarray          # (B, n) BOS ... EOS, PAD-right
    source_lengths: np.ndarray
    target_lengths: np.ndarray  # framed length, BOS and EOS included
    topic_mask: np.ndarray      # (B, m) source token is in the topic vocabulary
    pairs: list[Pair] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return self.source.shape[0]

    @property
    def decoder_input(self) -> np.ndarray:
        return self.target[:, :-1]

    @property
    def decoder_output(self) -> np.ndarray:
        return self.target[:, 1:]


def frame_target(ids: Sequence[int]) -> list[int]:
    return [BOS, *ids, EOS]


def make_batch(
    encoded: Sequence[tuple[list[int], list[int]]],
    topic_ids: set[int] | frozenset[int] = frozenset(),
    pairs: list[Pair] | None = None,
) -> Batch:
    """Pad already-encoded (source ids, target ids) pairs into one batch."""
    src_lens = np.array([len(s) for s, _ in encoded], dtype=np.int64)
    framed = [frame_target(t) for _, t in encoded]
    tgt_lens = np.array([len(t) for t in framed], dtype=np.int64)
    src = np.full((len(encoded), max(int(src_lens.max()), 1)), PAD, dtype=np.int64)
    tgt = np.full((len(encoded), int(tgt_lens.max())), PAD, dtype=np.int64)
    for i, ((s, _), t) in enumerate(zip(encoded, framed)):
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
    topic_mask = np.isin(src, np.fromiter(topic_ids, dtype=np.int64, count=len(topic_ids)))
    topic_mask &= src != PAD
    return Batch(src, tgt, src_lens, tgt_lens, topic_mask, list(pairs or []))


def make_batches(
    pairs: Sequence[Pair],
    vocab: Vocabulary,
    topic_vocab=None,
    batch_size: int = 32,
    seed: int | None = 0,
    max_source_len: int = MAX_SOURCE_LEN,
    max_target_len: int = MAX_TARGET_LEN,
) -> list[Batch]:
    """Length-bucketed batches; batch order is shuffled when ``seed`` is given.

    ``max_target_len`` bounds the decoder length (target tokens plus EOS).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    topic_ids = frozenset(topic_vocab.ids(vocab)) if topic_vocab is not None else frozenset()
    items = []
    for idx, (src, tgt) in enumerate(pairs):
        if len(src) > max_source_len or len(tgt) + 1 > max_target_len:
            warnings.warn(f"pair {idx} exceeds the maximum length and was truncated", stacklevel=2)
            src, tgt = src[:max_source_len], tgt[: max_target_len - 1]
        items.append((len(src), len(tgt), idx, (src, tgt)))
    items.sort(key=lambda it: it[:3])
    batches = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        chunk_pairs = [it[3] for it in chunk]
        encoded = [(vocab.encode(s), vocab.encode(t)) for s, t in chunk_pairs]
        batches.append(make_batch(encoded, topic_ids, chunk_pairs))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


# -- synthetic corpus ---------------------------------------------------------

TOY_TOPICS: tuple[tuple[str, ...], ...] = (
    ("team", "match", "goal", "coach", "league", "player", "season", "cup", "striker", "stadium"),
    ("market", "stock", "bank", "trade", "price", "shares", "investor", "profit", "economy", "rate"),
    ("vote", "party", "minister", "election", "leader", "talks", "policy", "senate", "reform", "campaign"),
    ("storm", "rain", "flood", "wind", "coast", "weather", "snow", "heat", "forecast", "drought"),
)
TOY_FILLERS = ("the", "of", "on", "in", "said")


@dataclass
class ToyCorpus:
    pairs: list[Pair]
    labels: list[int]                   # planted topic of each pair
    topic_words: list[tuple[str, ...]]  # keywords of each planted topic
    fillers: tuple[str, ...] = TOY_FILLERS

    def sources(self) -> list[list[str]]:
        return [src for src, _ in self.pairs]


def toy_corpus(seed: int, num_pairs: int, num_topics: int = 2, keywords_per_pair: int = 3) -> ToyCorpus:
    """Keyword-bearing templated sources with rule-based targets.

    Each source mixes ``keywords_per_pair`` distinct keywords of one planted
    topic with filler words. The target lists those keywords ordered by their
    rank within the topic, so it is a deterministic function of the source.
    """
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    if not 1 <= num_topics <= len(TOY_TOPICS):
        raise ValueError(f"num_topics must be in [1, {len(TOY_TOPICS)}]")
    rng = np.random.default_rng(seed)
    topics = list(TOY_TOPICS[:num_topics])
    pairs, labels = [], []
    for _ in range(num_pairs):
        label = int(rng.integers(num_topics))
        words = topics[label]
        picked = sorted(rng.choice(len(words), size=keywords_per_pair, replace=False).tolist())
        order = rng.permutation(picked).tolist()
        src: list[str] = ["the"]
        for w in order:
            src.append(words[w])
            src.append(str(rng.choice(TOY_FILLERS[1:4])))
        src.append("said")
        tgt = [words[w] for w in picked]
        pairs.append((src, tgt))
        labels.append(label)
    return ToyCorpus(pairs, labels, topics)
