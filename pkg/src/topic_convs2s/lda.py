"""Collapsed Gibbs sampling LDA, topic vocabulary and topic embedding matrix."""

from __future__ import annotations

import hashlib
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

EMBEDDING_VARIANCE = 0.1


@dataclass
class TopicModel:
    num_topics: int
    alpha: float
    beta: float
    words: list[str]                  # column index -> word
    topic_word_counts: np.ndarray     # (num_topics, V)
    doc_topic_counts: np.ndarray      # (D, num_topics)
    assignments: list[np.ndarray]     # per document, one topic id per token
    rng_seed: int = 0
    docs: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def vocab_size(self) -> int:
        return len(self.words)

    def word_index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    def corpus_frequency(self) -> np.ndarray:
        return self.topic_word_counts.sum(axis=0)

    def topic_word_distribution(self) -> np.ndarray:
        """Smoothed p(word | topic), rows sum to one."""
        num = self.topic_word_counts + self.beta
        return num / num.sum(axis=1, keepdims=True)

    def dominant_topics(self) -> np.ndarray:
        """argmax topic per document (lowest id on ties)."""
        return self.doc_topic_counts.argmax(axis=1)

    def check_counts(self) -> None:
        """Raise AssertionError if the count matrices disagree with the assignments."""
        twc = np.zeros_like(self.topic_word_counts)
        dtc = np.zeros_like(self.doc_topic_counts)
        for d, (doc, z) in enumerate(zip(self.docs, self.assignments)):
            np.add.at(twc, (z, doc), 1)
            np.add.at(dtc[d], z, 1)
        assert np.array_equal(twc, self.topic_word_counts), "topic-word counts drifted"
        assert np.array_equal(dtc, self.doc_topic_counts), "doc-topic counts drifted"
        assert (self.topic_word_counts >= 0).all() and (self.doc_topic_counts >= 0).all()

    # -- persistence --------------------------------------------------------
    def save(self, path) -> None:
        lines = [
            "# topic-model v1",
            f"num_topics\t{self.num_topics}",
            f"alpha\t{self.alpha!r}",
            f"beta\t{self.beta!r}",
            f"seed\t{self.rng_seed}",
            f"vocab_size\t{self.vocab_size}",
            "words\t" + "\t".join(self.words),
        ]
        lines += [" ".join(str(int(c)) for c in row) for row in self.topic_word_counts]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TopicModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if not lines or lines[0] != "# topic-model v1":
            raise ValueError(f"{path}: not a topic model file")
        header = {}
        for line in lines[1:7]:
            key, _, value = line.partition("\t")
            header[key] = value
        num_topics = int(header["num_topics"])
        words = header["words"].split("\t") if header["words"] else []
        if len(words) != int(header["vocab_size"]):
            raise ValueError(f"{path}: vocab_size does not match the word list")
        rows = [list(map(int, line.split())) for line in lines[7:7 + num_topics]]
        counts = np.array(rows, dtype=np.int64).reshape(num_topics, len(words))
        return cls(
            num_topics=num_topics,
            alpha=float(header["alpha"]),
            beta=float(header["beta"]),
            words=words,
            topic_word_counts=counts,
            doc_topic_counts=np.zeros((0, num_topics), dtype=np.int64),
            assignments=[],
            rng_seed=int(header["seed"]),
        )


def universal_words(corpus: Sequence[Sequence[str]], max_doc_fraction: float = 0.4,
                    stopwords: Iterable[str] = ()) -> set[str]:
    """Words whose document frequency exceeds ``max_doc_fraction``, plus stopwords."""
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(set(doc))
    n = max(len(corpus), 1)
    found = {w for w, c in df.items() if c / n > max_doc_fraction}
    return found | set(stopwords)


def fit_lda(
    corpus: Sequence[Sequence[str]],
    num_topics: int = 16,
    alpha: float = 0.1,
    beta: float = 0.01,
    iterations: int = 500,
    seed: int = 0,
    callback: Callable[[int, TopicModel], None] | None = None,
) -> TopicModel:
    """Run ``iterations`` sweeps of collapsed Gibbs sampling.

    Each token's topic is resampled from
    ``p(z=t) ∝ (n_wt + beta) / (n_t + V*beta) * (n_dt + alpha)``.
    ``callback(sweep, model)`` is invoked after every sweep.
    """
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if num_topics < 2:
        raise ValueError("num_topics must be >= 2")
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    kept = []
    for i, doc in enumerate(corpus):
        if len(doc) == 0:
            warnings.warn(f"document {i} is empty and was skipped", stacklevel=2)
            continue
        kept.append(doc)
    if not kept:
        raise ValueError("corpus has no non-empty documents")

    words = sorted({w for doc in kept for w in doc})
    index = {w: i for i, w in enumerate(words)}
    docs = [np.array([index[w] for w in doc], dtype=np.int64) for doc in kept]
    V, K = len(words), num_topics

    rng = np.random.default_rng(seed)
    nwt = np.zeros((K, V), dtype=np.int64)
    ndt = np.zeros((len(docs), K), dtype=np.int64)
    nt = np.zeros(K, dtype=np.int64)
    assignments = []
    for d, doc in enumerate(docs):
        z = rng.integers(K, size=len(doc))
        np.add.at(nwt, (z, doc), 1)
        np.add.at(ndt[d], z, 1)
        np.add.at(nt, z, 1)
        assignments.append(z)

    model = TopicModel(K, alpha, beta, words, nwt, ndt, assignments, seed, docs)
    vbeta = V * beta
    for sweep in range(iterations):
        uniforms = rng.random(sum(len(doc) for doc in docs))
        u_pos = 0
        for d, doc in enumerate(docs):
            z = assignments[d]
            ndt_d = ndt[d]
            for i in range(len(doc)):
                w = doc[i]
                t_old = z[i]
                nwt[t_old, w] -= 1
                ndt_d[t_old] -= 1
                nt[t_old] -= 1
                weights = (nwt[:, w] + beta) / (nt + vbeta) * (ndt_d + alpha)
                cdf = np.cumsum(weights)
                t_new = int(np.searchsorted(cdf, uniforms[u_pos] * cdf[-1], side="right"))
                t_new = min(t_new, K - 1)
                u_pos += 1
                z[i] = t_new
                nwt[t_new, w] += 1
                ndt_d[t_new] += 1
                nt[t_new] += 1
        if callback is not None:
            callback(sweep, model)
    return model


def topic_purity(predicted: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of documents whose learned topic agrees with its cluster majority label."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    total = 0
    for topic in np.unique(predicted):
        members = labels[predicted == topic]
        total += np.bincount(members).max()
    return total / len(labels)


@dataclass
class TopicVocabulary:
    words: list[str]                     # K, in first-seen order over topics
    per_topic_top_words: list[list[str]]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in set(self.words)

    def topics_of(self, word: str) -> list[int]:
        return [t for t, top in enumerate(self.per_topic_top_words) if word in top]

    def ids(self, vocab) -> list[int]:
        """Ids of the topic words present in ``vocab`` (reserved tokens excluded)."""
        return [vocab.stoi[w] for w in self.words if w in vocab.stoi and vocab.stoi[w] >= 4]

    def to_text(self) -> str:
        lines = [w + "\t" + ",".join(map(str, self.topics_of(w))) for w in self.words]
        return "".join(line + "\n" for line in lines)

    def top_words_table(self) -> str:
        """``topic<TAB>rank<TAB>word`` lines, ranks starting at 1."""
        lines = [
            f"{t}\t{rank}\t{w}"
            for t, top in enumerate(self.per_topic_top_words)
            for rank, w in enumerate(top, start=1)
        ]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TopicVocabulary":
        words, per_topic = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            word, _, topics = line.partition("\t")
            words.append(word)
            for t in filter(None, topics.split(",")):
                per_topic.setdefault(int(t), []).append(word)
        n = max(per_topic, default=-1) + 1
        # per-topic rank order is not persisted; file order is used
        return cls(words, [per_topic.get(t, []) for t in range(n)])

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def topic_vocabulary(model: TopicModel, top_n: int = 200, universal: Iterable[str] = ()) -> TopicVocabulary:
    """Top ``top_n`` non-universal words of every topic and their union.

    Words are ranked by their assignment count in the topic, then corpus
    frequency, then lexicographically. Words never assigned to a topic are not
    listed for it.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    universal = set(universal)
    freq = model.corpus_frequency()
    candidates = [i for i, w in enumerate(model.words) if w not in universal]
    per_topic: list[list[str]] = []
    truncated = False
    for t in range(model.num_topics):
        row = model.topic_word_counts[t]
        ranked = sorted(
            (i for i in candidates if row[i] > 0),
            key=lambda i: (-row[i], -freq[i], model.words[i]),
        )
        truncated |= len(ranked) < top_n
        per_topic.append([model.words[i] for i in ranked[:top_n]])
    if truncated:
        warnings.warn(f"fewer than top_n={top_n} candidate words in some topics; lists truncated", stacklevel=2)
    words: list[str] = []
    seen = set()
    for top in per_topic:
        for w in top:
            if w not in seen:
                seen.add(w)
                words.append(w)
    return TopicVocabulary(words, per_topic)


def projection_matrix(num_topics: int, d: int, seed: int) -> np.ndarray:
    """Fixed random ±1/sqrt(num_topics) matrix bridging topic counts to width d."""
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(num_topics, d)) * 2 - 1
    return signs / np.sqrt(num_topics)


def standardize(raw: np.ndarray, variance: float = EMBEDDING_VARIANCE) -> np.ndarray:
    """Shift and scale all entries jointly to mean 0 and the given population variance."""
    raw = np.asarray(raw, dtype=np.float64)
    std = raw.std()
    if raw.size == 0 or std == 0 or not np.isfinite(std):
        warnings.warn("topic distribution matrix has zero variance; returning zeros", stacklevel=2)
        return np.zeros_like(raw)
    out = (raw - raw.mean()) / std * np.sqrt(variance)
    # one correction pass removes the O(eps) residual mean left by rounding
    out -= out.mean()
    return out


def embedding_from_raw(raw: np.ndarray, d: int, seed: int = 0) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if d < 1:
        raise ValueError("d must be >= 1")
    if raw.shape[1] != d:
        raw = raw @ projection_matrix(raw.shape[1], d, seed)
    return standardize(raw)


def topic_embedding_matrix(model: TopicModel, topic_vocab: TopicVocabulary, d: int) -> np.ndarray:
    """K x d topic embeddings from each topic word's per-topic assignment counts."""
    index = model.word_index()
    missing = [w for w in topic_vocab.words if w not in index]
    if missing:
        raise KeyError(f"topic words not in the topic model: {missing[:5]}")
    cols = [index[w] for w in topic_vocab.words]
    raw = model.topic_word_counts[:, cols].T.astype(np.float64)
    return embedding_from_raw(raw, d, model.rng_seed)
