"""ROUGE-1/2/L with F-measure and recall-only reporting.

Scores against several references keep the reference with the best F-measure
(recall, then precision break ties). Hypotheses are never truncated.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, MutableMapping, Sequence

Tokens = Sequence[Hashable]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, hyp_total: float, ref_total: float, beta: float = 1.0) -> "RougeScore":
        p = overlap / hyp_total if hyp_total > 0 else 0.0
        r = overlap / ref_total if ref_total > 0 else 0.0
        return cls(p, r, f_measure(p, r, beta))

    def as_tuple(self) -> tuple[float, float, float]:
        return self.precision, self.recall, self.f1


ZERO = RougeScore(0.0, 0.0, 0.0)


def f_measure(p: float, r: float, beta: float = 1.0) -> float:
    if p + r == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Length of the longest common subsequence (O(|a||b|) dynamic program)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _best(scores: Iterable[RougeScore]) -> RougeScore:
    return max(scores, key=lambda s: (s.f1, s.recall, s.precision))


def _check_refs(references) -> None:
    if len(references) == 0:
        raise ValueError("at least one reference is required")


def rouge_n(hypothesis: Tokens, references: Sequence[Tokens], n: int = 1, beta: float = 1.0) -> RougeScore:
    """Clipped n-gram overlap between a hypothesis and its references."""
    _check_refs(references)
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(hypothesis) == 0:
        return ZERO
    hyp = ngrams(hypothesis, n)
    hyp_total = sum(hyp.values())
    results = []
    for ref_tokens in references:
        ref = ngrams(ref_tokens, n)
        overlap = sum((hyp & ref).values())
        results.append(RougeScore.from_counts(overlap, hyp_total, sum(ref.values()), beta))
    return _best(results)


def rouge_l(hypothesis: Tokens, references: Sequence[Tokens], beta: float = 1.0) -> RougeScore:
    """Sentence-level LCS-based ROUGE-L."""
    _check_refs(references)
    if len(hypothesis) == 0:
        return ZERO
    return _best(
        RougeScore.from_counts(lcs_length(hypothesis, ref), len(hypothesis), len(ref), beta)
        for ref in references
    )


def map_to_ids(tokens: Iterable[str], mapping: MutableMapping[str, int]) -> list[int]:
    """Replace each string by an integer id, assigning fresh ids in first-seen order."""
    out = []
    for tok in tokens:
        if tok not in mapping:
            mapping[tok] = len(mapping)
        out.append(mapping[tok])
    return out


def tokenize(line: str, level: str = "word", lowercase: bool = True) -> list[str]:
    """Whitespace words, or the non-space characters for ``level="char"``."""
    if lowercase:
        line = line.lower()
    if level == "word":
        return line.split()
    if level in ("char", "char-id"):
        return [ch for ch in line if not ch.isspace()]
    raise ValueError(f"unknown tokenization level {level!r}")


METRICS = ("rouge-1", "rouge-2", "rouge-l")


def score_all(hypothesis: Tokens, references: Sequence[Tokens]) -> dict[str, RougeScore]:
    return {
        "rouge-1": rouge_n(hypothesis, references, 1),
        "rouge-2": rouge_n(hypothesis, references, 2),
        "rouge-l": rouge_l(hypothesis, references),
    }


def corpus_scores(
    hypotheses: Sequence[str],
    references: Sequence[Sequence[str]],
    level: str = "word",
    lowercase: bool = True,
) -> dict[str, RougeScore]:
    """Average per-summary scores over a corpus.

    ``references`` holds one list of reference lines per reference set, each
    aligned with ``hypotheses``. With ``level="char-id"`` every line is split
    into characters and mapped to integer ids through one shared table.
    """
    if not references:
        raise ValueError("at least one reference set is required")
    for ref_set in references:
        if len(ref_set) != len(hypotheses):
            raise ValueError(
                f"line count mismatch: {len(hypotheses)} hypotheses vs {len(ref_set)} references"
            )
    table: dict[str, int] = {}

    def prep(line: str):
        toks = tokenize(line, level, lowercase)
        return map_to_ids(toks, table) if level == "char-id" else toks

    totals = {m: [0.0, 0.0, 0.0] for m in METRICS}
    for i, hyp_line in enumerate(hypotheses):
        hyp = prep(hyp_line)
        refs = [prep(ref_set[i]) for ref_set in references]
        for m, s in score_all(hyp, refs).items():
            acc = totals[m]
            acc[0] += s.precision
            acc[1] += s.recall
            acc[2] += s.f1
    count = max(len(hypotheses), 1)
    return {m: RougeScore(*(v / count for v in acc)) for m, acc in totals.items()}


def format_table(scores: dict[str, RougeScore], mode: str = "f1") -> str:
    """Tab-separated ``metric P R F`` table; recall mode prints only R."""
    if mode not in ("f1", "recall"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "recall":
        lines = ["metric\tR"] + [f"{m}\t{s.recall:.4f}" for m, s in scores.items()]
    else:
        lines = ["metric\tP\tR\tF"] + [
            f"{m}\t{s.precision:.4f}\t{s.recall:.4f}\t{s.f1:.4f}" for m, s in scores.items()
        ]
    return "\n".join(lines) + "\n"
