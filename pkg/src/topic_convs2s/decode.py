"""Greedy, sampling and beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import BOS, EOS, PAD
from .model import TopicConvS2S

# never generated: padding, and BOS which only starts a prefix
BANNED = (PAD, BOS)
DEFAULT_BEAM = 5


@dataclass
class Hypothesis:
    tokens: list[int]        # BOS first
    score: float = 0.0       # sum of generated-token log-probabilities
    finished: bool = False
    step_logprobs: list[float] = field(default_factory=list, repr=False)

    @property
    def generated(self) -> list[int]:
        return self.tokens[1:]

    @property
    def ended(self) -> bool:
        return len(self.tokens) > 1 and self.tokens[-1] == EOS

    def content(self) -> list[int]:
        """Generated ids with the trailing EOS removed."""
        out = self.generated
        return out[:-1] if out and out[-1] == EOS else out


def default_max_len(source_len: int, model: TopicConvS2S | None = None) -> int:
    n = int(1.5 * source_len) + 5
    if model is not None:
        n = min(n, model.config.max_target_len)
    return n


def _resolve_max_len(model: TopicConvS2S, source, max_len: int | None) -> int:
    if max_len is None:
        return default_max_len(len(np.atleast_1d(source)), model)
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return min(max_len, model.config.max_target_len)


def _allowed(logprobs: np.ndarray) -> np.ndarray:
    out = np.array(logprobs, dtype=np.float64, copy=True)
    out[..., list(BANNED)] = -np.inf
    return out


def sample_token(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from an (unnormalised) probability vector by inverse CDF."""
    cdf = np.cumsum(probs)
    if not cdf[-1] > 0:
        raise ValueError("cannot sample from an all-zero distribution")
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def _run(model: TopicConvS2S, source, max_len: int | None, choose, enc=None) -> Hypothesis:
    max_len = _resolve_max_len(model, source, max_len)
    if enc is None:
        with T.no_grad():
            enc = model.encode(np.asarray(source, dtype=np.int64))
    hyp = Hypothesis([BOS])
    while not hyp.finished:
        lp = model.step_log_probs(np.asarray(hyp.tokens), enc)[0]
        tok = choose(lp)
        hyp.tokens.append(tok)
        hyp.step_logprobs.append(float(lp[tok]))
        hyp.score += float(lp[tok])
        if tok == EOS or len(hyp.tokens) - 1 >= max_len:
            hyp.finished = True
    return hyp


def _argmax(lp: np.ndarray) -> int:
    return int(np.argmax(_allowed(lp)))


def greedy_decode(model: TopicConvS2S, source, max_len: int | None = None) -> Hypothesis:
    """Arg-max decoding; ties go to the lowest token id."""
    return _run(model, source, max_len, _argmax)


def sample_decode(model: TopicConvS2S, source, max_len: int | None = None, seed: int | np.random.Generator = 0) -> Hypothesis:
    """Ancestral sampling from the untempered step distributions."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _run(model, source, max_len, lambda lp: sample_token(np.exp(_allowed(lp)), rng))


def beam_decode(model: TopicConvS2S, source, beam_size: int = DEFAULT_BEAM, max_len: int | None = None) -> Hypothesis:
    """Beam search over summed log-probabilities, no length normalisation.

    Hypotheses leave the beam when they emit EOS or reach ``max_len``; the
    best retired hypothesis is returned. Search stops early once no live
    hypothesis can beat the best retired one. The greedy path is retired up
    front, so pruning can never return something worse than greedy decoding.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    max_len = _resolve_max_len(model, source, max_len)
    with T.no_grad():
        enc = model.encode(np.asarray(source, dtype=np.int64))
    beams = [Hypothesis([BOS])]
    pool: list[Hypothesis] = []
    if beam_size > 1:
        pool.append(_run(model, source, max_len, _argmax, enc))
    for step in range(max_len):
        prefixes = np.array([b.tokens for b in beams], dtype=np.int64)
        lp = _allowed(model.step_log_probs(prefixes, enc.select(np.zeros(len(beams), dtype=np.int64))))
        cand = np.array([b.score for b in beams])[:, None] + lp
        vocab = lp.shape[1]
        last = step == max_len - 1
        survivors: list[Hypothesis] = []
        for flat in np.argsort(-cand.ravel(), kind="stable"):
            b, tok = divmod(int(flat), vocab)
            score = float(cand[b, tok])
            if score == -np.inf:
                break
            parent = beams[b]
            hyp = Hypothesis(
                parent.tokens + [tok], score, tok == EOS or last,
                parent.step_logprobs + [float(lp[b, tok])],
            )
            if hyp.finished:
                pool.append(hyp)
                if tok != EOS:
                    survivors.append(hyp)  # counts toward the beam width at the last step
            else:
                survivors.append(hyp)
            if len(survivors) == beam_size:
                break
        beams = [h for h in survivors if not h.finished]
        if not beams:
            break
        best_pool = max((h.score for h in pool), default=-np.inf)
        if best_pool >= max(h.score for h in beams):
            break
    if not pool:  # only reachable when every token is banned
        return beams[0]
    return max(pool, key=lambda h: h.score)


def decode(model: TopicConvS2S, source, method: str = "beam", beam_size: int = DEFAULT_BEAM,
           max_len: int | None = None, seed: int = 0) -> Hypothesis:
    if method == "greedy":
        return greedy_decode(model, source, max_len)
    if method == "sample":
        return sample_decode(model, source, max_len, seed)
    if method == "beam":
        return beam_decode(model, source, beam_size, max_len)
    raise ValueError(f"unknown decoding method {method!r}")
