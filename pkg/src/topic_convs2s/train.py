"""Maximum-likelihood and self-critical training with Nesterov momentum."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import tensor as T
from .data import Batch, Pair, Vocabulary, make_batches
from .decode import Hypothesis, greedy_decode, sample_decode
from .model import ModelParams, TopicConvS2S
from .rouge import rouge_l
from .tensor import Tensor

logger = logging.getLogger(__name__)

STOP = "STOP"

LOG_COLUMNS = ("epoch", "split", "lr", "ml_loss", "rl_loss", "mixed_loss", "val_rouge_l", "ml_loss_sum")


@dataclass
class TrainConfig:
    lr_ml: float = 0.25
    lr_decay: float = 0.1
    lr_floor: float = 1e-5
    lr_rl: float = 1e-4
    momentum: float = 0.99
    batch_size: int = 32
    lambda_mixed: float = 0.99
    grad_clip_norm: float = 0.1
    max_epochs: int = 100
    rl_epochs: int = 5
    reward_metric: str = "rouge-l"
    seed: int = 0
    # non-improving epochs tolerated before each decay; 0 decays immediately
    patience: int = 0
    # stop ML training early once the epoch's mean token loss drops below this
    target_loss: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.lambda_mixed <= 1.0:
            raise ValueError("lambda_mixed must be in [0, 1]")
        if min(self.lr_ml, self.lr_rl, self.lr_floor) <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reward_metric != "rouge-l":
            raise ValueError("only the rouge-l reward is supported")


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    current_lr: float
    momentum: float = 0.99
    grad_clip_norm: float = 0.0
    epochs_since_improvement: int = 0
    best_score: float = -math.inf

    @classmethod
    def for_params(cls, params: ModelParams, lr: float, momentum: float = 0.99,
                   grad_clip_norm: float = 0.0) -> "OptimizerState":
        velocity = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
        return cls(velocity, lr, momentum, grad_clip_norm)


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite; parameters were restored."""


# -- losses -----------------------------------------------------------------------

def ml_loss(model: TopicConvS2S, batch: Batch, reduction: str = "mean") -> Tensor:
    """Teacher-forced negative log-likelihood over non-pad target positions."""
    if (batch.target_lengths < 3).any():
        raise ValueError("every target needs at least one token besides BOS/EOS")
    lp = model.forward(batch.source, batch.decoder_input)
    out = batch.decoder_output
    mask = (np.arange(out.shape[1])[None, :] < (batch.target_lengths - 1)[:, None]).astype(lp.data.dtype)
    total = -(T.pick(lp, out) * mask).sum()
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total / float(mask.sum())


def scst_loss(r_sample: float, r_greedy: float, log_prob_sample):
    """-(r(y_s) - r(y_hat)) * log p(y_s); rewards are constants."""
    return -(float(r_sample) - float(r_greedy)) * log_prob_sample


def rouge_l_reward(hyp_ids: Sequence[int], ref_ids: Sequence[int]) -> float:
    if len(hyp_ids) == 0 or len(ref_ids) == 0:
        return 0.0
    return rouge_l(list(hyp_ids), [list(ref_ids)]).f1


@dataclass
class RLDiagnostics:
    r_sample: float
    r_greedy: float
    sample: Hypothesis = field(repr=False)
    greedy: Hypothesis = field(repr=False)


def rl_loss(
    model: TopicConvS2S,
    source: Sequence[int],
    reference: Sequence[int],
    reward_fn: Callable[[Sequence[int], Sequence[int]], float] = rouge_l_reward,
    seed: int | np.random.Generator = 0,
    max_len: int | None = None,
) -> tuple[Tensor, RLDiagnostics]:
    """Self-critical policy-gradient loss for one source/reference pair.

    The greedy decode is the baseline; only ``log p(y_s)`` carries gradient.
    """
    greedy = greedy_decode(model, source, max_len)
    sample = sample_decode(model, source, max_len, seed)
    r_g = float(reward_fn(greedy.content(), reference))
    r_s = float(reward_fn(sample.content(), reference))
    advantage = r_s - r_g
    if advantage == 0.0:
        # skip the forward pass: loss and gradient are exactly zero
        loss = Tensor(0.0)
    else:
        loss = scst_loss(r_s, r_g, model.sequence_log_prob(source, sample.tokens))
    return loss, RLDiagnostics(r_s, r_g, sample, greedy)


def mixed_loss(l_rl, l_ml, lam: float):
    """lam * l_rl + (1 - lam) * l_ml."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return lam * l_rl + (1.0 - lam) * l_ml


# -- optimisation ------------------------------------------------------------------

def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def nesterov_step(params: ModelParams, state: OptimizerState, grads: dict[str, np.ndarray] | None = None) -> None:
    """One Nesterov momentum update, gradient clipping first.

    Parameter-space form of ``v <- mu v - lr grad(theta + mu v)``: the stored
    parameters are the look-ahead point and ``state.velocity`` keeps the
    momentum buffer in gradient units, ``buf <- mu buf + g`` and
    ``theta <- theta - lr (g + mu buf)``. Keeping the buffer unscaled makes a
    learning-rate decay take effect on the very next step.
    """
    if grads is None:
        grads = {}
        for name, t in params.named_tensors():
            grads[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    if state.grad_clip_norm > 0:
        clip_grad_norm(grads, state.grad_clip_norm)
    mu, lr = state.momentum, state.current_lr
    for name, t in params.named_tensors():
        g = grads[name]
        buf = state.velocity[name]
        buf *= mu
        buf += g
        t.data -= lr * (g + mu * buf)


def lr_schedule(state: OptimizerState, history: Sequence[float], decay: float = 0.1,
                floor: float = 1e-5, patience: int = 0):
    """Decay the rate by ``decay`` when the newest validation score fails to beat all earlier ones.

    With ``patience > 0`` that many consecutive non-improving epochs are
    tolerated before each decay. Returns the new learning rate, or ``STOP``
    once it would fall below ``floor``.
    """
    if len(history) >= 2 and history[-1] <= max(history[:-1]):
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement <= patience:
            return state.current_lr
        state.epochs_since_improvement = 0
        new_lr = state.current_lr * decay
        if new_lr < floor:
            return STOP
        state.current_lr = new_lr
    else:
        state.epochs_since_improvement = 0
    if history:
        state.best_score = max(state.best_score, history[-1])
    return state.current_lr


# -- training loops ------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    split: str
    lr: float
    ml_loss: float
    rl_loss: float
    mixed_loss: float
    val_rouge_l: float
    ml_loss_sum: float

    def line(self) -> str:
        return "\t".join(_fmt(v) for v in asdict(self).values())


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def mean_rouge_l(model: TopicConvS2S, vocab: Vocabulary, pairs: Sequence[Pair],
                 max_len: int | None = None) -> float:
    """Mean greedy-decode ROUGE-L F over ``pairs`` (the validation metric)."""
    if not pairs:
        return float("nan")
    total = 0.0
    for src, tgt in pairs:
        hyp = greedy_decode(model, vocab.encode(src), max_len)
        total += rouge_l_reward(hyp.content(), vocab.encode(tgt))
    return total / len(pairs)


def exact_match_rate(model: TopicConvS2S, vocab: Vocabulary, pairs: Sequence[Pair]) -> float:
    hits = sum(greedy_decode(model, vocab.encode(s)).content() == vocab.encode(t) for s, t in pairs)
    return hits / max(len(pairs), 1)


@dataclass
class TrainResult:
    logs: list[EpochLog]
    stop_reason: str
    state: OptimizerState


def _emit(entry: EpochLog, log_file: TextIO | None, logs: list[EpochLog]) -> None:
    logs.append(entry)
    logger.info(entry.line())
    if log_file is not None:
        log_file.write(entry.line() + "\n")
        log_file.flush()


def train_ml(
    model: TopicConvS2S,
    vocab: Vocabulary,
    train_pairs: Sequence[Pair],
    config: TrainConfig,
    valid_pairs: Sequence[Pair] | None = None,
    log_file: TextIO | None = None,
    on_epoch: Callable[[int, TopicConvS2S], None] | None = None,
) -> TrainResult:
    """Teacher-forced training under the validation-driven learning-rate schedule.

    With no validation split the training pairs are scored instead.
    """
    params = model.params
    state = OptimizerState.for_params(params, config.lr_ml, config.momentum, config.grad_clip_norm)
    valid = list(valid_pairs) if valid_pairs is not None else list(train_pairs)
    history: list[float] = []
    logs: list[EpochLog] = []
    good = params.snapshot()
    stop_reason = "max_epochs"
    cfg = model.config
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train_pairs, vocab, None, config.batch_size, config.seed + epoch,
                               cfg.max_source_len, cfg.max_target_len)
        tok_total = loss_sum = 0.0
        model.training = True
        try:
            for batch in batches:
                params.zero_grads()
                loss = ml_loss(model, batch, reduction="sum")
                ntok = float((batch.target_lengths - 1).sum())
                if not np.isfinite(loss.data):
                    raise FloatingPointError("non-finite ml loss")
                (loss / ntok).backward()
                nesterov_step(params, state)
                loss_sum += float(loss.data)
                tok_total += ntok
        except FloatingPointError as exc:
            params.restore(good)
            raise TrainingDiverged(f"epoch {epoch}: {exc}; restored last good parameters") from exc
        finally:
            model.training = False
        good = params.snapshot()
        score = mean_rouge_l(model, vocab, valid)
        history.append(score)
        mean_loss = loss_sum / tok_total
        _emit(EpochLog(epoch, "train", state.current_lr, mean_loss, 0.0, mean_loss, score, loss_sum), log_file, logs)
        if on_epoch is not None:
            on_epoch(epoch, model)
        if config.target_loss is not None and mean_loss < config.target_loss:
            stop_reason = "target_loss"
            break
        if lr_schedule(state, history, config.lr_decay, config.lr_floor, config.patience) is STOP:
            stop_reason = STOP
            break
    return TrainResult(logs, stop_reason, state)


def finetune_scst(
    model: TopicConvS2S,
    vocab: Vocabulary,
    train_pairs: Sequence[Pair],
    config: TrainConfig,
    valid_pairs: Sequence[Pair] | None = None,
    log_file: TextIO | None = None,
    on_epoch: Callable[[int, TopicConvS2S], None] | None = None,
) -> TrainResult:
    """Minimise the mixed objective with the self-critical ROUGE-L reward."""
    params = model.params
    state = OptimizerState.for_params(params, config.lr_rl, config.momentum, config.grad_clip_norm)
    rng = np.random.default_rng(config.seed)
    valid = list(valid_pairs) if valid_pairs is not None else list(train_pairs)
    logs: list[EpochLog] = []
    good = params.snapshot()
    cfg = model.config
    for epoch in range(1, config.rl_epochs + 1):
        batches = make_batches(train_pairs, vocab, None, config.batch_size, config.seed + epoch,
                               cfg.max_source_len, cfg.max_target_len)
        sums = np.zeros(3)
        tok_total = ml_sum = 0.0
        try:
            for batch in batches:
                params.zero_grads()
                l_ml = ml_loss(model, batch, reduction="mean")
                rl_terms = []
                for src, tgt in batch.pairs:
                    l, _ = rl_loss(model, vocab.encode(src), vocab.encode(tgt), rouge_l_reward, rng)
                    rl_terms.append(l)
                l_rl = rl_terms[0]
                for term in rl_terms[1:]:
                    l_rl = l_rl + term
                l_rl = l_rl / float(len(rl_terms))
                loss = mixed_loss(l_rl, l_ml, config.lambda_mixed)
                if not np.isfinite(loss.data):
                    raise FloatingPointError("non-finite mixed loss")
                loss.backward()
                nesterov_step(params, state)
                n = len(batch)
                sums += np.array([float(l_ml.data), float(l_rl.data), float(loss.data)]) * n
                ntok = float((batch.target_lengths - 1).sum())
                ml_sum += float(l_ml.data) * ntok
                tok_total += ntok
        except FloatingPointError as exc:
            params.restore(good)
            raise TrainingDiverged(f"rl epoch {epoch}: {exc}; restored last good parameters") from exc
        good = params.snapshot()
        means = sums / len(train_pairs)
        score = mean_rouge_l(model, vocab, valid)
        _emit(EpochLog(epoch, "rl", state.current_lr, ml_sum / tok_total, float(means[1]), float(means[2]), score, ml_sum),
              log_file, logs)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return TrainResult(logs, "rl_epochs", state)
