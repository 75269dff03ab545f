"""Topic-aware convolutional sequence-to-sequence network.

Two encoder stacks (word level and topic level) and two decoder stacks share
the same gated convolution block. Every decoder layer attends over the source:
the word decoder with plain dot-product attention, the topic decoder with a
joint attention whose scores sum the dot products against both encoder
outputs. The output distribution adds an extra topic-decoder term for words
in the topic vocabulary.

Shapes follow ``(batch, length, d)``; the functional helpers also accept
unbatched inputs.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .data import BOS, PAD, SPECIALS
from .tensor import Tensor

NEG_INF = -1e30


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 256
    kernel_width: int = 3
    word_layers: int = 6
    topic_layers: int = 6
    max_source_len: int = 128
    max_target_len: int = 64
    init_scale: float = 0.1
    dropout: float = 0.0

    def __post_init__(self):
        if self.kernel_width < 1:
            raise ValueError("kernel_width must be >= 1")
        if self.word_layers < 1 or self.topic_layers < 0:
            raise ValueError("need at least one word layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Ordered collection of named learnable tensors."""

    def __init__(self, tensors: "OrderedDict[str, Tensor] | None" = None):
        self.tensors: OrderedDict[str, Tensor] = OrderedDict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            OrderedDict((k, Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)) for k, v in self.tensors.items())
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.tensors[k].data[...] = v


def init_params(
    config: ModelConfig,
    num_topic_words: int,
    topic_embeddings: np.ndarray | None = None,
    seed: int = 0,
) -> ModelParams:
    """Normal(0, init_scale / sqrt(fan_in)) weights, zero biases.

    Embedding tables have fan-in 1. ``topic_embeddings`` (K x d), when given,
    initialises the topic embedding table.
    """
    rng = np.random.default_rng(seed)
    d, k, V = config.d, config.kernel_width, config.vocab_size
    s = config.init_scale
    dtype = T.get_default_dtype()
    p = ModelParams()

    def add(name, shape, fan_in=None):
        if fan_in is None:
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, s / np.sqrt(fan_in), size=shape)
        p[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)

    add("D_word", (V, d), 1)
    if topic_embeddings is not None:
        topic_embeddings = np.asarray(topic_embeddings)
        if topic_embeddings.shape != (num_topic_words, d):
            raise ValueError(f"topic embeddings have shape {topic_embeddings.shape}, expected ({num_topic_words}, {d})")
        p["D_topic"] = Tensor(topic_embeddings.astype(dtype), requires_grad=True, name="D_topic")
    else:
        add("D_topic", (num_topic_words, d), 1)
    add("P_enc", (config.max_source_len, d), 1)
    add("P_dec", (config.max_target_len, d), 1)
    for stack, layers in (("enc_word", config.word_layers), ("enc_topic", config.topic_layers)):
        for l in range(layers):
            add(f"{stack}.{l}.W", (2 * d, k * d), k * d)
            add(f"{stack}.{l}.b", (2 * d,))
    for stack, layers in (("dec_word", config.word_layers), ("dec_topic", config.topic_layers)):
        for l in range(layers):
            add(f"{stack}.{l}.W", (2 * d, k * d), k * d)
            add(f"{stack}.{l}.b", (2 * d,))
            add(f"{stack}.{l}.Wd", (d, d), d)
            add(f"{stack}.{l}.bd", (d,))
    add("W_o", (V, d), d)
    add("b_o", (V,))
    return p


# -- functional building blocks ---------------------------------------------------

def conv_block(x: Tensor, W: Tensor, b: Tensor, k: int, causal: bool) -> Tensor:
    """One gated convolution with residual: ``glu(W [x_window] + b) + x``."""
    return T.glu(T.affine(T.windows(x, k, causal), W, b)) + x


def encode(inputs: Tensor, stack: Sequence[tuple[Tensor, Tensor]], kernel_width: int,
           source_mask: np.ndarray | None = None) -> Tensor:
    """Apply stacked encoder blocks with centred, zero-padded windows.

    ``source_mask`` (True on real tokens) zeroes padded positions before each
    block so padding behaves like the sequence boundary.
    """
    keep = None if source_mask is None else np.asarray(source_mask, dtype=inputs.data.dtype)[..., None]
    h = inputs if keep is None else inputs * keep
    for W, b in stack:
        h = conv_block(h, W, b, kernel_width, causal=False)
        if keep is not None:
            h = h * keep
    return h


def _scores_mask(scores: Tensor, source_mask) -> Tensor:
    if source_mask is None:
        return scores
    mask = np.asarray(source_mask, dtype=bool)[..., None, :] if scores.ndim > 1 else np.asarray(source_mask, bool)
    return T.where(np.broadcast_to(mask, scores.shape), scores, NEG_INF)


def attention_weights(d_state, z, source_mask=None) -> Tensor:
    """softmax_j(d_state . z_j) for every decoder state."""
    d_state, z = T.as_tensor(d_state), T.as_tensor(z)
    scores = d_state @ z.swapaxes(-1, -2)
    return T.softmax(_scores_mask(scores, source_mask), axis=-1)


def joint_attention_weights(d_state, z_word, z_topic, source_mask=None) -> Tensor:
    """softmax_j(d_state . z_word_j + d_state . z_topic_j)."""
    d_state, z_word, z_topic = T.as_tensor(d_state), T.as_tensor(z_word), T.as_tensor(z_topic)
    scores = d_state @ z_word.swapaxes(-1, -2) + d_state @ z_topic.swapaxes(-1, -2)
    return T.softmax(_scores_mask(scores, source_mask), axis=-1)


def context(weights, z, aux) -> Tensor:
    """sum_j weights_j (z_j + aux_j)."""
    return T.as_tensor(weights) @ (T.as_tensor(z) + T.as_tensor(aux))


def biased_log_probs(h, h_topic, W_o: Tensor, b_o: Tensor, topic_word_mask) -> Tensor:
    """log p(w) with p ∝ exp(Psi(h)) + [w in K] exp(Psi(h_topic)), Psi(x) = W_o x + b_o."""
    word_logits = T.affine(h, W_o, b_o)
    topic_logits = T.affine(h_topic, W_o, b_o)
    mask = np.broadcast_to(np.asarray(topic_word_mask, dtype=bool), word_logits.shape)
    combined = T.where(mask, T.logaddexp(word_logits, topic_logits), word_logits)
    return T.log_softmax(combined, axis=-1)


@dataclass
class OutputDistribution:
    probs: np.ndarray
    logprobs: np.ndarray


def output_distribution(h, h_topic, params: ModelParams, topic_word_mask) -> OutputDistribution:
    with T.no_grad():
        lp = biased_log_probs(T.as_tensor(h), T.as_tensor(h_topic), params["W_o"], params["b_o"], topic_word_mask)
    return OutputDistribution(np.exp(lp.data), lp.data)


@dataclass
class EncodedSource:
    z_word: Tensor
    z_topic: Tensor
    e: Tensor
    r: Tensor
    topic_mask: np.ndarray       # (B, m) token is a topic word
    source_mask: np.ndarray      # (B, m) token is not padding

    def select(self, rows) -> "EncodedSource":
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedSource(
            self.z_word[rows], self.z_topic[rows], self.e[rows], self.r[rows],
            self.topic_mask[rows], self.source_mask[rows],
        )


class TopicConvS2S:
    """The full network: parameters plus the static topic-vocabulary lookups."""

    def __init__(self, config: ModelConfig, params: ModelParams, topic_ids: Sequence[int]):
        topic_ids = [int(i) for i in topic_ids]
        if any(i < len(SPECIALS) or i >= config.vocab_size for i in topic_ids):
            raise ValueError("topic ids must be non-reserved vocabulary ids")
        if len(set(topic_ids)) != len(topic_ids):
            raise ValueError("duplicate topic ids")
        if params["D_topic"].shape[0] != len(topic_ids):
            raise ValueError("D_topic rows must match the topic vocabulary")
        self.config = config
        self.params = params
        self.topic_ids = topic_ids
        self.topic_row = np.full(config.vocab_size, -1, dtype=np.int64)
        self.topic_row[topic_ids] = np.arange(len(topic_ids))
        self.topic_word_mask = self.topic_row >= 0
        self.training = False
        self._dropout_rng = np.random.default_rng(0)

    @classmethod
    def create(cls, config: ModelConfig, topic_ids: Sequence[int],
               topic_embeddings: np.ndarray | None = None, seed: int = 0) -> "TopicConvS2S":
        return cls(config, init_params(config, len(topic_ids), topic_embeddings, seed), topic_ids)

    # -- helpers ------------------------------------------------------------------
    def _stack(self, name: str, layers: int):
        p = self.params
        return [(p[f"{name}.{l}.W"], p[f"{name}.{l}.b"]) for l in range(layers)]

    def _dropout(self, x: Tensor) -> Tensor:
        rate = self.config.dropout
        if not self.training or rate == 0.0:
            return x
        keep = (self._dropout_rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * keep.astype(x.data.dtype)

    def _topic_or_word(self, ids: np.ndarray) -> Tensor:
        """Rows of D_topic for topic words, D_word otherwise."""
        rows = self.topic_row[ids]
        is_topic = rows >= 0
        word = T.gather(self.params["D_word"], ids)
        if not is_topic.any():
            return word
        topic = T.gather(self.params["D_topic"], np.where(is_topic, rows, 0))
        return T.where(is_topic[..., None], topic, word)

    @staticmethod
    def _as_batch(ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return ids[None, :] if ids.ndim == 1 else ids

    # -- forward pieces -----------------------------------------------------------------
    def embed_source(self, source) -> tuple[Tensor, Tensor, np.ndarray]:
        """(e, r, topic_mask): word and topic input embeddings with positions."""
        src = self._as_batch(source)
        m = src.shape[1]
        if m > self.config.max_source_len:
            raise ValueError(f"source length {m} exceeds max_source_len={self.config.max_source_len}")
        pos = self.params["P_enc"][:m]
        e = T.gather(self.params["D_word"], src) + pos
        r = self._topic_or_word(src) + pos
        topic_mask = self.topic_word_mask[src] & (src != PAD)
        return e, r, topic_mask

    def encode(self, source, source_mask: np.ndarray | None = None) -> EncodedSource:
        src = self._as_batch(source)
        if source_mask is None:
            source_mask = src != PAD
        e, r, topic_mask = self.embed_source(src)
        k = self.config.kernel_width
        z_word = encode(self._dropout(e), self._stack("enc_word", self.config.word_layers), k, source_mask)
        z_topic = encode(self._dropout(r), self._stack("enc_topic", self.config.topic_layers), k, source_mask)
        return EncodedSource(z_word, z_topic, e, r, topic_mask, np.asarray(source_mask, dtype=bool))

    def decode_states(self, prefix, source: EncodedSource) -> tuple[Tensor, Tensor]:
        """Top word-decoder and topic-decoder states for every prefix position.

        Decoder convolutions see only positions <= i, so row i depends on
        ``prefix[:i+1]`` alone.
        """
        prev = self._as_batch(prefix)
        n = prev.shape[1]
        if n < 1:
            raise ValueError("decoder prefix must contain at least BOS")
        if n > self.config.max_target_len:
            raise ValueError(f"prefix length {n} exceeds max_target_len={self.config.max_target_len}")
        cfg, p = self.config, self.params
        k = cfg.kernel_width
        pos = p["P_dec"][:n]
        q = T.gather(p["D_word"], prev) + pos
        s = self._topic_or_word(prev) + pos
        smask = source.source_mask

        h = self._dropout(q)
        word_contexts = []
        for l in range(cfg.word_layers):
            h = conv_block(h, p[f"dec_word.{l}.W"], p[f"dec_word.{l}.b"], k, causal=True)
            d_state = T.affine(h, p[f"dec_word.{l}.Wd"], p[f"dec_word.{l}.bd"]) + q
            alpha = attention_weights(d_state, source.z_word, smask)
            c = context(alpha, source.z_word, source.e)
            word_contexts.append(c)
            h = h + c

        ht = self._dropout(s)
        for l in range(cfg.topic_layers):
            ht = conv_block(ht, p[f"dec_topic.{l}.W"], p[f"dec_topic.{l}.b"], k, causal=True)
            d_topic = T.affine(ht, p[f"dec_topic.{l}.Wd"], p[f"dec_topic.{l}.bd"]) + s
            beta = joint_attention_weights(d_topic, source.z_word, source.z_topic, smask)
            ht = ht + context(beta, source.z_topic, source.r)
            if l < len(word_contexts):
                ht = ht + word_contexts[l]
        return h, ht

    def log_probs(self, h: Tensor, h_topic: Tensor) -> Tensor:
        return biased_log_probs(h, h_topic, self.params["W_o"], self.params["b_o"], self.topic_word_mask)

    def forward(self, source, prefix, source_mask: np.ndarray | None = None) -> Tensor:
        """Log-probabilities (B, n, T) of the next token after every prefix position."""
        enc = self.encode(source, source_mask)
        h, ht = self.decode_states(prefix, enc)
        return self.log_probs(h, ht)

    def step_log_probs(self, prefix, enc: EncodedSource) -> np.ndarray:
        """Next-token log-probabilities after the last prefix position, without recording."""
        with T.no_grad():
            h, ht = self.decode_states(prefix, enc)
            lp = self.log_probs(h[:, -1], ht[:, -1])
        return lp.data

    def sequence_log_prob(self, source, tokens) -> Tensor:
        """Sum of log p over ``tokens[1:]`` given ``tokens[:-1]`` (tokens start with BOS)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size < 2 or tokens[0] != BOS:
            raise ValueError("tokens must be BOS followed by at least one token")
        lp = self.forward(source, tokens[:-1])
        return T.pick(lp, tokens[None, 1:]).sum()
