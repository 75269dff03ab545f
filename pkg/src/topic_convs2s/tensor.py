"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the primitives the summarization model needs are provided. Graphs are
taped dynamically during the forward pass; ``Tensor.backward`` walks the tape
in reverse topological order and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Mapping, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Switch between double precision (default) and single precision."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used by decoders)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A dense array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind in "biuf" and arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    # -- autodiff -------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """log(exp(a) + exp(b)) elementwise, overflow safe."""
    out = np.logaddexp(a.data, b.data)
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * np.exp(a.data - out), a.shape),
            _unbroadcast(g * np.exp(b.data - out), b.shape),
        ),
    )


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return _make(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


# -- shape / reduction ------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul needs at least 1-d operands")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        # promote vectors so the batched formulas apply uniformly
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if ad.ndim == 1:
            ga = ga.squeeze(-2)
        if bd.ndim == 1:
            gb = gb.squeeze(-1)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    return matmul(a, b)


def affine(x, W, b) -> Tensor:
    """``W x + b`` for a vector (or a stack of row vectors) ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2:
        raise ValueError(f"affine: W must be a matrix, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ValueError(
            f"affine: x has trailing dimension {x.shape[-1]} but W has {W.shape[1]} columns"
        )
    if b.shape != (W.shape[0],):
        raise ValueError(f"affine: b has shape {b.shape}, expected ({W.shape[0]},)")
    return matmul(x, swapaxes(W, 0, 1)) + b


# -- nonlinearities -----------------------------------------------------------

def glu(y: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half times sigmoid(second half)."""
    y = as_tensor(y)
    n = y.shape[-1]
    if n % 2:
        raise ValueError(f"glu needs an even trailing dimension, got {n}")
    h = n // 2
    a_part, b_part = y.data[..., :h], y.data[..., h:]
    s = _sigmoid(b_part)

    def backward(g):
        return (np.concatenate([g * s, g * a_part * s * (1.0 - s)], axis=-1),)

    return _make(a_part * s, (y,), backward)


def softmax(scores, axis: int = -1) -> Tensor:
    scores = as_tensor(scores)
    if scores.size == 0 or scores.shape[axis] == 0:
        raise ValueError("softmax of an empty input is undefined")
    shifted = scores.data - scores.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (scores,), backward)


def log_softmax(scores, axis: int = -1) -> Tensor:
    scores = as_tensor(scores)
    if scores.size == 0 or scores.shape[axis] == 0:
        raise ValueError("log_softmax of an empty input is undefined")
    m = scores.data.max(axis=axis, keepdims=True)
    shifted = scores.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (scores,), backward)


# -- indexing -----------------------------------------------------------------

def gather(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; the gradient scatters back into table rows."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= rows)]
        if bad.size:
            raise IndexError(f"gather: id {int(bad[0])} out of range for table with {rows} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return _make(table.data[ids], (table,), backward)


def pick(a: Tensor, ids) -> Tensor:
    """Select one entry per row along the last axis: ``a[..., ids[...]]``."""
    ids = np.asarray(ids, dtype=np.int64)
    idx = ids[..., None]
    out = np.take_along_axis(a.data, idx, axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return _make(out, (a,), backward)


def windows(x: Tensor, k: int, causal: bool) -> Tensor:
    """Concatenate k neighbouring rows along the feature axis.

    ``x`` has shape (..., n, d); the result has shape (..., n, k*d). Out of
    range neighbours are zeros. A causal window covers positions i-k+1..i,
    otherwise the window is centred on i (k-1 positions split left/right).
    """
    n, d = x.shape[-2], x.shape[-1]
    left = k - 1 if causal else (k - 1) // 2
    right = k - 1 - left
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    padded = np.pad(x.data, pad)
    out = np.concatenate([padded[..., j:j + n, :] for j in range(k)], axis=-1)

    def backward(g):
        gp = np.zeros_like(padded)
        for j in range(k):
            gp[..., j:j + n, :] += g[..., j * d:(j + 1) * d]
        return (gp[..., left:left + n, :],)

    return _make(out, (x,), backward)


# -- gradient checking -----------------------------------------------------------

def _named(params) -> list[tuple[str, Tensor]]:
    if hasattr(params, "named_tensors"):
        return list(params.named_tensors())
    if isinstance(params, Mapping):
        return list(params.items())
    if isinstance(params, Tensor):
        return [("param", params)]
    return [(f"param{i}", p) for i, p in enumerate(params)]


def zero_grads(params) -> None:
    for _, t in _named(params):
        t.grad = None


def check_gradients(
    loss_fn: Callable[[object], Tensor],
    params,
    eps: float = 1e-5,
    num_coords: int = 100,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences.

    Samples ``num_coords`` coordinates (all of them when fewer exist) and
    returns the maximum relative error, using ``max(|a|, |n|, 1e-8)`` as the
    denominator.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = _named(params)
    for name, t in named:
        if t.data.dtype != np.float64:
            raise TypeError(f"check_gradients needs float64 parameters; {name} is {t.data.dtype}")

    zero_grads(params)
    loss = loss_fn(params)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("loss is not finite")
    loss.backward()

    sizes = [t.size for _, t in named]
    total = int(sum(sizes))
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= num_coords else rng.choice(total, size=num_coords, replace=False)
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    for f in np.sort(flat):
        which = int(np.searchsorted(offsets, f, side="right") - 1)
        _, t = named[which]
        local = np.unravel_index(int(f - offsets[which]), t.shape)
        analytic = 0.0 if t.grad is None else float(t.grad[local])
        original = t.data[local]
        with no_grad():
            t.data[local] = original + eps
            up = float(loss_fn(params).data)
            t.data[local] = original - eps
            down = float(loss_fn(params).data)
            t.data[local] = original
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError("loss is not finite under perturbation")
        numeric = (up - down) / (2.0 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
