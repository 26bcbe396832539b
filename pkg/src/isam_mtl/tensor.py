"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations needed by the spiking autoencoder are provided. Each op
records its parents and a closure mapping the upstream gradient to one
gradient per parent; :meth:`Tensor.backward` walks the tape in reverse
topological order and frees it afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 5
PAD = KERNEL // 2

_DEBUG = False


class NumericError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised on incompatible tensor dimensions."""


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on every recorded op."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None
        self._freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._freed:
            raise RuntimeError("backward called on a graph that was already freed")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward_fn is not None:
                node._backward_fn = None
                node._parents = ()
                node._freed = True


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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Backpropagate ``loss``; every tensor in ``params`` ends with a grad (zeros if unreachable)."""
    loss.backward()
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {getattr(fn, '__qualname__', fn)}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    # d sqrt at 0 is taken as 0 so zero-variance sampling stays finite
    safe = np.where(out > 0, out, np.inf)
    return _make(out, (a,), lambda g: (g * 0.5 / safe,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# reductions and shape ------------------------------------------------------

def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), fn)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis) / float(count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), fn)


def pad_or_crop(a, length: int) -> Tensor:
    """Zero-pad or crop the last axis to exactly ``length`` samples."""
    a = as_tensor(a)
    cur = a.shape[-1]
    if cur >= length:
        return a[..., :length]
    widths = [(0, 0)] * (a.data.ndim - 1) + [(0, length - cur)]
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[..., :cur],))


# layers --------------------------------------------------------------------

@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0,
             dtype=np.float64, name: str = "dense") -> "DenseLayer":
        w = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_out, n_in)).astype(dtype)
        return cls(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(n_out, dtype), True, f"{name}.bias"))


@dataclass
class Conv1dLayer:
    weight: Tensor  # [out, in, 5]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.data.ndim != 3 or self.weight.shape[2] != KERNEL:
            raise ShapeError(f"conv kernel must be [out, in, {KERNEL}], got {self.weight.shape}")

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, gain: float = np.sqrt(2.0),
             dtype=np.float64, name: str = "conv") -> "Conv1dLayer":
        w = rng.normal(0.0, gain / np.sqrt(c_in * KERNEL), size=(c_out, c_in, KERNEL)).astype(dtype)
        return cls(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(c_out, dtype), True, f"{name}.bias"))


@dataclass
class TConv1dLayer:
    weight: Tensor  # [in, out, 5]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.data.ndim != 3 or self.weight.shape[2] != KERNEL:
            raise ShapeError(f"transposed-conv kernel must be [in, out, {KERNEL}], got {self.weight.shape}")

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, gain: float = np.sqrt(2.0),
             dtype=np.float64, name: str = "tconv") -> "TConv1dLayer":
        # each output sample sees ~half the taps at stride 2
        w = rng.normal(0.0, gain / np.sqrt(c_in * KERNEL / 2), size=(c_in, c_out, KERNEL)).astype(dtype)
        return cls(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(c_out, dtype), True, f"{name}.bias"))


def _batched(x: Tensor, name: str) -> tuple[Tensor, bool]:
    if x.data.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.data.ndim != 3:
        raise ShapeError(f"{name} expects [C, L] or [B, C, L], got {x.shape}")
    return x, False


def dense(x, layer: DenseLayer) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``."""
    x = as_tensor(x)
    w, b = layer.weight, layer.bias
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: input has {x.shape[-1]} features, layer expects {w.shape[1]}")
    out = x.data @ w.data.T + b.data

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        return g @ w.data, g2.T @ x2, g2.sum(axis=0)

    return _make(out, (x, w, b), fn)


def conv1d(x, layer: Conv1dLayer) -> Tensor:
    """Same-padded stride-1 cross-correlation, kernel 5. ``[B,Ci,L] -> [B,Co,L]``."""
    x, squeeze = _batched(as_tensor(x), "conv1d")
    w, b = layer.weight, layer.bias
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    length = x.shape[2]
    if length < 1:
        raise ShapeError("conv1d: empty input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (PAD, PAD)))
    cols = sliding_window_view(xp, KERNEL, axis=2)  # [B, Ci, L, K]
    out = np.tensordot(cols, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1) + b.data[None, :, None]

    def fn(g):
        dw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        db = g.sum(axis=(0, 2))
        dcols = np.tensordot(g, w.data, axes=([1], [0]))  # [B, L, Ci, K]
        dxp = np.zeros_like(xp)
        for k in range(KERNEL):
            dxp[:, :, k:k + length] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dxp[:, :, PAD:PAD + length], dw, db

    out_t = _make(np.ascontiguousarray(out), (x, w, b), fn)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def _tconv_gather(gfull: np.ndarray, length: int) -> np.ndarray:
    # gfull[b, o, 2l + k] -> [B, L, Co, K]
    return np.stack([gfull[:, :, k:k + 2 * length - 1:2] for k in range(KERNEL)], axis=-1).transpose(0, 2, 1, 3)


def tconv1d(x, layer: TConv1dLayer) -> Tensor:
    """Stride-2 transposed convolution, kernel 5, padding 2, output padding 1. ``[B,Ci,L] -> [B,Co,2L]``."""
    x, squeeze = _batched(as_tensor(x), "tconv1d")
    w, b = layer.weight, layer.bias
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"tconv1d: input has {x.shape[1]} channels, kernel expects {w.shape[0]}")
    bsz, _, length = x.shape
    if length < 1:
        raise ShapeError("tconv1d: empty input")
    c_out = w.shape[1]
    proj = np.tensordot(x.data, w.data, axes=([1], [0]))  # [B, L, Co, K]
    full = np.zeros((bsz, c_out, 2 * length + 3), dtype=proj.dtype)
    for k in range(KERNEL):
        full[:, :, k:k + 2 * length - 1:2] += proj[:, :, :, k].transpose(0, 2, 1)
    out = full[:, :, PAD:PAD + 2 * length] + b.data[None, :, None]

    def fn(g):
        gfull = np.zeros_like(full)
        gfull[:, :, PAD:PAD + 2 * length] = g
        dproj = _tconv_gather(gfull, length)
        dx = np.tensordot(dproj, w.data, axes=([2, 3], [1, 2])).transpose(0, 2, 1)
        dw = np.tensordot(x.data, dproj, axes=([0, 2], [0, 1]))
        return dx, dw, g.sum(axis=(0, 2))

    out_t = _make(np.ascontiguousarray(out), (x, w, b), fn)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def tconv1d_adjoint(y: np.ndarray, layer: TConv1dLayer) -> np.ndarray:
    """Apply the transpose of the (bias-free) transposed convolution: a stride-2 convolution."""
    y = np.asarray(y)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[None]
    length = y.shape[2] // 2
    gfull = np.zeros((y.shape[0], y.shape[1], 2 * length + 3), dtype=y.dtype)
    gfull[:, :, PAD:PAD + 2 * length] = y
    out = np.tensordot(_tconv_gather(gfull, length), layer.weight.data, axes=([2, 3], [1, 2])).transpose(0, 2, 1)
    return out[0] if squeeze else out


def maxpool1d(x) -> Tensor:
    """Window 2, stride 2 over the last axis; an odd trailing sample is dropped."""
    x = as_tensor(x)
    length = x.shape[-1]
    if length < 2:
        raise ShapeError(f"maxpool1d needs length >= 2, got {length}")
    half = length // 2
    pairs = x.data[..., :2 * half].reshape(x.shape[:-1] + (half, 2))
    idx = np.argmax(pairs, axis=-1)[..., None]  # first index on ties
    out = np.take_along_axis(pairs, idx, axis=-1)[..., 0]

    def fn(g):
        gp = np.zeros_like(pairs)
        np.put_along_axis(gp, idx, g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[..., :2 * half] = gp.reshape(x.shape[:-1] + (2 * half,))
        return (gx,)

    return _make(out, (x,), fn)


# gradient checking ---------------------------------------------------------

def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |central|)``.

    ``f`` rebuilds the scalar loss from the current ``params`` on each call.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"loss not finite while perturbing {p.name or 'param'}[{i}]")
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst
