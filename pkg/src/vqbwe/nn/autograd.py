"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations the denoiser needs are provided: broadcasting arithmetic,
matmul, reductions and reshapes, pointwise nonlinearities, softmax,
layer normalisation, depthwise 1-D convolution, embedding gather and the SSD
scan.  Each op records a closure that maps the output gradient to input
gradients; :meth:`Tensor.backward` replays them in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

from . import ssd

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = g.copy() if g.shape == self.shape else np.broadcast_to(g, self.shape).copy()
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are not needed once propagated
                    node.grad = None if node is not self else node.grad

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms ----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def astype(self, dtype):
        return astype(self, dtype)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _binary_operands(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    return _result(a.data ** p, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * out))


def log(a: Tensor, floor: float = 1e-300) -> Tensor:
    """Natural log with inputs clamped at ``floor`` (zero gradient below it)."""
    tiny = max(floor, np.finfo(a.dtype).tiny)
    safe = np.maximum(a.data, tiny)
    live = a.data > tiny
    return _result(np.log(safe), (a,), lambda g: a._accumulate(np.where(live, g / safe, 0.0)))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * 0.5 / out))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: a._accumulate(g * out * (1 - out)))


def silu(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(a.data * s, (a,), lambda g: a._accumulate(g * s * (1 + a.data * (1 - s))))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _result(out, (a,), lambda g: a._accumulate(g * s))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * (1 - out ** 2)))


def relu(a: Tensor) -> Tensor:
    return _result(np.maximum(a.data, 0), (a,), lambda g: a._accumulate(g * (a.data > 0)))


def astype(a: Tensor, dtype) -> Tensor:
    return _result(a.data.astype(dtype), (a,), lambda g: a._accumulate(g.astype(a.dtype)))


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: a._accumulate(np.transpose(g, inv)))


def broadcast_to(a: Tensor, shape) -> Tensor:
    return _result(np.broadcast_to(a.data, shape), (a,),
                   lambda g: a._accumulate(_unbroadcast(g, a.shape)))


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(a.data[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def flip(a: Tensor, axis: int) -> Tensor:
    return _result(np.flip(a.data, axis), (a,), lambda g: a._accumulate(np.flip(g, axis)))


# ---------------------------------------------------------------------------
# linear algebra and neural-network primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        a._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _result(out, (a,), backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = [x] + [p for p in (weight, bias) if p is not None]

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if weight is not None and weight.requires_grad:
            weight._accumulate(_unbroadcast(g * xhat, weight.shape))
        if x.requires_grad:
            gx = g * weight.data if weight is not None else g
            n = x.shape[-1]
            x._accumulate(rstd / n * (n * gx - gx.sum(-1, keepdims=True)
                                      - xhat * (gx * xhat).sum(-1, keepdims=True)))

    return _result(out, parents, backward)


def embedding(table: Tensor, idx) -> Tensor:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(full)

    return _result(table.data[idx], (table,), backward)


def conv1d_depthwise(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     padding: str = "causal") -> Tensor:
    """Per-channel 1-D convolution along axis -2 of ``x (..., L, C)``; ``weight (C, W)``.

    ``out[l, c] = sum_k weight[c, k] * xpad[l + k, c]`` where ``xpad`` is padded
    on the left only (``causal``) or split around the centre (``same``).
    """
    C, W = weight.shape
    if x.shape[-1] != C:
        raise ValueError(f"channel mismatch: input {x.shape[-1]} vs weight {C}")
    if padding == "causal":
        left = W - 1
    elif padding == "same":
        left = (W - 1) // 2
    else:
        raise ValueError(f"unknown padding {padding!r}")
    right = W - 1 - left
    L = x.shape[-2]
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    xpad = np.pad(x.data, widths)
    out = np.zeros(x.shape, dtype=np.result_type(x.data, weight.data))
    for k in range(W):
        out += weight.data[:, k] * xpad[..., k:k + L, :]
    if bias is not None:
        out = out + bias.data
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for k in range(W):
                gw[:, k] = (g * xpad[..., k:k + L, :]).reshape(-1, C).sum(axis=0)
            weight._accumulate(gw)
        if x.requires_grad:
            gpad = np.zeros_like(xpad)
            for k in range(W):
                gpad[..., k:k + L, :] += g * weight.data[:, k]
            x._accumulate(gpad[..., left:left + L, :])

    return _result(out, parents, backward)


def ssd_scan(x: Tensor, a: Tensor, B: Tensor, C: Tensor, chunk: int = ssd.DEFAULT_CHUNK) -> Tensor:
    """Differentiable selective scan; see :mod:`vqbwe.nn.ssd` for the shapes."""
    y = ssd.ssd_scan_chunked(x.data, a.data, B.data, C.data, chunk)

    def backward(g):
        dx, da, dB, dC = ssd.ssd_scan_backward(x.data, a.data, B.data, C.data, g, chunk)
        for t, d in ((x, dx), (a, da), (B, dB), (C, dC)):
            if t.requires_grad:
                t._accumulate(_unbroadcast(d, t.shape))

    return _result(y, (x, a, B, C), backward)
