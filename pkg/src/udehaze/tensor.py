"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the dehazing pipeline needs are provided. Binary
elementwise ops accept two tensors of identical shape, or a tensor and a
Python scalar; anything else must go through :func:`broadcast_to` first.

Reductions run on C-contiguous copies so numpy's pairwise summation sees
the same memory layout every time, which makes them bitwise reproducible.
"""

from __future__ import annotations

import os
from functools import lru_cache
from numbers import Number
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

_DEBUG = os.environ.get("UDEHAZE_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle bound assertions in clamp and non-finite checks on every op."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    """A float64 array that can record the ops applied to it.

    ``grad`` is populated by :meth:`backward` on every leaf with
    ``requires_grad=True`` that the loss depends on.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise RuntimeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not depend on any parameter")
        if self._consumed:
            raise RuntimeError("backward() already ran on this graph; rebuild it with a new forward pass")
        order = _topological_order(self)
        for node in order:
            if not node._parents and node.grad is not None:
                raise RuntimeError(
                    f"leaf {node.name or node.shape} still holds a gradient; call zero_grad() first")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced (shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (use broadcast_to explicitly)")


def _binary(a, b, op: str):
    """Normalize operands; returns (a, b, scalar_side) where scalar_side is 'a', 'b' or None."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_same_shape(a, b, op)
        return a, b, None
    if isinstance(a, Tensor) and isinstance(b, Number):
        return a, float(b), "b"
    if isinstance(b, Tensor) and isinstance(a, Number):
        return float(a), b, "a"
    raise TypeError(f"{op}: unsupported operands {type(a).__name__}, {type(b).__name__}")


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b, s = _binary(a, b, "add")
    if s is None:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    t, c = (a, b) if s == "b" else (b, a)
    return _result(t.data + c, (t,), lambda g: (g,))


def sub(a, b) -> Tensor:
    a, b, s = _binary(a, b, "sub")
    if s is None:
        return _result(a.data - b.data, (a, b), lambda g: (g, -g))
    if s == "b":
        return _result(a.data - b, (a,), lambda g: (g,))
    return _result(a - b.data, (b,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b, s = _binary(a, b, "mul")
    if s is None:
        ad, bd = a.data, b.data
        return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    t, c = (a, b) if s == "b" else (b, a)
    return _result(t.data * c, (t,), lambda g: (g * c,))


def div(a, b) -> Tensor:
    a, b, s = _binary(a, b, "div")
    if s is None:
        ad, bd = a.data, b.data
        out = ad / bd
        return _result(out, (a, b), lambda g: (g / bd, -g * out / bd))
    if s == "b":
        return _result(a.data / b, (a,), lambda g: (g / b,))
    bd = b.data
    out = a / bd
    return _result(out, (b,), lambda g: (-g * out / bd,))


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), lambda g: (-g,))


# elementwise nonlinearities

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def clamp(x: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clip to ``[lo, hi]`` (either bound may be None).

    The subgradient is 1 strictly inside the interval and 0 at or beyond a
    bound, so saturated values pass no gradient.
    """
    d = x.data
    out = np.clip(d, lo, hi) if (lo is not None or hi is not None) else d.copy()
    mask = np.ones(d.shape, dtype=bool)
    if lo is not None:
        mask &= d > lo
    if hi is not None:
        mask &= d < hi
    if _DEBUG:
        assert lo is None or np.all(out >= lo), "clamp lower bound violated"
        assert hi is None or np.all(out <= hi), "clamp upper bound violated"
    return _result(out, (x,), lambda g: (g * mask,))


# reductions

def sum_(x: Tensor, axis=None) -> Tensor:
    if x.size == 0:
        raise ValueError("sum of an empty tensor")
    shape = x.shape
    out = np.sum(np.ascontiguousarray(x.data), axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    if x.size == 0:
        raise ValueError("mean of an empty tensor")
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[a] for a in axes]))
    out = np.sum(np.ascontiguousarray(x.data), axis=axis) / count

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (x,), backward)


def l1_distance(a: Tensor, b) -> Tensor:
    """Mean absolute difference over all elements."""
    b = as_tensor(b)
    _check_same_shape(a, b, "l1_distance")
    return mean(abs_(a - b))


# shape ops

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    src = x.shape
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(src) if n == 1 and shape[i + lead] != 1)

    def backward(g):
        if axes:
            g = np.sum(g, axis=axes, keepdims=True)
        return (g.reshape(src),)

    return _result(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _result(np.array(x.data[index], dtype=np.float64), (x,), backward)


# convolution and resampling

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation on NCHW input with OIHW weights and zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {ci} (weight {weight.shape})")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride and dilation must be >= 1, padding >= 0")
    ho = kernels.conv_output_size(h, kh, stride, padding, dilation)
    wo = kernels.conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw} at dilation {dilation}")

    cols = kernels.im2col(x.data, kh, kw, stride, padding, dilation)
    w2 = weight.data.reshape(o, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g = g.reshape(n, o, ho * wo)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(np.matmul(w2.T, g), (n, c, h, w), kh, kw, stride, padding, dilation)
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _result(out, parents, backward)


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix, half-pixel centres (align_corners=False).

    Source coordinate for output index i is ``(i + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("interpolation sizes must be >= 1")
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def resize_bilinear_nchw(x: Tensor, h: int, w: int) -> Tensor:
    _, _, hi, wi = x.shape
    mh = bilinear_matrix(hi, h)
    mw = bilinear_matrix(wi, w)
    out = np.einsum("ai,ncij,bj->ncab", mh, x.data, mw, optimize=True)
    return _result(out, (x,), lambda g: (np.einsum("ai,ncab,bj->ncij", mh, g, mw, optimize=True),))


def upsample_bilinear2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"upsample expects NCHW input, got shape {x.shape}")
    return resize_bilinear_nchw(x, 2 * x.shape[2], 2 * x.shape[3])


# DCT

@lru_cache(maxsize=8)
def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row k is frequency k."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    b = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    b[0] /= np.sqrt(2.0)
    b.setflags(write=False)
    return b


def blockwise_dct(x: Tensor, n: int) -> Tensor:
    """2-D DCT of every non-overlapping n x n tile of an NCHW tensor.

    Output has shape (N, C, H/n, W/n, n, n).
    """
    bn, c, h, w = x.shape
    if h % n or w % n:
        raise ValueError(f"blockwise_dct: {h}x{w} is not divisible by patch size {n}")
    basis = dct_basis(n)
    tiles = x.data.reshape(bn, c, h // n, n, w // n, n)
    out = np.einsum("ki,ncaibj,lj->ncabkl", basis, tiles, basis, optimize=True)

    def backward(g):
        gt = np.einsum("ki,ncabkl,lj->ncaibj", basis, g, basis, optimize=True)
        return (gt.reshape(bn, c, h, w),)

    return _result(out, (x,), backward)
