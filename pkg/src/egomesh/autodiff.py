"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a ``numpy`` array.  Operations executed while a
:class:`Tape` is active are recorded in execution order; :func:`backward`
replays the tape in reverse and accumulates gradients into every
``requires_grad`` tensor it reaches.  Outside a tape, operations compute
values only, so inference carries no bookkeeping cost.

Broadcasting is deliberately restricted: elementwise binary ops accept
identical shapes, a Python scalar, or one operand whose shape is a trailing
suffix of the other's (leading-batch expansion).  Anything else raises
:class:`~egomesh.errors.ShapeMismatchError`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeMismatchError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """N-dimensional float64 array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    # operator sugar; the free functions hold the real logic
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a tensor from array-like data."""
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of executed ops; inputs always precede their consumers.

    Use as a context manager around the forward pass that should be
    differentiated.  One tape must never be driven from two threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_output(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.nodes.append(_Node(out, inputs, vjp))
    return out


def backward(loss: Tensor, tape: Tape | None = None):
    """Populate gradients of every ``requires_grad`` tensor reachable from ``loss``.

    Repeated calls without :meth:`Tensor.zero_grad` accumulate.  Raises
    :class:`ContractError` if ``loss`` is not a single element.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or _active_tape()
    if tape is None:
        raise ContractError("backward called with no active tape")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = adjoint.get(id(node.out))
        if g is None:
            continue
        grads = node.vjp(g)
        for t, gt in zip(node.inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gt
            else:
                adjoint[key] = gt
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            t.grad = adjoint[key] if t.grad is None else t.grad + adjoint[key]


# ---------------------------------------------------------------------------
# elementwise binary ops with suffix-only broadcasting
# ---------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_suffix(a: Tensor, b: Tensor, opname: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeMismatchError(f"{opname}: shapes {sa} and {sb} are not identical or suffix-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the leading axes a suffix operand was expanded across."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_output(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make_output(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make_output(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a, b, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _make_output(out, (a, b), vjp)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each leading-index slice ``x[i]`` by the scalar ``s[i]``."""
    x, s = _as_tensor(x), _as_tensor(s)
    if s.ndim != 1 or x.ndim < 1 or x.shape[0] != s.shape[0]:
        raise ShapeMismatchError(f"scale_rows: x {x.shape} needs leading dim matching s {s.shape}")
    srow = s.data.reshape((s.shape[0],) + (1,) * (x.ndim - 1))
    out = x.data * srow
    xd = x.data

    def vjp(g):
        gx = g * srow
        gs = (g * xd).sum(axis=tuple(range(1, xd.ndim)))
        return gx, gs

    return _make_output(out, (x, s), vjp)


# ---------------------------------------------------------------------------
# matmul and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product.  2-D each side, or batched with equal leading dims,
    or one batched operand against a 2-D weight."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"matmul: leading batch dims disagree for {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        if ga.ndim > ad.ndim:
            ga = ga.sum(axis=tuple(range(ga.ndim - ad.ndim)))
        if gb.ndim > bd.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - bd.ndim)))
        return ga, gb

    return _make_output(out, (a, b), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)
    old = x.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make_output(out, (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _make_output(out, (x,), vjp)


def index(x: Tensor, key) -> Tensor:
    """Basic slicing/integer indexing; backward scatters into a zero buffer."""
    x = _as_tensor(x)
    out = x.data[key]
    shape = x.shape

    def vjp(g):
        buf = np.zeros(shape)
        buf[key] += g
        return (buf,)

    return _make_output(np.array(out, copy=True), (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis) for i in range(len(parts))
        )

    return _make_output(out, tuple(parts), vjp)


def stack0(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    parts = [_as_tensor(p) for p in parts]
    return concat([reshape(p, (1,) + p.shape) for p in parts], axis=0)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-D table; backward scatter-adds into the table."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeMismatchError(f"gather_rows: table must be 2-D, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatchError(f"gather_rows: indices must be 1-D, got {idx.shape}")
    n = table.shape[0]
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        raise IndexError(f"gather_rows: index {int(idx[bad][0])} out of range [0, {n})")
    out = table.data[idx]
    shape = table.shape

    def vjp(g):
        buf = np.zeros(shape)
        np.add.at(buf, idx, g)
        return (buf,)

    return _make_output(out, (table,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    s = out

    def vjp(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make_output(out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},) for input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * inv
    out = gamma.data * xh + beta.data
    gd = gamma.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xh).sum(axis=lead) if lead else g * xh
        dbeta = g.sum(axis=lead) if lead else g
        dxh = g * gd
        m1 = dxh.mean(axis=-1, keepdims=True)
        m2 = (dxh * xh).mean(axis=-1, keepdims=True)
        dx = inv * (dxh - m1 - xh * m2)
        return dx, dgamma, dbeta

    return _make_output(out, (x, gamma, beta), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf
    xd = x.data

    def vjp(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (cdf + xd * pdf),)

    return _make_output(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and pointwise math
# ---------------------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if not keepdims:
            expand = list(shape)
            for a in axes:
                expand[a] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g, shape).copy(),)

    return _make_output(out, (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if not keepdims:
            expand = list(shape)
            for a in axes:
                expand[a] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g, shape).copy() / count,)

    return _make_output(out, (x,), vjp)


def tabs(x: Tensor) -> Tensor:
    """Elementwise absolute value; subgradient 0 at the kink."""
    x = _as_tensor(x)
    out = np.abs(x.data)
    sign = np.sign(x.data)

    def vjp(g):
        return (g * sign,)

    return _make_output(out, (x,), vjp)


def tsqrt(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.sqrt(x.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make_output(out, (x,), vjp)


def tsin(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.sin(x.data)
    c = np.cos(x.data)

    def vjp(g):
        return (g * c,)

    return _make_output(out, (x,), vjp)


def tcos(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.cos(x.data)
    s = np.sin(x.data)

    def vjp(g):
        return (g * -s,)

    return _make_output(out, (x,), vjp)


def tatan2(y: Tensor, x: Tensor) -> Tensor:
    y, x = _as_tensor(y), _as_tensor(x)
    if y.shape != x.shape:
        raise ShapeMismatchError(f"atan2: shapes {y.shape} and {x.shape} must match")
    out = np.arctan2(y.data, x.data)
    denom = y.data * y.data + x.data * x.data
    yd, xd = y.data, x.data

    def vjp(g):
        return g * xd / denom, g * -yd / denom

    return _make_output(out, (y, x), vjp)
