"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When gradient recording is enabled
and at least one input requires a gradient, the result remembers its
parents, a backward closure, and a monotonically increasing sequence number.
The sequence number is the recording order, which is also a valid
topological order, so :func:`backward` simply visits reachable nodes in
reverse sequence order.

NaN is never propagated silently: every op checks its output and raises
:class:`~jointcls.errors.NonFiniteError`. Infinities are rejected as well,
except for the explicit ``masked_fill`` op used for the invalid-label
sentinel.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NonFiniteError, NumericDomainError, ShapeError

GELU_C = math.sqrt(2.0 / math.pi)  # 0.7978845608028654
GELU_K = 0.044715
L2_EPS = 1e-12
LN_EPS = 1e-5

_seq = itertools.count()
_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, optimizer updates)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = -1
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operators --------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

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


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out, op, allow_inf=False):
    if not np.isfinite(out).all():
        if np.isnan(out).any() or not allow_inf:
            raise NonFiniteError(f"{op} produced a non-finite value")
    return out


def _make(data, parents, backward_fn, op, allow_inf=False):
    _check(data, op, allow_inf)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._seq = -1
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._seq = next(_seq)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- tape -----------------------------------------------------------------
class ComputationTape:
    """Recorded ops reachable from a root, in recording order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(root):
    """Accumulate d(root)/d(x) into ``x.grad`` for every reachable leaf ``x``.

    ``root`` must hold exactly one element. Gradients add up across multiple
    uses of a tensor and across repeated calls (call ``zero_grad`` between
    optimizer steps).
    """
    if not isinstance(root, Tensor) or root.size != 1:
        raise ContractError("backward() needs a scalar root tensor")
    if not root.requires_grad:
        raise ContractError("root does not depend on any tensor requiring grad")
    tape = ComputationTape.from_root(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise binary -----------------------------------------------------
def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericDomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), bw, "div")


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "minimum")
    pick_a = a.data <= b.data

    def bw(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


def maximum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "maximum")
    pick_a = a.data >= b.data

    def bw(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "maximum")


def where(cond, a, b):
    """Select from ``a`` where ``cond`` is true, else ``b``. ``cond`` is constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(out, (a, b), bw, "where")


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true by the constant ``value`` (may be -inf)."""
    x = _as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, value, x.data)
    return _make(out, (x,), lambda g: (np.where(mask, 0.0, g),), "masked_fill",
                 allow_inf=True)


# -- elementwise unary ------------------------------------------------------
def neg(x):
    x = _as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, exponent):
    x = _as_tensor(x)
    p = float(exponent)
    xd = x.data
    if not p.is_integer() and np.any(xd < 0):
        raise NumericDomainError("power: negative base with fractional exponent")
    if p < 0 and np.any(xd == 0):
        raise NumericDomainError("power: zero base with negative exponent")
    out = xd ** p

    def bw(g):
        if p == 0:
            return (np.zeros_like(xd),)
        return (g * p * xd ** (p - 1),)

    return _make(out, (x,), bw, "power")


def exp(x):
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericDomainError("log: non-positive input")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x):
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise NumericDomainError("sqrt: negative input")
    out = np.sqrt(x.data)
    if np.any(out == 0) and x.requires_grad:
        raise NumericDomainError("sqrt: gradient undefined at 0")
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    out = _sigmoid_np(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x):
    """log(sigmoid(x)) without underflow for large negative x."""
    x = _as_tensor(x)
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    return _make(out, (x,), lambda g: (g * _sigmoid_np(-xd),), "log_sigmoid")


def relu(x):
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def gelu(x):
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3))), c = sqrt(2/pi)."""
    x = _as_tensor(x)
    xd = x.data
    inner = GELU_C * (xd + GELU_K * xd ** 3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_K * xd * xd)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _make(out, (x,), bw, "gelu")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; zero gradient where the clamp is active."""
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- reductions -------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    if n == 0:
        raise ContractError("mean over an empty axis")
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.mean(x.data, axis=axes, keepdims=keepdims), (x,), bw, "mean")


# -- linear algebra & shape -------------------------------------------------
def matmul(a, b):
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw, "matmul")


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a1, a2):
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def getitem(x, index):
    """Indexing/gather; the backward scatters with accumulation (repeated indices add)."""
    x = _as_tensor(x)
    shape = x.shape
    out = x.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), bw, "getitem")


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    sizes = [t.shape[axis] for t in ts]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bw, "concat")


def stack(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("stack of an empty list")
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: {e}") from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, tuple(ts), bw, "stack")


def scatter_rows(base, index, values):
    """Return a copy of ``base`` with ``base[index] = values`` (out-of-place).

    ``index`` is any numpy index that selects the rows being overwritten;
    gradient for the overwritten entries of ``base`` is zero.
    """
    base, values = _as_tensor(base), _as_tensor(values)
    out = base.data.copy()
    out[index] = values.data
    written = np.zeros(base.shape, dtype=bool)
    written[index] = True
    vshape = values.shape

    def bw(g):
        return np.where(written, 0.0, g), g[index].reshape(vshape)

    return _make(out, (base, values), bw, "scatter_rows")


# -- composite numerics -----------------------------------------------------
def softmax(x, axis=-1):
    """Softmax stabilized by max-subtraction."""
    x = _as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm params must have shape ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gain, bias), bw, "layer_norm")


def l2_normalize(x, axis=-1):
    """x / ||x||_2 along ``axis``; norms below 1e-12 are clamped."""
    x = _as_tensor(x)
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    n = np.maximum(n, L2_EPS)
    out = xd / n

    def bw(g):
        return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / n,)

    return _make(out, (x,), bw, "l2_normalize")


def logsumexp(x, axis=-1, keepdims=False):
    x = _as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    s = np.sum(np.exp(x.data - m), axis=axis, keepdims=True)
    out_k = m + np.log(s)
    soft = np.exp(x.data - out_k)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (x,), bw, "logsumexp")
