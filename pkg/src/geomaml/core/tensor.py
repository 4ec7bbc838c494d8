"""Float64 tensors with a reverse-mode differentiation record.

Every backward rule is written in terms of differentiable tensor operations,
so the gradient graph can itself be differentiated (gradients of gradients).
"""
import threading
from contextlib import contextmanager

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def grad_mode(enabled):
    """Enable or disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = bool(enabled)
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return grad_mode(False)


class Tensor:
    """N-dimensional float64 array with an optional differentiation record.

    Parameters
    ----------
    data : array_like
        Values, converted to a contiguous float64 array.
    requires_grad : bool
        Leaf flag: gradients are wanted with respect to this tensor.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag}, op={self.op})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data, parents, backward, op):
    """Wrap an op result, recording the graph when any parent needs it."""
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _reduced_axes(shape, target):
    """Axes of ``shape`` to sum so the result broadcasts back to ``target``."""
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, t in enumerate(target):
        if t == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes)


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes = _reduced_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    data = data.reshape(shape)
    src = x.shape
    return make(data, (x,), lambda g: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    data = np.broadcast_to(x.data, shape)
    return make(data, (x,), lambda g: (sum_to(g, src),), "broadcast_to")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b),
                lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b),
                lambda g: (sum_to(g, sa), sum_to(neg(g), sb)), "sub")


def neg(a):
    return make(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make(a.data * b.data, (a, b),
                lambda g: (sum_to(mul(g, b), sa), sum_to(mul(g, a), sb)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return sum_to(ga, sa), sum_to(gb, sb)

    return make(a.data / b.data, (a, b), backward, "div")


def power(a, p):
    """``a ** p`` for a constant real exponent."""
    p = float(p)
    if p == 1.0:
        return a
    return make(a.data ** p, (a,), lambda g: (mul(g, mul(p, power(a, p - 1.0))),), "pow")


def exp(a):
    out = make(np.exp(a.data), (a,), None, "exp")
    if out._parents:
        out._backward = lambda g: (mul(g, out),)
    return out


def log(a):
    return make(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def sqrt(a):
    return power(a, 0.5)


def relu(a):
    """Elementwise ``max(0, x)`` with subgradient 0 at 0."""
    mask = (a.data > 0).astype(np.float64)
    return make(a.data * mask, (a,), lambda g: (mul(g, mask),), "relu")


def where_mask(a, mask):
    """Multiply by a fixed 0/1 mask (gradient flows where the mask is set)."""
    mask = np.asarray(mask, dtype=np.float64)
    return mul(a, mask)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    src = a.shape
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return make(data, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for i in axes:
        count *= a.shape[i]
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    src = a.shape
    data = a.data.reshape(shape)
    return make(data, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                lambda g: (transpose(g, inv),), "transpose")


def flip(a, axes):
    axes = tuple(axes)
    return make(np.ascontiguousarray(np.flip(a.data, axis=axes)), (a,),
                lambda g: (flip(g, axes),), "flip")


def slice_axis(a, axis, start, stop):
    """``a[..., start:stop, ...]`` along one axis."""
    axis = axis % a.ndim
    size = a.shape[axis]
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return make(np.ascontiguousarray(a.data[tuple(idx)]), (a,),
                lambda g: (pad_axis(g, axis, start, size - stop),), "slice")


def pad_axis(a, axis, before, after):
    """Zero-pad one axis; adjoint of :func:`slice_axis`."""
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    length = a.shape[axis]
    return make(np.pad(a.data, widths), (a,),
                lambda g: (slice_axis(g, axis, before, before + length),), "pad")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1]))
                     for i in range(len(tensors)))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product of 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return make(a.data @ b.data, (a, b),
                lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)), "matmul")
