"""Reverse-mode differentiation over dense float64 tensors.

Define-by-run: every operation whose inputs require gradients records itself
on the output tensor (op name, parent tensors, a backward closure). A call to
:func:`backward` traces the reachable subgraph into topological order and
walks it once in reverse. The graph is rebuilt on every forward pass.

Broadcasting is deliberately restricted to two forms so every backward rule
stays auditable:

* scalar (shape ``()``) against anything, and
* per-channel ``(C, 1, 1)`` against ``(C, H, W)``.

Convolution is fixed to 3x3 / stride 1 / zero padding 1; its inner loops live
in :mod:`styleproj.kernels` together with 2x2 average pooling and 2x bilinear
upsampling.
"""

import itertools
import warnings

import numpy as np

from . import kernels


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class GradCheckError(ValueError):
    """Finite-difference probing hit a non-finite function value."""


class DetachedGraphWarning(RuntimeWarning):
    """backward() was called on a loss with no gradient path."""


_node_ids = itertools.count()


def _as_f64(values):
    arr = np.asarray(values, dtype=np.float64)
    # ascontiguousarray would promote 0-d to 1-d; 0-d is always contiguous
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """Dense float64 tensor, row-major, with an optional gradient buffer.

    ``grad`` is allocated as zeros for gradient-carrying leaves and is
    accumulated into by :func:`backward`; call :func:`zero_grad` between
    optimization steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward_fn", "node_id")

    def __init__(self, data, requires_grad=False):
        arr = _as_f64(data)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.op = None
        self.parents = ()
        self._backward_fn = None
        self.node_id = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph (no gradient path)."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; every route funnels into the op builders below
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def softmax(self, axis=0):
        return softmax(self, axis=axis)


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _from_op(data, op, parents, backward_fn):
    arr = _as_f64(data)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.node_id = next(_node_ids)
    if out.requires_grad:
        out.op = op
        out.parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.op = op
        out.parents = ()
        out._backward_fn = None
    return out


# ---------------------------------------------------------------------------
# broadcasting checks
# ---------------------------------------------------------------------------

def _check_elementwise(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if (len(sa) == 3 and len(sb) == 3 and sa[0] == sb[0]
            and (sa[1:] == (1, 1) or sb[1:] == (1, 1))):
        return
    raise ValueError(f"op {op!r}: shapes {sa} and {sb} not broadcastable "
                     "(only scalar and per-channel (C,1,1) broadcasts are supported)")


def _reduce_to(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return grad.sum()
    # per-channel (C,1,1) operand against (C,H,W)
    return grad.sum(axis=(1, 2), keepdims=True)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    _check_elementwise("add", a, b)

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _from_op(a.data + b.data, "add", (a, b), bwd)


def sub(a, b):
    _check_elementwise("sub", a, b)

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _from_op(a.data - b.data, "sub", (a, b), bwd)


def mul(a, b):
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _from_op(ad * bd, "mul", (a, b), bwd)


def div(a, b):
    _check_elementwise("div", a, b)
    ad, bd = a.data, b.data
    if (bd == 0).any():
        raise ValueError("op 'div': division by zero")

    def bwd(g):
        return _reduce_to(g / bd, a.shape), _reduce_to(-g * ad / (bd * bd), b.shape)

    return _from_op(ad / bd, "div", (a, b), bwd)


# ---------------------------------------------------------------------------
# unary maps
# ---------------------------------------------------------------------------

def relu(a):
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _from_op(np.where(mask, a.data, 0.0), "relu", (a,), bwd)


def exp(a):
    # overflow surfaces as the NonFiniteError below, not as a numpy warning
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _from_op(out, "exp", (a,), bwd)


def log(a):
    if (a.data <= 0).any():
        raise ValueError("op 'log': input must be strictly positive")
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return _from_op(np.log(ad), "log", (a,), bwd)


def sqrt(a):
    if (a.data < 0).any():
        raise ValueError("op 'sqrt': input must be nonnegative")
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / out),)

    return _from_op(out, "sqrt", (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim for a in axis))
    if len(set(axes)) != len(axes):
        raise ValueError(f"repeated axis in {axis}")
    return axes


def tsum(a, axis=None):
    axes = _norm_axes(axis, a.data.ndim)
    in_shape = a.shape

    def bwd(g):
        gg = g
        for ax in axes:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, in_shape).copy(),)

    return _from_op(a.data.sum(axis=axes), "sum", (a,), bwd)


def tmean(a, axis=None):
    axes = _norm_axes(axis, a.data.ndim)
    in_shape = a.shape
    count = 1
    for ax in axes:
        count *= in_shape[ax]

    def bwd(g):
        gg = g / count
        for ax in axes:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, in_shape).copy(),)

    return _from_op(a.data.mean(axis=axes), "mean", (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------

def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ValueError(f"op 'matmul': ranks {ad.ndim} @ {bd.ndim} unsupported")
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"op 'matmul': shapes {ad.shape} and {bd.shape} do not align")

    def bwd(g):
        if ad.ndim == 1 and bd.ndim == 1:       # dot -> scalar
            return g * bd, g * ad
        if ad.ndim == 1:                         # (n,) @ (n,k) -> (k,)
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:                         # (m,n) @ (n,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g                # (m,n) @ (n,k)

    return _from_op(ad @ bd, "matmul", (a, b), bwd)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ValueError(f"op 'reshape': cannot view {a.shape} as {shape}")
    in_shape = a.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return _from_op(a.data.reshape(shape), "reshape", (a,), bwd)


def transpose(a):
    if a.data.ndim != 2:
        raise ValueError(f"op 'transpose': rank-2 only, got shape {a.shape}")

    def bwd(g):
        return (g.T.copy(),)

    return _from_op(a.data.T.copy(), "transpose", (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("op 'concat': needs at least one input")
    ref = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ref:
            raise ValueError("op 'concat': rank mismatch")
    axis = axis % ref
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * ref
        outs = []
        for k in range(len(sizes)):
            slicer[axis] = slice(offsets[k], offsets[k + 1])
            outs.append(g[tuple(slicer)].copy())
        return tuple(outs)

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis),
                    "concat", tuple(tensors), bwd)


def softmax(a, axis=0):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, "softmax", (a,), bwd)


# ---------------------------------------------------------------------------
# spatial ops (kernel-backed)
# ---------------------------------------------------------------------------

def conv2d(x, w):
    """3x3 convolution, stride 1, zero padding 1: (Cin,H,W) x (Cout,Cin,3,3) -> (Cout,H,W)."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"op 'conv2d': need (Cin,H,W) and (Cout,Cin,3,3), got {x.shape} and {w.shape}")
    if w.shape[2:] != (3, 3):
        raise ValueError(f"op 'conv2d': kernel must be 3x3, got {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"op 'conv2d': channel mismatch between {x.shape} and {w.shape}")
    xd, wd = x.data, w.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        return kernels.conv2d_bwd_input(g, wd), kernels.conv2d_bwd_weight(g, xd)

    return _from_op(kernels.conv2d_fwd(xd, wd), "conv2d", (x, w), bwd)


def avgpool2(x):
    """2x2 average pooling with stride 2; spatial extents must be even."""
    if x.data.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"op 'avgpool2': need (C, even H, even W), got {x.shape}")

    def bwd(g):
        return (kernels.avgpool2_bwd(np.ascontiguousarray(g)),)

    return _from_op(kernels.avgpool2_fwd(x.data), "avgpool2", (x,), bwd)


def upsample2(x):
    """Bilinear 2x upsampling: (C,H,W) -> (C,2H,2W)."""
    if x.data.ndim != 3:
        raise ValueError(f"op 'upsample2': need (C,H,W), got {x.shape}")

    def bwd(g):
        return (kernels.upsample2_bwd(np.ascontiguousarray(g)),)

    return _from_op(kernels.upsample2_fwd(x.data), "upsample2", (x,), bwd)


# ---------------------------------------------------------------------------
# named dispatch
# ---------------------------------------------------------------------------

_OPS = {
    "add": lambda ins, **kw: add(*ins),
    "sub": lambda ins, **kw: sub(*ins),
    "mul": lambda ins, **kw: mul(*ins),
    "div": lambda ins, **kw: div(*ins),
    "matmul": lambda ins, **kw: matmul(*ins),
    "conv2d": lambda ins, **kw: conv2d(*ins),
    "relu": lambda ins, **kw: relu(*ins),
    "exp": lambda ins, **kw: exp(*ins),
    "sqrt": lambda ins, **kw: sqrt(*ins),
    "log": lambda ins, **kw: log(*ins),
    "mean": lambda ins, axis=None: tmean(ins[0], axis=axis),
    "sum": lambda ins, axis=None: tsum(ins[0], axis=axis),
    "concat": lambda ins, axis=0: concat(ins, axis=axis),
    "softmax": lambda ins, axis=0: softmax(ins[0], axis=axis),
    "reshape": lambda ins, shape=None: reshape(ins[0], shape),
    "transpose": lambda ins, **kw: transpose(*ins),
    "avgpool2": lambda ins, **kw: avgpool2(*ins),
    "upsample2": lambda ins, **kw: upsample2(*ins),
}


def forward_op(name, inputs, **attrs):
    """Apply a primitive by name. Unknown names are rejected."""
    try:
        fn = _OPS[name]
    except KeyError:
        raise ValueError(f"unknown op {name!r}; known ops: {sorted(_OPS)}") from None
    return fn([_lift(t) for t in inputs], **attrs)


def op_names():
    return sorted(_OPS)


# ---------------------------------------------------------------------------
# graph walk
# ---------------------------------------------------------------------------

class Graph:
    """Topologically ordered list of the recorded operations reaching a root.

    Rebuilt per backward call (define-by-run); ``nodes`` places every
    tensor after all of its parents.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
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
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss):
    """Accumulate d(loss)/d(node) into ``grad`` for every gradient-carrying node.

    Returns a map node_id -> gradient array for the traversed nodes. A loss
    with no gradient path raises :class:`DetachedGraphWarning` as a warning
    and leaves all leaf gradients untouched (zeros unless accumulated before).
    """
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        warnings.warn("loss has no gradient path; all gradients remain zero",
                      DetachedGraphWarning, stacklevel=2)
        return {}
    graph = Graph.trace(loss)
    local = {}
    for node in graph.nodes:
        if node.requires_grad:
            local[id(node)] = np.zeros_like(node.data)
    local[id(loss)] = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward_fn is None:
            continue
        gs = node._backward_fn(local[id(node)])
        for parent, g in zip(node.parents, gs):
            if parent.requires_grad:
                local[id(parent)] += g
    out = {}
    for node in graph.nodes:
        if not node.requires_grad:
            continue
        g = local[id(node)]
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        out[node.node_id] = node.grad
    return out


def zero_grad(tensors):
    for t in tensors:
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# finite-difference certification
# ---------------------------------------------------------------------------

def grad_check(f, x, step=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps one Tensor to a scalar Tensor. Error is
    max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DetachedGraphWarning)
        y = f(probe)
        if y.shape != ():
            raise ValueError(f"grad_check target must be scalar, got shape {y.shape}")
        backward(y)
    analytic = probe.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    for k in range(flat.size):
        bumped = flat.copy()
        bumped[k] = flat[k] + step
        try:
            hi = f(Tensor(bumped.reshape(x.shape))).item()
            bumped[k] = flat[k] - step
            lo = f(Tensor(bumped.reshape(x.shape))).item()
        except (NonFiniteError, ValueError) as err:
            raise GradCheckError(f"invalid probe at coordinate {k}: {err}") from err
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise GradCheckError(f"non-finite probe at coordinate {k}")
        numeric[k] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
