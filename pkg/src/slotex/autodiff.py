"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every operation records its inputs and a backward rule expressed in terms
of the same differentiable primitives, so gradients of gradients work:
``grad(..., create_graph=True)`` leaves the backward computation on the
tape, which the optimal-transport cost refinement relies on.

The tape is rebuilt on every forward pass. Tensors and tapes are
single-writer; one graph belongs to one thread.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

_GRAD_ENABLED = [True]
_F64 = np.dtype(np.float64)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


@contextlib.contextmanager
def enable_grad():
    """Re-enable tape recording (e.g. for inner gradients under no_grad)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = True
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


def grad_enabled():
    return _GRAD_ENABLED[0]


class Tensor:
    """A float64 ndarray plus an optional gradient buffer and tape links."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        if type(data) is not np.ndarray or data.dtype is not _F64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._vjp = None

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
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, vjp):
    out = Tensor(data)
    out.requires_grad = True
    out._parents = parents
    out._vjp = vjp
    return out


def custom(data, parents, vjp):
    """Record an externally computed op with a caller-supplied backward rule.

    ``vjp(cotangent) -> tuple`` must return one entry per parent (Tensor or
    None). Used by the fused kernel ops.
    """
    parents = tuple(parents)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        return _record(data, parents, vjp)
    return Tensor(data)


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root):
    # two-phase DFS; nodes are marked visited when first popped (not when
    # pushed) so a node shared by several consumers is emitted after all of
    # them, no matter the discovery order
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _sweep(root, seed, record, sinks=None):
    """Reverse sweep from root; returns {id: cotangent} for sink tensors."""
    order = _topo_order(root)
    cot = {id(root): seed}
    captured = {}
    ctx = contextlib.nullcontext() if record else no_grad()
    with ctx:
        for node in reversed(order):
            g = cot.pop(id(node), None)
            if g is None:
                continue
            if sinks is not None:
                if id(node) in sinks:
                    captured[id(node)] = g
            elif node.requires_grad:
                node.grad = g.data if node.grad is None else node.grad + g.data
            if node._vjp is None:
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = cot.get(id(p))
                cot[id(p)] = pg if prev is None else add(prev, pg)
    return captured


def backward(loss):
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every grad-tracked tensor.

    Repeated calls accumulate; reset with ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any grad-tracked tensor")
    _sweep(loss, Tensor(np.ones_like(loss.data)), record=False)


def grad(output, inputs, create_graph=False):
    """Return d(output)/d(input) for each input, without touching ``.grad``.

    With ``create_graph=True`` the returned tensors stay on the tape and can
    be differentiated again.
    """
    if output.size != 1:
        raise ContractError(f"grad needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ContractError("output is not connected to any grad-tracked tensor")
    sinks = {id(t) for t in inputs}
    captured = _sweep(output, Tensor(np.ones_like(output.data)), record=create_graph,
                      sinks=sinks)
    return [captured.get(id(t), Tensor(np.zeros_like(t.data))) for t in inputs]


# ---------------------------------------------------------------------------
# primitives


def _sum_to(g, shape):
    """Reduce a broadcast cotangent back to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc
    if not _GRAD_ENABLED[0] or not (a.requires_grad or b.requires_grad):
        return Tensor(data)
    sa, sb = a.shape, b.shape
    if sa == sb:
        return _record(data, (a, b), lambda g: (g, g))
    return _record(data, (a, b), lambda g: (_sum_to(g, sa), _sum_to(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc
    if not _GRAD_ENABLED[0] or not (a.requires_grad or b.requires_grad):
        return Tensor(data)
    sa, sb = a.shape, b.shape
    if sa == sb:
        return _record(data, (a, b), lambda g: (g, neg(g)))
    return _record(data, (a, b), lambda g: (_sum_to(g, sa), _sum_to(neg(g), sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc
    if not _GRAD_ENABLED[0] or not (a.requires_grad or b.requires_grad):
        return Tensor(data)
    sa, sb = a.shape, b.shape
    return _record(data, (a, b),
                   lambda g: (_sum_to(mul(g, b), sa), _sum_to(mul(g, a), sb)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc
    if not _GRAD_ENABLED[0] or not (a.requires_grad or b.requires_grad):
        return Tensor(data)
    sa, sb = a.shape, b.shape
    return _record(data, (a, b),
                   lambda g: (_sum_to(div(g, b), sa),
                              _sum_to(neg(div(mul(g, a), mul(b, b))), sb)))


def neg(a):
    a = as_tensor(a)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(-a.data)
    return _record(-a.data, (a,), lambda g: (neg(g),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    if not _GRAD_ENABLED[0] or not (a.requires_grad or b.requires_grad):
        return Tensor(data)
    return _record(data, (a, b),
                   lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(a.data.T)
    return _record(a.data.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    old = a.shape
    return _record(data, (a,), lambda g: (reshape(g, old),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    old = a.shape
    return _record(data, (a,), lambda g: (_sum_to(g, old),))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    shape = a.shape

    def vjp(g):
        if axis is None:
            kshape = (1,) * len(shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(shape) for ax in axes)
            kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
        return (broadcast_to(reshape(g, kshape), shape),)

    return _record(data, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        total = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        total = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(total))


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _GRAD_ENABLED[0] and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._vjp = lambda g: (mul(g, out),)
    return out


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    data = np.log(a.data)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    return _record(data, (a,), lambda g: (div(g, a),))


def sqrt(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    if _GRAD_ENABLED[0] and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._vjp = lambda g: (mul(g, div(0.5, out)),)
    return out


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    if _GRAD_ENABLED[0] and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._vjp = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(a):
    a = as_tensor(a)
    d = a.data
    with np.errstate(over="ignore"):
        data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-d)), np.exp(d) / (1.0 + np.exp(d)))
    out = Tensor(data)
    if _GRAD_ENABLED[0] and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._vjp = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def maximum(a, floor):
    """Elementwise max against a python scalar (clip from below)."""
    a = as_tensor(a)
    data = np.maximum(a.data, floor)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    mask = Tensor((a.data > floor).astype(np.float64))
    return _record(data, (a,), lambda g: (mul(g, mask),))


def xlogx(a):
    """x*log(x) with the 0*log(0) = 0 convention; differentiable where x > 0."""
    a = as_tensor(a)
    d = a.data
    if np.any(d < 0.0):
        raise ContractError("xlogx requires nonnegative input")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.where(d > 0.0, d * np.log(np.where(d > 0.0, d, 1.0)), 0.0)
    if not _GRAD_ENABLED[0] or not a.requires_grad:
        return Tensor(data)
    mask = Tensor((d > 0.0).astype(np.float64))
    return _record(data, (a,),
                   lambda g: (mul(g, mul(add(log(maximum(a, 1e-300)), 1.0), mask)),))


def logsumexp(a, axis):
    """Stable log-sum-exp, result keeps the reduced axis (keepdims)."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    data = m + np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True))
    out = Tensor(data)
    if _GRAD_ENABLED[0] and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)
        out._vjp = lambda g: (mul(g, exp(sub(a, out))),)
    return out


def softmax(a, axis):
    """Stable softmax along ``axis``."""
    a = as_tensor(a)
    if np.any(np.isnan(a.data)):
        raise NumericError("softmax received NaN input")
    return exp(sub(a, logsumexp(a, axis=axis)))


def softmax_rows(a):
    """Softmax over the last axis: each row becomes a distribution."""
    return softmax(a, axis=-1)


def gather_rows(table, ids):
    """Rows ``table[ids]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    nrows = table.shape[0]
    if ids.size and (ids.max() >= nrows or ids.min() < 0):
        raise LookupError(f"row index out of range for table with {nrows} rows")
    data = table.data[ids]
    if not _GRAD_ENABLED[0] or not table.requires_grad:
        return Tensor(data)
    return _record(data, (table,), lambda g: (scatter_rows(g, ids, nrows),))


def scatter_rows(src, ids, nrows):
    src = as_tensor(src)
    ids = np.asarray(ids, dtype=np.intp)
    buf = np.zeros((nrows,) + src.shape[1:], dtype=np.float64)
    np.add.at(buf, ids, src.data)
    if not _GRAD_ENABLED[0] or not src.requires_grad:
        return Tensor(buf)
    return _record(buf, (src,), lambda g: (gather_rows(g, ids),))


def take_per_row(mat, cols):
    """Vector of ``mat[i, cols[i]]``."""
    mat = as_tensor(mat)
    cols = np.asarray(cols, dtype=np.intp)
    k, n = mat.shape
    if cols.shape != (k,):
        raise DimensionError(f"need one column index per row: {cols.shape} vs {k} rows")
    if cols.size and (cols.max() >= n or cols.min() < 0):
        raise LookupError("column index out of range")
    data = mat.data[np.arange(k), cols]
    if not _GRAD_ENABLED[0] or not mat.requires_grad:
        return Tensor(data)
    return _record(data, (mat,), lambda g: (put_per_row(g, cols, n),))


def put_per_row(vec, cols, ncols):
    vec = as_tensor(vec)
    cols = np.asarray(cols, dtype=np.intp)
    k = vec.shape[0]
    buf = np.zeros((k, ncols), dtype=np.float64)
    np.add.at(buf, (np.arange(k), cols), vec.data)
    if not _GRAD_ENABLED[0] or not vec.requires_grad:
        return Tensor(buf)
    return _record(buf, (vec,), lambda g: (take_per_row(g, cols),))


# ---------------------------------------------------------------------------
# GRU slot update


@dataclass
class GRUParams:
    """Nine parameter blocks of a GRU cell (input, hidden and bias per gate)."""

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    def tensors(self):
        return [self.w_update, self.u_update, self.b_update,
                self.w_reset, self.u_reset, self.b_reset,
                self.w_cand, self.u_cand, self.b_cand]


def gru_cell(h_prev, x, params):
    """One GRU step applied independently to each row.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    cand = tanh(x Wc + (r*h) Uc + bc), out = (1-z)*h + z*cand.
    """
    h_prev, x = as_tensor(h_prev), as_tensor(x)
    if h_prev.shape != x.shape:
        raise DimensionError(f"state/input shapes disagree: {h_prev.shape} vs {x.shape}")
    z = sigmoid(add(add(matmul(x, params.w_update), matmul(h_prev, params.u_update)),
                    params.b_update))
    r = sigmoid(add(add(matmul(x, params.w_reset), matmul(h_prev, params.u_reset)),
                    params.b_reset))
    cand = tanh(add(add(matmul(x, params.w_cand), matmul(mul(r, h_prev), params.u_cand)),
                    params.b_cand))
    return add(mul(sub(1.0, z), h_prev), mul(z, cand))
