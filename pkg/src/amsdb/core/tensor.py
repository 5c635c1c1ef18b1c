"""Dense tensors with dynamically recorded reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to one gradient per
parent.  :meth:`Tensor.backward` topologically orders the recorded graph and
visits each node exactly once, in reverse.

Storage is single precision by default.  Operations preserve the dtype of
their inputs, so a graph built from float64 leaves runs entirely in double
precision (used by the gradient-check harness).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractError, NumericError, ParameterError, ShapeError

_grad_enabled = True
_check_finite = True

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _to_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(np.float32)


class Tensor:
    """An n-dimensional float array that can take part in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = "", dtype=None):
        self.data = _to_array(data, dtype)
        if self.data.dtype not in (np.float32, np.float64):
            raise ParameterError(f"unsupported dtype {self.data.dtype}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- differentiation --------------------------------------------------
    def backward(self, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf.

        ``self`` must be a scalar.  Gradients add onto whatever is already in
        ``.grad``; call :meth:`zero_grad` on leaves to reset.  Unless
        ``retain_graph`` is set, interior nodes drop their closures afterwards.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ContractError(
                        f"gradient rule of {node.op} returned shape {pg.shape} for parent {parent.shape}"
                    )
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            if not retain_graph:
                node._backward = None
                node._parents = ()
                node.requires_grad = False

    # -- operator sugar ---------------------------------------------------
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
        from .ops import matmul

        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

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

    def sigmoid(self):
        return sigmoid(self)

    def silu(self):
        return silu(self)

    def relu(self):
        return relu(self)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that need gradients, parents before children."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def graph_leaves(root: Tensor) -> list:
    """Leaf tensors (by identity) that ``root`` depends on through the live graph."""
    return [n for n in topological_order(root) if n.is_leaf]


def set_finite_checks(enabled: bool) -> None:
    global _check_finite
    _check_finite = bool(enabled)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's forward value, recording the graph edge when needed."""
    if _check_finite and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    else:
        out.op = op
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary_operands(a, b, op: str):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ParameterError(f"{op} needs at least one Tensor operand")
    like = a if isinstance(a, Tensor) else b
    a, b = as_tensor(a, like), as_tensor(b, like)
    if a.dtype != b.dtype:
        b = Tensor(b.data.astype(a.dtype), requires_grad=False) if not b.requires_grad else b
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is a scalar")
    return a, b


def _fold(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _out_shape(a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    if b.size == 1 and a.size != 1:
        return a.shape
    if a.size == 1 and b.size != 1:
        return b.shape
    return np.broadcast_shapes(a.shape, b.shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    out = (a.data + b.data).reshape(_out_shape(a, b))
    return make_result(out, (a, b), lambda g: (_fold(g, a.shape), _fold(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    out = (a.data - b.data).reshape(_out_shape(a, b))
    return make_result(out, (a, b), lambda g: (_fold(g, a.shape), _fold(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    out = (a.data * b.data).reshape(_out_shape(a, b))

    def backward(g):
        return _fold(g * b.data, a.shape), _fold(g * a.data, b.shape)

    return make_result(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    out = (a.data / b.data).reshape(_out_shape(a, b))

    def backward(g):
        ga = g / b.data
        return _fold(ga, a.shape), _fold(-ga * out, b.shape)

    return make_result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a: Tensor) -> Tensor:
    return make_result(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    half = x.dtype.type(0.5)
    return half * np.tanh(half * x) + half


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s

    def backward(g):
        return (g * s * (1 + a.data * (1 - s)),)

    return make_result(out, (a,), backward, "silu")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return make_result(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for a {ndim}-d tensor")
    return tuple(sorted(ax % ndim for ax in axes))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), a.shape).copy(),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / a.dtype.type(count)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept) / a.dtype.type(count), a.shape).copy(),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for {a.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast; the gradient sums over the broadcast axes."""
    shape = tuple(shape)
    try:
        out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return make_result(out, (a,), backward, "broadcast")


def _unique_groups(index: np.ndarray) -> list:
    """Split positions of ``index`` into groups whose index values are distinct."""
    if np.unique(index).size == index.size:
        return [np.arange(index.size)]
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_idx)) + 1]
    rank = np.arange(index.size) - np.repeat(starts, np.diff(np.r_[starts, index.size]))
    ranks = np.empty_like(rank)
    ranks[order] = rank
    return [np.flatnonzero(ranks == r) for r in range(ranks.max() + 1)]


def index_select(a: Tensor, axis: int, index) -> Tensor:
    """Gather along one axis; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    if index.ndim != 1:
        raise ShapeError("index_select takes a 1-d index")
    if index.size and (index.min() < -a.shape[axis] or index.max() >= a.shape[axis]):
        raise ShapeError(f"index out of range for axis of length {a.shape[axis]}")
    out = np.take(a.data, index, axis=axis)
    groups = _unique_groups(index)

    def backward(g):
        grad = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        gsl = [slice(None)] * a.ndim
        for pos in groups:
            sl[axis] = index[pos]
            gsl[axis] = pos
            grad[tuple(sl)] += g[tuple(gsl)]
        return (grad,)

    return make_result(out, (a,), backward, "index_select")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return make_result(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=ax)) for i in range(len(tensors)))

    return make_result(out, tensors, backward, "stack")
