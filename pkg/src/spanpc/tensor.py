"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients.  The graph is
rebuilt on every forward pass; :meth:`Tensor.backward` walks it once in
reverse topological order.

Broadcasting is deliberately narrow: an operand may only be missing
*leading* axes (its shape must be a suffix of the other operand's shape).
Everything else raises :class:`~spanpc.errors.DimensionError`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A node in the differentiation graph.

    ``grad`` is populated by :meth:`backward` for every node with
    ``requires_grad`` (leaves and intermediates alike) and accumulates across
    calls until :meth:`zero_grad` is used.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: BackwardFn | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def backward(self) -> None:
        """Populate ``grad`` of every reachable node with d(self)/d(node)."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological(self)
        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = local.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in local:
                    local[key] = local[key] + pg
                else:
                    local[key] = np.asarray(pg, dtype=np.float64)


def _topological(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    """Create a graph node from precomputed ``data``.

    ``backward(g)`` must return one gradient (or ``None``) per parent.  Used
    by the circuit kernels, which supply their own fused derivatives.
    """
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (),
                  _backward=backward if req else None)


# --------------------------------------------------------------------------
# elementwise


def _check_suffix(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(f"{op}: shapes {sa} and {sb} differ beyond leading axes")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "add")
    sa, sb = a.shape, b.shape
    return apply(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "sub")
    sa, sb = a.shape, b.shape
    return apply(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "mul")
    ad, bd = a.data, b.data
    return apply(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply(x.data * c, (x,), lambda g: (g * c,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return apply(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore"):
        y = np.log(xd)
    return apply(y, (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0.0
    return apply(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


# --------------------------------------------------------------------------
# reductions and normalisations


def _axes_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _axes_tuple(axis, x.ndim)
    shape = x.shape

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return apply(x.data.sum(axis=axes), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _axes_tuple(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axes), 1.0 / n)


def _trailing_axes(axes, ndim: int) -> int:
    axes = tuple(axes) if not isinstance(axes, int) else (axes,)
    if not axes:
        raise ContractError("softmax needs a nonempty axis set")
    norm = sorted(a % ndim for a in axes)
    if norm != list(range(ndim - len(norm), ndim)):
        raise ContractError(f"axes {axes} are not a contiguous trailing block of a {ndim}-d tensor")
    return len(norm)


def _softmax_np(x: np.ndarray, n: int) -> np.ndarray:
    lead = x.shape[: x.ndim - n]
    flat = x.reshape(lead + (-1,))
    z = np.exp(flat - flat.max(axis=-1, keepdims=True))
    z /= z.sum(axis=-1, keepdims=True)
    return z.reshape(x.shape)


def softmax(x: Tensor, axes=(-1,)) -> Tensor:
    """Max-shifted softmax normalising jointly over a trailing block of axes."""
    n = _trailing_axes(axes, x.ndim)
    y = _softmax_np(x.data, n)
    red = tuple(range(x.ndim - n, x.ndim))

    def back(g):
        return (y * (g - (g * y).sum(axis=red, keepdims=True)),)

    return apply(y, (x,), back)


def log_softmax(x: Tensor, axes=(-1,)) -> Tensor:
    n = _trailing_axes(axes, x.ndim)
    red = tuple(range(x.ndim - n, x.ndim))
    m = x.data.max(axis=red, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=red, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=red, keepdims=True),)

    return apply(y, (x,), back)


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable ``log(sum(exp(x)))`` along one axis; ``-inf`` entries are zero mass."""
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ContractError("log_sum_exp needs a nonempty axis")
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(xd - m_safe).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + m_safe
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(s > 0, np.exp(xd - m_safe) / np.where(s > 0, s, 1.0), 0.0)

    def back(g):
        return (np.expand_dims(g, axis) * w,)

    return apply(np.squeeze(out, axis=axis), (x,), back)


def normalize(x: Tensor, axes=(-2, -1)) -> Tensor:
    """Divide by the sum over a trailing block of axes (inputs must be nonnegative)."""
    n = _trailing_axes(axes, x.ndim)
    red = tuple(range(x.ndim - n, x.ndim))
    s = x.data.sum(axis=red, keepdims=True)
    y = x.data / s

    def back(g):
        return ((g - (g * y).sum(axis=red, keepdims=True)) / s,)

    return apply(y, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an elementwise affine map."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply(xhat * gd + bias.data, (x, gain, bias), back)


# --------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return apply(ad @ bd, (a, b), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return apply(y, (x,), lambda g: (g.reshape(old),))


def transpose_last2(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise DimensionError(f"transpose_last2 needs >= 2 axes, got {x.shape}")
    return apply(np.swapaxes(x.data, -1, -2).copy(), (x,),
                 lambda g: (np.swapaxes(g, -1, -2).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return apply(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` by an integer index array."""
    idx = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim))))
        return (out,)

    return apply(np.take(x.data, idx, axis=axis), (x,), back)


def gather_rows(table: Tensor, index) -> Tensor:
    """Embedding lookup: ``table[index]`` for a 2-d table."""
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-d table, got {table.shape}")
    return take(table, index, axis=0)


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Repeat ``x`` along a new leading axis of extent ``n``."""
    y = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return apply(y, (x,), lambda g: (g.sum(axis=0),))
