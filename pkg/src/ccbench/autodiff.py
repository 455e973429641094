"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every backward rule is written with differentiable ``Tensor`` operations, so
``grad(..., create_graph=True)`` returns tensors that can be differentiated
again. This is what the Fisher-vector product relies on.

All values are float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_RECORD = True


@contextlib.contextmanager
def no_grad():
    global _RECORD
    prev, _RECORD = _RECORD, False
    try:
        yield
    finally:
        _RECORD = prev


@contextlib.contextmanager
def _recording(flag: bool):
    global _RECORD
    prev, _RECORD = _RECORD, flag
    try:
        yield
    finally:
        _RECORD = prev


class Tensor:
    __slots__ = ("value", "parents", "backward", "requires_grad")
    __array_priority__ = 100

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor({self.value!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def variable(value) -> Tensor:
    """Leaf tensor that gradients are taken with respect to."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward) -> Tensor:
    if _RECORD and any(p.requires_grad for p in parents):
        return Tensor(value, parents, backward, True)
    return Tensor(value)


# ---------------------------------------------------------------- shape ops


def sum_to(x, shape) -> Tensor:
    """Sum ``x`` down to ``shape`` (reverse of numpy broadcasting)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    v = x.value
    lead = v.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and v.shape[i + lead] != 1
    )
    out = v.sum(axis=axes, keepdims=True).reshape(shape) if axes else v.reshape(shape)
    src = x.shape
    return _node(out, (x,), lambda g: (broadcast_to(g, src),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return _node(np.broadcast_to(x.value, shape), (x,), lambda g: (sum_to(g, src),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (reshape(g, src),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.value.T, (x,), lambda g: (transpose(g),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _node(x.value[idx], (x,), lambda g: (scatter(g, src, idx),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)


def scatter(g, shape, idx) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``idx`` (adjoint of indexing)."""
    g = as_tensor(g)
    out = np.zeros(shape)
    if _is_basic(idx):
        out[idx] = g.value  # basic indexing never repeats an element
    else:
        np.add.at(out, idx, g.value)
    return _node(out, (g,), lambda h: (getitem(h, idx),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    value = np.concatenate([x.value for x in xs], axis=axis)
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * value.ndim
            idx[ax] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _node(value, tuple(xs), backward)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    value = np.stack([x.value for x in xs], axis=axis)
    ax = axis % value.ndim

    def backward(g):
        out = []
        for i in range(len(xs)):
            idx = [slice(None)] * value.ndim
            idx[ax] = i
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _node(value, tuple(xs), backward)


# ----------------------------------------------------------- arithmetic ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (
        sum_to(g, sa) if a.requires_grad else None,
        sum_to(g, sb) if b.requires_grad else None,
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (
        sum_to(g, sa) if a.requires_grad else None,
        sum_to(-g, sb) if b.requires_grad else None,
    ))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value * b.value, (a, b), lambda g: (
        sum_to(g * b, sa) if a.requires_grad else None,
        sum_to(g * a, sb) if b.requires_grad else None,
    ))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = g / b
        return (sum_to(ga, sa) if a.requires_grad else None,
                sum_to(-ga * a / b, sb) if b.requires_grad else None)

    return _node(a.value / b.value, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if p == 2:
        return mul(a, a)
    return _node(a.value**p, (a,), lambda g: (g * (p * power(a, p - 1)),))


def matmul(a, b) -> Tensor:
    """Matrix product of 2-d operands (or 1-d @ 2-d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, -1)), b), (b.shape[1],))

    def backward(g):
        return (matmul(g, transpose(b)) if a.requires_grad else None,
                matmul(transpose(a), g) if b.requires_grad else None)

    return _node(a.value @ b.value, (a, b), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            kshape = list(src)
            for ax in axes:
                kshape[ax % len(src)] = 1
            g = reshape(g, tuple(kshape))
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(src))
        return (broadcast_to(g, src),)

    return _node(value, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) / float(n)


# ----------------------------------------------------------- elementwise ops


def exp(a) -> Tensor:
    a = as_tensor(a)
    box = []
    out = _node(np.exp(a.value), (a,), lambda g: (g * box[0],))
    box.append(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    box = []
    out = _node(np.tanh(a.value), (a,), lambda g: (g * (1.0 - box[0] * box[0]),))
    box.append(out)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    box = []
    value = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    out = _node(value, (a,), lambda g: (g * box[0] * (1.0 - box[0]),))
    box.append(out)
    return out


def relu(a) -> Tensor:
    # derivative at exactly 0 is taken as 0
    a = as_tensor(a)
    mask = (a.value > 0).astype(np.float64)
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- gradients


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Iterable[Tensor] | Tensor,
    grad_output=None,
    create_graph: bool = False,
) -> list[Tensor] | Tensor:
    """Gradient of ``output`` with respect to each of ``inputs``.

    ``grad_output`` defaults to ones (so a scalar output gives the plain
    gradient). Inputs the output does not depend on get zero gradients.
    With ``create_graph`` the returned tensors are themselves differentiable.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    with _recording(create_graph):
        seed = Tensor(np.ones_like(output.value)) if grad_output is None else as_tensor(grad_output)
        grads: dict[int, Tensor] = {}
        if output.requires_grad:
            grads[id(output)] = seed
            for node in reversed(_toposort(output)):
                g = grads.get(id(node))
                if g is None or node.backward is None:
                    continue
                for parent, pg in zip(node.parents, node.backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
        result = [grads.get(id(x), Tensor(np.zeros(x.shape))) for x in inputs]
    return result[0] if single else result


def value_and_grad(fn: Callable[[Tensor], Tensor]) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Wrap a scalar function of one flat vector for numpy-level optimizers."""

    def wrapped(x):
        v = variable(x)
        out = fn(v)
        g = grad(out, v)
        return float(out.value), np.array(g.value)

    return wrapped
