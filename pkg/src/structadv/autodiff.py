"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every backward rule is written in terms of differentiable :class:`Tensor`
operations, so gradients can themselves be differentiated.  That is what
lets :func:`jvp` be built from two reverse passes and lets a penalty built
from a vector-Jacobian product be trained with ordinary backprop.

Graph recording is controlled by :func:`no_grad` / :func:`enable_grad`.
The state lives in context variables, so threads do not interfere.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "as_tensor",
    "no_grad",
    "enable_grad",
    "debug_mode",
    "is_grad_enabled",
    "grad",
    "vjp",
    "jvp",
    "matmul",
    "concat",
    "elu",
    "group_norm",
    "l2_normalize",
    "maximum",
    "where",
]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_debug: contextvars.ContextVar[bool] = contextvars.ContextVar("debug", default=False)
_node_counter = itertools.count()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, index: int):
        super().__init__(f"non-finite value produced by op {op!r} (node {index})")
        self.op = op
        self.index = index


@contextlib.contextmanager
def _set(var, value):
    token = var.set(value)
    try:
        yield
    finally:
        var.reset(token)


def no_grad():
    """Context manager disabling graph recording."""
    return _set(_grad_enabled, False)


def enable_grad():
    return _set(_grad_enabled, True)


def debug_mode(enabled: bool = True):
    """Check every op output for NaN/Inf while active (slow)."""
    return _set(_debug, enabled)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """Immutable float64 array with an optional link into the tape."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_tangent", "_op", "_index")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._tangent = None
        self._op = "leaf"
        self._index = next(_node_counter)

    # -- construction helpers -------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: tuple, backward, tangent=None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out._op = op
        out._index = next(_node_counter)
        if _debug.get() and not np.all(np.isfinite(data)):
            raise NonFiniteError(op, out._index)
        if _grad_enabled.get() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out._tangent = tangent
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
            out._tangent = None
        return out

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._tangent = None
        out._op = "detach"
        out._index = next(_node_counter)
        return out

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -------------------------------------------------------
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def var(self, axis=None, keepdims: bool = False) -> "Tensor":
        return var(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    def abs(self):
        return tabs(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _const(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(x, dtype=np.float64)
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._tangent = None
    out._op = "const"
    out._index = -1
    return out


# ---------------------------------------------------------------------------
# broadcasting

def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)

    def backward(g, needs):
        return (broadcast_to(g, x.shape),)

    def tangent(ts):
        return _np_sum_to(ts[0], shape)

    return Tensor._from_op(data, "sum_to", (x,), backward, tangent)


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)

    def backward(g, needs):
        return (sum_to(g, x.shape),)

    def tangent(ts):
        return np.broadcast_to(ts[0], shape)

    return Tensor._from_op(data, "broadcast_to", (x,), backward, tangent)


def _np_sum_to(t: np.ndarray, shape) -> np.ndarray:
    if t.shape == tuple(shape):
        return t
    lead = t.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and t.shape[i + lead] != 1)
    return t.sum(axis=axes, keepdims=True).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data + b.data

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    def tangent(ts):
        ta, tb = ts
        if ta is None:
            return np.broadcast_to(tb, data.shape)
        if tb is None:
            return np.broadcast_to(ta, data.shape)
        return ta + tb

    return Tensor._from_op(data, "add", (a, b), backward, tangent)


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data - b.data

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(neg(g), b.shape) if needs[1] else None)

    def tangent(ts):
        ta, tb = ts
        if ta is None:
            return np.broadcast_to(-tb, data.shape)
        if tb is None:
            return np.broadcast_to(ta, data.shape)
        return ta - tb

    return Tensor._from_op(data, "sub", (a, b), backward, tangent)


def neg(a) -> Tensor:
    a = _const(a)

    def backward(g, needs):
        return (neg(g),)

    return Tensor._from_op(-a.data, "neg", (a,), backward, lambda ts: -ts[0])


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data * b.data

    def backward(g, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    def tangent(ts):
        ta, tb = ts
        out = 0.0
        if ta is not None:
            out = ta * b.data
        if tb is not None:
            out = out + a.data * tb
        return np.broadcast_to(out, data.shape)

    return Tensor._from_op(data, "mul", (a, b), backward, tangent)


def div(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data / b.data

    def backward(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if needs[1] else None
        return ga, gb

    def tangent(ts):
        ta, tb = ts
        out = 0.0
        if ta is not None:
            out = ta / b.data
        if tb is not None:
            out = out - data * tb / b.data
        return np.broadcast_to(out, data.shape)

    return Tensor._from_op(data, "div", (a, b), backward, tangent)


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(a, float(c))


def square(a) -> Tensor:
    a = _const(a)

    def backward(g, needs):
        return (mul(g, mul(a, 2.0)),)

    return Tensor._from_op(a.data * a.data, "square", (a,), backward, lambda ts: 2.0 * a.data * ts[0])


def exp(a) -> Tensor:
    a = _const(a)
    out = Tensor._from_op(np.exp(a.data), "exp", (a,), None, lambda ts: out.data * ts[0])

    def backward(g, needs):
        return (mul(g, out),)

    if out.requires_grad:
        out._backward = backward
    return out


def log(a) -> Tensor:
    a = _const(a)

    def backward(g, needs):
        return (div(g, a),)

    return Tensor._from_op(np.log(a.data), "log", (a,), backward, lambda ts: ts[0] / a.data)


def sqrt(a) -> Tensor:
    a = _const(a)
    out = Tensor._from_op(np.sqrt(a.data), "sqrt", (a,), None, lambda ts: ts[0] / (2.0 * out.data))

    def backward(g, needs):
        return (div(g, mul(out, 2.0)),)

    if out.requires_grad:
        out._backward = backward
    return out


def tabs(a) -> Tensor:
    a = _const(a)
    sign = np.sign(a.data)

    def backward(g, needs):
        return (mul(g, sign),)

    return Tensor._from_op(np.abs(a.data), "abs", (a,), backward, lambda ts: sign * ts[0])


def maximum(a, c: float) -> Tensor:
    """Elementwise ``max(a, c)`` against a constant; subgradient 0 at ties."""
    a = _const(a)
    mask = (a.data > c).astype(np.float64)

    def backward(g, needs):
        return (mul(g, mask),)

    return Tensor._from_op(np.maximum(a.data, c), "maximum", (a,), backward, lambda ts: mask * ts[0])


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    m = np.asarray(mask, dtype=np.float64)
    return add(mul(a, m), mul(b, 1.0 - m))


def elu(a) -> Tensor:
    a = _const(a)
    pos = a.data > 0
    value = np.where(pos, a.data, np.expm1(np.minimum(a.data, 0.0)))
    out = Tensor._from_op(value, "elu", (a,), None, lambda ts: np.where(pos, 1.0, value + 1.0) * ts[0])
    pos_f = pos.astype(np.float64)
    neg_f = 1.0 - pos_f

    def backward(g, needs):
        # slope is 1 on the positive side and elu(a) + 1 = exp(a) on the other
        slope = add(mul(add(out, 1.0), neg_f), pos_f)
        return (mul(g, slope),)

    if out.requires_grad:
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g, needs):
        return (matmul(g, transpose(b)) if needs[0] else None,
                matmul(transpose(a), g) if needs[1] else None)

    def tangent(ts):
        ta, tb = ts
        if ta is None:
            return a.data @ tb
        if tb is None:
            return ta @ b.data
        return ta @ b.data + a.data @ tb

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), backward, tangent)


def transpose(a) -> Tensor:
    a = _const(a)

    def backward(g, needs):
        return (transpose(g),)

    return Tensor._from_op(a.data.T, "transpose", (a,), backward, lambda ts: ts[0].T)


def reshape(a, shape) -> Tensor:
    a = _const(a)
    data = a.data.reshape(shape)

    def backward(g, needs):
        return (reshape(g, a.shape),)

    return Tensor._from_op(data, "reshape", (a,), backward, lambda ts: ts[0].reshape(data.shape))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _const(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def backward(g, needs):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return Tensor._from_op(data, "sum", (a,), backward, lambda ts: ts[0].sum(axis=axes, keepdims=keepdims))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _const(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def var(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population (1/N) variance."""
    a = _const(a)
    centered = sub(a, mean(a, axis, keepdims=True))
    return mean(square(centered), axis, keepdims)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_const(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    axis = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.ndim) if i != axis
        ):
            raise ShapeError(f"concat shape mismatch: {[q.shape for q in parts]}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g, needs):
        out = []
        for k, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(bounds[k]), int(bounds[k + 1]))
            out.append(getitem(g, tuple(index)))
        return tuple(out)

    def tangent(ts):
        return np.concatenate([np.zeros(p.shape) if t is None else t for p, t in zip(parts, ts)], axis=axis)

    return Tensor._from_op(data, "concat", tuple(parts), backward, tangent)


def getitem(a, index) -> Tensor:
    a = _const(a)
    data = a.data[index]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data)

    def backward(g, needs):
        return (_scatter(g, a.shape, index),)

    return Tensor._from_op(data, "getitem", (a,), backward, lambda ts: ts[0][index])


def _scatter(g: Tensor, shape, index) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, index, g.data)

    def backward(gg, needs):
        return (getitem(gg, index),)

    def tangent(ts):
        out = np.zeros(shape)
        np.add.at(out, index, ts[0])
        return out

    return Tensor._from_op(data, "scatter", (g,), backward, tangent)


# ---------------------------------------------------------------------------
# composites used by the networks and losses

def l2_normalize(x, axis: int = 1) -> Tensor:
    """Divide each row by its euclidean norm (no epsilon; callers guard zero rows)."""
    x = _const(x)
    norm = sqrt(tsum(square(x), axis=axis, keepdims=True))
    return div(x, norm)


def group_norm(x, group_size: int, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over contiguous groups of ``group_size`` features.

    Mean and variance are differentiated as functions of the input.
    """
    x = _const(x)
    n, width = x.shape
    if width % group_size:
        raise ShapeError(f"width {width} not divisible by group size {group_size}")
    grouped = reshape(x, (n, width // group_size, group_size))
    centered = sub(grouped, mean(grouped, axis=2, keepdims=True))
    variance = mean(square(centered), axis=2, keepdims=True)
    normed = reshape(div(centered, sqrt(add(variance, eps))), (n, width))
    if weight is not None:
        normed = mul(normed, weight)
    if bias is not None:
        normed = add(normed, bias)
    return normed


# ---------------------------------------------------------------------------
# differentiation

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def grad(
    output: Tensor,
    inputs: Iterable[Tensor],
    grad_output=None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    ``grad_output`` is the cotangent seeding the reverse pass; it defaults to
    1 and is then only legal for a single-element output.  Inputs the output
    does not depend on get a zero tensor rather than an error.  With
    ``create_graph`` the returned tensors are themselves on the tape.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ShapeError(f"grad of non-scalar output with shape {output.shape} needs grad_output")
        seed = Tensor(np.ones(output.shape))
    else:
        seed = as_tensor(grad_output)
        if seed.shape != output.shape:
            raise ShapeError(f"cotangent shape {seed.shape} does not match output {output.shape}")

    targets = {id(t) for t in inputs}
    order = _toposort(output)
    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in targets or any(needed[id(p)] for p in node._parents)

    grads: dict[int, Tensor] = {id(output): seed}
    mode = enable_grad() if create_graph else no_grad()
    with mode:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None or not needed[id(node)]:
                continue
            needs = tuple(needed[id(p)] for p in node._parents)
            for parent, pg in zip(node._parents, node._backward(g, needs)):
                if pg is None or not needed[id(parent)]:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)

    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape))
        elif not create_graph:
            g = g.detach()
        result.append(g)
    return result


def _as_leaf(x) -> Tensor:
    x = as_tensor(x)
    leaf = Tensor.__new__(Tensor)
    leaf.data = x.data
    leaf.requires_grad = True
    leaf._parents = ()
    leaf._backward = None
    leaf._tangent = None
    leaf._op = "leaf"
    leaf._index = next(_node_counter)
    return leaf


def vjp(func: Callable[[Tensor], Tensor], x, u, create_graph: bool = False) -> Tensor:
    """Row-wise ``uᵀ J_func(x)``; shape of ``x``."""
    leaf = _as_leaf(x)
    with enable_grad():
        y = func(leaf)
    u = as_tensor(u)
    if u.shape != y.shape:
        raise ShapeError(f"cotangent shape {u.shape} does not match output {y.shape}")
    return grad(y, [leaf], u, create_graph=create_graph)[0]


def jvp(func: Callable[[Tensor], Tensor], x, v, create_graph: bool = False, method: str = "double_vjp") -> Tensor:
    """Row-wise ``J_func(x) v``; shape of ``func(x)``.

    ``method="double_vjp"`` uses two reverse passes: ``w ↦ wᵀJ`` is linear in
    a dummy cotangent ``w``, so differentiating ``⟨wᵀJ, v⟩`` with respect to
    ``w`` gives ``Jv``.  ``method="forward"`` pushes the tangent through the
    recorded tape with the forward-mode rules (cheaper, not differentiable).
    """
    leaf = _as_leaf(x)
    v = as_tensor(v)
    if v.shape != leaf.shape:
        raise ShapeError(f"tangent shape {v.shape} does not match input {leaf.shape}")
    with enable_grad():
        y = func(leaf)
    if method == "forward":
        if create_graph:
            raise ValueError("forward-mode products are not differentiable")
        return jvp_forward(y, leaf, v)
    if method != "double_vjp":
        raise ValueError(f"unknown jvp method {method!r}")
    return jvp_from(y, leaf, v, create_graph=create_graph)


def jvp_from(y: Tensor, x: Tensor, v, create_graph: bool = False) -> Tensor:
    """``J v`` for an already-recorded ``y = f(x)``, by the double-VJP trick."""
    dummy = _as_leaf(np.zeros(y.shape))
    (wj,) = grad(y, [x], dummy, create_graph=True)
    return grad(wj, [dummy], as_tensor(v), create_graph=create_graph)[0]


def jvp_forward(y: Tensor, x: Tensor, v) -> Tensor:
    """``J v`` for an already-recorded ``y = f(x)`` by forward-mode propagation."""
    v = as_tensor(v)
    if v.shape != x.shape:
        raise ShapeError(f"tangent shape {v.shape} does not match input {x.shape}")
    tangents: dict[int, np.ndarray] = {id(x): v.data}
    for node in _toposort(y):
        if node is x or node._tangent is None:
            continue
        ts = tuple(tangents.get(id(p)) for p in node._parents)
        if all(t is None for t in ts):
            continue
        tangents[id(node)] = node._tangent(ts)
    out = tangents.get(id(y))
    return Tensor(np.zeros(y.shape) if out is None else out)
