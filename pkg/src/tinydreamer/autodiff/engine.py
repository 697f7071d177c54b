"""Reverse-mode automatic differentiation over numpy arrays.

Eager tape: every op computes its forward value immediately and records a
backward closure. Graphs are built per training step and discarded; the
persistent parameter arrays live in :class:`tinydreamer.autodiff.store.ParameterStore`.

Training runs in float32, gradient verification in float64; the dtype of a
node simply follows its inputs.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .. import backend

_SEQ = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(ValueError):
    """An op precondition was violated."""


class Tensor:
    """A node of the computation graph: value, op tag, parents, gradient slot."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward", "_seq")

    def __init__(self, data, parents=(), backward=None, op="const"):
        self.data = np.asarray(data)
        self.grad = None
        self.op = op
        # Nodes without a backward fn (constants, stop-gradients) never
        # propagate into parents, so we drop the references entirely.
        self._parents = tuple(parents) if backward is not None else ()
        self._backward = backward
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def requires_grad(self):
        return self._backward is not None or self.op == "leaf"

    def backward(self):
        """Backpropagate from this scalar; returns the set of reached node ids."""
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return {id(node) for node in topo}

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def _toposort(root: Tensor) -> list[Tensor]:
    # Parents are always created before children, so the creation sequence
    # number is a valid topological key over the reachable subgraph.
    reached: list[Tensor] = []
    visited: set[int] = set()
    stack: list[Tensor] = [root]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        reached.append(node)
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append(parent)
    reached.sort(key=lambda n: n._seq)
    return reached


def _acc(node: Tensor, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _wrap2(a, b) -> tuple[Tensor, Tensor]:
    """Wrap both operands; a bare scalar adopts the other operand's dtype."""
    if isinstance(a, Tensor):
        return a, _wrap(b, a.dtype)
    if isinstance(b, Tensor):
        return _wrap(a, b.dtype), b
    return _wrap(a), _wrap(b)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _node(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward, op)
    return Tensor(data, op=op)


def evaluate(root: Tensor) -> np.ndarray:
    """Forward value of a graph root (the engine is eager, so just the value)."""
    return root.data


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; exactly zero backward contribution to ancestors."""
    if not x.requires_grad:
        return x
    return Tensor(x.data, op="sg")


def constant(x, dtype=None) -> Tensor:
    return _wrap(x, dtype)


# -- arithmetic -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    out = a.data + b.data

    def bwd(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(g, b.data.shape))

    return _node(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    out = a.data - b.data

    def bwd(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(-g, b.data.shape))

    return _node(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    out = a.data * b.data

    def bwd(g):
        _acc(a, _sum_to(g * b.data, a.data.shape))
        _acc(b, _sum_to(g * a.data, b.data.shape))

    return _node(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    out = a.data / b.data

    def bwd(g):
        _acc(a, _sum_to(g / b.data, a.data.shape))
        _acc(b, _sum_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), bwd, "div")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _node(out, (a, b), bwd, "matmul")


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b; one graph node instead of a matmul/add pair."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine shapes incompatible: {x.data.shape} @ {w.data.shape}")
    out = x.data @ w.data + b.data

    def bwd(g):
        _acc(x, g @ w.data.T)
        _acc(w, x.data.T @ g)
        _acc(b, _sum_to(g, b.data.shape))

    return _node(out, (x, w, b), bwd, "affine")


def rms_norm(x, scale, eps: float = 1e-6) -> Tensor:
    """Fused root-mean-square normalization over the last axis with a gain."""
    x, scale = _wrap(x), _wrap(scale)
    n = x.data.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(np.square(x.data), axis=-1, keepdims=True) + eps)
    u = x.data * inv
    out = u * scale.data

    def bwd(g):
        gy = g * scale.data
        dot = np.sum(gy * x.data, axis=-1, keepdims=True)
        _acc(x, gy * inv - (dot / n) * (inv ** 3) * x.data)
        _acc(scale, _sum_to(g * u, scale.data.shape))

    return _node(out, (x, scale), bwd, "rms_norm")


def dense_act(x, w, b, scale, eps: float = 1e-6) -> Tensor:
    """Fused MLP layer: linear, RMS norm with a gain, then x*sigmoid(x)."""
    x, w, b, scale = _wrap(x), _wrap(w), _wrap(b), _wrap(scale)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"dense_act shapes incompatible: {x.data.shape} @ {w.data.shape}")
    a = x.data @ w.data + b.data
    n = a.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(np.square(a), axis=-1, keepdims=True) + eps)
    u = a * inv
    pre = u * scale.data
    out = backend.silu_fwd(pre)

    def bwd(g):
        gp = backend.silu_bwd(pre, g)
        gy = gp * scale.data
        dot = np.sum(gy * a, axis=-1, keepdims=True)
        ga = gy * inv - (dot / n) * (inv ** 3) * a
        _acc(x, ga @ w.data.T)
        _acc(w, x.data.T @ ga)
        _acc(b, _sum_to(ga, b.data.shape))
        _acc(scale, _sum_to(gp * u, scale.data.shape))

    return _node(out, (x, w, b, scale), bwd, "dense_act")


def gru_cell(h, x, wg, bg, wc, bc) -> Tensor:
    """Fused gated recurrent update: h' = (1-u)*h + u*candidate.

    Gate layout along the last axis of the gate projection is [reset, update];
    the candidate sees [x, reset*h].
    """
    h, x, wg, bg, wc, bc = (_wrap(t) for t in (h, x, wg, bg, wc, bc))
    H = h.data.shape[-1]
    xh = np.concatenate([x.data, h.data], axis=-1)
    gates = backend.sigmoid(xh @ wg.data + bg.data)
    r = gates[..., :H]
    u = gates[..., H:]
    xrh = np.concatenate([x.data, r * h.data], axis=-1)
    c = np.tanh(xrh @ wc.data + bc.data)
    out = (1.0 - u) * h.data + u * c

    def bwd(g):
        dc = g * u * (1.0 - c * c)
        _acc(wc, xrh.T @ dc)
        _acc(bc, _sum_to(dc, bc.data.shape))
        dxrh = dc @ wc.data.T
        X = x.data.shape[-1]
        dx = dxrh[..., :X].copy()
        drh = dxrh[..., X:]
        dh = g * (1.0 - u) + drh * r
        dpre = np.concatenate([drh * h.data, g * (c - h.data)], axis=-1)
        dgates = dpre * gates * (1.0 - gates)
        _acc(wg, xh.T @ dgates)
        _acc(bg, _sum_to(dgates, bg.data.shape))
        dxh = dgates @ wg.data.T
        dx += dxh[..., :X]
        _acc(x, dx)
        _acc(h, dh + dxh[..., X:])

    return _node(out, (h, x, wg, bg, wc, bc), bwd, "gru_cell")


def unimix_probs(logits, groups: int, classes: int, ratio: float) -> Tensor:
    """Fused per-group softmax mixed with a uniform floor, flat in and out."""
    x = _wrap(logits)
    shape = x.data.shape
    if shape[-1] != groups * classes:
        raise ShapeError(f"unimix_probs: last axis {shape[-1]} != {groups}*{classes}")
    grouped = x.data.reshape(shape[:-1] + (groups, classes))
    p = backend.softmax_lastaxis(grouped)
    out = ((1.0 - ratio) * p + ratio / classes).reshape(shape)

    def bwd(g):
        gg = g.reshape(p.shape) * (1.0 - ratio)
        _acc(x, backend.softmax_bwd(p, gg).reshape(shape))

    return _node(out, (x,), bwd, "unimix_probs")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")

    def bwd(g):
        _acc(x, g.T)

    return _node(x.data.T, (x,), bwd, "transpose")


def reshape(x: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape

    def bwd(g):
        _acc(x, g.reshape(old))

    return _node(x.data.reshape(shape), (x,), bwd, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.data.shape for t in tensors]}") from e
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _acc(t, piece)

    return _node(out, tuple(tensors), bwd, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _acc(x, full)

    return _node(x.data[index], (x,), bwd, "narrow")


# -- reductions -----------------------------------------------------------

def _restore_dims(g, axis, shape, keepdims):
    if keepdims or axis is None:
        return np.broadcast_to(g, shape) if axis is None and not keepdims else g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    g = np.expand_dims(g, axes)
    return g


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = _restore_dims(g, axis, x.data.shape, keepdims)
        _acc(x, np.broadcast_to(g, x.data.shape).copy())

    return _node(out, (x,), bwd, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)

    def bwd(g):
        g = _restore_dims(g, axis, x.data.shape, keepdims)
        _acc(x, np.broadcast_to(g, x.data.shape) / count)

    return _node(out, (x,), bwd, "mean")


def variance(x: Tensor, axis, ddof: int = 0, keepdims: bool = False) -> Tensor:
    """Per-axis variance with a selectable divisor (N for ddof=0, N-1 for ddof=1)."""
    n = x.data.shape[axis] if isinstance(axis, int) else int(
        np.prod([x.data.shape[a] for a in axis])
    )
    if n - ddof < 1:
        raise ContractError(f"variance over {n} samples with ddof={ddof} is undefined")
    centered = sub(x, reduce_mean(x, axis, keepdims=True))
    return mul(reduce_sum(square(centered), axis, keepdims), 1.0 / (n - ddof))


# -- elementwise ----------------------------------------------------------

def _unary(x, out, dfn, op):
    x = _wrap(x)

    def bwd(g):
        _acc(x, dfn(g))

    return _node(out, (x,), bwd, op)


def exp(x) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out, "exp")


def log(x) -> Tensor:
    x = _wrap(x)
    return _unary(x, np.log(x.data), lambda g: g / x.data, "log")


def sqrt(x) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)
    return _unary(x, out, lambda g: g / (2.0 * out), "sqrt")


def square(x) -> Tensor:
    x = _wrap(x)
    return _unary(x, np.square(x.data), lambda g: g * 2.0 * x.data, "square")


def absolute(x) -> Tensor:
    x = _wrap(x)
    return _unary(x, np.abs(x.data), lambda g: g * np.sign(x.data), "abs")


def sign(x) -> Tensor:
    x = _wrap(x)
    return _unary(x, np.sign(x.data), lambda g: np.zeros_like(x.data), "sign")


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda g: g * (1.0 - out * out), "tanh")


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out = backend.sigmoid(x.data)
    return _unary(x, out, lambda g: g * out * (1.0 - out), "sigmoid")


def silu(x) -> Tensor:
    x = _wrap(x)
    out = backend.silu_fwd(x.data)
    return _unary(x, out, lambda g: backend.silu_bwd(x.data, g), "silu")


def softplus(x) -> Tensor:
    x = _wrap(x)
    out = np.logaddexp(0.0, x.data).astype(x.dtype)
    return _unary(x, out, lambda g: g * backend.sigmoid(x.data), "softplus")


def clamp_below(x, floor: float) -> Tensor:
    """max(floor, x): gradient 1 where x >= floor (ties take the variable branch)."""
    x = _wrap(x)
    out = np.maximum(x.data, floor)
    mask = x.data >= floor
    return _unary(x, out, lambda g: g * mask, "clamp_below")


maximum_const = clamp_below


def softmax(x) -> Tensor:
    x = _wrap(x)
    out = backend.softmax_lastaxis(x.data)
    return _unary(x, out, lambda g: backend.softmax_bwd(out, g), "softmax")


def log_softmax(x) -> Tensor:
    x = _wrap(x)
    m = np.max(x.data, axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def dfn(g):
        return g - probs * np.sum(g, axis=-1, keepdims=True)

    return _unary(x, out, dfn, "log_softmax")
