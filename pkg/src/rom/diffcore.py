"""Reverse-mode automatic differentiation over dense 2D float arrays.

Graphs evaluate eagerly: every primitive application computes its output
immediately and records a node for the backward sweep. A graph is
single-use per forward/backward pass and confined to one thread; the
parameter arrays fed into it are never mutated.
"""

from __future__ import annotations

import numpy as np

PRIMITIVES = (
    "matmul",
    "add",
    "elementwise-mul",
    "scalar-mul",
    "relu",
    "row-softmax",
    "concat-cols",
    "slice-cols",
    "exp",
    "log",
    "sum-all",
    "sum-rows",
    "transpose",
)


class ShapeError(ValueError):
    """Raised when input shapes do not conform to a primitive."""


class DomainError(ValueError):
    """Raised when an input lies outside a primitive's domain (log of x <= 0)."""


class _Node:
    __slots__ = ("kind", "inputs", "value", "attrs", "grad")

    def __init__(self, kind, inputs, value, attrs=None):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.attrs = attrs or {}
        self.grad = None


def _as2d(arr, dtype):
    a = np.asarray(arr, dtype=dtype)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2D array, got shape {a.shape}")
    return a


def _broadcastable(sa, sb):
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` along axes that were broadcast."""
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class Graph:
    """A tape of primitive applications with cached outputs.

    Topological order is the insertion order; `backward` visits nodes in
    reverse insertion order exactly once.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []

    # -- node creation -----------------------------------------------------

    def constant(self, value) -> int:
        self.nodes.append(_Node("const", (), _as2d(value, self.dtype)))
        return len(self.nodes) - 1

    def param(self, value) -> int:
        self.nodes.append(_Node("param", (), _as2d(value, self.dtype)))
        return len(self.nodes) - 1

    def apply_primitive(self, kind: str, *inputs: int, **attrs) -> int:
        if kind not in PRIMITIVES:
            raise ValueError(f"unknown primitive {kind!r}")
        vals = [self.nodes[i].value for i in inputs]
        value = self._forward(kind, vals, attrs)
        self.nodes.append(_Node(kind, tuple(inputs), value, attrs))
        return len(self.nodes) - 1

    # -- accessors ---------------------------------------------------------

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def grad(self, nid: int) -> np.ndarray:
        n = self.nodes[nid]
        if n.grad is None:
            return np.zeros_like(n.value)
        return n.grad

    def reset_grads(self) -> None:
        for n in self.nodes:
            n.grad = None

    # -- forward rules -----------------------------------------------------

    def _forward(self, kind, vals, attrs):
        if kind == "matmul":
            a, b = vals
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"matmul: {a.shape} x {b.shape}")
            return a @ b
        if kind in ("add", "elementwise-mul"):
            a, b = vals
            if not _broadcastable(a.shape, b.shape):
                raise ShapeError(f"{kind}: {a.shape} vs {b.shape}")
            return a + b if kind == "add" else a * b
        if kind == "scalar-mul":
            (a,) = vals
            return a * self.dtype.type(attrs["c"])
        if kind == "relu":
            return np.maximum(vals[0], 0.0)
        if kind == "row-softmax":
            x = vals[0]
            z = x - x.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        if kind == "concat-cols":
            a, b = vals
            if a.shape[0] != b.shape[0]:
                raise ShapeError(f"concat-cols: {a.shape} vs {b.shape}")
            return np.concatenate([a, b], axis=1)
        if kind == "slice-cols":
            lo, hi = attrs["lo"], attrs["hi"]
            a = vals[0]
            if not (0 <= lo < hi <= a.shape[1]):
                raise ShapeError(f"slice-cols [{lo}:{hi}] of {a.shape}")
            return a[:, lo:hi].copy()
        if kind == "exp":
            return np.exp(vals[0])
        if kind == "log":
            x = vals[0]
            if np.any(x <= 0.0):
                raise DomainError("log: non-positive entry")
            return np.log(x)
        if kind == "sum-all":
            return np.array([[vals[0].sum()]], dtype=self.dtype)
        if kind == "sum-rows":
            return vals[0].sum(axis=1, keepdims=True)
        if kind == "transpose":
            return vals[0].T.copy()
        raise AssertionError(kind)

    # -- backward ----------------------------------------------------------

    def backward(self, loss: int) -> None:
        """Populate gradients of every node reachable from `loss`.

        Unreachable nodes keep a zero gradient (reported as zeros by
        `grad`). Requires a scalar (1x1) loss node.
        """
        out = self.nodes[loss]
        if out.value.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {out.value.shape}")
        out.grad = np.ones((1, 1), dtype=self.dtype)
        for nid in range(loss, -1, -1):
            node = self.nodes[nid]
            if node.grad is None or not node.inputs:
                continue
            for iid, g in zip(node.inputs, self._backward(node)):
                tgt = self.nodes[iid]
                if tgt.grad is None:
                    tgt.grad = g.copy()
                else:
                    tgt.grad += g

    def _backward(self, node):
        g = node.grad
        kind = node.kind
        vals = [self.nodes[i].value for i in node.inputs]
        if kind == "matmul":
            a, b = vals
            return g @ b.T, a.T @ g
        if kind == "add":
            a, b = vals
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        if kind == "elementwise-mul":
            a, b = vals
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)
        if kind == "scalar-mul":
            return (g * self.dtype.type(node.attrs["c"]),)
        if kind == "relu":
            return (g * (vals[0] > 0.0),)
        if kind == "row-softmax":
            y = node.value
            return (y * (g - (g * y).sum(axis=1, keepdims=True)),)
        if kind == "concat-cols":
            a, b = vals
            return g[:, : a.shape[1]], g[:, a.shape[1] :]
        if kind == "slice-cols":
            full = np.zeros_like(vals[0])
            full[:, node.attrs["lo"] : node.attrs["hi"]] = g
            return (full,)
        if kind == "exp":
            return (g * node.value,)
        if kind == "log":
            return (g / vals[0],)
        if kind == "sum-all":
            return (np.full_like(vals[0], g[0, 0]),)
        if kind == "sum-rows":
            return (np.broadcast_to(g, vals[0].shape).copy(),)
        if kind == "transpose":
            return (g.T.copy(),)
        raise AssertionError(kind)

    # -- convenience wrappers ---------------------------------------------

    def matmul(self, a, b):
        return self.apply_primitive("matmul", a, b)

    def add(self, a, b):
        return self.apply_primitive("add", a, b)

    def mul(self, a, b):
        return self.apply_primitive("elementwise-mul", a, b)

    def smul(self, a, c):
        return self.apply_primitive("scalar-mul", a, c=c)

    def sub(self, a, b):
        return self.add(a, self.smul(b, -1.0))

    def relu(self, a):
        return self.apply_primitive("relu", a)

    def row_softmax(self, a):
        return self.apply_primitive("row-softmax", a)

    def concat_cols(self, a, b):
        return self.apply_primitive("concat-cols", a, b)

    def slice_cols(self, a, lo, hi):
        return self.apply_primitive("slice-cols", a, lo=lo, hi=hi)

    def exp(self, a):
        return self.apply_primitive("exp", a)

    def log(self, a):
        return self.apply_primitive("log", a)

    def sum_all(self, a):
        return self.apply_primitive("sum-all", a)

    def sum_rows(self, a):
        return self.apply_primitive("sum-rows", a)

    def transpose(self, a):
        return self.apply_primitive("transpose", a)


# -- composite building blocks --------------------------------------------


def affine(g: Graph, x: int, w: int, b: int) -> int:
    return g.add(g.matmul(x, w), b)


def mlp(g: Graph, x: int, layers, final_relu: bool = False) -> int:
    """Apply a stack of (W, b) node-id pairs with ReLU between layers.

    The final layer is linear unless `final_relu` is set.
    """
    h = x
    for li, (w, b) in enumerate(layers):
        h = affine(g, h, w, b)
        if final_relu or li < len(layers) - 1:
            h = g.relu(h)
    return h


def logsumexp_rows(g: Graph, x: int) -> int:
    """Row-wise log-sum-exp, numerically shifted by the (detached) row max.

    The detached shift cancels exactly in the gradient, so differentiation
    stays exact.
    """
    shift = g.constant(g.value(x).max(axis=1, keepdims=True))
    e = g.exp(g.sub(x, shift))
    return g.add(g.log(g.sum_rows(e)), shift)


def log_softmax_rows(g: Graph, x: int) -> int:
    return g.sub(x, logsumexp_rows(g, x))


# -- finite-difference verification ----------------------------------------


def gradient_check(build, point, step: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    `build(graph, x_node)` must return a scalar loss node. Returns the
    maximum over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)

    g = Graph()
    x = g.param(point)
    loss = build(g, x)
    if g.value(loss).shape != (1, 1):
        raise ShapeError(f"build must produce a scalar, got {g.value(loss).shape}")
    g.backward(loss)
    analytic = g.grad(x)

    def scalar_at(p):
        gg = Graph()
        return gg.value(build(gg, gg.param(p)))[0, 0]

    numeric = np.zeros_like(analytic)
    it = np.nditer(point, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = point.copy()
        hi[idx] += step
        lo = point.copy()
        lo[idx] -= step
        numeric[idx] = (scalar_at(hi) - scalar_at(lo)) / (2.0 * step)
        it.iternext()

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
