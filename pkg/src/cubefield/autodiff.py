"""Reverse-mode differentiation on a flat tape of dense float64 tensors.

The tape records eagerly-evaluated operations in topological order; a single
backward sweep from a scalar root fills per-node adjoints and returns the
gradients of every parameter leaf.  Everything is plain ``numpy`` with 64-bit
floats, which keeps two runs of the same construction bitwise identical.

Supported shapes are scalars, vectors and matrices.  There is no general
broadcasting: elementwise ops require equal shapes, and the fused ``affine`` /
``linear`` ops cover the matrix-times-batch patterns the networks need.

Subgradient conventions at kinks: ``abs'(0) = 0``, ``relu'(0) = 0``, and the
clamp ops ``min_const`` / ``max_const`` take gradient 0 at the tie point.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatchError

Array = np.ndarray


def _as_f64(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Node:
    """One recorded operation (or leaf) on a :class:`Tape`."""

    __slots__ = ("tape", "nid", "kind", "parents", "value", "meta", "adjoint")

    def __init__(self, tape: "Tape", nid: int, kind: str, parents: tuple[int, ...],
                 value: Array, meta: dict | None):
        self.tape = tape
        self.nid = nid
        self.kind = kind
        self.parents = parents
        self.value = value
        self.meta = meta
        self.adjoint: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Node({self.nid}, {self.kind}, shape={self.shape})"

    # operator sugar; all dispatch through Tape.record
    def __add__(self, other: "Node") -> "Node":
        return self.tape.record("add", self, other)

    def __sub__(self, other: "Node") -> "Node":
        return self.tape.record("sub", self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.tape.record("mul", self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return self.tape.record("matmul", self, other)

    def abs(self) -> "Node":
        return self.tape.record("abs", self)

    def relu(self) -> "Node":
        return self.tape.record("relu", self)

    def sigmoid(self) -> "Node":
        return self.tape.record("sigmoid", self)

    def tanh(self) -> "Node":
        return self.tape.record("tanh", self)

    def sum(self) -> "Node":
        return self.tape.record("sum", self)

    def mean(self) -> "Node":
        return self.tape.record("mean", self)

    def scale(self, c: float) -> "Node":
        return self.tape.record("scale", self, c=float(c))

    def min_const(self, c: float) -> "Node":
        return self.tape.record("min_const", self, c=float(c))

    def max_const(self, c: float) -> "Node":
        return self.tape.record("max_const", self, c=float(c))

    def slice1d(self, start: int, stop: int) -> "Node":
        return self.tape.record("slice1d", self, start=int(start), stop=int(stop))

    def reshape(self, shape: tuple[int, ...]) -> "Node":
        return self.tape.record("reshape", self, target=tuple(shape))


def _check_matmul(a: Array, b: Array) -> None:
    ok = (
        (a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0])
        or (a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0])
        or (a.ndim == 1 and b.ndim == 1 and a.shape[0] == b.shape[0])
    )
    if not ok:
        raise ShapeMismatchError("matmul", a.shape, b.shape)


def _check_affine(x: Array, w: Array, b: Array | None, kind: str) -> None:
    if w.ndim != 2:
        raise ShapeMismatchError(kind, w.shape, x.shape)
    if x.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise ShapeMismatchError(kind, w.shape, x.shape)
    elif x.ndim == 2:
        if x.shape[1] != w.shape[1]:
            raise ShapeMismatchError(kind, w.shape, x.shape)
    else:
        raise ShapeMismatchError(kind, w.shape, x.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatchError(kind, w.shape, b.shape)


class Tape:
    """Ordered record of operations; parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, kind: str, parents: tuple[int, ...], value: Array,
                meta: dict | None = None) -> Node:
        node = Node(self, len(self.nodes), kind, parents, value, meta)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        """Trainable parameter; ``backward`` reports its gradient."""
        return self._append("leaf", (), _as_f64(value))

    def constant(self, value) -> Node:
        """Input data; participates in the forward pass, no gradient reported."""
        return self._append("const", (), _as_f64(value))

    def record(self, kind: str, *inputs: Node, **meta) -> Node:
        """Validate shapes, eagerly evaluate ``kind`` and append the node."""
        vals = [n.value for n in inputs]
        if kind in ("add", "sub", "mul"):
            a, b = vals
            if a.shape != b.shape:
                raise ShapeMismatchError(kind, a.shape, b.shape)
            out = {"add": np.add, "sub": np.subtract, "mul": np.multiply}[kind](a, b)
        elif kind == "matmul":
            a, b = vals
            _check_matmul(a, b)
            out = a @ b
        elif kind == "affine":
            x, w, b = vals
            _check_affine(x, w, b, kind)
            out = x @ w.T + b
        elif kind == "linear":
            x, w = vals
            _check_affine(x, w, None, kind)
            out = x @ w.T
        elif kind == "abs":
            out = np.abs(vals[0])
        elif kind == "relu":
            out = np.maximum(vals[0], 0.0)
        elif kind == "sigmoid":
            out = expit(vals[0])
        elif kind == "tanh":
            out = np.tanh(vals[0])
        elif kind == "sum":
            out = np.asarray(vals[0].sum())
        elif kind == "mean":
            out = np.asarray(vals[0].mean())
        elif kind == "scale":
            out = vals[0] * meta["c"]
        elif kind == "min_const":
            out = np.minimum(vals[0], meta["c"])
        elif kind == "max_const":
            out = np.maximum(vals[0], meta["c"])
        elif kind == "concat":
            for v in vals:
                if v.ndim != 1:
                    raise ShapeMismatchError(kind, vals[0].shape, v.shape)
            out = np.concatenate(vals)
        elif kind == "slice1d":
            (x,) = vals
            if x.ndim != 1:
                raise ShapeMismatchError(kind, x.shape, (meta["start"], meta["stop"]))
            out = x[meta["start"]:meta["stop"]]
        elif kind == "reshape":
            (x,) = vals
            target = meta["target"]
            if int(np.prod(target, dtype=np.int64)) != x.size:
                raise ShapeMismatchError(kind, x.shape, target)
            out = x.reshape(target)
        else:
            raise ValueError(f"unknown op kind: {kind}")
        return self._append(kind, tuple(n.nid for n in inputs), np.asarray(out), meta or None)

    def affine(self, x: Node, w: Node, b: Node) -> Node:
        """``x @ w.T + b`` for x of shape (d,) or (B, d), w (m, d), b (m,)."""
        return self.record("affine", x, w, b)

    def linear(self, x: Node, w: Node) -> Node:
        """``x @ w.T`` without bias; same shape rules as affine."""
        return self.record("linear", x, w)

    def concat(self, *parts: Node) -> Node:
        return self.record("concat", *parts)

    # ---- backward pass -------------------------------------------------

    def backward(self, root: Node) -> dict[int, Array]:
        """Fill adjoints from a scalar root; return {leaf node id: gradient}."""
        if root.value.shape != ():
            raise ShapeMismatchError("backward", root.value.shape, ())
        for n in self.nodes:
            n.adjoint = None
        root.adjoint = np.ones(())
        for node in reversed(self.nodes[: root.nid + 1]):
            g = node.adjoint
            if g is None or node.kind in ("leaf", "const"):
                continue
            for pid, pg in zip(node.parents, self._local_grads(node, g)):
                parent = self.nodes[pid]
                if pg is None:
                    continue
                if parent.adjoint is None:
                    parent.adjoint = pg
                else:
                    parent.adjoint = parent.adjoint + pg
        return {n.nid: n.adjoint for n in self.nodes
                if n.kind == "leaf" and n.adjoint is not None}

    def _local_grads(self, node: Node, g: Array):
        kind = node.kind
        vals = [self.nodes[p].value for p in node.parents]
        if kind == "add":
            return g, g
        if kind == "sub":
            return g, -g
        if kind == "mul":
            a, b = vals
            return g * b, g * a
        if kind == "matmul":
            a, b = vals
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            return g * b, g * a  # 1-D dot, g scalar
        if kind == "affine":
            x, w, _ = vals
            if x.ndim == 1:
                return w.T @ g, np.outer(g, x), g
            return g @ w, g.T @ x, g.sum(axis=0)
        if kind == "linear":
            x, w = vals
            if x.ndim == 1:
                return w.T @ g, np.outer(g, x)
            return g @ w, g.T @ x
        if kind == "abs":
            return (g * np.sign(vals[0]),)
        if kind == "relu":
            return (g * (vals[0] > 0.0),)
        if kind == "sigmoid":
            s = node.value
            return (g * s * (1.0 - s),)
        if kind == "tanh":
            t = node.value
            return (g * (1.0 - t * t),)
        if kind == "sum":
            return (np.broadcast_to(g, vals[0].shape).copy(),)
        if kind == "mean":
            return (np.broadcast_to(g / vals[0].size, vals[0].shape).copy(),)
        if kind == "scale":
            return (g * node.meta["c"],)
        if kind == "min_const":
            return (g * (vals[0] < node.meta["c"]),)
        if kind == "max_const":
            return (g * (vals[0] > node.meta["c"]),)
        if kind == "concat":
            grads, off = [], 0
            for v in vals:
                grads.append(g[off:off + v.shape[0]])
                off += v.shape[0]
            return tuple(grads)
        if kind == "slice1d":
            full = np.zeros_like(vals[0])
            full[node.meta["start"]:node.meta["stop"]] = g
            return (full,)
        if kind == "reshape":
            return (g.reshape(vals[0].shape),)
        raise ValueError(f"no gradient rule for op kind: {kind}")


def check_gradient(fn, params: list[Array], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(params) -> (value, grads)`` where ``grads`` mirrors ``params``.  The
    error metric per coordinate is ``|a - n| / max(1, |a|, |n|)``; the caller
    asserts a bound on the returned maximum.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = fn(params)
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        gflat = np.asarray(grads[k]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = fn(params)
            flat[i] = orig - step
            dn, _ = fn(params)
            flat[i] = orig
            numeric = (up - dn) / (2.0 * step)
            analytic = gflat[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
