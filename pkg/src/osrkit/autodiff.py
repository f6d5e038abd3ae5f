"""Minimal reverse-mode differentiation over dense float64 arrays.

A Graph is a per-step tape: operations append nodes in topological order and
backward() replays them in reverse.  Graphs are cheap and rebuilt every
training step.  A graph and its tensors belong to one thread; distinct graphs
may run concurrently.  There is no broadcasting beyond adding a bias row
vector over the rows of a matrix; any other shape mismatch raises ShapeError.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import special
from .errors import ContractError, ShapeError


class Tensor:
    """Dense array with an optional gradient of the same shape."""

    __slots__ = (
        "values",
        "grad",
        "requires_grad",
        "op",
        "parents",
        "_backward",
        "_node_id",
        "_graph",
    )

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._node_id = -1
        self._graph: "Graph | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(values, requires_grad: bool = True) -> Tensor:
    """Leaf tensor holding trainable state; lives outside any graph."""
    return Tensor(values, requires_grad=requires_grad)


def _require_shape(t: Tensor, ndim: int, what: str) -> None:
    if t.values.ndim != ndim:
        raise ShapeError(f"{what} expects a {ndim}-d operand, got shape {t.shape}")


class Graph:
    """Append-only operation tape; parents always precede children."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    # -- plumbing ----------------------------------------------------------

    def _wrap(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(x)

    def _node(self, values, op: str, parents: Sequence[Tensor], backward) -> Tensor:
        for p in parents:
            if p._graph is not None and p._graph is not self:
                raise ContractError(f"operand of {op} belongs to a different graph")
        t = Tensor(values)
        t.op = op
        t.parents = tuple(parents)
        t.requires_grad = any(p.requires_grad for p in t.parents)
        t._backward = backward if t.requires_grad else None
        t._node_id = len(self.nodes)
        t._graph = self
        self.nodes.append(t)
        return t

    def constant(self, values) -> Tensor:
        """Non-trainable tensor registered on this tape."""
        return self._node(values, "constant", (), None)

    # -- elementwise -------------------------------------------------------

    def add(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return self._node(a.values + b.values, "add", (a, b), backward)

    def sub(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ShapeError(f"sub needs matching shapes, got {a.shape} and {b.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)

        return self._node(a.values - b.values, "sub", (a, b), backward)

    def neg(self, a) -> Tensor:
        a = self._wrap(a)

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return self._node(-a.values, "neg", (a,), backward)

    def relu(self, a) -> Tensor:
        a = self._wrap(a)
        mask = a.values > 0.0

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * mask)

        return self._node(np.where(mask, a.values, 0.0), "relu", (a,), backward)

    def square(self, a) -> Tensor:
        a = self._wrap(a)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * 2.0 * a.values)

        return self._node(a.values * a.values, "square", (a,), backward)

    def sqrt(self, a) -> Tensor:
        a = self._wrap(a)
        if np.any(a.values < 0.0):
            raise ShapeError(f"sqrt of negative entries in tensor of shape {a.shape}")
        out = np.sqrt(a.values)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / (2.0 * out))

        return self._node(out, "sqrt", (a,), backward)

    def log(self, a) -> Tensor:
        a = self._wrap(a)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.values)

        return self._node(np.log(a.values), "log", (a,), backward)

    def exp(self, a) -> Tensor:
        a = self._wrap(a)
        out = np.exp(a.values)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out)

        return self._node(out, "exp", (a,), backward)

    def scalar_mul(self, a, c: float) -> Tensor:
        a = self._wrap(a)
        c = float(c)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * c)

        return self._node(a.values * c, "scalar_mul", (a,), backward)

    def add_scalar(self, a, c: float) -> Tensor:
        a = self._wrap(a)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g)

        return self._node(a.values + float(c), "add_scalar", (a,), backward)

    def clamp_min(self, a, floor: float) -> Tensor:
        a = self._wrap(a)
        mask = a.values > floor

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * mask)

        return self._node(np.where(mask, a.values, floor), "clamp_min", (a,), backward)

    def log1mexp(self, a) -> Tensor:
        """log(1 - exp(-t)) for t >= 0, clamped below at log(PROB_FLOOR).

        Gradient is 1 / expm1(t); zero where the clamp is active.
        """
        a = self._wrap(a)
        t = a.values
        if np.any(t < 0.0):
            raise ShapeError(f"log1mexp needs non-negative entries, shape {a.shape}")
        floor = math.log(special.PROB_FLOOR)
        with np.errstate(divide="ignore"):
            out = np.where(
                t > math.log(2.0),
                np.log1p(-np.exp(-np.maximum(t, 1e-12))),
                np.log(np.maximum(-np.expm1(-t), special.PROB_FLOOR)),
            )
        clamped = out < floor
        out = np.where(clamped, floor, out)

        def backward(g):
            if a.requires_grad:
                with np.errstate(divide="ignore", over="ignore"):
                    grad = np.where(clamped, 0.0, 1.0 / np.expm1(np.maximum(t, 1e-300)))
                a._accumulate(g * grad)

        return self._node(out, "log1mexp", (a,), backward)

    # -- contractions and structure ----------------------------------------

    def matmul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.values.ndim not in (1, 2) or b.values.ndim not in (1, 2):
            raise ShapeError(f"matmul supports 1-d/2-d operands, got {a.shape} and {b.shape}")
        inner_a = a.shape[-1]
        inner_b = b.shape[0]
        if inner_a != inner_b:
            raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
        out = a.values @ b.values

        def backward(g):
            av, bv = a.values, b.values
            if a.requires_grad:
                if av.ndim == 2 and bv.ndim == 2:
                    a._accumulate(g @ bv.T)
                elif av.ndim == 2 and bv.ndim == 1:
                    a._accumulate(np.outer(g, bv))
                elif av.ndim == 1 and bv.ndim == 2:
                    a._accumulate(bv @ g)
                else:  # 1-d @ 1-d -> scalar
                    a._accumulate(g * bv)
            if b.requires_grad:
                if av.ndim == 2 and bv.ndim == 2:
                    b._accumulate(av.T @ g)
                elif av.ndim == 2 and bv.ndim == 1:
                    b._accumulate(av.T @ g)
                elif av.ndim == 1 and bv.ndim == 2:
                    b._accumulate(np.outer(av, g))
                else:
                    b._accumulate(g * av)

        return self._node(out, "matmul", (a, b), backward)

    def transpose(self, a) -> Tensor:
        a = self._wrap(a)
        _require_shape(a, 2, "transpose")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.T)

        return self._node(a.values.T, "transpose", (a,), backward)

    def add_bias(self, m, bias) -> Tensor:
        """Add a bias row vector to every row of a matrix (the only broadcast allowed)."""
        m, bias = self._wrap(m), self._wrap(bias)
        _require_shape(m, 2, "add_bias")
        _require_shape(bias, 1, "add_bias bias")
        if m.shape[1] != bias.shape[0]:
            raise ShapeError(f"add_bias width mismatch: {m.shape} vs {bias.shape}")

        def backward(g):
            if m.requires_grad:
                m._accumulate(g)
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=0))

        return self._node(m.values + bias.values, "add_bias", (m, bias), backward)

    def sum_axis(self, a, axis: int | None = None) -> Tensor:
        a = self._wrap(a)
        if axis is None:
            return self.sum_all(a)
        _require_shape(a, 2, "sum_axis")
        if axis not in (0, 1):
            raise ShapeError(f"sum_axis axis must be 0 or 1, got {axis}")

        def backward(g):
            if a.requires_grad:
                if axis == 0:
                    a._accumulate(np.broadcast_to(g, a.shape).copy())
                else:
                    a._accumulate(np.broadcast_to(g[:, None], a.shape).copy())

        return self._node(a.values.sum(axis=axis), "sum_axis", (a,), backward)

    def sum_all(self, a) -> Tensor:
        a = self._wrap(a)

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.values, float(g)))

        return self._node(a.values.sum(), "sum_all", (a,), backward)

    def mean_all(self, a) -> Tensor:
        a = self._wrap(a)
        return self.scalar_mul(self.sum_all(a), 1.0 / a.values.size)

    def logsumexp(self, a, axis: int | None = None) -> Tensor:
        a = self._wrap(a)
        if axis is None:
            m = a.values.max()
            out = m + math.log(np.exp(a.values - m).sum())
            soft = np.exp(a.values - out)

            def backward(g):
                if a.requires_grad:
                    a._accumulate(float(g) * soft)

            return self._node(out, "logsumexp", (a,), backward)
        _require_shape(a, 2, "logsumexp with axis")
        if axis != 1:
            raise ShapeError(f"logsumexp supports axis=1 for matrices, got {axis}")
        m = a.values.max(axis=1, keepdims=True)
        out = (m + np.log(np.exp(a.values - m).sum(axis=1, keepdims=True))).ravel()
        soft = np.exp(a.values - out[:, None])

        def backward(g):
            if a.requires_grad:
                a._accumulate(g[:, None] * soft)

        return self._node(out, "logsumexp", (a,), backward)

    def min_axis(self, a, axis: int = 1) -> Tensor:
        """Row-wise minimum; gradient routes to the lowest-index minimizer of each row."""
        a = self._wrap(a)
        _require_shape(a, 2, "min_axis")
        if axis != 1:
            raise ShapeError(f"min_axis supports axis=1, got {axis}")
        idx = a.values.argmin(axis=1)
        rows = np.arange(a.shape[0])

        def backward(g):
            if a.requires_grad:
                buf = np.zeros_like(a.values)
                buf[rows, idx] = g
                a._accumulate(buf)

        return self._node(a.values[rows, idx], "min_axis", (a,), backward)

    def concat_rows(self, parts: Sequence) -> Tensor:
        tensors = [self._wrap(p) for p in parts]
        if not tensors:
            raise ShapeError("concat_rows needs at least one operand")
        for t in tensors:
            _require_shape(t, 2, "concat_rows")
        widths = {t.shape[1] for t in tensors}
        if len(widths) != 1:
            raise ShapeError(f"concat_rows width mismatch: {[t.shape for t in tensors]}")
        sizes = [t.shape[0] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets, offsets[1:]):
                if t.requires_grad:
                    t._accumulate(g[lo:hi])

        return self._node(
            np.concatenate([t.values for t in tensors], axis=0), "concat_rows", tuple(tensors), backward
        )

    def take_entries(self, m, rows, cols) -> Tensor:
        """Gather m[rows[i], cols[i]] into a vector; gradient scatter-adds back."""
        m = self._wrap(m)
        _require_shape(m, 2, "take_entries")
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ShapeError(f"take_entries indices must be matching vectors, got {rows.shape} and {cols.shape}")

        def backward(g):
            if m.requires_grad:
                buf = np.zeros_like(m.values)
                np.add.at(buf, (rows, cols), g)
                m._accumulate(buf)

        return self._node(m.values[rows, cols], "take_entries", (m,), backward)

    def pairwise_sq_dist(self, z, anchors) -> Tensor:
        """Squared Euclidean distances between rows of z (B,n) and rows of anchors (C,n)."""
        z, anchors = self._wrap(z), self._wrap(anchors)
        _require_shape(z, 2, "pairwise_sq_dist")
        _require_shape(anchors, 2, "pairwise_sq_dist anchors")
        if z.shape[1] != anchors.shape[1]:
            raise ShapeError(f"latent dims differ: {z.shape} vs {anchors.shape}")
        diff = z.values[:, None, :] - anchors.values[None, :, :]
        out = np.einsum("bcn,bcn->bc", diff, diff)

        def backward(g):
            if z.requires_grad:
                z._accumulate(2.0 * (z.values * g.sum(axis=1)[:, None] - g @ anchors.values))
            if anchors.requires_grad:
                anchors._accumulate(
                    2.0 * (anchors.values * g.sum(axis=0)[:, None] - g.T @ z.values)
                )

        return self._node(out, "pairwise_sq_dist", (z, anchors), backward)

    # -- inclusion-probability nodes ----------------------------------------

    def prob_inclusion(self, d_sq, n: int) -> Tensor:
        """Elementwise chi-square(n) upper tail of squared distances, with custom gradient."""
        d_sq = self._wrap(d_sq)
        flat = d_sq.values.ravel()
        out = np.array([special.prob_inclusion(float(v), n) for v in flat]).reshape(d_sq.shape)

        def backward(g):
            if d_sq.requires_grad:
                grad = np.array(
                    [special.prob_inclusion_grad(float(v), n) for v in flat]
                ).reshape(d_sq.shape)
                d_sq._accumulate(g * grad)

        return self._node(out, "prob_inclusion", (d_sq,), backward)

    def prob_exclusion(self, d_sq, n: int) -> Tensor:
        """Elementwise complement of prob_inclusion, computed without cancellation."""
        d_sq = self._wrap(d_sq)
        flat = d_sq.values.ravel()
        out = np.array([special.prob_exclusion(float(v), n) for v in flat]).reshape(d_sq.shape)

        def backward(g):
            if d_sq.requires_grad:
                grad = np.array(
                    [-special.prob_inclusion_grad(float(v), n) for v in flat]
                ).reshape(d_sq.shape)
                d_sq._accumulate(g * grad)

        return self._node(out, "prob_exclusion", (d_sq,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad tensor.

    The root must be a scalar node of a live graph.  Gradients accumulate;
    reset leaves with zero_grad() before reusing them in a new graph.
    """
    if loss.values.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {loss.values.shape}")
    if loss._graph is None:
        raise ContractError("backward root is a leaf, not part of a graph")
    if not loss.requires_grad:
        return
    loss._accumulate(np.ones(()))
    for node in reversed(loss._graph.nodes[: loss._node_id + 1]):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
