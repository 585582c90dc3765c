"""Minimal reverse-mode autodiff over float64 numpy arrays.

A DiffValue wraps a value plus an optional closure that, given the output
gradient, yields (parent, gradient) contributions. Everything runs in
float64; any op producing NaN/Inf raises immediately. The op set is
exactly what the network needs: dense linear algebra, a few pointwise
nonlinearities, set max-pooling with argmax routing, and gather/scatter
primitives that double as sparse adjacency matmuls.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteValue, ShapeMismatch


class DiffValue:
    __slots__ = ("data", "grad", "needs_grad", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        needs_grad: bool = False,
        parents: tuple = (),
        backward: Optional[Callable] = None,
    ):
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.needs_grad = needs_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"DiffValue(shape={self.data.shape}, needs_grad={self.needs_grad})"


def constant(data) -> DiffValue:
    return DiffValue(np.asarray(data, dtype=np.float64))


def leaf(data) -> DiffValue:
    """Input that collects a gradient (used by parameters and probes)."""
    return DiffValue(np.asarray(data, dtype=np.float64), needs_grad=True)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single reduction: NaN/Inf in any entry poisons the sum
    if not np.isfinite(np.sum(arr)):
        raise NonFiniteValue(f"{op} produced a non-finite value")


def _make(data: np.ndarray, op: str, parents: Sequence[DiffValue], backward) -> DiffValue:
    _check_finite(data, op)
    needs = any(p.needs_grad for p in parents)
    return DiffValue(
        data,
        needs_grad=needs,
        parents=tuple(p for p in parents if p.needs_grad),
        backward=backward if needs else None,
    )


def backward(root: DiffValue, seed: Optional[np.ndarray] = None) -> None:
    """Accumulate gradients of root w.r.t. every reachable leaf."""
    if seed is None:
        if root.data.shape != ():
            raise ShapeMismatch("backward on a non-scalar needs an explicit seed")
        seed = np.ones(())
    topo: list[DiffValue] = []
    seen: set[int] = set()
    stack: list[tuple[DiffValue, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.asarray(seed, dtype=np.float64)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in node._backward(node.grad):
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------


def _same_shape(a: DiffValue, b: DiffValue, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda go: [(a, go), (b, go)])


def add_const(a: DiffValue, c) -> DiffValue:
    c = np.asarray(c, dtype=np.float64)
    return _make(a.data + c, "add_const", (a,), lambda go: [(a, go)])


def sub(a: DiffValue, b: DiffValue) -> DiffValue:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda go: [(a, go), (b, -go)])


def mul(a: DiffValue, b: DiffValue) -> DiffValue:
    _same_shape(a, b, "mul")
    return _make(
        a.data * b.data, "mul", (a, b),
        lambda go: [(a, go * b.data), (b, go * a.data)],
    )


def div(a: DiffValue, b: DiffValue) -> DiffValue:
    _same_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(
        out, "div", (a, b),
        lambda go: [(a, go / b.data), (b, -go * out / b.data)],
    )


def scale(a: DiffValue, c: float) -> DiffValue:
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda go: [(a, go * c)])


def row_scale(a: DiffValue, s: DiffValue) -> DiffValue:
    """Scale each row of a (N, d) by the matching entry of s (N, 1)."""
    if s.data.shape != (a.data.shape[0], 1):
        raise ShapeMismatch(f"row_scale: {a.data.shape} vs {s.data.shape}")
    return _make(
        a.data * s.data, "row_scale", (a, s),
        lambda go: [(a, go * s.data), (s, (go * a.data).sum(axis=1, keepdims=True))],
    )


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    return _make(
        a.data @ b.data, "matmul", (a, b),
        lambda go: [(a, go @ b.data.T), (b, a.data.T @ go)],
    )


def linear(x: DiffValue, W: DiffValue, b: Optional[DiffValue] = None) -> DiffValue:
    """x @ W (+ b broadcast over rows)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.data.shape[1] != W.data.shape[0]:
        raise ShapeMismatch(f"linear: {x.data.shape} @ {W.data.shape}")
    if b is None:
        return matmul(x, W)
    if b.data.shape != (W.data.shape[1],):
        raise ShapeMismatch(f"linear bias: {b.data.shape} vs ({W.data.shape[1]},)")
    out = x.data @ W.data + b.data
    return _make(
        out, "linear", (x, W, b),
        lambda go: [(x, go @ W.data.T), (W, x.data.T @ go), (b, go.sum(axis=0))],
    )


def transpose(a: DiffValue) -> DiffValue:
    return _make(a.data.T.copy(), "transpose", (a,), lambda go: [(a, go.T)])


def reshape(a: DiffValue, shape) -> DiffValue:
    old = a.data.shape
    return _make(
        a.data.reshape(shape).copy(), "reshape", (a,),
        lambda go: [(a, go.reshape(old))],
    )


def concat(parts: Sequence[DiffValue], axis: int = 1) -> DiffValue:
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def back(go):
        return [
            (p, np.take(go, np.arange(offsets[i], offsets[i + 1]), axis=axis))
            for i, p in enumerate(parts)
        ]

    return _make(out, "concat", tuple(parts), back)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------


def relu(a: DiffValue) -> DiffValue:
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda go: [(a, go * mask)])


def leaky_relu(a: DiffValue, slope: float = 0.01) -> DiffValue:
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, "leaky_relu", (a,), lambda go: [(a, go * factor)])


def sigmoid(a: DiffValue) -> DiffValue:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, "sigmoid", (a,), lambda go: [(a, go * out * (1.0 - out))])


def exp(a: DiffValue) -> DiffValue:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda go: [(a, go * out)])


def log(a: DiffValue) -> DiffValue:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, "log", (a,), lambda go: [(a, go / a.data)])


def powf(a: DiffValue, p: float) -> DiffValue:
    """Elementwise a**p for strictly positive a."""
    p = float(p)
    out = np.power(a.data, p)
    return _make(out, "powf", (a,), lambda go: [(a, go * p * out / a.data)])


def one_minus(a: DiffValue) -> DiffValue:
    return _make(1.0 - a.data, "one_minus", (a,), lambda go: [(a, -go)])


def clip(a: DiffValue, lo: float, hi: float) -> DiffValue:
    """Clamp with straight-through gradient inside the interval."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(
        np.clip(a.data, lo, hi), "clip", (a,), lambda go: [(a, go * mask)]
    )


def layer_norm(x: DiffValue, gain: DiffValue, shift: DiffValue,
               eps: float = 1e-5) -> DiffValue:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeMismatch(f"layer_norm affine: {gain.data.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def back(go):
        h = go * gain.data
        mean_h = h.mean(axis=-1, keepdims=True)
        mean_hx = (h * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (h - mean_h - xhat * mean_hx)
        axes = tuple(range(go.ndim - 1))
        return [
            (x, gx),
            (gain, (go * xhat).sum(axis=axes)),
            (shift, go.sum(axis=axes)),
        ]

    return _make(out, "layer_norm", (x, gain, shift), back)


def softmax(a: DiffValue, axis: int = -1) -> DiffValue:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(go):
        dot = (go * out).sum(axis=axis, keepdims=True)
        return [(a, out * (go - dot))]

    return _make(out, "softmax", (a,), back)


# ---------------------------------------------------------------------------
# Reductions and losses
# ---------------------------------------------------------------------------


def sum_all(a: DiffValue) -> DiffValue:
    return _make(
        np.asarray(a.data.sum()), "sum", (a,),
        lambda go: [(a, np.broadcast_to(go, a.data.shape).copy())],
    )


def mean_all(a: DiffValue) -> DiffValue:
    n = a.data.size
    return _make(
        np.asarray(a.data.mean()), "mean", (a,),
        lambda go: [(a, np.broadcast_to(go / n, a.data.shape).copy())],
    )


def smooth_l1(pred: DiffValue, target, delta: float = 1.0) -> DiffValue:
    """Elementwise Huber-style loss against a constant target."""
    t = np.asarray(target, dtype=np.float64)
    if pred.data.shape != t.shape:
        raise ShapeMismatch(f"smooth_l1: {pred.data.shape} vs {t.shape}")
    q = pred.data - t
    absq = np.abs(q)
    small = absq < delta
    out = np.where(small, 0.5 * q * q / delta, absq - 0.5 * delta)
    dq = np.where(small, q / delta, np.sign(q))
    return _make(out, "smooth_l1", (pred,), lambda go: [(pred, go * dq)])


# ---------------------------------------------------------------------------
# Gather / scatter / set pooling
# ---------------------------------------------------------------------------


def gather(x: DiffValue, idx: np.ndarray) -> DiffValue:
    """Select rows of a 2-D value; repeated indices accumulate on backward."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.data.shape[0]

    def back(go):
        return [(x, kernels.scatter_rows_sum(go, idx, n))]

    return _make(x.data[idx], "gather", (x,), back)


def scatter_sum(x: DiffValue, idx: np.ndarray, n_out: int) -> DiffValue:
    """Sum rows of x into n_out rows by target index."""
    idx = np.asarray(idx, dtype=np.int64)
    out = kernels.scatter_rows_sum(x.data, idx, n_out)
    return _make(out, "scatter_sum", (x,), lambda go: [(x, go[idx])])


def segment_sum(x: DiffValue, indptr: np.ndarray) -> DiffValue:
    """Sum contiguous row slices (CSR-style) of x."""
    indptr = np.asarray(indptr, dtype=np.int64)
    out = kernels.segment_sum_csr(x.data, indptr)
    counts = np.diff(indptr)

    def back(go):
        return [(x, np.repeat(go, counts, axis=0))]

    return _make(out, "segment_sum", (x,), back)


def sparse_adj_matmul(adj_rows: np.ndarray, adj_cols: np.ndarray, n_rows: int,
                      V: DiffValue) -> DiffValue:
    """out[i] = sum of V[j] over boolean-adjacency pairs (i, j)."""
    gathered = gather(V, adj_cols)
    return scatter_sum(gathered, adj_rows, n_rows)


def max_pool_gather(x: DiffValue, idx: np.ndarray, mask: np.ndarray) -> DiffValue:
    """Feature-wise max over gathered candidate rows, empty sets give zeros.

    Backward routes each output feature's gradient only to the winning row
    (first valid slot on ties).
    """
    idx = np.asarray(idx, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if idx.shape != mask.shape:
        raise ShapeMismatch(f"max_pool_gather: idx {idx.shape} vs mask {mask.shape}")
    out, arg = kernels.masked_gather_max(x.data, idx, mask)

    def back(go):
        gx = np.zeros_like(x.data)
        valid = arg >= 0
        rows = arg[valid]
        cols = np.broadcast_to(np.arange(x.data.shape[1]), arg.shape)[valid]
        np.add.at(gx, (rows, cols), go[valid])
        return [(x, gx)]

    return _make(out, "max_pool_gather", (x,), back)


def where_rows(mask: np.ndarray, a: DiffValue, b: DiffValue) -> DiffValue:
    """Per-row blend: rows with mask True come from a, others from b."""
    _same_shape(a, b, "where_rows")
    m = np.asarray(mask, dtype=bool)[:, None]
    out = np.where(m, a.data, b.data)
    return _make(
        out, "where_rows", (a, b),
        lambda go: [(a, go * m), (b, go * ~m)],
    )


def detach(a: DiffValue) -> DiffValue:
    """Value enters downstream ops as a constant."""
    return DiffValue(a.data)
