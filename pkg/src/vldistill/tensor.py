"""Dense 2-D tensor engine with reverse-mode automatic differentiation.

Everything is float64. Each differentiable operation validates its output
for NaN/Inf and fails fast instead of propagating. Operations on tensors
that require gradients append a node to an implicit trace (a linked record
of operations); ``backward`` replays that trace once, in reverse
topological order, and then marks it spent.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError, TraceError


class TraceNode:
    """One recorded operation: parent tensors plus a gradient-accumulation rule.

    ``backprop`` receives the upstream gradient of the node's output and adds
    each parent's share into ``parent.grad``. Nodes are single-use: once a
    backward pass has consumed a node, ``spent`` is set and any further
    backward through it is an error.
    """

    __slots__ = ("op", "parents", "backprop", "spent")

    def __init__(self, op: str, parents: tuple["Tensor", ...],
                 backprop: Callable[[np.ndarray], None]):
        self.op = op
        self.parents = parents
        self.backprop = backprop
        self.spent = False


class Tensor:
    """A 2-D float64 array with an optional gradient and trace handle.

    1-D input is treated as a single row, a scalar as a 1x1 matrix.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D; got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor construction: values contain NaN/Inf")
        self.data = arr.copy()
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TraceNode | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """Copy of the values with no gradient and no trace handle."""
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Constants and frozen parameters never receive gradients.
        if not self.requires_grad and self.node is None:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the actual operations.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _finite_or_raise(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: result contains NaN/Inf")
    return arr


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...],
          backprop: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; record a trace node when any parent requires grad."""
    out = Tensor.__new__(Tensor)
    out.data = _finite_or_raise(data, op)
    out.grad = None
    out.node = None
    out.requires_grad = any(p.requires_grad or p.node is not None for p in parents)
    if out.requires_grad:
        out.node = TraceNode(op, parents, backprop)
    return out


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    ad, bd = a.data, b.data

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g @ bd.T)
        b.accumulate_grad(ad.T @ g)

    return _make("matmul", ad @ bd, (a, b), backprop)


def transpose(a: Tensor) -> Tensor:
    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g.T)

    return _make("transpose", a.data.T.copy(), (a,), backprop)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    return _make("add", a.data + b.data, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g)
        b.accumulate_grad(-g)

    return _make("sub", a.data - b.data, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g * bd)
        b.accumulate_grad(g * ad)

    return _make("mul", ad * bd, (a, b), backprop)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g * c)

    return _make("scale", a.data * c, (a,), backprop)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g * (1.0 - y * y))

    return _make("tanh", y, (a,), backprop)


def sum_all(a: Tensor) -> Tensor:
    n_rows, n_cols = a.shape

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(np.full((n_rows, n_cols), g[0, 0]))

    return _make("sum_all", np.array([[a.data.sum()]]), (a,), backprop)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(np.full(a.shape, g[0, 0] / n))

    return _make("mean_all", np.array([[a.data.mean()]]), (a,), backprop)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (P, C) -> (1, C)."""
    p = a.shape[0]

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(np.repeat(g, p, axis=0) / p)

    return _make("mean_rows", a.data.mean(axis=0, keepdims=True), (a,), backprop)


def repeat_row(a: Tensor, n: int) -> Tensor:
    """Tile a (1, C) row into (n, C); the gradient is the column sum."""
    if a.shape[0] != 1:
        raise ShapeError(f"repeat_row expects a single row, got {a.shape}")

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g.sum(axis=0, keepdims=True))

    return _make("repeat_row", np.repeat(a.data, n, axis=0), (a,), backprop)


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows by index; duplicate indices accumulate in the backward pass."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index list")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def backprop(g: np.ndarray) -> None:
        if not a.requires_grad and a.node is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _make("gather_rows", a.data[idx].copy(), (a,), backprop)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices with equal column counts along the row axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows: empty input list")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backprop(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.accumulate_grad(g[lo:hi])

    data = np.concatenate([p.data for p in parts], axis=0)
    return _make("concat_rows", data, tuple(parts), backprop)


def diag_part(a: Tensor) -> Tensor:
    """Diagonal of a square matrix as an (N, 1) column."""
    n, m = a.shape
    if n != m:
        raise ShapeError(f"diag_part expects a square matrix, got {a.shape}")

    def backprop(g: np.ndarray) -> None:
        contrib = np.zeros((n, n))
        np.fill_diagonal(contrib, g[:, 0])
        a.accumulate_grad(contrib)

    return _make("diag_part", np.diag(a.data).reshape(n, 1).copy(), (a,), backprop)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log(sum(exp(.))) with max subtraction, (m, n) -> (m, 1)."""
    m = a.data.max(axis=1, keepdims=True)
    y = m + np.log(np.exp(a.data - m).sum(axis=1, keepdims=True))
    softmax = np.exp(a.data - y)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(g * softmax)

    return _make("logsumexp_rows", y, (a,), backprop)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backprop(g: np.ndarray) -> None:
        a.accumulate_grad(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make("softmax_rows", s, (a,), backprop)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm. Near-zero rows are rejected."""
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise DegenerateInputError(
            f"l2_normalize_rows: row norm <= 1e-12 at row {int(np.argmin(norms))}")
    y = a.data / norms

    def backprop(g: np.ndarray) -> None:
        # d/dx of x/|x| pulls back g as (g - (g.y) y) / |x| per row
        dots = (g * y).sum(axis=1, keepdims=True)
        a.accumulate_grad((g - dots * y) / norms)

    return _make("l2_normalize_rows", y, (a,), backprop)


def smooth_l1(pred: Tensor, target: Tensor, beta: float) -> Tensor:
    """Mean piecewise loss: 0.5*d^2/beta below the junction |d| = beta, |d| - beta/2 above.

    The target is a plain constant; it must not carry a gradient.
    """
    if beta <= 0:
        raise ValueError(f"smooth_l1: beta must be positive, got {beta}")
    _require_same_shape("smooth_l1", pred, target)
    if target.requires_grad or target.node is not None:
        raise ValueError("smooth_l1: target must not require a gradient")
    d = pred.data - target.data
    absd = np.abs(d)
    quadratic = absd < beta
    per_elem = np.where(quadratic, 0.5 * d * d / beta, absd - 0.5 * beta)
    n = d.size

    def backprop(g: np.ndarray) -> None:
        local = np.where(quadratic, d / beta, np.sign(d))
        pred.accumulate_grad(g[0, 0] * local / n)

    return _make("smooth_l1", np.array([[per_elem.mean()]]), (pred, target), backprop)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Run one reverse pass from a scalar loss, accumulating into .grad.

    Fan-out is additive. The trace reached from ``loss`` is spent afterwards;
    a second backward through any of its nodes raises TraceError.
    """
    if loss.data.shape != (1, 1):
        raise TraceError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise TraceError("backward: loss is not connected to a trace")
    if loss.node.spent:
        raise TraceError("backward: trace already consumed")

    ordered: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            ordered.append(t)
            continue
        if id(t) in visited or t.node is None:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for parent in t.node.parents:
            stack.append((parent, False))

    for t in ordered:
        if t.node is not None and t.node.spent:
            raise TraceError("backward: trace already consumed")

    loss.accumulate_grad(np.ones((1, 1)))
    for t in reversed(ordered):
        assert t.node is not None
        if t.grad is not None:
            t.node.backprop(t.grad)
        t.node.spent = True


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor,
               eps: float = 1e-5) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` must be scalar-valued and smooth at ``point``. The relative error
    denominator is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    x = Tensor(point.data, requires_grad=True)
    out = f(x)
    if out.data.shape != (1, 1):
        raise ValueError("grad_check: f must be scalar-valued")
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    worst = 0.0
    flat = point.data.copy()
    for i in np.ndindex(flat.shape):
        bumped = flat.copy()
        bumped[i] += eps
        hi = f(Tensor(bumped)).item()
        bumped[i] -= 2 * eps
        lo = f(Tensor(bumped)).item()
        numeric = (hi - lo) / (2 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def grad_check_many(f: Callable[..., Tensor], points: Iterable[Tensor],
                    eps: float = 1e-5) -> float:
    """grad_check of a multi-input scalar function, one argument at a time."""
    points = list(points)
    worst = 0.0
    for k in range(len(points)):
        def partial(t: Tensor, _k: int = k) -> Tensor:
            args = [Tensor(p.data) for p in points]
            args[_k] = t
            return f(*args)

        worst = max(worst, grad_check(partial, points[k], eps))
    return worst
