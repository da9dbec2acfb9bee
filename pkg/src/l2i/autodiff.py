"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Every operation eagerly computes its forward value and records its inputs
together with a local backward rule on the output tensor, so the chain of
tensors doubles as the compute graph. ``backward`` on a scalar result walks
the recorded nodes in exact reverse creation order and accumulates gradients
additively, which lets several losses contribute to the same buffers before
an optimizer step. Scalars, vectors and matrices are supported; elementwise
ops broadcast against scalars only. Any op whose result leaves the finite
float64 range raises ``NumericalError`` instead of propagating NaN or Inf.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

NORM_EPS = 1e-12

_ids = itertools.count()


class NumericalError(ArithmeticError):
    """An operation produced a non-finite value (overflow is an error)."""


class DegenerateVectorError(ValueError):
    """Normalization was asked for a vector with norm <= NORM_EPS."""


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` exists iff ``requires_grad`` (allocated on first use) and always
    matches ``values`` in shape. Tensors produced by ops carry the backward
    record; leaves carry none. A tensor is safe to share between threads once
    no further ops are applied to it.
    """

    __slots__ = ("values", "requires_grad", "_grad", "_id", "_parents", "_rule", "_op", "_done")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim > 2:
            raise ValueError(f"supported ranks are 0, 1 and 2; got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = None
        self._id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable | None = None
        self._op = "leaf"
        self._done = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal: adopt a freshly allocated float64 array without copying
        out = cls.__new__(cls)
        out.values = arr
        out.requires_grad = requires_grad
        out._grad = None
        out._id = next(_ids)
        out._parents = ()
        out._rule = None
        out._op = "op"
        out._done = False
        return out

    @property
    def grad(self) -> np.ndarray | None:
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are promoted to constant tensors
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if arr.ndim == 0:
        if not math.isfinite(float(arr)):
            raise NumericalError(f"non-finite result in {op}")
    elif not np.isfinite(arr).all():
        raise NumericalError(f"non-finite result in {op}")


def _from_op(values: np.ndarray, parents: tuple[Tensor, ...], rule, op: str, check: bool = True) -> Tensor:
    # `check=False` is reserved for ops that cannot produce non-finite values
    # from finite inputs (clamps, gathers, guarded normalization)
    if check:
        _ensure_finite(values, op)
    if values.dtype != np.float64:
        values = values.astype(np.float64)
    out = Tensor._wrap(values, any(p.requires_grad for p in parents))
    out._parents = parents
    out._rule = rule if out.requires_grad else None
    out._op = op
    return out


def _promote(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_elementwise_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape == b.values.shape:
        return
    if a.values.ndim == 0 or b.values.ndim == 0:
        return
    raise ValueError(
        f"shape mismatch for {op}: {a.values.shape} vs {b.values.shape} "
        "(only scalar broadcast is supported)"
    )


def _reduce_to(contribution: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undo scalar broadcast: a scalar operand receives the summed gradient
    if contribution.shape == shape:
        return contribution
    return np.asarray(contribution.sum(), dtype=np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and matrix operations


def add(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_elementwise_shapes(a, b, "add")
    out = a.values + b.values

    def rule(g, send):
        send(a, _reduce_to(g, a.values.shape))
        send(b, _reduce_to(g, b.values.shape))

    return _from_op(out, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_elementwise_shapes(a, b, "sub")
    out = a.values - b.values

    def rule(g, send):
        send(a, _reduce_to(g, a.values.shape))
        send(b, _reduce_to(-g, b.values.shape))

    return _from_op(out, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_elementwise_shapes(a, b, "mul")
    out = a.values * b.values

    def rule(g, send):
        send(a, _reduce_to(g * b.values, a.values.shape))
        send(b, _reduce_to(g * a.values, b.values.shape))

    return _from_op(out, (a, b), rule, "mul")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.values, 0.0)

    def rule(g, send):
        send(x, g * (x.values > 0.0))

    return _from_op(out, (x,), rule, "relu", check=False)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)

    def rule(g, send):
        send(x, g * out)

    return _from_op(out, (x,), rule, "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.values <= 0.0):
        raise ValueError(f"log domain error: non-positive input (min={x.values.min()})")
    out = np.log(x.values)

    def rule(g, send):
        send(x, g / x.values)

    return _from_op(out, (x,), rule, "log")


def square(x: Tensor) -> Tensor:
    out = x.values * x.values

    def rule(g, send):
        send(x, g * (2.0 * x.values))

    return _from_op(out, (x,), rule, "square")


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; the subgradient at 0 is taken as 0."""
    if np.any(x.values < 0.0):
        raise ValueError(f"sqrt domain error: negative input (min={x.values.min()})")
    out = np.sqrt(x.values)

    def rule(g, send):
        d = np.zeros_like(out)
        nonzero = out > 0.0
        d[nonzero] = 0.5 / out[nonzero]
        send(x, g * d)

    return _from_op(out, (x,), rule, "sqrt", check=False)


def max_with_scalar(x: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c); the subgradient at x == c is 0."""
    c = float(c)
    out = np.maximum(x.values, c)

    def rule(g, send):
        send(x, g * (x.values > c))

    return _from_op(out, (x,), rule, "max_with_scalar", check=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _promote(a), _promote(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.values.shape} x {b.values.shape}")
    out = a.values @ b.values

    def rule(g, send):
        send(a, g @ b.values.T)
        send(b, a.values.T @ g)

    return _from_op(out, (a, b), rule, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w with a bias row added to every output row."""
    if x.values.ndim != 2 or w.values.ndim != 2 or x.values.shape[1] != w.values.shape[0]:
        raise ValueError(f"affine shape mismatch: {x.values.shape} x {w.values.shape}")
    if b.values.shape != (1, w.values.shape[1]):
        raise ValueError(f"affine bias must be 1x{w.values.shape[1]}, got {b.values.shape}")
    out = x.values @ w.values + b.values

    def rule(g, send):
        send(x, g @ w.values.T)
        send(w, x.values.T @ g)
        send(b, g.sum(axis=0, keepdims=True))

    return _from_op(out, (x, w, b), rule, "affine")


# ---------------------------------------------------------------------------
# reductions, indexing, shaping


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.values.sum())

    def rule(g, send):
        send(x, np.full_like(x.values, float(g)))

    return _from_op(out, (x,), rule, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    n = x.values.size
    out = np.asarray(x.values.sum() / n)

    def rule(g, send):
        send(x, np.full_like(x.values, float(g) / n))

    return _from_op(out, (x,), rule, "mean_all")


def sum_rows(x: Tensor) -> Tensor:
    """Row sums of a matrix, giving a vector of length nrows."""
    if x.values.ndim != 2:
        raise ValueError(f"sum_rows needs a matrix, got shape {x.values.shape}")
    out = x.values.sum(axis=1)

    def rule(g, send):
        send(x, np.repeat(g[:, None], x.values.shape[1], axis=1))

    return _from_op(out, (x,), rule, "sum_rows")


def row(x: Tensor, i: int) -> Tensor:
    if x.values.ndim != 2:
        raise ValueError(f"row needs a matrix, got shape {x.values.shape}")
    if not 0 <= i < x.values.shape[0]:
        raise IndexError(f"row {i} out of range for {x.values.shape[0]} rows")
    out = x.values[i].copy()

    def rule(g, send):
        buf = np.zeros_like(x.values)
        buf[i] = g
        send(x, buf)

    return _from_op(out, (x,), rule, "row", check=False)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows by index; duplicate indices accumulate in the backward pass."""
    if x.values.ndim != 2:
        raise ValueError(f"take_rows needs a matrix, got shape {x.values.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.values.shape[0]):
        raise IndexError(f"row indices out of range for {x.values.shape[0]} rows")
    out = x.values[idx]

    def rule(g, send):
        buf = np.zeros_like(x.values)
        np.add.at(buf, idx, g)
        send(x, buf)

    return _from_op(out, (x,), rule, "take_rows", check=False)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.values.reshape(shape)

    def rule(g, send):
        send(x, g.reshape(x.values.shape))

    return _from_op(out.copy(), (x,), rule, "reshape", check=False)


def detach(x: Tensor) -> Tensor:
    """Copy of x that is a constant for the backward pass."""
    return Tensor(x.values.copy())


# ---------------------------------------------------------------------------
# composite operations with dedicated backward rules


def l2_normalize(x: Tensor) -> Tensor:
    """Scale a vector (or each row of a matrix) to Euclidean norm 1.

    Backward applies the full quotient-rule Jacobian per vector. Norms at or
    below NORM_EPS raise DegenerateVectorError rather than producing NaN.
    """
    if x.values.ndim == 0:
        raise ValueError("l2_normalize needs a vector or matrix")
    vals = x.values if x.values.ndim == 2 else x.values[None, :]
    norms = np.linalg.norm(vals, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError(f"cannot normalize vector with norm <= {NORM_EPS}")
    y = vals / norms

    def rule(g, send):
        gm = g if g.ndim == 2 else g[None, :]
        dots = np.sum(y * gm, axis=1, keepdims=True)
        contrib = (gm - y * dots) / norms
        send(x, contrib if x.values.ndim == 2 else contrib[0])

    out = y if x.values.ndim == 2 else y[0]
    return _from_op(out.copy(), (x,), rule, "l2_normalize", check=False)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] for a logit vector, computed stably."""
    if logits.values.ndim != 1:
        raise ValueError(f"softmax_cross_entropy needs a vector, got shape {logits.values.shape}")
    n = logits.values.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    m = logits.values.max()
    z = logits.values - m
    ez = np.exp(z)
    total = ez.sum()
    out = np.asarray(np.log(total) - z[label])

    def rule(g, send):
        p = ez / total
        p[label] -= 1.0
        send(logits, float(g) * p)

    return _from_op(out, (logits,), rule, "softmax_cross_entropy")


def softmax_cross_entropy_mean(
    logits: Tensor, labels: Sequence[int], weights: np.ndarray | None = None
) -> Tensor:
    """Mean (optionally per-sample weighted) cross-entropy over logit rows."""
    if logits.values.ndim != 2:
        raise ValueError(f"softmax_cross_entropy_mean needs a matrix, got shape {logits.values.shape}")
    batch, n = logits.values.shape
    idx = np.asarray(labels, dtype=np.intp)
    if idx.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"label out of range for {n} classes")
    w = np.ones(batch) if weights is None else np.asarray(weights, dtype=np.float64)
    m = logits.values.max(axis=1, keepdims=True)
    z = logits.values - m
    ez = np.exp(z)
    totals = ez.sum(axis=1)
    ce = np.log(totals) - z[np.arange(batch), idx]
    out = np.asarray((w * ce).sum() / batch)

    def rule(g, send):
        p = ez / totals[:, None]
        p[np.arange(batch), idx] -= 1.0
        send(logits, (float(g) / batch) * (w[:, None] * p))

    return _from_op(out, (logits,), rule, "softmax_cross_entropy_mean")


# ---------------------------------------------------------------------------
# backward pass


def _reachable(loss: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        for p in node._parents:
            if p.requires_grad:
                stack.append(p)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every reachable grad buffer.

    Gradients add up across backward calls on different results; calling
    backward twice on the same result is an error, as is a non-scalar loss.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.values.shape}")
    if loss._done:
        raise RuntimeError("backward already ran for this result; run a new forward pass")
    loss._done = True
    if not loss.requires_grad:
        return

    order = _reachable(loss)
    order.sort(key=lambda t: t._id, reverse=True)

    flow: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.values)}

    def send(parent: Tensor, contribution: np.ndarray) -> None:
        if not parent.requires_grad:
            return
        buf = flow.get(parent)
        if buf is None:
            # private copy: rules may pass the incoming buffer itself
            flow[parent] = np.array(contribution, dtype=np.float64)
        else:
            buf += contribution

    for node in order:
        g = flow.pop(node, None)
        if g is None:
            continue
        if node._rule is not None:
            node._rule(g, send)
        else:
            # non-finite intermediates always propagate down to some leaf,
            # so checking leaves catches every poisoned backward pass
            _ensure_finite(g, f"gradient of {node._op} tensor")
        # flow buffers are exclusively owned here, so the first accumulation
        # can adopt the buffer without copying
        if node._grad is None:
            node._grad = g
        else:
            node._grad += g


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        if t._grad is not None:
            t._grad.fill(0.0)


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``f`` must be a deterministic map from one tensor to a scalar tensor.
    The relative error per coordinate uses max(1e-8, |analytic| + |numeric|)
    as denominator; the maximum over coordinates is returned.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.array(x.values, dtype=np.float64)

    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.values.size != 1:
        raise ValueError("finite_difference_check needs a scalar-valued function")
    backward(out)
    analytic = probe.grad.ravel().copy()

    flat = base.ravel()
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = f(Tensor(base.copy())).item()
        flat[i] = saved - eps
        lo = f(Tensor(base.copy())).item()
        flat[i] = saved
        numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
