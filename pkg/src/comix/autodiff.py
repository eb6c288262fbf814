"""Reverse-mode automatic differentiation over dense float64 tensors.

Graphs are built eagerly: every operation computes its forward value at
construction time and records its parents, so a forward pass always precedes
backward by construction. Each node also remembers enough (op kind, parents,
aux data) to be re-executed, which is what `refresh` and the finite-difference
checker rely on after perturbing a leaf in place.

Scope is deliberately small: only the operations the encoder and loss stack
need, with broadcasting limited to scalar operands and row-vector bias
addition. All arithmetic is float64. `median` is forward-only and raises if it
ever ends up on a gradient path.

Thread safety: tensors are plain values and may be shared read-only; a graph
(its implicit tape) belongs to the thread that built it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ComixError

__all__ = [
    "AutodiffError",
    "ShapeMismatch",
    "NonFiniteValue",
    "Tensor",
    "leaf",
    "constant",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "exp",
    "log",
    "tanh",
    "relu",
    "softmax",
    "log_softmax",
    "sum_all",
    "mean_all",
    "mean_rows",
    "cosine",
    "median",
    "evaluate",
    "backward",
    "refresh",
    "finite_difference_check",
    "FiniteDifferenceReport",
]


class AutodiffError(ComixError):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NonFiniteValue(AutodiffError):
    pass


class Tensor:
    """One node of a computation graph: a leaf, a constant, or an op result.

    `grad` is populated by `backward` and holds the derivative of the seeded
    objective with respect to this node's value.
    """

    __slots__ = ("value", "op", "parents", "aux", "grad", "name")

    def __init__(self, value, op="leaf", parents=(), aux=None, name=None):
        self.value = np.array(value, dtype=np.float64)
        self.op = op
        self.parents = tuple(parents)
        self.aux = aux
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.value.shape})"

    # Operator sugar; plain numbers are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, name=None) -> Tensor:
    """Differentiable input node; `backward` reports gradients for these."""
    t = Tensor(value, op="leaf", name=name)
    _check_finite(t.value, "leaf", name)
    return t


def constant(value, name=None) -> Tensor:
    """Non-differentiable input node (data, targets, fixed coefficients)."""
    t = Tensor(value, op="const", name=name)
    _check_finite(t.value, "const", name)
    return t


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check_finite(value: np.ndarray, op: str, name=None):
    if not np.all(np.isfinite(value)):
        ident = f"{op}" + (f" '{name}'" if name else "")
        raise NonFiniteValue(f"non-finite value produced by node {ident}")


@dataclass(frozen=True)
class _Op:
    # forward(values, aux) -> ndarray
    forward: Callable
    # backward(grad, values, out_value, aux) -> tuple of parent grads;
    # None marks a forward-only op.
    backward: Optional[Callable] = None


def _node(kind: str, parents, aux=None, name=None) -> Tensor:
    op = _OPS[kind]
    value = op.forward([p.value for p in parents], aux)
    _check_finite(value, kind, name)
    return Tensor(value, op=kind, parents=parents, aux=aux, name=name)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def _addlike_check(kind, a, b):
    # Allowed: identical shapes, a scalar operand, or (n,d) + (d,) bias.
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    if a.ndim == 2 and b.shape == (a.shape[1],):
        return
    raise ShapeMismatch(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # (n,d) gradient collapsing onto a (d,) operand
    return grad.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _addlike_check("add", a.value, b.value)
    return _node("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _addlike_check("sub", a.value, b.value)
    return _node("sub", (a, b))


def neg(a: Tensor) -> Tensor:
    return _node("neg", (a,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not (a.shape == b.shape or a.shape == () or b.shape == ()):
        raise ShapeMismatch(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _node("mul", (a, b))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a fixed scalar (not a differentiable operand)."""
    return _node("scale", (a,), aux=float(c))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _node("matmul", (a, b))


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeMismatch(f"transpose: expected a matrix, got shape {a.shape}")
    return _node("transpose", (a,))


def exp(a: Tensor) -> Tensor:
    return _node("exp", (a,))


def log(a: Tensor) -> Tensor:
    return _node("log", (a,))


def tanh(a: Tensor) -> Tensor:
    return _node("tanh", (a,))


def relu(a: Tensor) -> Tensor:
    return _node("relu", (a,))


def softmax(a: Tensor) -> Tensor:
    """Row softmax (last axis), computed with max subtraction."""
    if a.value.ndim not in (1, 2):
        raise ShapeMismatch(f"softmax: expected vector or matrix, got shape {a.shape}")
    return _node("softmax", (a,))


def log_softmax(a: Tensor) -> Tensor:
    if a.value.ndim not in (1, 2):
        raise ShapeMismatch(f"log_softmax: expected vector or matrix, got shape {a.shape}")
    return _node("log_softmax", (a,))


def sum_all(a: Tensor) -> Tensor:
    return _node("sum_all", (a,))


def mean_all(a: Tensor) -> Tensor:
    return _node("mean_all", (a,))


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a matrix: (n,d) -> (d,)."""
    if a.value.ndim != 2:
        raise ShapeMismatch(f"mean_rows: expected a matrix, got shape {a.shape}")
    return _node("mean_rows", (a,))


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors; errors on a zero-norm operand."""
    if u.value.ndim != 1 or v.value.ndim != 1 or u.shape != v.shape:
        raise ShapeMismatch(f"cosine: incompatible shapes {u.shape} and {v.shape}")
    if np.linalg.norm(u.value) == 0.0 or np.linalg.norm(v.value) == 0.0:
        raise AutodiffError("cosine: zero-norm vector (degenerate embedding)")
    return _node("cosine", (u, v))


def median(a: Tensor, axis: int = 0) -> Tensor:
    """Median along an axis. Forward-only: backward through it is an error."""
    return _node("median", (a,), aux=int(axis))


def _softmax_value(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_value(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _cosine_grads(g, values, out, aux):
    u, v = values
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    c = float(out)
    g = float(g)
    gu = g * (v / (nu * nv) - c * u / (nu * nu))
    gv = g * (u / (nu * nv) - c * v / (nv * nv))
    return gu, gv


def _log_forward(values, aux):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(values[0])


def _exp_forward(values, aux):
    with np.errstate(over="ignore"):
        return np.exp(values[0])


_OPS = {
    "add": _Op(
        lambda v, aux: v[0] + v[1],
        lambda g, v, out, aux: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)),
    ),
    "sub": _Op(
        lambda v, aux: v[0] - v[1],
        lambda g, v, out, aux: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)),
    ),
    "neg": _Op(lambda v, aux: -v[0], lambda g, v, out, aux: (-g,)),
    "mul": _Op(
        lambda v, aux: v[0] * v[1],
        lambda g, v, out, aux: (
            _unbroadcast(g * v[1], v[0].shape),
            _unbroadcast(g * v[0], v[1].shape),
        ),
    ),
    "scale": _Op(lambda v, aux: aux * v[0], lambda g, v, out, aux: (aux * g,)),
    "matmul": _Op(
        lambda v, aux: v[0] @ v[1],
        lambda g, v, out, aux: (g @ v[1].T, v[0].T @ g),
    ),
    "transpose": _Op(lambda v, aux: v[0].T.copy(), lambda g, v, out, aux: (g.T,)),
    "exp": _Op(_exp_forward, lambda g, v, out, aux: (g * out,)),
    "log": _Op(_log_forward, lambda g, v, out, aux: (g / v[0],)),
    "tanh": _Op(lambda v, aux: np.tanh(v[0]), lambda g, v, out, aux: (g * (1.0 - out * out),)),
    "relu": _Op(
        lambda v, aux: np.maximum(v[0], 0.0),
        lambda g, v, out, aux: (g * (v[0] > 0.0),),
    ),
    "softmax": _Op(
        lambda v, aux: _softmax_value(v[0]),
        lambda g, v, out, aux: (out * (g - (g * out).sum(axis=-1, keepdims=True)),),
    ),
    "log_softmax": _Op(
        lambda v, aux: _log_softmax_value(v[0]),
        lambda g, v, out, aux: (g - np.exp(out) * g.sum(axis=-1, keepdims=True),),
    ),
    "sum_all": _Op(
        lambda v, aux: np.asarray(v[0].sum()),
        lambda g, v, out, aux: (np.full(v[0].shape, float(g)),),
    ),
    "mean_all": _Op(
        lambda v, aux: np.asarray(v[0].mean()),
        lambda g, v, out, aux: (np.full(v[0].shape, float(g) / v[0].size),),
    ),
    "mean_rows": _Op(
        lambda v, aux: v[0].mean(axis=0),
        lambda g, v, out, aux: (np.broadcast_to(g / v[0].shape[0], v[0].shape).copy(),),
    ),
    "cosine": _Op(
        lambda v, aux: np.asarray(v[0] @ v[1] / (np.linalg.norm(v[0]) * np.linalg.norm(v[1]))),
        _cosine_grads,
    ),
    "median": _Op(lambda v, aux: np.asarray(np.median(v[0], axis=aux)), None),
}


# ---------------------------------------------------------------------------
# graph traversal


def _topo(root: Tensor) -> list[Tensor]:
    """Topological order of the subgraph under `root` (iterative DFS)."""
    order = []
    visited = set()
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
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def evaluate(expr: Tensor) -> np.ndarray:
    """Forward value of an expression (a copy; the graph keeps its own)."""
    return np.array(expr.value)


def refresh(expr: Tensor) -> np.ndarray:
    """Recompute every non-leaf value under `expr` from current leaf values."""
    for node in _topo(expr):
        if node.op in ("leaf", "const"):
            continue
        op = _OPS[node.op]
        node.value = np.asarray(
            op.forward([p.value for p in node.parents], node.aux), dtype=np.float64
        )
        _check_finite(node.value, node.op, node.name)
    return expr.value


def backward(expr: Tensor, seed_grad=None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of `expr` with respect to every leaf under it.

    Gradient accumulators are reset at the start of each call, and fan-out
    contributions sum. Returns a map keyed by the leaf nodes themselves;
    constants are excluded.
    """
    if seed_grad is None:
        if expr.value.shape != ():
            raise ShapeMismatch(
                f"backward: seed_grad required for non-scalar output of shape {expr.shape}"
            )
        seed = np.asarray(1.0)
    else:
        seed = np.asarray(seed_grad, dtype=np.float64)
        if seed.shape != expr.value.shape:
            raise ShapeMismatch(
                f"backward: seed shape {seed.shape} does not match output shape {expr.value.shape}"
            )

    order = _topo(expr)
    for node in order:
        node.grad = None
    expr.grad = seed.copy()

    for node in reversed(order):
        if node.op in ("leaf", "const") or node.grad is None:
            continue
        op = _OPS[node.op]
        if op.backward is None:
            raise AutodiffError(f"op '{node.op}' is forward-only and cannot be on a gradient path")
        parent_grads = op.backward(node.grad, [p.value for p in node.parents], node.value, node.aux)
        for parent, pg in zip(node.parents, parent_grads):
            if parent.op == "const":
                continue
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64)
            else:
                parent.grad += pg

    return {
        node: node.grad.copy()
        for node in order
        if node.op == "leaf" and node.grad is not None
    }


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDifferenceReport:
    max_rel_err: float
    passed: bool
    checked: int
    message: str = ""

    def __bool__(self):
        return self.passed


def finite_difference_check(
    expr: Tensor, wrt: Tensor, step: float = 1e-5, tol: float = 1e-4
) -> FiniteDifferenceReport:
    """Compare analytic gradients against central finite differences.

    The objective is sum(expr). Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8); the check passes when the maximum over
    all elements of `wrt` is below `tol`. A non-finite perturbed evaluation
    fails the check with a diagnostic instead of raising.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must both be positive")

    grads = backward(expr, np.ones_like(expr.value))
    analytic = grads.get(wrt)
    if analytic is None:
        analytic = np.zeros_like(wrt.value)

    base = wrt.value.copy()
    max_rel = 0.0
    try:
        for i in range(base.size):
            for sign in (+1.0, -1.0):
                wrt.value.flat[i] = base.flat[i] + sign * step
                try:
                    refresh(expr)
                except NonFiniteValue as e:
                    return FiniteDifferenceReport(
                        max_rel_err=float("inf"),
                        passed=False,
                        checked=i,
                        message=f"non-finite perturbed evaluation: {e}",
                    )
                if sign > 0:
                    j_plus = float(expr.value.sum())
                else:
                    j_minus = float(expr.value.sum())
            wrt.value.flat[i] = base.flat[i]
            numeric = (j_plus - j_minus) / (2.0 * step)
            a = float(analytic.flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    finally:
        wrt.value = base
        refresh(expr)

    return FiniteDifferenceReport(max_rel_err=max_rel, passed=max_rel < tol, checked=base.size)
