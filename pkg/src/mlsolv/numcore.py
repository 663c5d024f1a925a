"""Small reverse-mode autodiff over rank<=2 float64 arrays, RMSprop and a
finite-difference gradient checker.

Each op returns a :class:`Tensor` holding its value, its parents and a
closure mapping the upstream gradient to one gradient per parent. Only the
ops the solvation model needs are provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(value: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None, op: str = "const"):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"rank {value.ndim} tensors are not supported")
        _check_finite(value, op)
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(param) into every reachable :class:`Parameter`."""
        if seed is None:
            seed = np.ones_like(self.value)
        order: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


class Parameter(Tensor):
    __slots__ = ("name", "grad")

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=np.float64), op="param")
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)), "mul")


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * s, (a,), lambda g: (g * s,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Tensor(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def spmm(S, b) -> Tensor:
    """Constant (dense or scipy sparse) matrix times a tensor."""
    b = as_tensor(b)
    if S.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {S.shape} and {b.shape}")
    St = S.T
    out = S @ b.value
    return Tensor(np.asarray(out), (b,), lambda g: (np.asarray(St @ g),), "spmm")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Tensor(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.T, (a,), lambda g: (g.T,), "transpose")


def row_sum(a) -> Tensor:
    """Sum over the last axis; (n, d) -> (n,)."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError(f"row_sum expects a matrix, got shape {a.shape}")
    return Tensor(a.value.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], a.shape[1], axis=1),), "row_sum")


def total(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.sum(), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def softmax(a) -> Tensor:
    """Softmax over a 1-D coefficient vector."""
    a = as_tensor(a)
    if a.value.ndim != 1 or a.shape[0] == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {a.shape}")
    z = np.exp(a.value - a.value.max())
    y = z / z.sum()
    return Tensor(y, (a,), lambda g: (y * (g - np.dot(g, y)),), "softmax")


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """``sum_i weights[i] * tensors[i]`` for equally shaped tensors."""
    if not tensors:
        raise ShapeError("weighted_sum of an empty list")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"weighted_sum: incompatible shapes {shape} and {t.shape}")
    if weights.shape != (len(tensors),):
        raise ShapeError(f"weighted_sum: weights shape {weights.shape} for {len(tensors)} tensors")
    c = weights.value
    out = sum(ci * t.value for ci, t in zip(c, tensors))

    def backward(g):
        return tuple(ci * g for ci in c) + (np.array([np.sum(g * t.value) for t in tensors]),)

    return Tensor(out, (*tensors, weights), backward, "weighted_sum")


def square_norm(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.sum(a.value * a.value), (a,), lambda g: (2.0 * g * a.value,), "square_norm")


# ---------------------------------------------------------------------------
# optimizer


class RMSprop:
    """acc <- rho*acc + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(acc)+eps)."""

    def __init__(self, params: Sequence[Parameter], learning_rate: float = 1e-3, rho: float = 0.9,
                 epsilon: float = 1e-8):
        if learning_rate <= 0 or not 0 <= rho < 1 or epsilon <= 0:
            raise ValueError("invalid RMSprop settings")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.accumulators = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for {p.name}; step aborted")
        for p, acc in zip(self.params, self.accumulators):
            g = p.grad
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            p.value -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """``max_rel_error`` is the worst per-parameter error
    ``||a - n|| / max(||a||, ||n||)`` over the checked coordinates of each
    tensor. The per-coordinate maximum is kept in ``max_coord_rel_error``;
    it is dominated by finite-difference roundoff on near-zero gradients.
    """

    max_rel_error: float
    tol: float
    n_checked: int
    worst: str | None = None
    max_coord_rel_error: float = 0.0
    entries: list[tuple[str, tuple[int, ...], float, float, float]] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def per_parameter(self) -> dict[str, float]:
        groups: dict[str, tuple[list, list]] = {}
        for name, _, a, n, _ in self.entries:
            ga, gn = groups.setdefault(name, ([], []))
            ga.append(a)
            gn.append(n)
        out = {}
        for name, (ga, gn) in groups.items():
            ga, gn = np.array(ga), np.array(gn)
            denom = max(np.linalg.norm(ga), np.linalg.norm(gn))
            out[name] = float(np.linalg.norm(ga - gn) / denom) if denom > 0 else 0.0
        return out


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-4, tol: float = 1e-4,
               coords_per_param: int = 8, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of scalar ``fn()`` with central differences.

    A seeded random subset of at most ``coords_per_param`` coordinates is
    checked per parameter.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    out = fn()
    if out.value.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    report = GradCheckReport(0.0, tol, 0)
    for p, ga in zip(params, analytic):
        picks = rng.choice(p.value.size, size=min(coords_per_param, p.value.size), replace=False)
        for flat in picks:
            idx = np.unravel_index(int(flat), p.shape)
            orig = p.value[idx]
            p.value[idx] = orig + h
            f_plus = float(fn().value)
            p.value[idx] = orig - h
            f_minus = float(fn().value)
            p.value[idx] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(ga[idx])
            denom = max(abs(a), abs(numeric))
            rel = abs(a - numeric) / denom if denom > 0 else 0.0
            report.entries.append((p.name, tuple(int(i) for i in idx), a, numeric, rel))
            report.n_checked += 1
            report.max_coord_rel_error = max(report.max_coord_rel_error, rel)
    for name, err in report.per_parameter().items():
        if report.worst is None or err > report.max_rel_error:
            report.max_rel_error, report.worst = err, name
    return report
