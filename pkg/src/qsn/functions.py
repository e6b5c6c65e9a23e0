"""Analytic functions of sensor parameters, with derivatives up to third order.

Every estimation target in this package is an :class:`AnalyticFunction`: a
scalar function of a parameter vector theta in R^d together with whatever
closed-form derivative rules it has. Built-in families (linear, product,
quadratic) carry exact rules through third order; anything constructed from a
bare value rule falls back to central finite differences with per-order step
sizes.

Conventions. Points are 1-D arrays of shape (d,), batches are (n, d) with the
parameter axis last. Built-in rules are vectorized over the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Relative central-difference steps per derivative order. Scaled by
# max(1, |theta_i|) componentwise, so small coordinates do not starve the
# stencil.
GRAD_STEP = 1e-5
HESS_STEP = 1e-4
THIRD_STEP = 1e-3

# Full third-derivative tensors are O(d^3); past this dimension only the
# directional slices needed by the two-step expansion are offered.
FULL_TENSOR_MAX_DIM = 16


class EvaluationError(ValueError):
    """A function or derivative rule produced a non-finite value."""


def as_params(theta, dim: int | None = None) -> np.ndarray:
    """Validate and return theta as a float array of shape (d,).

    Raises ValueError on wrong dimension and EvaluationError on non-finite
    entries (the message names the first offending index).
    """
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"parameter point must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"expected {dim} parameters, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise EvaluationError(f"non-finite parameter at index {bad}")
    return arr


@dataclass(frozen=True)
class Derivatives:
    """Derivatives of a function at a point, filled up to the requested order."""

    value: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    third: np.ndarray | None = None


@dataclass(frozen=True)
class AnalyticFunction:
    """A scalar function of d parameters with optional closed-form derivatives.

    ``value_rule`` must accept arrays of shape (d,) or (n, d) and return a
    scalar or (n,) array. Derivative rules, when given, take a single (d,)
    point; ``grad_rule`` may additionally be batch-aware (shape (n, d) in,
    (n, d) out) which the protocol simulators exploit. Missing rules are
    replaced by central finite differences of the best available lower-order
    rule.
    """

    dim: int
    family: str
    label: str
    value_rule: Callable[[np.ndarray], np.ndarray]
    grad_rule: Callable[[np.ndarray], np.ndarray] | None = None
    hess_rule: Callable[[np.ndarray], np.ndarray] | None = None
    third_rule: Callable[[np.ndarray], np.ndarray] | None = None
    grad_batch_rule: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False
    )

    @property
    def derivatives_exact(self) -> bool:
        """True when first and second derivatives come from closed-form rules."""
        return self.grad_rule is not None and self.hess_rule is not None

    # -- point evaluation ---------------------------------------------------

    def value(self, theta) -> float:
        theta = as_params(theta, self.dim)
        out = float(np.asarray(self.value_rule(theta)))
        if not np.isfinite(out):
            raise EvaluationError(f"non-finite value of {self.label} at {theta}")
        return out

    def gradient(self, theta) -> np.ndarray:
        theta = as_params(theta, self.dim)
        if self.grad_rule is not None:
            g = np.asarray(self.grad_rule(theta), dtype=float)
        else:
            g = self._fd_gradient(theta)
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise EvaluationError(
                f"non-finite gradient component {bad} of {self.label}"
            )
        return g

    def hessian(self, theta) -> np.ndarray:
        theta = as_params(theta, self.dim)
        if self.hess_rule is not None:
            h = np.asarray(self.hess_rule(theta), dtype=float)
        else:
            h = self._fd_hessian(theta)
        if not np.all(np.isfinite(h)):
            raise EvaluationError(f"non-finite hessian of {self.label}")
        return 0.5 * (h + h.T)

    def third_tensor(self, theta) -> np.ndarray:
        """Full (d, d, d) tensor of third derivatives; d <= 16 only."""
        theta = as_params(theta, self.dim)
        if self.dim > FULL_TENSOR_MAX_DIM:
            raise ValueError(
                f"full third tensor limited to d <= {FULL_TENSOR_MAX_DIM}; "
                "use third_diag_slice for the expansion coefficients"
            )
        if self.third_rule is not None:
            return np.asarray(self.third_rule(theta), dtype=float)
        return self._fd_third(theta)

    def third_diag_slice(self, theta, j: int) -> np.ndarray:
        """Vector of third derivatives f_{j,i,i} for i = 0..d-1.

        This is the only third-order information the two-step error expansion
        needs, and it stays O(d) in any dimension.
        """
        theta = as_params(theta, self.dim)
        if not 0 <= j < self.dim:
            raise ValueError(f"index {j} out of range for d={self.dim}")
        if self.third_rule is not None:
            tensor = np.asarray(self.third_rule(theta), dtype=float)
            return np.einsum("ii->i", tensor[j]).copy()
        steps = HESS_STEP * np.maximum(1.0, np.abs(theta))
        out = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = steps[i]
            gp = self._grad_component(theta + e, j)
            g0 = self._grad_component(theta, j)
            gm = self._grad_component(theta - e, j)
            out[i] = (gp - 2.0 * g0 + gm) / steps[i] ** 2
        return out

    def eval_all(self, theta, order: int = 1) -> Derivatives:
        """Value plus derivatives through ``order`` (0..3)."""
        if not 0 <= order <= 3:
            raise ValueError("order must be 0, 1, 2 or 3")
        theta = as_params(theta, self.dim)
        return Derivatives(
            value=self.value(theta),
            gradient=self.gradient(theta) if order >= 1 else None,
            hessian=self.hessian(theta) if order >= 2 else None,
            third=self.third_tensor(theta) if order >= 3 else None,
        )

    # -- batch evaluation ---------------------------------------------------

    def values(self, points: np.ndarray) -> np.ndarray:
        points = self._as_batch(points)
        out = np.asarray(self.value_rule(points), dtype=float)
        if out.shape != (points.shape[0],):
            # value rule not batch-aware; fall back to a row loop
            out = np.array([float(self.value_rule(p)) for p in points])
        return out

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = self._as_batch(points)
        if self.grad_batch_rule is not None:
            return np.asarray(self.grad_batch_rule(points), dtype=float)
        if self.grad_rule is not None:
            return np.stack([np.asarray(self.grad_rule(p), float) for p in points])
        return self._fd_gradients(points)

    def _as_batch(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"batch must have shape (n, {self.dim})")
        return points

    # -- finite-difference fallbacks -----------------------------------------

    def _grad_component(self, theta: np.ndarray, j: int) -> float:
        if self.grad_rule is not None:
            return float(np.asarray(self.grad_rule(theta))[j])
        h = GRAD_STEP * max(1.0, abs(theta[j]))
        e = np.zeros(self.dim)
        e[j] = h
        return (self.value(theta + e) - self.value(theta - e)) / (2.0 * h)

    def _fd_gradient(self, theta: np.ndarray) -> np.ndarray:
        steps = GRAD_STEP * np.maximum(1.0, np.abs(theta))
        shifts = np.concatenate([np.diag(steps), -np.diag(steps)]) + theta
        vals = self.values(shifts)
        return (vals[: self.dim] - vals[self.dim :]) / (2.0 * steps)

    def _fd_gradients(self, points: np.ndarray) -> np.ndarray:
        n, d = points.shape
        steps = GRAD_STEP * np.maximum(1.0, np.abs(points))  # (n, d)
        grads = np.empty((n, d))
        for i in range(d):
            plus = points.copy()
            minus = points.copy()
            plus[:, i] += steps[:, i]
            minus[:, i] -= steps[:, i]
            grads[:, i] = (self.values(plus) - self.values(minus)) / (2.0 * steps[:, i])
        return grads

    def _fd_hessian(self, theta: np.ndarray) -> np.ndarray:
        d = self.dim
        steps = HESS_STEP * np.maximum(1.0, np.abs(theta))
        hess = np.empty((d, d))
        if self.grad_rule is not None:
            # differentiating the exact gradient is one order more accurate
            for i in range(d):
                e = np.zeros(d)
                e[i] = steps[i]
                gp = np.asarray(self.grad_rule(theta + e), float)
                gm = np.asarray(self.grad_rule(theta - e), float)
                hess[i] = (gp - gm) / (2.0 * steps[i])
            return hess
        f0 = self.value(theta)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = steps[i]
            hess[i, i] = (
                self.value(theta + ei) - 2.0 * f0 + self.value(theta - ei)
            ) / steps[i] ** 2
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = steps[j]
                cross = (
                    self.value(theta + ei + ej)
                    - self.value(theta + ei - ej)
                    - self.value(theta - ei + ej)
                    + self.value(theta - ei - ej)
                ) / (4.0 * steps[i] * steps[j])
                hess[i, j] = hess[j, i] = cross
        return hess

    def _fd_third(self, theta: np.ndarray) -> np.ndarray:
        d = self.dim
        steps = THIRD_STEP * np.maximum(1.0, np.abs(theta))
        tensor = np.empty((d, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = steps[k]
            hp = self.hessian(theta + e)
            hm = self.hessian(theta - e)
            tensor[k] = (hp - hm) / (2.0 * steps[k])
        # symmetrize over the differentiation order
        return (
            tensor
            + tensor.transpose(1, 2, 0)
            + tensor.transpose(2, 0, 1)
            + tensor.transpose(1, 0, 2)
            + tensor.transpose(0, 2, 1)
            + tensor.transpose(2, 1, 0)
        ) / 6.0


def argmax_grad_index(fn: AnalyticFunction, theta) -> tuple[int, bool]:
    """Index of the largest |gradient component| and a degeneracy flag.

    Ties go to the lowest index. A zero gradient returns index 0 with the
    flag set; callers must check the flag before trusting the index.
    """
    g = np.abs(fn.gradient(theta))
    if np.all(g == 0.0):
        return 0, True
    return int(np.argmax(g)), False


def finite_diff_validate(fn: AnalyticFunction, theta, order: int) -> float:
    """Max abs deviation between a closed-form derivative rule and a central
    finite-difference estimate built from the value rule alone.

    The stencil never uses the rule under test, so this is an independent
    check of each family's algebra.
    """
    theta = as_params(theta, fn.dim)
    probe = AnalyticFunction(
        dim=fn.dim, family="probe", label=fn.label, value_rule=fn.value_rule
    )
    if order == 1:
        return float(np.abs(fn.gradient(theta) - probe._fd_gradient(theta)).max())
    if order == 2:
        return float(np.abs(fn.hessian(theta) - probe._fd_hessian(theta)).max())
    if order == 3:
        return float(
            np.abs(fn.third_tensor(theta) - probe._fd_third(theta)).max()
        )
    raise ValueError("order must be 1, 2 or 3")


# -- built-in families -------------------------------------------------------


def linear(weights, label: str | None = None) -> AnalyticFunction:
    """f(theta) = weights . theta (constant gradient, zero curvature)."""
    w = as_params(weights)
    d = w.shape[0]
    return AnalyticFunction(
        dim=d,
        family="linear",
        label=label or "linear:" + ",".join(repr(float(x)) for x in w),
        value_rule=lambda th: np.asarray(th, float) @ w,
        grad_rule=lambda th: w.copy(),
        hess_rule=lambda th: np.zeros((d, d)),
        third_rule=lambda th: np.zeros((d, d, d)),
        grad_batch_rule=lambda pts: np.broadcast_to(w, pts.shape).copy(),
    )


def _product_gradients(points: np.ndarray) -> np.ndarray:
    # leave-one-out products via prefix/suffix scans; exact even at zeros
    n, d = points.shape
    grads = np.ones((n, d))
    if d > 1:
        prefix = np.cumprod(points, axis=1)
        suffix = np.cumprod(points[:, ::-1], axis=1)[:, ::-1]
        grads[:, 1:] *= prefix[:, :-1]
        grads[:, :-1] *= suffix[:, 1:]
    return grads


def product(dim: int, label: str | None = None) -> AnalyticFunction:
    """f(theta) = prod_i theta_i, the standard multiplicative benchmark."""
    if dim < 1:
        raise ValueError("product needs dim >= 1")

    def hess(theta: np.ndarray) -> np.ndarray:
        h = np.zeros((dim, dim))
        for i in range(dim):
            for j in range(i + 1, dim):
                mask = np.ones(dim, bool)
                mask[[i, j]] = False
                h[i, j] = h[j, i] = float(np.prod(theta[mask]))
        return h

    def third(theta: np.ndarray) -> np.ndarray:
        t = np.zeros((dim, dim, dim))
        for i in range(dim):
            for j in range(i + 1, dim):
                for k in range(j + 1, dim):
                    mask = np.ones(dim, bool)
                    mask[[i, j, k]] = False
                    v = float(np.prod(theta[mask]))
                    for perm in (
                        (i, j, k), (i, k, j), (j, i, k),
                        (j, k, i), (k, i, j), (k, j, i),
                    ):
                        t[perm] = v
        return t

    return AnalyticFunction(
        dim=dim,
        family="product",
        label=label or f"product:d={dim}",
        value_rule=lambda th: np.prod(np.asarray(th, float), axis=-1),
        grad_rule=lambda th: _product_gradients(np.asarray(th, float)[None, :])[0],
        hess_rule=hess,
        third_rule=third,
        grad_batch_rule=_product_gradients,
    )


def quadratic(matrix, offset=None, label: str | None = None) -> AnalyticFunction:
    """f(theta) = theta^T A theta + b . theta, exact through third order."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    d = a.shape[0]
    b = np.zeros(d) if offset is None else as_params(offset, d)
    sym = a + a.T

    return AnalyticFunction(
        dim=d,
        family="quadratic",
        label=label or f"quadratic:d={d}",
        value_rule=lambda th: np.einsum(
            "...i,ij,...j->...", np.asarray(th, float), a, np.asarray(th, float)
        )
        + np.asarray(th, float) @ b,
        grad_rule=lambda th: sym @ np.asarray(th, float) + b,
        hess_rule=lambda th: sym.copy(),
        third_rule=lambda th: np.zeros((d, d, d)),
        grad_batch_rule=lambda pts: pts @ sym.T + b,
    )


def composite(value_rule, dim: int, label: str = "composite") -> AnalyticFunction:
    """Wrap a bare value rule; every derivative comes from finite differences
    and reports flag as approximate (``derivatives_exact`` is False)."""
    return AnalyticFunction(
        dim=dim, family="composite", label=label, value_rule=value_rule
    )


def from_rules(
    dim: int,
    label: str,
    value_rule,
    grad_rule,
    hess_rule,
    third_rule=None,
    grad_batch_rule=None,
) -> AnalyticFunction:
    """Custom function with explicit closed-form derivative rules."""
    return AnalyticFunction(
        dim=dim,
        family="custom",
        label=label,
        value_rule=value_rule,
        grad_rule=grad_rule,
        hess_rule=hess_rule,
        third_rule=third_rule,
        grad_batch_rule=grad_batch_rule,
    )
