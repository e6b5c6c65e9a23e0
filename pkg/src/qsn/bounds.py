"""Closed-form error bounds and predictions for function estimation.

For a function f with gradient components f_j = df/dtheta_j at the true
point, the achievable mean squared error after total interrogation time t is

    entangled network:    max_j f_j^2 / t^2
    independent sensors:  sum_j f_j^2 / t^2

so the entangled advantage is the ratio |grad f|_2^2 / max_j f_j^2, between 1
and d. With N photons split across d modes the same pair reads

    entangled network:    |grad f|_1^2 / N^2        (conjectured optimal)
    independent modes:    |grad f|_{2/3}^2 / N^2    with n_i ~ |f_i|^{2/3}

where |v|_{2/3} = (sum |v_i|^{2/3})^{3/2}.

The two-step protocol (estimate each parameter, then measure the linearized
combination) adds a curvature penalty on top of the linear-combination
variance. With independent first-step errors of variance s_i^2,

    MSE = E[Var q] + sum_{ij} (2 f_ij^2 + f_ii f_jj)/4 * s_i^2 s_j^2

where f_ij are second derivatives. Specialized to a time split (t1, t2) with
s_i^2 = 1/t1^2 this becomes

    MSE(t1, t2) = g2/t2^2 + g3/(t1^2 t2^2) + g1/t1^4,

    g2 = f_j*^2,   g3 = f_j* sum_i f_{j* i i} + sum_i f_{j* i}^2,
    g1 = sum_{ij} (2 f_ij^2 + f_ii f_jj)/4,

with j* the index of the largest |gradient component|. g3 comes from
expanding E[f_j*(estimate)^2] at the fixed index j*; when two components of
the gradient (nearly) tie, that expansion undershoots the true expectation of
the max by a term of order s (see experiment.step2_floor_inflation, which
measures it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functions import AnalyticFunction, argmax_grad_index, as_params

# Condition-number ceiling for basis Jacobians; beyond this the seminorm is
# numerically meaningless.
COND_LIMIT = 1e12


class DegenerateGradientError(ValueError):
    """Raised where a zero gradient makes the requested quantity undefined."""


class SingularBasisError(ValueError):
    """Raised for (numerically) singular basis Jacobians."""


@dataclass(frozen=True)
class BoundReport:
    """Bounds for one function, point and resource budget.

    ``advantage_ratio`` is unentangled/entangled and equals 1 by convention
    when the gradient vanishes (both bounds are then 0 and ``degenerate`` is
    set). ``conjectured`` marks the photon entangled bound, whose optimality
    is conjectured rather than proven.
    """

    entangled_bound: float
    unentangled_baseline: float
    advantage_ratio: float
    resource_kind: str
    resource: float
    degenerate: bool
    conjectured: bool = False


def two_thirds_norm_sq(v) -> float:
    """|v|_{2/3}^2 = (sum |v_i|^{2/3})^3."""
    v = np.asarray(v, dtype=float)
    return float(np.sum(np.abs(v) ** (2.0 / 3.0)) ** 3)


def qubit_bounds(fn: AnalyticFunction, theta, time: float) -> BoundReport:
    """Time-resource bounds: max_j f_j^2/t^2 vs |grad f|^2/t^2."""
    if not np.isfinite(time) or time <= 0:
        raise ValueError("time must be positive and finite")
    g = fn.gradient(as_params(theta, fn.dim))
    gmax_sq = float(np.max(g * g))
    gnorm_sq = float(np.sum(g * g))
    degenerate = gmax_sq == 0.0
    ratio = 1.0 if degenerate else gnorm_sq / gmax_sq
    return BoundReport(
        entangled_bound=gmax_sq / time**2,
        unentangled_baseline=gnorm_sq / time**2,
        advantage_ratio=ratio,
        resource_kind="qubit-time",
        resource=float(time),
        degenerate=degenerate,
    )


def photon_bounds(fn: AnalyticFunction, theta, photons: float) -> BoundReport:
    """Photon-resource bounds: |grad f|_1^2/N^2 vs |grad f|_{2/3}^2/N^2."""
    if not np.isfinite(photons) or photons <= 0:
        raise ValueError("photon number must be positive and finite")
    g = fn.gradient(as_params(theta, fn.dim))
    one_sq = float(np.sum(np.abs(g)) ** 2)
    tt_sq = two_thirds_norm_sq(g)
    degenerate = one_sq == 0.0
    ratio = 1.0 if degenerate else tt_sq / one_sq
    return BoundReport(
        entangled_bound=one_sq / photons**2,
        unentangled_baseline=tt_sq / photons**2,
        advantage_ratio=ratio,
        resource_kind="photon-number",
        resource=float(photons),
        degenerate=degenerate,
        conjectured=True,
    )


def seminorm_for_basis(jacobian) -> float:
    """Generator seminorm of the first basis function: sum_i |J^-1_{i, 0}|.

    ``jacobian`` has rows J_{k,i} = d(basis_k)/d(theta_i); row 0 is the
    function being estimated. The seminorm lower-bounds the achievable
    1/(MSE t^2) scale and satisfies seminorm >= 1/max_i |J_{0,i}|, with
    equality when the remaining basis rows are chosen well.
    """
    j = np.asarray(jacobian, dtype=float)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ValueError("basis Jacobian must be square")
    if not np.all(np.isfinite(j)):
        raise ValueError("basis Jacobian must be finite")
    if np.linalg.cond(j) > COND_LIMIT:
        raise SingularBasisError("basis Jacobian is singular or near-singular")
    first_col = np.linalg.solve(j, np.eye(j.shape[0])[:, 0])
    return float(np.sum(np.abs(first_col)))


def coordinate_basis(fn: AnalyticFunction, theta) -> np.ndarray:
    """Basis Jacobian achieving the seminorm optimum: row 0 is grad f, the
    other rows are coordinate directions for every index except j*."""
    theta = as_params(theta, fn.dim)
    g = fn.gradient(theta)
    j_star, degenerate = argmax_grad_index(fn, theta)
    if degenerate:
        raise DegenerateGradientError("zero gradient admits no optimal basis")
    rows = [g]
    for i in range(fn.dim):
        if i != j_star:
            rows.append(np.eye(fn.dim)[i])
    return np.stack(rows)


def hessian_quartic_coeffs(fn: AnalyticFunction, theta) -> np.ndarray:
    """Matrix C with C_ij = (2 f_ij^2 + f_ii f_jj)/4.

    sum_ij C_ij s_i^2 s_j^2 is the second-order contribution to the two-step
    MSE for first-step variances s_i^2; the diagonal reproduces the Gaussian
    fourth moment (C_ii s_i^4 = 3 f_ii^2 s_i^4 / 4).
    """
    h = fn.hessian(as_params(theta, fn.dim))
    return (2.0 * h * h + np.outer(np.diag(h), np.diag(h))) / 4.0


def two_step_prediction(
    fn: AnalyticFunction, theta, variances, lincomb_variance: float
) -> float:
    """Predicted two-step MSE for given first-step variances and a given
    linear-combination measurement variance."""
    theta = as_params(theta, fn.dim)
    var = np.asarray(variances, dtype=float)
    if var.shape != (fn.dim,):
        raise ValueError(f"need {fn.dim} variances")
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("variances must be finite and nonnegative")
    if lincomb_variance < 0:
        raise ValueError("lincomb_variance must be nonnegative")
    coeffs = hessian_quartic_coeffs(fn, theta)
    return float(lincomb_variance + var @ coeffs @ var)


@dataclass(frozen=True)
class TwoStepCoefficients:
    """Coefficients of MSE(t1, t2) = g2/t2^2 + g3/(t1^2 t2^2) + g1/t1^4."""

    g1: float
    g2: float
    g3: float
    argmax_index: int
    degenerate: bool

    def mse_at(self, t1: float, t2: float) -> float:
        if t2 <= 0:
            raise ValueError("t2 must be positive")
        step2 = self.g2 / t2**2
        if t1 == 0.0:
            if self.g1 != 0.0 or self.g3 != 0.0:
                raise ValueError("t1 = 0 only valid for curvature-free functions")
            return step2
        if t1 < 0:
            raise ValueError("t1 must be nonnegative")
        return step2 + self.g3 / (t1**2 * t2**2) + self.g1 / t1**4


def time_mse_coefficients(fn: AnalyticFunction, theta) -> TwoStepCoefficients:
    """Expansion coefficients of the two-step time MSE at a point.

    The degenerate flag marks a zero gradient (g2 = 0, entangled bound
    collapses); coefficients are still returned so callers can inspect the
    curvature terms.
    """
    theta = as_params(theta, fn.dim)
    g = fn.gradient(theta)
    j_star, degenerate = argmax_grad_index(fn, theta)
    h = fn.hessian(theta)
    g2 = float(g[j_star] ** 2)
    g3 = float(
        g[j_star] * np.sum(fn.third_diag_slice(theta, j_star))
        + np.sum(h[j_star] ** 2)
    )
    g1 = float(hessian_quartic_coeffs(fn, theta).sum())
    return TwoStepCoefficients(
        g1=g1, g2=g2, g3=g3, argmax_index=j_star, degenerate=degenerate
    )


def photon_residual_coefficient(fn: AnalyticFunction, theta, fractions) -> float:
    """Curvature coefficient sum_ij C_ij / (w_i^2 w_j^2) for a photon step-1
    split with mode fractions w (sum w = 1); dividing by N1^4 gives the
    second-order MSE term."""
    w = np.asarray(fractions, dtype=float)
    if w.shape != (fn.dim,):
        raise ValueError(f"need {fn.dim} fractions")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    coeffs = hessian_quartic_coeffs(fn, theta)
    inv = 1.0 / (w * w)
    return float(inv @ coeffs @ inv)
