"""Resource splits between the two protocol steps.

The two-step MSE g2/t2^2 + g3/(t1^2 t2^2) + g1/t1^4 is minimized, for
t1 << t_total, by

    t1 = (2 g1 / g2)^{1/5} * t_total^{3/5},

so the first step consumes a vanishing fraction of large budgets and any
power law t1 = c * t^p with 1/2 < p < 1 gives the same leading-order MSE.
This module provides that closed form, an independent golden-section
minimizer to check it against, the photon analogues, and the plan record the
protocol runners consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import bounds
from .functions import AnalyticFunction, as_params
from .measurement import largest_remainder

GOLDEN_TOL = 1e-10
PARTITION_TOL = 1e-10


@dataclass(frozen=True)
class AllocationPlan:
    """Resource split consumed by the protocol runners.

    Time plans carry (t1, t2) with t1 + t2 = total; t1 = 0 is the
    constant-gradient fast path that skips step 1 entirely. Photon plans
    carry (n1, n2) plus the integer step-1 mode counts.
    """

    kind: str
    policy: str
    total: float
    t1: float = 0.0
    t2: float = 0.0
    n1: int = 0
    n2: int = 0
    mode_counts: tuple = ()

    def __post_init__(self):
        if self.kind == "qubit-time":
            if self.t1 < 0 or self.t2 <= 0:
                raise ValueError("time plan needs t1 >= 0 and t2 > 0")
            if not np.isclose(self.t1 + self.t2, self.total):
                raise ValueError("t1 + t2 must equal the total budget")
        elif self.kind == "photon-number":
            if self.n1 < 0 or self.n2 <= 0:
                raise ValueError("photon plan needs n1 >= 0 and n2 > 0")
            if self.n1 + self.n2 != int(self.total):
                raise ValueError("n1 + n2 must equal the total budget")
            if self.n1 and sum(self.mode_counts) != self.n1:
                raise ValueError("step-1 mode counts must sum to n1")
        else:
            raise ValueError("kind must be 'qubit-time' or 'photon-number'")


def golden_section_min(fn, lo: float, hi: float, rel_tol: float = GOLDEN_TOL,
                       max_iter: int = 500) -> tuple[float, float]:
    """Golden-section minimum of a unimodal fn on [lo, hi].

    Returns (argmin, min). Bracket width shrinks by the golden ratio each
    step until it falls under rel_tol * max(1, |argmin|).
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if (b - a) <= rel_tol * max(1.0, abs(a) + abs(b)) / 2.0:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    x = (a + b) / 2.0
    return x, fn(x)


def closed_form_t1(g1: float, g2: float, t_total: float) -> float:
    """t1 = (2 g1/g2)^{1/5} t^{3/5}, clamped to [1, t_total/2]."""
    if g2 <= 0:
        raise bounds.DegenerateGradientError("g2 = 0: no step-2 signal to allocate for")
    raw = (2.0 * g1 / g2) ** 0.2 * t_total**0.6
    return float(min(max(raw, 1.0), t_total / 2.0))


def _flat_point_t1(t_total: float) -> float:
    # no curvature to correct at this point, but the gradient still has to be
    # localized: spend max(1, sqrt(t)) on step 1
    return float(max(1.0, np.sqrt(t_total)))


def optimal_time_split(fn: AnalyticFunction, theta, t_total: float) -> AllocationPlan:
    """Closed-form optimal split for a time budget.

    Linear-family functions get t1 = 0 (constant gradient, nothing to
    localize); other zero-curvature points get t1 = max(1, sqrt(t)).
    """
    if not np.isfinite(t_total) or t_total <= 2:
        raise ValueError("t_total must exceed 2")
    if fn.family == "linear":
        return AllocationPlan(kind="qubit-time", policy="optimal",
                              total=float(t_total), t1=0.0, t2=float(t_total))
    coeffs = bounds.time_mse_coefficients(fn, theta)
    if coeffs.degenerate:
        raise bounds.DegenerateGradientError(
            "zero gradient: the two-step target is flat here"
        )
    if coeffs.g1 == 0.0:
        t1 = _flat_point_t1(t_total)
    else:
        t1 = closed_form_t1(coeffs.g1, coeffs.g2, t_total)
    return AllocationPlan(kind="qubit-time", policy="optimal",
                          total=float(t_total), t1=t1, t2=float(t_total) - t1)


def numeric_time_split(fn: AnalyticFunction, theta, t_total: float) -> AllocationPlan:
    """Golden-section minimizer of the full three-term MSE over t1.

    Independent check on the closed form; agrees with it to fractions of a
    percent whenever t1 << t_total.
    """
    if not np.isfinite(t_total) or t_total <= 2:
        raise ValueError("t_total must exceed 2")
    if fn.family == "linear":
        return AllocationPlan(kind="qubit-time", policy="numeric",
                              total=float(t_total), t1=0.0, t2=float(t_total))
    coeffs = bounds.time_mse_coefficients(fn, theta)
    if coeffs.degenerate:
        raise bounds.DegenerateGradientError(
            "zero gradient: the two-step target is flat here"
        )
    if coeffs.g1 == 0.0 and coeffs.g3 == 0.0:
        t1 = _flat_point_t1(t_total)
    else:
        t1, _ = golden_section_min(
            lambda x: coeffs.mse_at(x, t_total - x),
            lo=1e-9 * t_total,
            hi=(1.0 - 1e-9) * t_total,
        )
    return AllocationPlan(kind="qubit-time", policy="numeric",
                          total=float(t_total), t1=float(t1),
                          t2=float(t_total - t1))


def power_law_time_split(t_total: float, coeff: float, power: float) -> AllocationPlan:
    """t1 = coeff * t_total^power; any 1/2 < power < 1 preserves the
    leading-order MSE."""
    if not 0.5 < power < 1.0:
        raise ValueError("power must lie strictly between 1/2 and 1")
    if coeff <= 0:
        raise ValueError("coeff must be positive")
    t1 = coeff * t_total**power
    if not 0 < t1 < t_total:
        raise ValueError("power law puts t1 outside (0, t_total)")
    return AllocationPlan(kind="qubit-time", policy=f"power:{coeff!r},{power!r}",
                          total=float(t_total), t1=float(t1),
                          t2=float(t_total - t1))


def fixed_time_split(t_total: float, t1: float) -> AllocationPlan:
    if not 0 <= t1 < t_total:
        raise ValueError("need 0 <= t1 < t_total")
    return AllocationPlan(kind="qubit-time", policy=f"fixed:{t1!r}",
                          total=float(t_total), t1=float(t1),
                          t2=float(t_total - t1))


# -- photon splits -------------------------------------------------------------


def continuous_pairwise_partition(coeffs: np.ndarray, rel_tol: float = PARTITION_TOL,
                                  max_iter: int = 20000) -> np.ndarray:
    """Fractions w (sum 1) minimizing sum_ij C_ij/(w_i^2 w_j^2).

    The objective is the quadratic form u^T C u in u_i = w_i^{-2}. For
    curvature matrices C_ij = (2 f_ij^2 + f_ii f_jj)/4 it is nonnegative on
    the positive orthant even when off-diagonal entries are negative, and any
    row holding a negative entry has a positive diagonal, so the form stays
    coercive in every coordinate.

    Projected multiplicative updates: with s_k = w_k^{-3} sum_j C_kj w_j^{-2}
    (the stationarity residual, equal across k at the optimum, where its
    common value is the objective itself), update w_k <- w_k (s_k/mean s)^{1/4}
    and renormalize. Residuals that go negative far from the optimum are
    floored at a small positive multiple of the residual scale, which still
    shrinks those modes hard. The 1/4 exponent keeps the iteration contractive
    whether the diagonal (s ~ w^-5) or the off-diagonal (s ~ w^-3) part
    dominates.
    """
    c = np.asarray(coeffs, dtype=float)
    d = c.shape[0]
    if c.shape != (d, d) or not np.all(np.isfinite(c)):
        raise ValueError("coefficient matrix must be square and finite")
    if np.any(np.diag(c) < 0):
        raise ValueError("coefficient matrix needs a nonnegative diagonal")
    c = (c + c.T) / 2.0
    if np.all(c == 0.0):
        return np.full(d, 1.0 / d)
    w = np.full(d, 1.0 / d)
    for _ in range(max_iter):
        s = (c @ (1.0 / w**2)) / w**3
        scale = float(np.max(np.abs(s)))
        if scale == 0.0:
            break
        s = np.maximum(s, 1e-3 * scale)
        ratio = s / s.mean()
        w_new = w * ratio**0.25
        w_new /= w_new.sum()
        delta = np.abs(w_new - w).max() / w.max()
        w = w_new
        if delta < rel_tol:
            break
    return w


@dataclass(frozen=True)
class PartitionResult:
    counts: tuple
    fractions: tuple
    uniform_fallback: bool


def photon_step1_partition(fn: AnalyticFunction, theta, n1: int) -> PartitionResult:
    """Integer step-1 photon counts minimizing the curvature penalty
    sum_ij C_ij/(n_i^2 n_j^2) subject to sum n_i = n1.

    The continuous fractions are budget-independent (the objective is
    homogeneous), then largest-remainder rounding lands on integers. Zero
    rounded counts are promoted to 1 (taken from the largest mode) so step-1
    variances stay finite. A zero curvature matrix falls back to the uniform
    split, flagged.
    """
    theta = as_params(theta, fn.dim)
    if n1 < fn.dim:
        raise ValueError(f"need at least one photon per mode (n1 >= {fn.dim})")
    coeffs = bounds.hessian_quartic_coeffs(fn, theta)
    uniform = bool(np.all(coeffs == 0.0))
    w = continuous_pairwise_partition(coeffs)
    counts = largest_remainder(w, n1)
    for i in range(fn.dim):
        if counts[i] == 0:
            counts[int(np.argmax(counts))] -= 1
            counts[i] = 1
    return PartitionResult(
        counts=tuple(int(x) for x in counts),
        fractions=tuple(float(x) for x in w),
        uniform_fallback=uniform,
    )


def optimal_photon_split(fn: AnalyticFunction, theta, n_total: int) -> AllocationPlan:
    """Photon analogue of the optimal time split.

    Effective coefficients: g2_eff = |grad f|_1^2 (step-2 variance scale),
    g1_eff = sum_ij C_ij/(w_i^2 w_j^2) at the optimal step-1 fractions w.
    Then n1 = round((2 g1_eff/g2_eff)^{1/5} N^{3/5}), clamped to [d, N/2].
    This mirrors the time-budget derivation; it is validated against the
    numeric minimizer in the tests rather than taken from a closed-form
    source.
    """
    theta = as_params(theta, fn.dim)
    n_total = int(n_total)
    if n_total < 2 * fn.dim:
        raise ValueError("photon budget too small to split")
    g = fn.gradient(theta)
    g2_eff = float(np.sum(np.abs(g)) ** 2)
    if g2_eff == 0.0:
        raise bounds.DegenerateGradientError("zero gradient: nothing to measure")
    if fn.family == "linear":
        n1 = fn.dim
    else:
        coeffs = bounds.hessian_quartic_coeffs(fn, theta)
        if np.all(coeffs == 0.0):
            n1 = fn.dim
        else:
            w = continuous_pairwise_partition(coeffs)
            g1_eff = bounds.photon_residual_coefficient(fn, theta, w)
            raw = (2.0 * g1_eff / g2_eff) ** 0.2 * n_total**0.6
            n1 = int(round(raw))
            n1 = min(max(n1, fn.dim), n_total // 2)
    part = photon_step1_partition(fn, theta, n1)
    return AllocationPlan(kind="photon-number", policy="optimal",
                          total=float(n_total), n1=n1, n2=n_total - n1,
                          mode_counts=part.counts)


def fixed_photon_split(fn: AnalyticFunction, theta, n_total: int, n1: int) -> AllocationPlan:
    n_total, n1 = int(n_total), int(n1)
    if not fn.dim <= n1 <= n_total - 1:
        raise ValueError("need d <= n1 < n_total")
    part = photon_step1_partition(fn, theta, n1)
    return AllocationPlan(kind="photon-number", policy=f"fixed:{n1}",
                          total=float(n_total), n1=n1, n2=n_total - n1,
                          mode_counts=part.counts)


def min_weighted_inverse_square(weights_sq, total: float) -> tuple[np.ndarray, float]:
    """Numeric constrained minimizer of sum a_i / n_i^2 over sum n_i = total.

    Independent oracle for the unentangled photon baseline (whose closed form
    is n_i proportional to a_i^{1/3}); deliberately solved as a generic
    constrained problem, not by that closed form.
    """
    a = np.asarray(weights_sq, dtype=float)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("weights_sq must be finite and nonnegative")
    if total <= 0:
        raise ValueError("total must be positive")
    active = a > 0
    if not np.any(active):
        raise ValueError("all weights vanish; the objective is identically 0")
    m = int(active.sum())
    x0 = np.full(m, total / m)
    res = minimize(
        lambda x: float(np.sum(a[active] / x**2)),
        x0=x0,
        jac=lambda x: -2.0 * a[active] / x**3,
        constraints=[{"type": "eq", "fun": lambda x: x.sum() - total,
                      "jac": lambda x: np.ones(m)}],
        bounds=[(1e-9 * total, None)] * m,
        method="SLSQP",
        options={"ftol": 1e-16, "maxiter": 1000},
    )
    if not res.success and res.status != 8:  # 8: iteration limit with tiny step
        raise RuntimeError(f"constrained minimizer failed: {res.message}")
    n = np.zeros(a.shape[0])
    n[active] = res.x
    return n, float(np.sum(a[active] / res.x**2))


def predicted_mse(fn: AnalyticFunction, theta, plan: AllocationPlan) -> float:
    """Model prediction of the two-step MSE under a given plan.

    Time plans use the three-term expansion. Photon plans use
    |grad f|_1^2/n2^2 plus the curvature penalty of the integer step-1
    counts; the cross term of order 1/(n1^2 n2^2) is not modeled, so photon
    predictions approach the truth from below by that amount.
    """
    theta = as_params(theta, fn.dim)
    if plan.kind == "qubit-time":
        coeffs = bounds.time_mse_coefficients(fn, theta)
        return coeffs.mse_at(plan.t1, plan.t2)
    g = fn.gradient(theta)
    step2 = float(np.sum(np.abs(g)) ** 2) / plan.n2**2
    if plan.n1 == 0:
        return step2
    counts = np.asarray(plan.mode_counts, dtype=float)
    var = np.where(counts > 0, 1.0 / np.maximum(counts, 1) ** 2, 0.0)
    coeffs = bounds.hessian_quartic_coeffs(fn, theta)
    return step2 + float(var @ coeffs @ var)
