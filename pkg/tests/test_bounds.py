import numpy as np
import pytest

from qsn import bounds, functions as fns


def test_qubit_bounds_examples():
    rep = bounds.qubit_bounds(fns.linear([3.0, 4.0]), [0.0, 0.0], 10.0)
    assert rep.entangled_bound == pytest.approx(0.16)
    assert rep.unentangled_baseline == pytest.approx(0.25)
    assert rep.advantage_ratio == pytest.approx(1.5625)
    assert rep.resource_kind == "qubit-time"
    assert not rep.conjectured

    rep = bounds.qubit_bounds(fns.linear(np.ones(4)), np.zeros(4), 1.0)
    assert rep.entangled_bound == pytest.approx(1.0)
    assert rep.advantage_ratio == pytest.approx(4.0)

    rep = bounds.qubit_bounds(fns.linear([5.0, 0.0, 0.0]), np.zeros(3), 1.0)
    assert rep.advantage_ratio == pytest.approx(1.0)


def test_photon_bounds_examples():
    rep = bounds.photon_bounds(fns.linear([1.0, 8.0]), [0.0, 0.0], 100)
    assert rep.entangled_bound == pytest.approx(81e-4)
    assert rep.unentangled_baseline == pytest.approx(125e-4)
    assert rep.conjectured

    rep = bounds.photon_bounds(fns.linear([1.0, 1.0]), [0.0, 0.0], 10)
    assert rep.entangled_bound == pytest.approx(0.04)
    assert rep.advantage_ratio == pytest.approx(2.0)


def test_two_thirds_norm():
    assert bounds.two_thirds_norm_sq([1.0, 8.0]) == pytest.approx(125.0)
    assert bounds.two_thirds_norm_sq([1.0, 1.0]) == pytest.approx(8.0)
    assert bounds.two_thirds_norm_sq([0.0, 0.0]) == 0.0


def test_bound_ordering_random_gradients():
    # entangled <= unentangled in both settings, ratio within [1, d]
    rng = np.random.default_rng(23)
    for _ in range(1000):
        d = int(rng.integers(1, 11))
        g = rng.normal(size=d) * 10.0 ** rng.integers(-2, 3)
        if np.all(g == 0):
            continue
        f = fns.linear(g)
        qb = bounds.qubit_bounds(f, np.zeros(d), 3.0)
        ph = bounds.photon_bounds(f, np.zeros(d), 50)
        for rep in (qb, ph):
            assert rep.entangled_bound <= rep.unentangled_baseline * (1 + 1e-12)
            assert 1.0 - 1e-12 <= rep.advantage_ratio <= d * (1 + 1e-12)


def test_degenerate_gradient_flagged_not_raised():
    f = fns.quadratic(np.eye(2))
    rep = bounds.qubit_bounds(f, [0.0, 0.0], 5.0)
    assert rep.degenerate
    assert rep.entangled_bound == 0.0
    assert rep.advantage_ratio == 1.0


def test_seminorm_examples():
    assert bounds.seminorm_for_basis([[2.0, 1.0], [0.0, 1.0]]) == pytest.approx(0.5)
    assert bounds.seminorm_for_basis([[2.0, 1.0], [1.0, 0.0]]) == pytest.approx(1.0)
    assert bounds.seminorm_for_basis(np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(bounds.SingularBasisError):
        bounds.seminorm_for_basis([[1.0, 1.0], [1.0, 1.0]])


def test_seminorm_inequality_random_bases():
    # any invertible basis gives seminorm >= 1/max_j |J_1j|; the coordinate
    # basis built from the gradient achieves it
    rng = np.random.default_rng(29)
    checked = 0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        j = rng.normal(size=(d, d))
        if np.linalg.cond(j) > 1e6:
            continue
        checked += 1
        s = bounds.seminorm_for_basis(j)
        assert s >= 1.0 / np.max(np.abs(j[0])) - 1e-9 * s
    assert checked > 900

    for _ in range(100):
        d = int(rng.integers(1, 7))
        g = rng.normal(size=d)
        f = fns.linear(g)
        basis = bounds.coordinate_basis(f, np.zeros(d))
        np.testing.assert_allclose(basis[0], g)
        s = bounds.seminorm_for_basis(basis)
        assert s == pytest.approx(1.0 / np.max(np.abs(g)))


def test_coordinate_basis_degenerate():
    with pytest.raises(bounds.DegenerateGradientError):
        bounds.coordinate_basis(fns.quadratic(np.eye(2)), [0.0, 0.0])


def test_hessian_quartic_coeffs_values():
    # h = [[0,1],[1,0]] -> off-diagonal (2*1+0)/4, diagonal 0
    c = bounds.hessian_quartic_coeffs(fns.product(2), [1.0, 1.0])
    np.testing.assert_allclose(c, [[0.0, 0.5], [0.5, 0.0]])
    # f = x1^2: c11 = (2*4 + 4)/4 = 3
    c = bounds.hessian_quartic_coeffs(fns.quadratic([[1.0]]), [0.0])
    np.testing.assert_allclose(c, [[3.0]])


def test_two_step_prediction_examples():
    f = fns.quadratic([[1.0]])
    v = 1e-3
    assert bounds.two_step_prediction(f, [0.0], [0.01], v) == pytest.approx(v + 3e-4)
    f2 = fns.linear([2.0, -1.0])
    assert bounds.two_step_prediction(f2, [0.3, 0.4], [0.1, 0.2], v) == pytest.approx(v)
    f3 = fns.product(2)
    s = 0.0025
    assert bounds.two_step_prediction(f3, [1.0, 1.0], [s, s], v) == pytest.approx(
        v + s * s
    )
    # zero variances return the floor exactly
    assert bounds.two_step_prediction(f3, [1.0, 1.0], [0.0, 0.0], v) == v


def test_two_step_prediction_against_monte_carlo():
    # independent sampling oracle for the quartic-coefficient formula
    rng = np.random.default_rng(101)
    a = np.array([[1.0, -0.75], [-0.75, 2.0]])
    f = fns.quadratic(a, [0.5, -1.0])
    theta = np.array([0.3, -0.2])
    var = np.array([0.04**2, 0.03**2])
    n = 400000
    delta = rng.standard_normal((n, 2)) * np.sqrt(var)
    pts = theta + delta
    resid = f.values(pts) - np.einsum("nd,nd->n", f.gradients(pts), delta) - f.value(theta)
    mc = float(np.mean(resid**2))
    se = float(np.std(resid**2) / np.sqrt(n))
    predicted = bounds.two_step_prediction(f, theta, var, 0.0)
    assert abs(mc - predicted) < 4 * se


def test_time_mse_coefficients_product():
    c = bounds.time_mse_coefficients(fns.product(2), [1.0, 1.0])
    assert (c.g1, c.g2, c.g3) == (1.0, 1.0, 1.0)
    assert c.argmax_index == 0 and not c.degenerate
    assert c.mse_at(100.0, 900.0) == pytest.approx(1.24469e-6, rel=1e-4)


def test_time_mse_coefficients_linear():
    c = bounds.time_mse_coefficients(fns.linear([3.0, 4.0]), [0.0, 0.0])
    assert c.g1 == 0.0 and c.g3 == 0.0
    assert c.g2 == pytest.approx(16.0)
    assert c.mse_at(0.0, 10.0) == pytest.approx(0.16)


def test_mse_at_requires_step1_time_when_curved():
    c = bounds.time_mse_coefficients(fns.product(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        c.mse_at(0.0, 100.0)
    with pytest.raises(ValueError):
        c.mse_at(-1.0, 100.0)
    with pytest.raises(ValueError):
        c.mse_at(10.0, 0.0)


def test_mse_at_monotone_decreasing():
    c = bounds.time_mse_coefficients(fns.product(2), [1.0, 1.0])
    t1 = np.linspace(5.0, 500.0, 40)
    vals_t1 = [c.mse_at(x, 1000.0) for x in t1]
    assert all(a > b for a, b in zip(vals_t1, vals_t1[1:]))
    t2 = np.linspace(100.0, 5000.0, 40)
    vals_t2 = [c.mse_at(50.0, x) for x in t2]
    assert all(a > b for a, b in zip(vals_t2, vals_t2[1:]))


def test_frozen_time_mse_predictions():
    # optimal-split predictions used by the acceptance gates
    from qsn import allocation

    f = fns.product(2)
    theta = [1.0, 1.0]
    c = bounds.time_mse_coefficients(f, theta)
    expected = {1e3: 1.1988494e-06, 1e4: 1.0747451e-08, 1e5: 1.0291202e-10}
    for t, val in expected.items():
        plan = allocation.optimal_time_split(f, theta, t)
        assert c.mse_at(plan.t1, plan.t2) == pytest.approx(val, rel=1e-6)


def test_photon_residual_coefficient():
    f = fns.product(2)
    c = bounds.photon_residual_coefficient(f, [1.0, 1.0], [0.5, 0.5])
    assert c == pytest.approx(16.0)
    with pytest.raises(ValueError):
        bounds.photon_residual_coefficient(f, [1.0, 1.0], [0.7, 0.4])
