import numpy as np
import pytest

from qsn import functions as fns


def test_product_derivatives_at_ones():
    f = fns.product(2)
    d = f.eval_all([1.0, 1.0], order=3)
    assert d.value == 1.0
    np.testing.assert_allclose(d.gradient, [1.0, 1.0])
    np.testing.assert_allclose(d.hessian, [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(d.third, np.zeros((2, 2, 2)))


def test_linear_derivatives():
    f = fns.linear([3.0, 4.0])
    d = f.eval_all([0.2, -1.7], order=2)
    np.testing.assert_allclose(d.gradient, [3.0, 4.0])
    np.testing.assert_allclose(d.hessian, np.zeros((2, 2)))
    assert d.value == pytest.approx(3 * 0.2 - 4 * 1.7)


def test_quadratic_value_gradient_hessian():
    a = np.array([[1.0, 2.0], [0.0, -1.0]])
    b = np.array([0.5, 0.5])
    f = fns.quadratic(a, b)
    th = np.array([1.0, -2.0])
    assert f.value(th) == pytest.approx(th @ a @ th + b @ th)
    np.testing.assert_allclose(f.gradient(th), (a + a.T) @ th + b)
    np.testing.assert_allclose(f.hessian(th), a + a.T)


def test_finite_diff_validate_examples():
    assert fns.finite_diff_validate(fns.product(2), [1.0, 1.0], 1) < 1e-8
    # second differences of a linear map vanish to rounding, which sits at
    # eps*|f|/h^2: below 1e-8 near the origin, below 1e-6 at generic points
    assert fns.finite_diff_validate(fns.linear([3.0, 4.0]), [0.0, 0.0], 2) < 1e-8
    assert fns.finite_diff_validate(fns.linear([3.0, 4.0]), [0.3, 0.1], 2) < 1e-6
    assert fns.finite_diff_validate(fns.quadratic([[1.0]]), [2.0], 2) < 1e-6


def test_builtin_families_match_finite_differences_random_points():
    # 100 random points per family: gradient to 1e-6 relative, hessian 1e-4
    rng = np.random.default_rng(11)
    families = [
        fns.linear(rng.normal(size=3)),
        fns.product(3),
        fns.quadratic(rng.normal(size=(3, 3)), rng.normal(size=3)),
    ]
    for f in families:
        for _ in range(100):
            th = rng.uniform(-2.0, 2.0, size=f.dim)
            scale = max(1.0, float(np.max(np.abs(f.gradient(th)))))
            assert fns.finite_diff_validate(f, th, 1) < 1e-6 * scale
            assert fns.finite_diff_validate(f, th, 2) < 1e-4 * max(
                1.0, float(np.max(np.abs(f.hessian(th))))
            )


def test_third_tensor_symmetry_and_slice():
    rng = np.random.default_rng(5)
    f = fns.product(4)
    th = rng.uniform(0.5, 1.5, size=4)
    t = f.third_tensor(th)
    for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0)]:
        np.testing.assert_allclose(t, np.transpose(t, perm))
    sl = f.third_diag_slice(th, 2)
    np.testing.assert_allclose(sl, [t[2, i, i] for i in range(4)])


def test_composite_fd_third_matches_exact_of_product():
    f_exact = fns.product(3)
    f_fd = fns.composite(f_exact.value_rule, 3, label="probe")
    th = [0.9, 1.1, -0.7]
    np.testing.assert_allclose(
        f_fd.third_tensor(th), f_exact.third_tensor(th), atol=2e-5
    )
    assert not f_fd.derivatives_exact
    assert f_exact.derivatives_exact


def test_full_tensor_dimension_guard():
    w = np.ones(17)
    f = fns.linear(w)
    with pytest.raises(ValueError, match="third tensor"):
        f.third_tensor(np.zeros(17))
    # the slice stays available in any dimension
    np.testing.assert_allclose(f.third_diag_slice(np.zeros(17), 3), np.zeros(17))


def test_as_params_validation():
    with pytest.raises(ValueError, match="expected 2"):
        fns.as_params([1.0], 2)
    with pytest.raises(fns.EvaluationError, match="index 1"):
        fns.as_params([1.0, np.nan], 2)
    with pytest.raises(ValueError, match="1-D"):
        fns.as_params([[1.0, 2.0]], 2)


def test_value_error_reports_nonfinite():
    f = fns.composite(lambda th: np.exp(np.asarray(th, float)[..., 0] * 1e6),
                      1, label="overflow")
    with np.errstate(over="ignore"), pytest.raises(fns.EvaluationError):
        f.value([2000.0])


def test_argmax_grad_index_rules():
    assert fns.argmax_grad_index(fns.linear([3.0, 4.0]), [0.0, 0.0]) == (1, False)
    assert fns.argmax_grad_index(fns.linear([1.0, 1.0]), [0.0, 0.0]) == (0, False)
    assert fns.argmax_grad_index(fns.linear([0.0, 0.0]), [0.0, 0.0]) == (0, True)
    # scaling f by a positive constant must not move the argmax
    rng = np.random.default_rng(3)
    for _ in range(50):
        w = rng.normal(size=4)
        j, flag = fns.argmax_grad_index(fns.linear(w), np.zeros(4))
        j2, _ = fns.argmax_grad_index(fns.linear(2.5 * w), np.zeros(4))
        assert j == j2 and not flag


def test_batch_values_and_gradients_match_scalar():
    rng = np.random.default_rng(17)
    for f in (fns.product(3),
              fns.quadratic(rng.normal(size=(3, 3)), rng.normal(size=3)),
              fns.composite(lambda th: np.sin(np.asarray(th, float)).sum(axis=-1),
                            3, label="sin-sum")):
        pts = rng.uniform(-1.5, 1.5, size=(40, 3))
        np.testing.assert_allclose(
            f.values(pts), [f.value(p) for p in pts], rtol=1e-12
        )
        np.testing.assert_allclose(
            f.gradients(pts), [f.gradient(p) for p in pts], rtol=1e-9, atol=1e-12
        )


def test_product_gradient_exact_at_zeros():
    f = fns.product(3)
    np.testing.assert_allclose(f.gradient([0.0, 2.0, 3.0]), [6.0, 0.0, 0.0])
    np.testing.assert_allclose(f.gradient([0.0, 0.0, 3.0]), [0.0, 0.0, 0.0])


def test_from_rules_roundtrip():
    f = fns.from_rules(
        dim=1,
        label="cubic",
        value_rule=lambda th: np.asarray(th, float)[..., 0] ** 3,
        grad_rule=lambda th: np.array([3.0 * th[0] ** 2]),
        hess_rule=lambda th: np.array([[6.0 * th[0]]]),
        third_rule=lambda th: np.full((1, 1, 1), 6.0),
    )
    assert f.family == "custom"
    assert fns.finite_diff_validate(f, [0.7], 1) < 1e-9
    assert fns.finite_diff_validate(f, [0.7], 2) < 1e-6
    assert fns.finite_diff_validate(f, [0.7], 3) < 1e-4


def test_hessian_symmetrized_even_for_unsymmetric_rule():
    f = fns.from_rules(
        dim=2,
        label="skew",
        value_rule=lambda th: 0.0,
        grad_rule=lambda th: np.zeros(2),
        hess_rule=lambda th: np.array([[0.0, 1.0], [3.0, 0.0]]),
    )
    np.testing.assert_allclose(f.hessian([0.0, 0.0]), [[0.0, 2.0], [2.0, 0.0]])
