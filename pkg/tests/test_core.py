import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viscmm.core import (
    SIGMA_DOMAIN_MAX,
    CriticalPointRecord,
    DimensionMismatchError,
    DomainError,
    EvaluationError,
    FunctionalHandle,
    ViscousFamily,
    as_point,
    entropy_bound,
    entropy_residual,
    evaluate_viscous,
    grad_check,
    hessian_check,
)


def norm_sq_handle():
    return FunctionalHandle(
        value=lambda x: float(x @ x),
        gradient=lambda x: 2.0 * x,
        hessian=lambda x: 2.0 * np.eye(x.size),
        label="norm_sq",
    )


def const_one_handle():
    return FunctionalHandle(
        value=lambda x: 1.0,
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros((x.size, x.size)),
        label="one",
    )


def double_well_handle():
    def val(x):
        return (x[0] ** 2 - 1.0) ** 2 + 5.0 * x[1] ** 2

    def grad(x):
        return np.array([4.0 * x[0] * (x[0] ** 2 - 1.0), 10.0 * x[1]])

    def hess(x):
        return np.array([[12.0 * x[0] ** 2 - 4.0, 0.0], [0.0, 10.0]])

    return FunctionalHandle(val, grad, hess, label="double_well", dim=2)


def quartic_handle():
    return FunctionalHandle(
        value=lambda x: float(np.sum(x ** 4)),
        gradient=lambda x: 4.0 * x ** 3,
        hessian=lambda x: np.diag(12.0 * x ** 2),
        label="quartic",
    )


class TestAsPoint:
    def test_rejects_nan(self):
        with pytest.raises(EvaluationError):
            as_point([1.0, float("nan")])

    def test_rejects_inf(self):
        with pytest.raises(EvaluationError):
            as_point([np.inf, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            as_point([1.0, 2.0], dim=3)

    def test_roundtrip(self):
        x = as_point([1, 2, 3])
        assert x.dtype == np.float64
        assert x.shape == (3,)


class TestEvaluateViscous:
    def test_sigma_zero_reduces_to_base(self):
        fam = ViscousFamily(norm_sq_handle(), const_one_handle())
        assert evaluate_viscous(fam, 0.0, np.array([1.0, 1.0])) == 2.0

    def test_additive_composition(self):
        fam = ViscousFamily(norm_sq_handle(), const_one_handle())
        assert evaluate_viscous(fam, 0.5, np.array([1.0, 1.0])) == 2.25

    def test_double_well_with_quartic_regularizer(self):
        # direct arithmetic oracle: F(1,0)=0, G(1,0)=1, sigma^2 = 0.01
        fam = ViscousFamily(double_well_handle(), quartic_handle())
        got = evaluate_viscous(fam, 0.1, np.array([1.0, 0.0]))
        assert got == pytest.approx(0.0 + 0.01 * 1.0, abs=1e-15)

    def test_dimension_mismatch_is_hard_error(self):
        fam = ViscousFamily(double_well_handle(), quartic_handle())
        with pytest.raises(DimensionMismatchError):
            evaluate_viscous(fam, 0.1, np.array([1.0, 0.0, 0.0]))

    def test_non_finite_output_carries_point(self):
        bad = FunctionalHandle(
            value=lambda x: float("inf"),
            gradient=lambda x: np.zeros_like(x),
            hessian=lambda x: np.zeros((x.size, x.size)),
        )
        fam = ViscousFamily(bad, const_one_handle())
        with pytest.raises(EvaluationError) as err:
            evaluate_viscous(fam, 0.1, np.array([3.0, 4.0]))
        assert np.allclose(err.value.point, [3.0, 4.0])

    def test_monotone_in_sigma_for_nonnegative_regularizer(self):
        fam = ViscousFamily(double_well_handle(), quartic_handle())
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=2)
            vals = [evaluate_viscous(fam, s, x) for s in np.linspace(0, 0.9, 12)]
            assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


class TestEntropyBound:
    def test_derivative_form_at_001(self):
        # high-precision oracle
        with mpmath.workdps(60):
            s = mpmath.mpf("0.01")
            expect = 1 / (s * mpmath.log(1 / s) * mpmath.log(mpmath.log(1 / s)))
        got = entropy_bound(0.01)
        assert got == pytest.approx(float(expect), rel=1e-14)
        assert got == pytest.approx(14.219, abs=5e-3)

    def test_set_form_at_001(self):
        with mpmath.workdps(60):
            s = mpmath.mpf("0.01")
            expect = 1 / (mpmath.log(1 / s) * mpmath.log(mpmath.log(1 / s)))
        got = entropy_bound(0.01, derivative_form=False)
        assert got == pytest.approx(float(expect), rel=1e-14)
        assert got == pytest.approx(0.14219, abs=5e-5)

    def test_exp_minus_e_squared(self):
        with mpmath.workdps(60):
            s = mpmath.e ** (-mpmath.e ** 2)
            expect = 1 / (s * mpmath.log(1 / s) * mpmath.log(mpmath.log(1 / s)))
        got = entropy_bound(float(math.exp(-math.e ** 2)))
        assert got == pytest.approx(float(expect), rel=1e-12)

    def test_domain_errors_name_threshold(self):
        for bad in (0.0, -0.1, SIGMA_DOMAIN_MAX, 0.07, 1.0):
            with pytest.raises(DomainError) as err:
                entropy_bound(bad)
            assert "e^-e" in str(err.value)

    def test_strictly_decreasing_on_grid(self):
        lo, hi = math.exp(-math.e ** 2), SIGMA_DOMAIN_MAX
        grid = np.linspace(lo * 1.0001, hi * 0.9999, 100)
        vals = [entropy_bound(s) for s in grid]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_residual_sign_is_membership(self):
        assert entropy_residual(0.0, 123.0) is None
        r = entropy_residual(0.01, 1.0)
        assert r == pytest.approx(1e-4 - entropy_bound(0.01, derivative_form=False))
        assert r < 0
        assert entropy_residual(0.01, 1e5) > 0


class TestGradCheck:
    def test_exact_quadratic(self):
        assert grad_check(norm_sq_handle(), np.array([3.0, 4.0]), h=1e-5) < 1e-8

    def test_double_well_against_analytic(self):
        h = double_well_handle()
        x = np.array([0.5, 0.2])
        assert np.allclose(h.grad(x), [4 * 0.5 * (0.25 - 1), 2.0], atol=1e-15)
        assert grad_check(h, x, h=1e-5) < 1e-6

    def test_cubic_1d(self):
        cube = FunctionalHandle(
            value=lambda x: float(x[0] ** 3),
            gradient=lambda x: np.array([3.0 * x[0] ** 2]),
            hessian=lambda x: np.array([[6.0 * x[0]]]),
        )
        assert cube.grad(np.array([1.0]))[0] == pytest.approx(3.0)
        assert grad_check(cube, np.array([1.0]), h=1e-4) < 1e-6

    def test_step_domain(self):
        with pytest.raises(DomainError):
            grad_check(norm_sq_handle(), np.array([1.0]), h=0.5)

    def test_hessian_check_quadratic(self):
        assert hessian_check(norm_sq_handle(), np.array([1.0, -2.0])) < 1e-9

    def test_hessian_asymmetry_rejected(self):
        bad = FunctionalHandle(
            value=lambda x: 0.0,
            gradient=lambda x: np.zeros_like(x),
            hessian=lambda x: np.array([[0.0, 1.0], [0.0, 0.0]]),
        )
        with pytest.raises(EvaluationError):
            bad.hess(np.array([0.0, 0.0]))


class TestHandleBatch:
    def test_values_fallback_matches_loop(self):
        h = double_well_handle()
        xs = np.random.default_rng(1).uniform(-2, 2, size=(17, 2))
        assert np.allclose(h.values(xs), [h(x) for x in xs])

    def test_family_handle_batches(self):
        f = double_well_handle()
        f.value_batch = lambda xs: (xs[:, 0] ** 2 - 1) ** 2 + 5 * xs[:, 1] ** 2
        g = quartic_handle()
        g.value_batch = lambda xs: np.sum(xs ** 4, axis=1)
        fam = ViscousFamily(f, g)
        hs = fam.handle(0.3)
        xs = np.random.default_rng(2).uniform(-1, 1, size=(9, 2))
        assert np.allclose(hs.values(xs), [fam.value(x, 0.3) for x in xs])


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    sa=st.floats(0, 0.8),
    sb=st.floats(0, 0.8),
)
def test_viscous_monotonicity_property(x, sa, sb):
    fam = ViscousFamily(double_well_handle(), quartic_handle())
    lo, hi = sorted([sa, sb])
    assert fam.value(np.array(x), hi) >= fam.value(np.array(x), lo) - 1e-12


class TestCriticalPointRecord:
    def test_roundtrip(self):
        rec = CriticalPointRecord(
            point=np.array([0.0, 0.0]), sigma=0.01, value=1.0, base_value=1.0,
            reg_value=0.0, grad_norm=1e-12,
            entropy_residual=entropy_residual(0.01, 0.0))
        d = rec.to_dict()
        back = CriticalPointRecord.from_dict(d)
        assert back.to_dict() == d

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            CriticalPointRecord(np.zeros(2), -0.1, 0, 0, 0, 0)
