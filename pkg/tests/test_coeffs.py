import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nondiv_lod.coeffs import (MONOSCALE_EXACT, CoefficientField, CordesError, builtin_field,
                               builtin_rhs, cordes_analyze, d2g, dg, g, monoscale_matrix)


def test_monoscale_cordes_values():
    rep = cordes_analyze(builtin_field("monoscale"))
    assert rep.case == "C1"
    assert abs(rep.delta - 0.6) < 1e-6
    assert abs(rep.zeta1 - 1.0) < 1e-12 and abs(rep.zeta2 - 3.0) < 1e-12
    # |A|^2 = 10, tr A = 4
    assert abs(rep.gamma_min - 0.4) < 1e-12 and abs(rep.gamma_max - 0.4) < 1e-12


def test_identity_has_delta_clamped_below_one():
    rep = cordes_analyze(CoefficientField(lambda x: np.broadcast_to(
        np.eye(2), np.asarray(x).shape[:-1] + (2, 2))))
    assert rep.delta < 1.0 and rep.delta > 1.0 - 1e-8


def test_cordes_violation_raises():
    # indefinite with positive trace: tr^2/|A|^2 - 1 = 0.25/1.25 - 1 < 0
    A = lambda x: np.broadcast_to(np.diag([1.0, -0.5]), np.asarray(x).shape[:-1] + (2, 2))
    with pytest.raises(CordesError):
        cordes_analyze(CoefficientField(A))


def test_lower_order_needs_lambda():
    fld = CoefficientField(lambda x: monoscale_matrix(x),
                           c=lambda x: np.ones(np.asarray(x).shape[:-1]), has_lower_order=True)
    with pytest.raises(ValueError):
        cordes_analyze(fld)
    rep = cordes_analyze(fld, lam=1.0)
    assert rep.case == "C2" and rep.lam == 1.0


def test_checkerboard_sign_pattern():
    eps = 2.0 ** -5
    A = builtin_field("checkerboard", eps)
    x = np.array([[0.5 * eps, 0.5 * eps], [1.5 * eps, 0.5 * eps]])
    np.testing.assert_allclose(A(x)[:, 0, 1], [1.0, -1.0])


def test_unknown_names():
    with pytest.raises(KeyError):
        builtin_field("nope")
    with pytest.raises(KeyError):
        builtin_rhs("nope")


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, 0.99).filter(lambda t: abs(t) > 1e-3))
def test_profile_derivatives_against_finite_differences(t):
    h = 1e-6
    assert abs(dg(t) - (g(t + h) - g(t - h)) / (2 * h)) < 1e-7
    assert abs(d2g(t) - (dg(t + h) - dg(t - h)) / (2 * h)) < 1e-7


def test_exact_solution_vanishes_on_boundary():
    s = np.linspace(-1, 1, 11)
    pts = np.concatenate([np.column_stack([s, -np.ones_like(s)]),
                          np.column_stack([np.ones_like(s), s])])
    np.testing.assert_allclose(MONOSCALE_EXACT.u(pts), 0.0, atol=1e-15)


def test_monoscale_rhs_is_operator_applied_to_exact():
    f, exact = builtin_rhs("monoscale_exact")
    x = np.array([[0.3, -0.7], [-0.2, -0.4]])
    expect = np.einsum("...ij,...ij->...", monoscale_matrix(x), exact.hess(x))
    np.testing.assert_allclose(f(x), expect)
    # sign(sin sin) = +1 in the first point's quadrant pair, -1 in the second's
    np.testing.assert_allclose(monoscale_matrix(x)[:, 0, 1], [-1.0, 1.0])
