from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcps.basis import (
    BasisSpec,
    CovariateNormalizer,
    basis_vector,
    bernoulli_poly,
    bspline_eval,
    change_of_basis,
    curve_derivative_coeffs,
    design_matrix,
    truncated_power_matrix,
    truncated_power_vector,
)
from rcps.errors import DomainError


def cox_de_boor(p, K, k, x):
    """Textbook recursion on kappa_i = i/K with right-closed degree-0 pieces."""
    kap = lambda i: i / K  # noqa: E731
    if p == 0:
        return 1.0 if kap(k - 1) < x <= kap(k) else 0.0
    left = (x - kap(k - 1)) / (kap(k + p - 1) - kap(k - 1)) * cox_de_boor(p - 1, K, k, x)
    right = (kap(k + p) - x) / (kap(k + p) - kap(k)) * cox_de_boor(p - 1, K, k + 1, x)
    return left + right


def bernoulli_oracle(r):
    """Exact coefficients (ascending powers) of Br_r from Br_r' = r Br_{r-1}, zero mean."""
    coef = [Fraction(1)]
    for s in range(1, r + 1):
        integ = [Fraction(0)] + [s * c / (i + 1) for i, c in enumerate(coef)]
        mean = sum(c / (i + 1) for i, c in enumerate(integ))
        integ[0] -= mean
        coef = integ
    return coef


def poly_eval(coef, x):
    return float(sum(c * Fraction(x) ** i for i, c in enumerate(coef)))


# ---------------------------------------------------------------- BasisSpec

def test_knots_extend_uniformly():
    spec = BasisSpec(3, 5)
    assert spec.n_basis == 8
    assert spec.knot(-3) == pytest.approx(-0.6)
    assert spec.knot(8) == pytest.approx(1.6)
    assert spec.index_range == (-2, 5)


@pytest.mark.parametrize("kw", [dict(degree=-1), dict(knot_count=0),
                                dict(degree=1, knot_count=2, penalty_order=3)])
def test_spec_rejects_bad_values(kw):
    with pytest.raises(DomainError):
        BasisSpec(**kw)


def test_normalizer_round_trip():
    nz = CovariateNormalizer.from_data([3.0, 7.0, 5.0])
    assert nz.transform(5.0) == pytest.approx(0.5)
    assert nz.inverse(nz.transform(6.2)) == pytest.approx(6.2)
    with pytest.raises(DomainError):
        CovariateNormalizer.from_data([1.0, 1.0])


# ---------------------------------------------------------------- evaluation

def test_degree_zero_indicator():
    assert bspline_eval(BasisSpec(0, 2, 1), 1, 0.25) == 1.0
    assert bspline_eval(BasisSpec(0, 2, 1), 2, 0.25) == 0.0


def test_against_recursive_oracle_at_037():
    spec = BasisSpec(3, 5)
    assert bspline_eval(spec, 2, 0.37) == pytest.approx(cox_de_boor(3, 5, 2, 0.37), abs=1e-14)
    expected = [cox_de_boor(3, 5, k, 0.37) for k in range(-2, 6)]
    np.testing.assert_allclose(basis_vector(spec, 0.37), expected, atol=1e-14)


@pytest.mark.parametrize("p,K", [(0, 3), (1, 4), (2, 6), (3, 5), (4, 7)])
def test_design_matrix_matches_oracle_on_grid(p, K):
    xs = np.linspace(0.013, 1.0, 41)
    Z = design_matrix(BasisSpec(p, K, 1 if p + K > 1 else 1), xs)
    ref = np.array([[cox_de_boor(p, K, k, x) for k in range(-p + 1, K + 1)] for x in xs])
    np.testing.assert_allclose(Z, ref, atol=1e-13)


def test_hat_functions_at_a_knot():
    np.testing.assert_allclose(basis_vector(BasisSpec(1, 2, 1), 0.5), [0.0, 1.0, 0.0], atol=1e-15)


def test_zero_uses_right_limit():
    spec = BasisSpec(3, 5)
    v = basis_vector(spec, 0.0)
    assert v.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(v) <= 4
    np.testing.assert_allclose(v, basis_vector(spec, 1e-13), atol=1e-10)


def test_bad_inputs():
    spec = BasisSpec(3, 5)
    with pytest.raises(DomainError):
        bspline_eval(spec, 6, 0.5)
    with pytest.raises(DomainError):
        bspline_eval(spec, -3, 0.5)
    with pytest.raises(DomainError):
        basis_vector(spec, 1.2)
    with pytest.raises(DomainError):
        design_matrix(spec, [])
    with pytest.raises(DomainError):
        design_matrix(spec, [0.2, -0.1])


def test_design_matrix_single_row_and_sparsity():
    spec = BasisSpec(3, 10)
    np.testing.assert_array_equal(design_matrix(spec, [0.42])[0], basis_vector(spec, 0.42))
    xs = np.random.default_rng(0).random(50)
    Z = design_matrix(spec, xs)
    assert (np.count_nonzero(Z, axis=1) <= 4).all()
    np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-12)


def test_extrapolation_continues_boundary_piece():
    spec = BasisSpec(3, 4)
    b = np.random.default_rng(1).standard_normal(spec.n_basis)
    # the last polynomial piece, evaluated past 1, is a cubic in x: third differences constant
    xs = np.array([1.0, 1.05, 1.1, 1.15, 1.2])
    f = design_matrix(spec, xs, extrapolate=True) @ b
    d3 = np.diff(f, 3)
    assert d3[0] == pytest.approx(d3[1], rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(0, 5), K=st.integers(1, 12), x=st.floats(0.0, 1.0))
def test_partition_of_unity_nonnegative_local(p, K, x):
    spec = BasisSpec(p, K, 1 if K + p > 1 else 1) if K + p > 1 else None
    if spec is None:
        return
    v = basis_vector(spec, x)
    assert abs(v.sum() - 1.0) < 1e-12
    assert (v >= 0).all()
    assert np.count_nonzero(v) <= p + 1
    for idx, k in enumerate(range(-p + 1, K + 1)):
        lo, hi = (k - 1) / K, (k + p) / K
        if not (lo < x <= hi) and not (x == 0 and lo <= 0 < hi):
            assert v[idx] == 0.0


# ---------------------------------------------------------------- Bernoulli

def test_bernoulli_low_orders():
    assert bernoulli_poly(0, 0.7) == 1.0
    assert bernoulli_poly(1, 0.3) == pytest.approx(-0.2)
    assert bernoulli_poly(2, 0.5) == pytest.approx(-1.0 / 12.0)


def test_bernoulli_against_recurrence_oracle():
    assert bernoulli_poly(4, 0.2) == pytest.approx(poly_eval(bernoulli_oracle(4), 0.2), abs=1e-13)
    for r in range(7):
        xs = np.linspace(-0.5, 1.5, 9)
        np.testing.assert_allclose(bernoulli_poly(r, xs),
                                   [poly_eval(bernoulli_oracle(r), x) for x in xs], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-2.0, 2.0), r=st.integers(1, 6))
def test_bernoulli_shift_identity(x, r):
    assert bernoulli_poly(r, x + 1) - bernoulli_poly(r, x) == pytest.approx(
        r * x ** (r - 1), abs=1e-9)


# ---------------------------------------------------------------- derivatives

def test_derivative_of_constant_is_zero():
    spec = BasisSpec(3, 5)
    dspec, d = curve_derivative_coeffs(spec, np.full(spec.n_basis, 2.5), 2)
    assert dspec.degree == 1
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_first_derivative_matches_central_difference():
    spec = BasisSpec(3, 5)
    b = np.random.default_rng(2).standard_normal(spec.n_basis)
    dspec, d = curve_derivative_coeffs(spec, b, 1)
    h, x = 1e-5, 0.4
    fd = (basis_vector(spec, x + h) @ b - basis_vector(spec, x - h) @ b) / (2 * h)
    assert basis_vector(dspec, x) @ d == pytest.approx(fd, abs=1e-6)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_derivative_identity_at_50_points(m):
    spec = BasisSpec(3, 7)
    rng = np.random.default_rng(m)
    b = rng.standard_normal(spec.n_basis)
    dspec, d = curve_derivative_coeffs(spec, b, m)
    # m-th central difference, nudged off the knots so each stencil stays in one piece
    xs = np.linspace(0.05, 0.95, 50) + 1e-3
    h = {1: 1e-5, 2: 1e-3, 3: 2e-3}[m]
    curve = lambda x: design_matrix(spec, x) @ b  # noqa: E731
    if m == 1:
        fd = (curve(xs + h) - curve(xs - h)) / (2 * h)
    elif m == 2:
        fd = (curve(xs + h) - 2 * curve(xs) + curve(xs - h)) / h**2
    else:
        fd = (curve(xs + 2 * h) - 2 * curve(xs + h) + 2 * curve(xs - h) - curve(xs - 2 * h)) / (2 * h**3)
    got = design_matrix(dspec, xs) @ d
    inside = np.abs(xs * 7 - np.round(xs * 7)) > 3 * h * 7
    np.testing.assert_allclose(got[inside], fd[inside], atol=1e-5 * max(1.0, np.abs(got).max()))


def test_full_order_derivative_is_piecewise_constant():
    spec = BasisSpec(3, 5)
    b = np.random.default_rng(3).standard_normal(spec.n_basis)
    dspec, d = curve_derivative_coeffs(spec, b, 3)
    assert dspec.degree == 0
    xs = np.linspace(0.21, 0.39, 7)
    vals = design_matrix(dspec, xs) @ d
    np.testing.assert_allclose(vals, vals[0])


def test_derivative_order_checked():
    with pytest.raises(DomainError):
        curve_derivative_coeffs(BasisSpec(2, 5), np.zeros(7), 3)


# ---------------------------------------------------------------- truncated power

def test_truncated_power_examples():
    np.testing.assert_allclose(truncated_power_vector(3, 5, 0.0), [1, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(truncated_power_vector(1, 2, 0.75), [1, 0.75, 0.25])
    x = 0.9
    direct = [1, x, x**2, x**3] + [max(x - k / 5, 0) ** 3 for k in range(1, 5)]
    np.testing.assert_allclose(truncated_power_vector(3, 5, x), direct, atol=1e-15)


def test_change_of_basis_degree_zero_by_hand():
    # S = (1, 1{x > 0.5}); B_0 = 1{x <= 0.5}, B_1 = 1{x > 0.5} => L = [[1, 0], [-1, 1]]^-1 ... solved below
    spec = BasisSpec(0, 2, 1)
    L, _ = change_of_basis(spec)
    np.testing.assert_allclose(L, [[1.0, 0.0], [-1.0, 1.0]], atol=1e-14)
    for x in (0.25, 0.75):
        np.testing.assert_allclose(truncated_power_vector(0, 2, x) @ L, basis_vector(spec, x), atol=1e-15)


@pytest.mark.parametrize("p,K", [(0, 3), (1, 4), (2, 6), (3, 8), (3, 5), (4, 6)])
def test_change_of_basis_reproduces_bsplines(p, K):
    spec = BasisSpec(p, K, 1)
    L, cond = change_of_basis(spec)
    assert np.isfinite(cond)
    xs = np.linspace(0.0, 1.0, 200)
    dev = np.abs(design_matrix(spec, xs) - truncated_power_matrix(p, K, xs) @ L).max()
    assert dev < 1e-8


def test_constant_function_maps_to_first_unit_vector():
    spec = BasisSpec(3, 6)
    L, _ = change_of_basis(spec)
    theta = L @ np.ones(spec.n_basis)
    np.testing.assert_allclose(theta, np.eye(spec.n_basis)[0], atol=1e-9)
