"""Plug-in asymptotic bias, variance and pointwise intervals for fitted components.

All locations are normalized covariate coordinates ``u`` in [0, 1]; the
knots of every basis live on that scale.
"""

import logging
from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .basis import BasisSpec, bernoulli_poly, curve_derivative_coeffs, design_matrix
from .errors import ConvergenceError, DomainError, NumericalError
from .fit import GamSpec, _unit_normalizers, fit_rcps
from .penalty import PenaltyConfig, penalty_block

logger = logging.getLogger(__name__)

JITTER = 1e-12
PILOT_LAMBDA_GRID = np.logspace(-2, 4, 7)


@dataclass(frozen=True)
class GammaHat:
    """``n^-1 (Z_j' W Z_j + lam Delta' Delta)`` and its ``lam = 0`` version."""

    at_lambda: np.ndarray
    at_zero: np.ndarray
    lam: float


@dataclass
class InferenceBand:
    """Pointwise band for one component on a grid of normalized points."""

    j: int
    grid: np.ndarray
    x: np.ndarray
    eta_hat: np.ndarray
    bias_a: np.ndarray
    bias_lambda: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lower2se: np.ndarray
    upper2se: np.ndarray
    alpha: float
    z: float

    @property
    def center(self):
        return self.eta_hat - self.bias_a - self.bias_lambda

    def as_columns(self):
        return {
            "x": self.x, "u": self.grid, "eta_hat": self.eta_hat, "bias_a": self.bias_a,
            "bias_lambda": self.bias_lambda, "se": self.se, "lower": self.lower,
            "upper": self.upper, "lower2se": self.lower2se, "upper2se": self.upper2se,
        }


def spd_solve(A, B):
    """Solve ``A X = B`` for symmetric positive definite ``A``.

    Retries once with ``1e-12`` added to the diagonal before giving up.
    """
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True), B)
    except linalg.LinAlgError:
        logger.warning("Cholesky failed; retrying with diagonal jitter %g", JITTER)
    try:
        return linalg.cho_solve(linalg.cho_factor(A + JITTER * np.eye(A.shape[0]), lower=True), B)
    except linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite even with jitter",
                             condition=float(np.linalg.cond(A))) from exc


def _lambda(fit, j, lam):
    return fit.spec.penalty.lambdas[j] if lam is None else float(lam)


def gamma_hat(fit, j, lam=None):
    """Plug-in ``Gamma_j(lam)`` and ``Gamma_j(0)`` with ``W = diag c''(Z b)``."""
    lam = _lambda(fit, j, lam)
    Zj = fit.design_block(j)
    basis = fit.spec.bases[j]
    G0 = Zj.T @ (Zj * fit.weights[:, None]) / fit.n
    Gl = G0 + lam * penalty_block(basis.penalty_order, basis.n_basis) / fit.n
    return GammaHat(Gl, G0, lam)


def variance_hat(fit, j, u, lam=None):
    """Sandwich variance ``n^-1 B' Gl^-1 G0 Gl^-1 B`` of component ``j`` at ``u``.

    Returns
    -------
    var : numpy.ndarray
        Conditional variance on the original scale.
    psi : numpy.ndarray
        The same quantity times ``n / K``.
    """
    gh = gamma_hat(fit, j, lam)
    B = design_matrix(fit.spec.bases[j], np.atleast_1d(u), extrapolate=True)
    S = spd_solve(gh.at_lambda, B.T)
    var = np.einsum("ij,ij->j", S, gh.at_zero @ S) / fit.n
    psi = var * fit.n / fit.spec.bases[j].knot_count
    return var, psi


def bias_lambda(fit, j, u, lam=None):
    """Shrinkage bias ``-(lam/n) B' Gl^-1 Delta' Delta b_j`` at ``u``."""
    gh = gamma_hat(fit, j, lam)
    basis = fit.spec.bases[j]
    if gh.lam == 0:
        return np.zeros(np.atleast_1d(u).shape)
    B = design_matrix(basis, np.atleast_1d(u), extrapolate=True)
    rough = penalty_block(basis.penalty_order, basis.n_basis) @ fit.block(j)
    return -(gh.lam / fit.n) * (B @ spd_solve(gh.at_lambda, rough))


def pilot_fit(fit, lambda_grid=PILOT_LAMBDA_GRID, extra_degree=2):
    """Refit every component with degree ``p + extra_degree`` and GCV-chosen smoothing.

    A single smoothing parameter shared by all covariates is searched over
    ``lambda_grid``; knots and penalty orders are kept.
    """
    spec = fit.spec
    bases = tuple(BasisSpec(b.degree + extra_degree, b.knot_count, b.penalty_order)
                  for b in spec.bases)
    D = spec.n_covariates
    norms = _unit_normalizers(D)
    best = None
    for lam in np.atleast_1d(lambda_grid):
        cand = GamSpec(spec.family, bases, PenaltyConfig((float(lam),) * D, spec.penalty.ridge),
                       spec.max_iter, spec.tol)
        try:
            pf = fit_rcps(cand, fit.unit_x, fit.y, normalizers=norms)
        except (ConvergenceError, NumericalError) as exc:
            logger.info("pilot candidate lambda=%g failed: %s", lam, exc)
            continue
        # ties go to the larger lambda
        if best is None or pf.gcv <= best.gcv:
            best = pf
    if best is None:
        raise ConvergenceError("no pilot candidate converged")
    return best


def pilot_derivative(pilot, j, order=None):
    """Callable ``u -> d^order/du^order`` of pilot component ``j``.

    ``order`` defaults to the degree of the main fit plus one, i.e. the pilot
    degree minus one.
    """
    basis = pilot.spec.bases[j]
    if order is None:
        order = basis.degree - 1
    dspec, coefs = curve_derivative_coeffs(basis, pilot.block(j), order)

    def deriv(u):
        return design_matrix(dspec, np.atleast_1d(u), extrapolate=True) @ coefs

    return deriv


def bias_a(derivative, basis, u):
    """Spline approximation bias at ``u``.

    Parameters
    ----------
    derivative : callable or array-like
        Values of the ``(p+1)``-th derivative of the component at ``u``, or a
        function producing them.
    basis : BasisSpec
        Basis of the main fit (degree ``p``, ``K`` intervals).
    u : array-like
        Normalized points.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = derivative(u) if callable(derivative) else np.broadcast_to(np.asarray(derivative, float), u.shape)
    p, K = basis.degree, basis.knot_count
    t = basis.knots
    # same right-closed interval convention as the basis
    s = np.searchsorted(t, u, side="left") - 1
    s = np.where(u == t[p], p, s)
    s = np.clip(s, p, K + p - 1)
    pos = (u - t[s]) * K
    return -d / (K ** (p + 1) * factorial(p + 1)) * bernoulli_poly(p + 1, pos)


def default_grid(basis, size=200):
    K = basis.knot_count
    if K < 3:
        return np.linspace(0.0, 1.0, size + 2)[1:-1]
    return np.linspace(1.0 / K, 1.0 - 1.0 / K, size)


def confidence_interval(fit, j, grid=None, alpha=0.05, pilot=None):
    """Bias-corrected pointwise band for component ``j``.

    The band is centered at ``eta_hat - bias_a - bias_lambda`` with half-width
    ``z_{alpha/2} * se``; ``lower2se``/``upper2se`` give the uncorrected
    ``eta_hat -/+ 2 se`` band.  A pilot fit is computed when not supplied.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    basis = fit.spec.bases[j]
    grid = default_grid(basis) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    if pilot is None:
        pilot = pilot_fit(fit)
    eta = fit.component_unit(j, grid)
    ba = bias_a(pilot_derivative(pilot, j, basis.degree + 1), basis, grid)
    bl = bias_lambda(fit, j, grid)
    var, _ = variance_hat(fit, j, grid)
    se = np.sqrt(var)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    center = eta - ba - bl
    return InferenceBand(
        j=j, grid=grid, x=fit.normalizers[j].inverse(grid), eta_hat=eta, bias_a=ba,
        bias_lambda=bl, se=se, lower=center - z * se, upper=center + z * se,
        lower2se=eta - 2 * se, upper2se=eta + 2 * se, alpha=alpha, z=z,
    )


def partial_residuals(fit, j):
    """``eta_j(x_ij) + (y_i - c'(eta_i)) / W_ii`` for every training row."""
    W = fit.weights
    if np.any(~np.isfinite(W)) or np.any(W <= 0):
        raise NumericalError("working weights must be positive for partial residuals")
    comp = fit.design_block(j) @ fit.block(j) - fit.offsets[j]
    return comp + (fit.y - fit.mean) / W
