"""Mixed-model (PQL) version of the penalized spline GAM.

Each component is a degree-p truncated-power spline with fixed polynomial
part ``beta_j`` and random hinge coefficients ``u_j ~ N(0, sigma_j^2 I)``.
For given variance components the PQL criterion is maximized through the
B-spline parameterization ``theta_j = L_j b_j``: the criterion becomes the
penalized log-likelihood with difference order ``p + 1`` and smoothing
``lambda_j = K^{2p} / sigma_j^2``.  The truncated-power normal equations are
never solved directly.

With hinge terms ``(x - kappa)_+^p`` the exact identity through ``L`` is
``theta' Theta theta = K^{2p} / (p!)^2 * b' Q_{p+1} b``; the criterion here
uses ``K^{2p}`` as written, so the implied hinge variance is
``sigma_j^2 / (p!)^2``.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .basis import BasisSpec, change_of_basis, design_matrix, truncated_power_matrix
from .errors import ConfigurationError, DomainError
from .fit import GamSpec, _Problem, fit_rcps
from .inference import spd_solve
from .penalty import PenaltyConfig, penalty_block

DEFAULT_RIDGE_TILDE = 1e-8
_ESTIMATION_REQUESTS = {"reml", "ml", "estimate", "auto"}


@dataclass(frozen=True)
class MixedSpec:
    """Degree, knots and variance components of the PQL model."""

    family: object
    sigma2: tuple
    degree: int = 3
    knot_count: int = 10
    ridge_tilde: float = DEFAULT_RIDGE_TILDE
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        s2 = self.sigma2
        if s2 is None or (isinstance(s2, str) and s2.lower() in _ESTIMATION_REQUESTS):
            raise ConfigurationError(
                "variance components must be supplied; REML/ML estimation is out of scope"
            )
        s2 = tuple(float(v) for v in np.atleast_1d(s2))
        if not s2 or any(not (np.isfinite(v) and v > 0) for v in s2):
            raise ConfigurationError(f"sigma2 must be finite and positive, got {s2}")
        if self.ridge_tilde < 0:
            raise ConfigurationError("ridge_tilde must be >= 0")
        object.__setattr__(self, "sigma2", s2)

    @property
    def lambdas(self):
        K, p = self.knot_count, self.degree
        return tuple(K ** (2 * p) / s2 for s2 in self.sigma2)

    def basis(self):
        return BasisSpec(self.degree, self.knot_count, self.degree + 1)

    def to_gam_spec(self):
        """Equivalent ridge-corrected spec: ``m = p + 1``, ``lambda = K^{2p}/sigma^2``."""
        basis = self.basis()
        return GamSpec(
            self.family, (basis,) * len(self.sigma2),
            PenaltyConfig(self.lambdas, self.ridge_tilde, order=self.degree + 1),
            self.max_iter, self.tol,
        )


@dataclass
class PqlFit:
    """PQL fit in both parameterizations."""

    mspec: MixedSpec
    gam: object
    theta: list
    change_of_basis: list = field(repr=False)
    conditions: list = field(default_factory=list)
    equivalence_residual: float = np.nan

    @property
    def fixed(self):
        return [th[: self.mspec.degree + 1] for th in self.theta]

    @property
    def random(self):
        return [th[self.mspec.degree + 1:] for th in self.theta]

    @property
    def blocks(self):
        return self.gam.blocks

    def curve_truncated(self, j, u):
        S = truncated_power_matrix(self.mspec.degree, self.mspec.knot_count, u)
        return S @ self.theta[j]

    def curve_bspline(self, j, u):
        return design_matrix(self.mspec.basis(), u) @ self.gam.block(j)

    def summary(self):
        out = self.gam.summary()
        out.update({
            "sigma2": list(self.mspec.sigma2),
            "ridge_tilde": self.mspec.ridge_tilde,
            "fixed_effects": [b.tolist() for b in self.fixed],
            "random_effects": [u.tolist() for u in self.random],
            "change_of_basis_condition": self.conditions,
            "equivalence_residual": self.equivalence_residual,
        })
        return out


def pql_objective(b, mspec, Z, y):
    """``n^-1 {y'Zb - 1'c(Zb) + 1'h(y)} - K^{2p}/(2n) b'Q_{p+1}(Sigma_u) b - ridge``.

    The ``Sigma_u``-only constant is dropped.  The ``h(y)`` term and the
    ``ridge_tilde`` regularizer are kept so the value coincides with the
    ridge-corrected criterion of :meth:`MixedSpec.to_gam_spec`.
    """
    return _Problem(mspec.to_gam_spec(), Z, y).loglik(np.asarray(b, dtype=float))


def truncated_penalty(mspec, theta_blocks):
    """``theta' Theta theta`` with ``Theta_j = diag[0_{p+1}, sigma_j^-2 I]``."""
    q = mspec.degree + 1
    return float(sum(np.sum(th[q:] ** 2) / s2 for th, s2 in zip(theta_blocks, mspec.sigma2)))


def pql_fit(mspec, X, y, normalizers=None, grid_size=200):
    """Maximize the PQL criterion for fixed ``sigma2``.

    Returns
    -------
    PqlFit
        ``theta_j = L_j b_j`` split into fixed effects (length ``p+1``) and
        random effects (length ``K-1``), plus the max deviation between the two
        parameterizations on a ``grid_size`` grid.
    """
    gam = fit_rcps(mspec.to_gam_spec(), X, y, normalizers=normalizers)
    basis = mspec.basis()
    L, cond = change_of_basis(basis)
    thetas = [L @ gam.block(j) for j in range(len(mspec.sigma2))]
    pf = PqlFit(mspec, gam, thetas, [L] * len(thetas), [cond] * len(thetas))
    grid = np.linspace(0.0, 1.0, grid_size)
    pf.equivalence_residual = float(max(
        np.max(np.abs(pf.curve_truncated(j, grid) - pf.curve_bspline(j, grid)))
        for j in range(len(thetas))
    ))
    return pf


def _g_hat(fit, j):
    Zj = fit.design_block(j)
    return Zj.T @ (Zj * fit.weights[:, None]) / fit.n


def _scaled_penalty(mspec, j, n):
    K, p = mspec.knot_count, mspec.degree
    return K ** (2 * p) / (n * mspec.sigma2[j]) * penalty_block(p + 1, K + p)


def pql_bias_sigma(pfit, j, u):
    """``-(K^{2p}/(n sigma_j^2)) B' G^-1 Delta' Delta b_j`` with ``G = n^-1 Z_j'WZ_j``."""
    fit, mspec = pfit.gam, pfit.mspec
    if not np.isfinite(mspec.sigma2[j]):
        raise DomainError("sigma2 must be finite")
    B = design_matrix(mspec.basis(), np.atleast_1d(u), extrapolate=True)
    rough = _scaled_penalty(mspec, j, fit.n) @ fit.block(j)
    return -(B @ spd_solve(_g_hat(fit, j), rough))


def pql_variance(pfit, j, u):
    """Sandwich variance with ``G + K^{2p}(n sigma_j^2)^-1 Delta' Delta``.

    Returns ``(var, psi)`` with ``psi = var * n / K``.
    """
    fit, mspec = pfit.gam, pfit.mspec
    G = _g_hat(fit, j)
    A = G + _scaled_penalty(mspec, j, fit.n)
    B = design_matrix(mspec.basis(), np.atleast_1d(u), extrapolate=True)
    S = spd_solve(A, B.T)
    var = np.einsum("ij,ij->j", S, G @ S) / fit.n
    return var, var * fit.n / mspec.knot_count


def penalty_identity_factor(p):
    """Ratio of ``theta' Theta theta`` to ``K^{2p} b' Q_{p+1} b``: ``1 / (p!)^2``."""
    return 1.0 / factorial(p) ** 2
