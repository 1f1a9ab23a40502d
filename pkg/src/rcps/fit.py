"""Ridge-corrected penalized spline fitting of generalized additive models.

The estimator maximizes

    l(b) = n^-1 {y'Zb - 1'c(Zb)} + n^-1 1'h(y) - (2n)^-1 b'Q b - gamma/(2n) b'b

by Fisher scoring (iteratively reweighted penalized least squares) on the
full additive design ``Z = [Z_1 ... Z_D]``; no backfitting is involved.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import BasisSpec, CovariateNormalizer, design_matrix
from .errors import ConfigurationError, ConvergenceError, DataError, DomainError, NumericalError
from .family import FamilyModel
from .penalty import PenaltyConfig, penalty_block

logger = logging.getLogger(__name__)

MAX_HALVINGS = 20


class ExtrapolationWarning(UserWarning):
    """Prediction requested outside the range seen during fitting."""


@dataclass(frozen=True)
class GamSpec:
    """Family, per-covariate bases and penalty for one additive model."""

    family: FamilyModel
    bases: tuple
    penalty: PenaltyConfig
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        bases = tuple(self.bases)
        if len(bases) == 0:
            raise ConfigurationError("at least one covariate basis is required")
        if not all(isinstance(b, BasisSpec) for b in bases):
            raise ConfigurationError("bases must be BasisSpec instances")
        if len(self.penalty.lambdas) != len(bases):
            raise ConfigurationError(
                f"{len(bases)} covariates but {len(self.penalty.lambdas)} smoothing parameters"
            )
        order = self.penalty.order
        if order is not None and any(b.penalty_order != order for b in bases):
            raise ConfigurationError("penalty order disagrees with the basis penalty orders")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        object.__setattr__(self, "bases", bases)

    @property
    def n_covariates(self):
        return len(self.bases)

    @property
    def n_coef(self):
        return sum(b.n_basis for b in self.bases)

    @property
    def slices(self):
        out, start = [], 0
        for b in self.bases:
            out.append(slice(start, start + b.n_basis))
            start += b.n_basis
        return out

    def replace(self, **changes):
        fields = dict(family=self.family, bases=self.bases, penalty=self.penalty,
                      max_iter=self.max_iter, tol=self.tol)
        fields.update(changes)
        return GamSpec(**fields)

    def to_dict(self):
        return {
            "family": self.family.to_dict(),
            "bases": [{"degree": b.degree, "knot_count": b.knot_count,
                       "penalty_order": b.penalty_order} for b in self.bases],
            "lambdas": list(self.penalty.lambdas),
            "ridge": self.penalty.ridge,
            "max_iter": self.max_iter,
            "tol": self.tol,
        }


def make_spec(family, n_covariates, degree=3, knot_count=10, penalty_order=2,
              lambdas=1.0, ridge=1e-6, **kwargs):
    """Convenience constructor with a common basis for every covariate."""
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (n_covariates,))
    basis = BasisSpec(degree, knot_count, penalty_order)
    return GamSpec(family, (basis,) * n_covariates, PenaltyConfig(tuple(lam), ridge), **kwargs)


def penalty_matrix(spec):
    """``Q_m(lambda)``: block-diagonal ``lambda_j Delta_m' Delta_m``."""
    blocks = [lam * penalty_block(b.penalty_order, b.n_basis)
              for lam, b in zip(spec.penalty.lambdas, spec.bases)]
    return linalg.block_diag(*blocks)


def _as_table(X, D=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if D in (None, 1) else X[None, :]
    if X.ndim != 2:
        raise DataError("covariates must form an n x D table")
    if D is not None and X.shape[1] != D:
        raise DataError(f"expected {D} covariate columns, got {X.shape[1]}")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"missing or non-finite covariate at row {i}, column {j}")
    return X


def normalize_covariates(X, normalizers=None):
    """Map raw covariates onto [0, 1]; builds min-max normalizers if absent."""
    X = _as_table(X)
    if normalizers is None:
        try:
            normalizers = tuple(CovariateNormalizer.from_data(X[:, j]) for j in range(X.shape[1]))
        except DomainError as exc:
            raise DataError(f"constant covariate cannot be normalized: {exc}") from exc
    if len(normalizers) != X.shape[1]:
        raise DataError("one normalizer per covariate is required")
    U = np.column_stack([nz.transform(X[:, j]) for j, nz in enumerate(normalizers)])
    return U, tuple(normalizers)


def assemble_design(bases, U, extrapolate=False):
    """Concatenate per-covariate design matrices of unit-scaled covariates ``U``."""
    U = _as_table(U, len(bases))
    return np.hstack([design_matrix(b, U[:, j], extrapolate=extrapolate)
                      for j, b in enumerate(bases)])


class _Problem:
    """Objective, score and Fisher step for fixed data and penalty."""

    def __init__(self, spec, Z, y):
        self.spec = spec
        self.family = spec.family
        self.Z = np.asarray(Z, dtype=float)
        self.y = self.family.check_y(y)
        self.n, self.P = self.Z.shape
        if self.y.shape != (self.n,):
            raise DataError(f"response has shape {self.y.shape}, expected ({self.n},)")
        if self.P != spec.n_coef:
            raise DataError(f"design has {self.P} columns, spec expects {spec.n_coef}")
        self.Q = penalty_matrix(spec)
        self.gamma = spec.penalty.ridge
        self.h_sum = float(np.sum(self.family.h(self.y)))

    def eta(self, b):
        eta = self.Z @ b
        try:
            return self.family.check_theta(eta)
        except DomainError as exc:
            raise NumericalError(f"natural parameter left the {self.family.name} domain: {exc}") from exc

    def loglik(self, b):
        eta = self.eta(b)
        ll = (self.y @ eta - np.sum(self.family.cumulant(eta)) + self.h_sum) / self.n
        pen = (b @ self.Q @ b + self.gamma * (b @ b)) / (2 * self.n)
        return float(ll - pen)

    def score(self, b):
        eta = self.eta(b)
        resid = self.y - self.family.d1(eta)
        return (self.Z.T @ resid - self.Q @ b - self.gamma * b) / self.n

    def hessian(self, b):
        W = self.weights(b)
        ZW = self.Z * W[:, None]
        return -(self.Z.T @ ZW + self.Q + self.gamma * np.eye(self.P)) / self.n

    def weights(self, b):
        W = self.family.d2(self.eta(b))
        if not np.all(np.isfinite(W)) or np.any(W <= 0):
            raise NumericalError("working weights must be finite and strictly positive")
        return W

    def system(self, W):
        """``Z'WZ + Q + gamma I`` and its Cholesky factor."""
        ZWZ = self.Z.T @ (self.Z * W[:, None])
        A = ZWZ + self.Q + self.gamma * np.eye(self.P)
        try:
            cho = linalg.cho_factor(A, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(
                f"penalized information matrix is not positive definite: {exc}",
                condition=float(np.linalg.cond(A)),
            ) from exc
        return ZWZ, cho

    def step(self, b):
        eta = self.eta(b)
        W = self.weights(b)
        ZWZ, cho = self.system(W)
        # Z'W {Zb + W^-1 (y - mu)} without forming W^-1
        rhs = ZWZ @ b + self.Z.T @ (self.y - self.family.d1(eta))
        return linalg.cho_solve(cho, rhs)

    def working_init(self):
        """Penalized least squares of the linearized initial mean."""
        eta0 = self.family.link(self.family.init_mean(self.y))
        A = self.Z.T @ self.Z + self.Q + self.gamma * np.eye(self.P)
        try:
            return linalg.cho_solve(linalg.cho_factor(A, lower=True), self.Z.T @ eta0)
        except linalg.LinAlgError:
            return np.zeros(self.P)

    def safe_loglik(self, b):
        try:
            val = self.loglik(b)
        except NumericalError:
            return -np.inf
        return val if np.isfinite(val) else -np.inf


def penalized_loglik(b, spec, Z, y):
    """Ridge-corrected penalized log-likelihood (scaled by 1/n)."""
    return _Problem(spec, Z, y).loglik(np.asarray(b, dtype=float))


def score_and_hessian(b, spec, Z, y):
    """Gradient and Hessian of :func:`penalized_loglik` with respect to ``b``."""
    prob = _Problem(spec, Z, y)
    b = np.asarray(b, dtype=float)
    G, H = prob.score(b), prob.hessian(b)
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(H))):
        raise NumericalError("non-finite gradient or Hessian")
    return G, H


def fisher_step(b, spec, Z, y):
    """One Fisher-scoring update ``(Z'WZ + Q + gamma I)^-1 Z'W z``."""
    return _Problem(spec, Z, y).step(np.asarray(b, dtype=float))


@dataclass
class GamFit:
    """Converged ridge-corrected penalized spline fit.

    Component ``j`` is ``B(u_j)' coef_j - offsets[j]`` with ``u_j`` the
    normalized covariate; the offsets sum to ``intercept``.
    """

    spec: GamSpec
    coef: np.ndarray
    offsets: np.ndarray
    intercept: float
    normalizers: tuple
    n_iter: int
    grad_norm: float
    converged: bool
    weights: np.ndarray
    objective: float
    edf: float
    deviance: float
    gcv: float
    design: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    unit_x: np.ndarray = field(repr=False)
    history: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def blocks(self):
        return [self.coef[s] for s in self.spec.slices]

    def block(self, j):
        return self.coef[self.spec.slices[j]]

    def design_block(self, j):
        return self.design[:, self.spec.slices[j]]

    @property
    def eta(self):
        return self.design @ self.coef

    @property
    def mean(self):
        return self.spec.family.d1(self.eta)

    def component_unit(self, j, u, centered=True):
        """Component ``j`` at normalized coordinates ``u``."""
        B = design_matrix(self.spec.bases[j], np.atleast_1d(u), extrapolate=True)
        val = B @ self.block(j)
        return val - self.offsets[j] if centered else val

    def summary(self):
        return {
            "spec": self.spec.to_dict(),
            "coefficients": [blk.tolist() for blk in self.blocks],
            "offsets": self.offsets.tolist(),
            "intercept": self.intercept,
            "normalizers": [[nz.lo, nz.hi] for nz in self.normalizers],
            "iterations": self.n_iter,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "objective": self.objective,
            "edf": self.edf,
            "deviance": self.deviance,
            "gcv": self.gcv,
            "n": self.n,
        }


def _check_assumptions(spec, n):
    if spec.n_coef >= n:
        raise ConfigurationError(
            f"sum of basis sizes ({spec.n_coef}) must be smaller than n ({n})"
        )
    if not spec.penalty.ridge > 0:
        raise ConfigurationError("ridge parameter must be strictly positive")


def _iterate(prob, spec):
    b = prob.working_init()
    zero = np.zeros(prob.P)
    obj = prob.safe_loglik(b)
    obj0 = prob.loglik(zero)
    if obj0 >= obj:
        b, obj = zero, obj0
    history = [obj]
    grad = prob.score(b)
    for it in range(1, spec.max_iter + 1):
        proposal = prob.step(b)
        new_obj = prob.safe_loglik(proposal)
        halvings = 0
        slack = 1e-13 * (1.0 + abs(obj))
        while new_obj < obj - slack and halvings < MAX_HALVINGS:
            proposal = 0.5 * (b + proposal)
            new_obj = prob.safe_loglik(proposal)
            halvings += 1
        if new_obj < obj - slack:
            raise ConvergenceError(
                f"step-halving failed to increase the objective at iteration {it}",
                coef=b, grad_norm=float(np.max(np.abs(grad))),
            )
        change = float(np.max(np.abs(proposal - b)))
        b, obj = proposal, new_obj
        history.append(obj)
        grad = prob.score(b)
        gnorm = float(np.max(np.abs(grad)))
        if change < spec.tol or gnorm < spec.tol:
            return b, it, gnorm, history
    raise ConvergenceError(
        f"no convergence after {spec.max_iter} iterations (gradient max-norm {gnorm:.3g})",
        coef=b, grad_norm=gnorm,
    )


def fit_rcps(spec, X, y, normalizers=None):
    """Fit the ridge-corrected penalized spline GAM by Fisher scoring.

    Parameters
    ----------
    spec : GamSpec
    X : array-like, shape (n, D)
        Raw covariates.
    y : array-like, shape (n,)
        Response on the family's support.
    normalizers : sequence of CovariateNormalizer, optional
        Maps from raw covariates to [0, 1]. Min-max maps of ``X`` by default;
        pass identity normalizers when ``X`` already lives on the unit cube.

    Returns
    -------
    GamFit

    Raises
    ------
    ConfigurationError
        If ``sum_j (K_j + p_j) >= n`` or the ridge is not positive.
    ConvergenceError
        If ``max_iter`` iterations do not reach the tolerance.
    """
    U, normalizers = normalize_covariates(X, normalizers)
    if U.shape[1] != spec.n_covariates:
        raise DataError(f"spec has {spec.n_covariates} covariates, data has {U.shape[1]}")
    _check_assumptions(spec, U.shape[0])
    Z = assemble_design(spec.bases, U, extrapolate=True)
    prob = _Problem(spec, Z, y)
    b, n_iter, gnorm, history = _iterate(prob, spec)
    return _finalize(prob, spec, b, n_iter, gnorm, history, normalizers, U)


def _finalize(prob, spec, b, n_iter, gnorm, history, normalizers, U):
    W = prob.weights(b)
    ZWZ, cho = prob.system(W)
    edf = float(np.trace(linalg.cho_solve(cho, ZWZ)))
    mu = prob.family.d1(prob.Z @ b)
    dev = prob.family.deviance(prob.y, mu)
    n = prob.n
    gcv = n * dev / (n - edf) ** 2 if edf < n else np.inf
    offsets = np.array([np.mean(prob.Z[:, s] @ b[s]) for s in spec.slices])
    return GamFit(
        spec=spec, coef=b, offsets=offsets, intercept=float(offsets.sum()),
        normalizers=tuple(normalizers), n_iter=n_iter, grad_norm=gnorm, converged=True,
        weights=W, objective=history[-1], edf=edf, deviance=dev, gcv=float(gcv),
        design=prob.Z, y=prob.y, unit_x=U, history=history,
    )


def predict(fit, X, which="all", scale="link"):
    """Evaluate a fitted model at raw covariate values.

    Parameters
    ----------
    fit : GamFit
    X : array-like
        ``(n, D)`` table or a single D-vector.  When ``which`` is a component
        index a plain vector of that covariate's values is accepted as well.
    which : {"all"} or int
        Total predictor or the centered component ``j``.
    scale : {"link", "response"}
        ``"response"`` applies the inverse link ``c'`` to the total predictor.
    """
    D = fit.spec.n_covariates
    if which != "all":
        j = int(which)
        x = np.asarray(X, dtype=float)
        if x.ndim == 2 and x.shape[1] == D:
            x = x[:, j]
        elif x.ndim == 1 and D > 1 and x.size == D:
            x = x[j:j + 1]
        x = np.atleast_1d(x).ravel()
        u = fit.normalizers[j].transform(x)
        _warn_outside(u)
        return fit.component_unit(j, u)
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1 and D > 1 or X.ndim == 0
    X = _as_table(np.atleast_1d(X), D)
    U = np.column_stack([nz.transform(X[:, j]) for j, nz in enumerate(fit.normalizers)])
    _warn_outside(U)
    eta = assemble_design(fit.spec.bases, U, extrapolate=True) @ fit.coef
    if scale == "response":
        eta = fit.spec.family.d1(eta)
    elif scale != "link":
        raise DomainError(f"scale must be 'link' or 'response', got {scale!r}")
    return eta[0] if single else eta


def _warn_outside(U):
    if np.any(U < 0) or np.any(U > 1):
        warnings.warn("prediction outside the fitted covariate range; extrapolating",
                      ExtrapolationWarning, stacklevel=3)


def gcv_score(fit):
    """``n * deviance / (n - edf)^2`` of a converged fit."""
    return fit.gcv


def _lambda_candidates(lambda_grid, D, shared):
    grids = lambda_grid
    if np.ndim(lambda_grid) == 1 or np.isscalar(lambda_grid):
        grids = [np.atleast_1d(lambda_grid)] * D
    grids = [np.atleast_1d(np.asarray(g, dtype=float)) for g in grids]
    if len(grids) != D:
        raise ConfigurationError(f"need {D} lambda grids, got {len(grids)}")
    if any(g.size == 0 for g in grids):
        raise ConfigurationError("lambda grids must be nonempty")
    if shared:
        return [(lam,) * D for lam in grids[0]]
    return list(itertools.product(*grids))


def gcv_search(X, y, family, knot_counts, lambda_grid, degree=3, penalty_order=2,
               ridge=1e-6, shared_lambda=False, normalizers=None, max_iter=100, tol=1e-8):
    """Fit every ``(K, lambdas)`` candidate and return ``[(spec, gcv or inf)]``.

    ``lambda_grid`` is either one grid applied to every covariate or a list of
    per-covariate grids; candidates form their Cartesian product, or with
    ``shared_lambda`` a single common value per candidate.
    """
    U, normalizers = normalize_covariates(X, normalizers)
    D = U.shape[1]
    knot_counts = list(np.atleast_1d(knot_counts))
    if not knot_counts:
        raise ConfigurationError("knot grid must be nonempty")
    lam_cands = _lambda_candidates(lambda_grid, D, shared_lambda)
    out = []
    for K in knot_counts:
        basis = BasisSpec(degree, int(K), penalty_order)
        for lams in lam_cands:
            spec = GamSpec(family, (basis,) * D, PenaltyConfig(lams, ridge), max_iter, tol)
            try:
                score = fit_rcps(spec, U, y, normalizers=_unit_normalizers(D)).gcv
            except ConfigurationError:
                raise
            except (ConvergenceError, NumericalError) as exc:
                logger.info("GCV candidate K=%s lambdas=%s failed: %s", K, lams, exc)
                score = np.inf
            out.append((spec, float(score)))
    return out


def _unit_normalizers(D):
    return tuple(CovariateNormalizer.identity() for _ in range(D))


def gcv_select(X, y, family, knot_counts, lambda_grid, **kwargs):
    """Candidate minimizing GCV; ties go to larger smoothing then fewer knots.

    Accepts the same keyword arguments as :func:`gcv_search`.
    """
    results = gcv_search(X, y, family, knot_counts, lambda_grid, **kwargs)
    finite = [(s, g) for s, g in results if np.isfinite(g)]
    if not finite:
        raise ConvergenceError("no GCV candidate converged")
    best = min(g for _, g in finite)
    tied = [s for s, g in finite if g <= best * (1 + 1e-10) + 1e-300]
    tied.sort(key=lambda s: (-sum(np.log(np.maximum(s.penalty.lambdas, 1e-300))),
                             s.bases[0].knot_count))
    return tied[0]
