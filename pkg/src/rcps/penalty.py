"""Difference penalties, block assembly and smoothing-parameter checks."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class PenaltyConfig:
    """Smoothing parameters ``lambdas`` (one per covariate) and ridge ``gamma``.

    ``order`` is the common difference order used by :func:`block_penalty`.
    Fits take the order from each covariate's ``BasisSpec`` instead, so it may
    be left as ``None`` there.
    """

    lambdas: tuple
    ridge: float = DEFAULT_RIDGE
    order: int | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if len(lam) == 0:
            raise DomainError("at least one smoothing parameter is required")
        if any(not np.isfinite(v) or v < 0 for v in lam):
            raise DomainError(f"smoothing parameters must be finite and >= 0, got {lam}")
        if not np.isfinite(self.ridge) or self.ridge < 0:
            raise DomainError(f"ridge must be >= 0, got {self.ridge}")
        if self.order is not None and self.order < 1:
            raise DomainError(f"penalty order must be >= 1, got {self.order}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "ridge", float(self.ridge))

    def ridge_is_small(self, knot_count, order=None):
        """Whether ``gamma`` is well below ``lambda_max * K^-m``."""
        m = order if order is not None else self.order
        scale = max(self.lambdas) * float(knot_count) ** (-m)
        return self.ridge < 0.1 * scale


def difference_matrix(m, c):
    """(c-m) x c matrix applying the m-th forward difference.

    >>> difference_matrix(1, 3)
    array([[-1.,  1.,  0.],
           [ 0., -1.,  1.]])
    """
    m, c = int(m), int(c)
    if m < 1:
        raise DomainError(f"difference order must be >= 1, got {m}")
    if c <= m:
        raise DomainError(f"need more coefficients than the difference order (c={c}, m={m})")
    return np.diff(np.eye(c), n=m, axis=0)


def penalty_block(m, c):
    D = difference_matrix(m, c)
    return D.T @ D


def block_penalty(cfg, c, D):
    """Block-diagonal ``diag[lambda_j Delta_m' Delta_m]`` of size Dc x Dc."""
    if len(cfg.lambdas) != D:
        raise DomainError(f"expected {D} smoothing parameters, got {len(cfg.lambdas)}")
    if cfg.order is None:
        raise DomainError("block_penalty needs PenaltyConfig.order")
    P = penalty_block(cfg.order, c)
    return linalg.block_diag(*[lam * P for lam in cfg.lambdas])


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    inverse_lambda: float
    max_eigenvalue: float


def lambda_admissible(Zj, lam, m):
    """Check ``1/lam > max eig of (Z'Z)^{-1/2} Delta' Delta (Z'Z)^{-1/2}``.

    The eigenvalue is computed as the largest generalized eigenvalue of the
    pencil ``(Delta' Delta, Z'Z)``, which has the same spectrum.

    Returns
    -------
    Admissibility
        Verdict plus both compared quantities.
    """
    Zj = np.asarray(Zj, dtype=float)
    G = Zj.T @ Zj
    P = penalty_block(m, Zj.shape[1])
    try:
        top = linalg.eigh(P, G, eigvals_only=True, subset_by_index=[G.shape[0] - 1, G.shape[0] - 1])
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Z'Z is not positive definite: {exc}", condition=np.linalg.cond(G)) from exc
    top = float(top[0])
    inv = np.inf if lam == 0 else 1.0 / lam
    ok = inv > top
    if not ok:
        logger.warning("lambda=%g outside the small-penalty regime (1/lambda=%g <= %g)", lam, inv, top)
    return Admissibility(bool(ok), float(inv), top)
