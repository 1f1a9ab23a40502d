"""B-spline and truncated-power bases on equidistant knots over [0, 1].

Basis functions are indexed as ``k = -p+1, ..., K`` with support
``(kappa_{k-1}, kappa_{k+p}]`` where ``kappa_k = k / K``.  Column ``i`` of a
design matrix holds the function with index ``k = i - p + 1``.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.special import bernoulli as _bernoulli_numbers

from .errors import DomainError, NumericalError

__all__ = [
    "BasisSpec",
    "CovariateNormalizer",
    "bspline_eval",
    "basis_vector",
    "design_matrix",
    "bernoulli_poly",
    "curve_derivative_coeffs",
    "truncated_power_vector",
    "truncated_power_matrix",
    "change_of_basis",
]

# collocation systems worse than this are refused
MAX_COLLOCATION_CONDITION = 1e12


@dataclass(frozen=True)
class BasisSpec:
    """Configuration of one covariate's B-spline basis.

    Parameters
    ----------
    degree : int
        Spline degree ``p >= 0``.
    knot_count : int
        Number of knot intervals ``K >= 1`` covering [0, 1].
    penalty_order : int
        Difference penalty order ``m`` with ``1 <= m < K + p``.
    """

    degree: int = 3
    knot_count: int = 10
    penalty_order: int = 2
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p, K, m = int(self.degree), int(self.knot_count), int(self.penalty_order)
        if p < 0:
            raise DomainError(f"degree must be >= 0, got {p}")
        if K < 1:
            raise DomainError(f"knot_count must be >= 1, got {K}")
        if not 1 <= m < K + p:
            raise DomainError(f"penalty_order must satisfy 1 <= m < K + p = {K + p}, got {m}")
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knot_count", K)
        object.__setattr__(self, "penalty_order", m)
        knots = np.arange(-p, K + p + 1) / K
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self):
        return self.knot_count + self.degree

    @property
    def index_range(self):
        """Inclusive range of basis indices ``(-p+1, K)``."""
        return -self.degree + 1, self.knot_count

    def knot(self, k):
        """Return ``kappa_k = k / K``."""
        return k / self.knot_count

    def with_degree(self, degree):
        m = min(self.penalty_order, self.knot_count + degree - 1)
        return BasisSpec(degree, self.knot_count, max(m, 1))


@dataclass(frozen=True)
class CovariateNormalizer:
    """Min-max map of a raw covariate onto [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not np.isfinite(self.lo) or not np.isfinite(self.hi) or not self.hi > self.lo:
            raise DomainError(f"normalizer needs finite hi > lo, got lo={self.lo}, hi={self.hi}")

    @classmethod
    def from_data(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(float(np.min(x)), float(np.max(x)))

    @classmethod
    def identity(cls):
        return cls(0.0, 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def inverse(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)


def _check_unit(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("basis evaluation points must be finite")
    if np.any(x < 0.0) or np.any(x > 1.0):
        bad = x[(x < 0.0) | (x > 1.0)].ravel()[0]
        raise DomainError(f"basis evaluation point {bad!r} outside [0, 1]")
    return x


def _local_basis(spec, x):
    """Nonzero degree-p basis values at each ``x``.

    Returns ``(first, values)`` where ``values[i, r]`` is the value of the
    function in design column ``first[i] + r`` for ``r = 0..p``.
    """
    p, K = spec.degree, spec.knot_count
    t = spec.knots
    x = np.atleast_1d(np.asarray(x, dtype=float))
    # t[s] < x <= t[s+1]: right-closed intervals as in the degree-0 base case
    s = np.searchsorted(t, x, side="left") - 1
    # x == 0 takes the limit from the right
    s = np.where(x == t[p], p, s)
    # outside [0, 1] the boundary polynomial pieces are continued
    s = np.clip(s, p, K + p - 1)
    n = x.shape[0]
    vals = np.zeros((n, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[s + 1 - j]
        right[:, j] = t[s + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return s - p, vals


def _scatter(spec, first, vals):
    n, c = vals.shape[0], spec.n_basis
    out = np.zeros((n, c))
    rows = np.arange(n)
    for r in range(vals.shape[1]):
        col = first + r
        ok = (col >= 0) & (col < c)
        out[rows[ok], col[ok]] = vals[ok, r]
    return out


def bspline_eval(spec, k, x):
    """Value of the single B-spline ``B_k^{[p]}`` at ``x``.

    Parameters
    ----------
    spec : BasisSpec
    k : int
        Basis index in ``-p+1, ..., K``.
    x : float
        Point in [0, 1].
    """
    lo, hi = spec.index_range
    if not lo <= k <= hi:
        raise DomainError(f"basis index {k} outside [{lo}, {hi}]")
    return float(basis_vector(spec, x)[k + spec.degree - 1])


def basis_vector(spec, x):
    """Vector ``(B_{-p+1}(x), ..., B_K(x))`` at a single point of [0, 1]."""
    x = _check_unit(x)
    if x.ndim != 0:
        raise DomainError("basis_vector takes a scalar; use design_matrix for arrays")
    first, vals = _local_basis(spec, x)
    return _scatter(spec, first, vals)[0]


def design_matrix(spec, xs, extrapolate=False):
    """n x (K+p) matrix whose rows are basis vectors at ``xs``.

    With ``extrapolate=True`` points outside [0, 1] are allowed and evaluated by
    continuing the boundary polynomial pieces.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size == 0:
        raise DomainError("design_matrix needs at least one point")
    if extrapolate:
        if not np.all(np.isfinite(xs)):
            raise DomainError("basis evaluation points must be finite")
    else:
        xs = _check_unit(xs)
    first, vals = _local_basis(spec, xs)
    return _scatter(spec, first, vals)


def bernoulli_poly(r, x):
    """Bernoulli polynomial ``Br_r(x)`` with ``Br_1(x) = x - 1/2``."""
    r = int(r)
    if r < 0:
        raise DomainError(f"Bernoulli polynomial order must be >= 0, got {r}")
    x = np.asarray(x, dtype=float)
    numbers = _bernoulli_numbers(r) if r > 0 else np.array([1.0])
    out = np.zeros_like(x)
    for k in range(r + 1):
        out = out + comb(r, k) * numbers[k] * x ** (r - k)
    return out if out.ndim else float(out)


def curve_derivative_coeffs(spec, b, m):
    """Coefficients of the m-th derivative of ``x -> B(x)' b``.

    Returns the degree ``p - m`` spec on the same knots and ``K^m Delta_m b``.
    """
    m = int(m)
    if m < 1 or m > spec.degree:
        raise DomainError(f"derivative order must be in [1, {spec.degree}], got {m}")
    b = np.asarray(b, dtype=float)
    if b.shape != (spec.n_basis,):
        raise DomainError(f"coefficient vector must have length {spec.n_basis}")
    coefs = spec.knot_count ** m * np.diff(b, n=m)
    return spec.with_degree(spec.degree - m), coefs


def truncated_power_matrix(p, K, xs):
    """Rows ``(1, x, ..., x^p, (x-kappa_1)_+^p, ..., (x-kappa_{K-1})_+^p)``."""
    xs = np.asarray(xs, dtype=float).ravel()
    poly = xs[:, None] ** np.arange(p + 1)
    kappa = np.arange(1, K) / K
    if p == 0:
        # right-closed steps, matching the degree-0 B-splines
        hinge = (xs[:, None] > kappa[None, :]).astype(float)
    else:
        hinge = np.clip(xs[:, None] - kappa[None, :], 0.0, None) ** p
    return np.hstack([poly, hinge])


def truncated_power_vector(p, K, x):
    """Truncated-power basis vector of length ``K + p`` at ``x`` in [0, 1]."""
    x = _check_unit(x)
    return truncated_power_matrix(p, K, np.atleast_1d(x))[0]


def change_of_basis(spec):
    """Matrix ``L`` with ``B(x)' = S(x)' L`` for all x in [0, 1].

    ``L`` is obtained by collocation at ``K + p`` equispaced interior points,
    which interlace the B-spline supports so the system is nonsingular.

    Returns
    -------
    L : numpy.ndarray, shape (K+p, K+p)
    condition : float
        2-norm condition number of the truncated-power collocation matrix.
    """
    c = spec.n_basis
    pts = (np.arange(c) + 0.5) / c
    S = truncated_power_matrix(spec.degree, spec.knot_count, pts)
    Z = design_matrix(spec, pts)
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > MAX_COLLOCATION_CONDITION:
        raise NumericalError(
            f"collocation system for change of basis is ill-conditioned (cond={cond:.3g})",
            condition=cond,
        )
    L = np.linalg.solve(S, Z)
    return L, cond
