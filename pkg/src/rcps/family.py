"""Canonical-link exponential families with unit dispersion.

Each family is written as ``log f(y | theta) = y theta - c(theta) + h(y)``,
so ``c'`` is the inverse link and ``c''`` the variance function.
"""

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .errors import DataError, DomainError

__all__ = ["FamilyModel", "Gaussian", "Bernoulli", "Poisson", "Gamma", "get_family"]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class FamilyModel:
    """Base class; subclasses supply the cumulant ``c`` and its derivatives."""

    name = "family"

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self.name}: natural parameter must be finite")
        return theta

    def check_y(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DataError(f"{self.name}: response contains non-finite values")
        return y

    def cumulant(self, theta):
        raise NotImplementedError

    def d1(self, theta):
        raise NotImplementedError

    def d2(self, theta):
        raise NotImplementedError

    def d3(self, theta):
        raise NotImplementedError

    def h(self, y):
        raise NotImplementedError

    def mean(self, theta):
        return self.d1(theta)

    def variance(self, theta):
        return self.d2(theta)

    def link(self, mu):
        """Canonical link, the inverse of ``c'``."""
        raise NotImplementedError

    def log_density(self, y, theta):
        try:
            y = self.check_y(y)
        except DataError as exc:
            raise DomainError(str(exc)) from None
        theta = self.check_theta(theta)
        return y * theta - self.cumulant(theta) + self.h(y)

    def unit_deviance(self, y, mu):
        raise NotImplementedError

    def deviance(self, y, mu):
        return float(np.sum(self.unit_deviance(np.asarray(y, float), np.asarray(mu, float))))

    def init_mean(self, y):
        """Starting mean for the working-response initializer."""
        y = np.asarray(y, dtype=float)
        return 0.5 * (y + y.mean())

    def sample(self, theta, rng):
        raise NotImplementedError

    def to_dict(self):
        return {"name": self.name}

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(sorted(self.to_dict().items())))


class Gaussian(FamilyModel):
    name = "gaussian"

    def cumulant(self, theta):
        return 0.5 * np.square(theta)

    def d1(self, theta):
        return np.asarray(theta, dtype=float) * 1.0

    def d2(self, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def d3(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def h(self, y):
        return -0.5 * np.square(y) - _LOG_SQRT_2PI

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def unit_deviance(self, y, mu):
        return np.square(y - mu)

    def init_mean(self, y):
        return np.asarray(y, dtype=float)

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return theta + rng.standard_normal(theta.shape)


class Bernoulli(FamilyModel):
    name = "bernoulli"

    def check_y(self, y):
        y = super().check_y(y)
        if np.any((y != 0) & (y != 1)):
            raise DataError("bernoulli: response must be 0 or 1")
        return y

    def cumulant(self, theta):
        return np.logaddexp(0.0, theta)

    def d1(self, theta):
        return expit(theta)

    def d2(self, theta):
        # product form stays positive far into the tails
        return expit(theta) * expit(-np.asarray(theta, dtype=float))

    def d3(self, theta):
        mu = expit(theta)
        return self.d2(theta) * (1.0 - 2.0 * mu)

    def h(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu) - np.log1p(-mu)

    def unit_deviance(self, y, mu):
        return -2.0 * (xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu))

    def init_mean(self, y):
        y = np.asarray(y, dtype=float)
        return (y + 0.5) / 2.0

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return (rng.random(theta.shape) < expit(theta)).astype(float)


class Poisson(FamilyModel):
    name = "poisson"

    def check_y(self, y):
        y = super().check_y(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("poisson: response must be a nonnegative integer")
        return y

    def cumulant(self, theta):
        return np.exp(theta)

    d1 = d2 = d3 = cumulant

    def h(self, y):
        return -gammaln(np.asarray(y, dtype=float) + 1.0)

    def link(self, mu):
        return np.log(mu)

    def unit_deviance(self, y, mu):
        return 2.0 * (xlogy(y, y) - xlogy(y, mu) - (y - mu))

    def init_mean(self, y):
        y = np.asarray(y, dtype=float)
        return y + 0.1

    def sample(self, theta, rng):
        return rng.poisson(np.exp(theta)).astype(float)


class Gamma(FamilyModel):
    """Gamma response with known shape ``nu``; natural parameter ``theta < 0``.

    ``c(theta) = -nu log(-theta)`` so the mean is ``-nu / theta``.
    """

    name = "gamma"

    def __init__(self, shape=1.0):
        if not shape > 0:
            raise DomainError(f"gamma shape must be positive, got {shape}")
        self.shape = float(shape)

    def check_theta(self, theta):
        theta = super().check_theta(theta)
        if np.any(theta >= 0):
            raise DomainError("gamma: natural parameter must be negative")
        return theta

    def check_y(self, y):
        y = super().check_y(y)
        if np.any(y <= 0):
            raise DataError("gamma: response must be positive")
        return y

    def cumulant(self, theta):
        return -self.shape * np.log(-np.asarray(theta, dtype=float))

    def d1(self, theta):
        return -self.shape / np.asarray(theta, dtype=float)

    def d2(self, theta):
        return self.shape / np.square(theta)

    def d3(self, theta):
        return -2.0 * self.shape / np.asarray(theta, dtype=float) ** 3

    def h(self, y):
        y = np.asarray(y, dtype=float)
        return (self.shape - 1.0) * np.log(y) - gammaln(self.shape)

    def link(self, mu):
        return -self.shape / np.asarray(mu, dtype=float)

    def unit_deviance(self, y, mu):
        return 2.0 * self.shape * (-np.log(y / mu) + (y - mu) / mu)

    def init_mean(self, y):
        return np.asarray(y, dtype=float)

    def sample(self, theta, rng):
        theta = self.check_theta(theta)
        return rng.gamma(self.shape, -1.0 / theta)

    def to_dict(self):
        return {"name": self.name, "shape": self.shape}

    def __repr__(self):
        return f"Gamma(shape={self.shape})"


_FAMILIES = {"gaussian": Gaussian, "bernoulli": Bernoulli, "poisson": Poisson, "gamma": Gamma}


def get_family(name, **kwargs):
    """Look up a family by name (``gaussian``, ``bernoulli``, ``poisson``, ``gamma``)."""
    try:
        cls = _FAMILIES[name.lower()]
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}") from None
    return cls(**kwargs)
