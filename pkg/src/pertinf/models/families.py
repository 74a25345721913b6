"""Base densities for location-scale models and single-observation families
for case-weight perturbation."""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate

from ..errors import NormalizerDivergence, UnsupportedFamily

QUAD_TOL = 1e-10


def quad(fn, lo=-np.inf, hi=np.inf, tol=QUAD_TOL, limit=200):
    """Adaptive quadrature that turns integrator warnings into divergence errors."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, lo, hi, epsabs=tol, epsrel=tol, limit=limit)
        except integrate.IntegrationWarning as exc:
            raise NormalizerDivergence(f"quadrature did not converge: {exc}") from None
    if not np.isfinite(val):
        raise NormalizerDivergence("integral is not finite")
    return val


# ---------------------------------------------------------------------------
# standardized location-scale densities (mean 0, variance 1)


class BaseDensity:
    name = ""

    def logpdf(self, x):
        raise NotImplementedError

    def dlogpdf(self, x):
        raise NotImplementedError

    def d2logpdf(self, x):
        raise NotImplementedError

    def sample(self, gen, size):
        raise NotImplementedError

    def expect(self, fn):
        return quad(lambda x: fn(x) * math.exp(self.logpdf(x)))

    @property
    def moments(self) -> dict:
        return _density_moments(self.name)


class Gaussian(BaseDensity):
    name = "gaussian"
    _c = 0.5 * math.log(2 * math.pi)

    def logpdf(self, x):
        return -0.5 * np.square(x) - self._c

    def dlogpdf(self, x):
        return -np.asarray(x, dtype=float)

    def d2logpdf(self, x):
        return -np.ones_like(np.asarray(x, dtype=float))

    def sample(self, gen, size):
        return gen.standard_normal(size)


class Logistic(BaseDensity):
    """Logistic density rescaled to unit variance."""

    name = "logistic"
    s = math.sqrt(3.0) / math.pi

    def logpdf(self, x):
        z = np.asarray(x, dtype=float) / self.s
        return -np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z))) - math.log(self.s)

    def dlogpdf(self, x):
        return -np.tanh(np.asarray(x, dtype=float) / (2.0 * self.s)) / self.s

    def d2logpdf(self, x):
        c = np.cosh(np.asarray(x, dtype=float) / (2.0 * self.s))
        return -0.5 / (self.s ** 2 * c ** 2)

    def sample(self, gen, size):
        return self.s * gen.logistic(size=size)


DENSITIES = {"gaussian": Gaussian, "normal": Gaussian, "logistic": Logistic}


def get_density(name) -> BaseDensity:
    if isinstance(name, BaseDensity):
        return name
    try:
        return DENSITIES[name]()
    except KeyError:
        raise UnsupportedFamily(f"no base density {name!r}") from None


@lru_cache(maxsize=None)
def _density_moments(name):
    if name == "gaussian":
        return {"loc_info": 1.0, "loc_third": 0.0, "scale_info": 2.0, "scale_third": -8.0}
    dens = get_density(name)
    s = lambda x: dens.dlogpdf(x)  # noqa: E731
    u = lambda x: 1.0 + x * dens.dlogpdf(x)  # noqa: E731
    return {
        "loc_info": dens.expect(lambda x: s(x) ** 2),
        "loc_third": dens.expect(lambda x: s(x) ** 3),
        "scale_info": dens.expect(lambda x: u(x) ** 2),
        "scale_third": dens.expect(lambda x: u(x) ** 3),
    }


# ---------------------------------------------------------------------------
# single-observation families under exponential tilting by a case weight


class Component:
    """One observation's log-density ``l(y)`` and the tilted family
    ``exp{w l(y)} / c(w)``."""

    def logpdf(self, y):
        raise NotImplementedError

    def log_normalizer(self, w):
        raise NotImplementedError

    def tilted_moments(self, w):
        """Mean, variance and third central moment of ``l(Y)`` under the tilt."""
        raise NotImplementedError

    sample = None


class GaussianComponent(Component):
    def __init__(self, mu, s2):
        self.mu = float(mu)
        self.s2 = float(s2)
        self.a = -0.5 * math.log(2 * math.pi * self.s2)

    def logpdf(self, y):
        return self.a - np.square(y - self.mu) / (2 * self.s2)

    def log_normalizer(self, w):
        return -(1 - w) * self.a - 0.5 * math.log(w)

    def tilted_moments(self, w):
        return self.a - 0.5 / w, 0.5 / w ** 2, -1.0 / w ** 3

    def sample(self, w, gen, size):
        return self.mu + math.sqrt(self.s2 / w) * gen.standard_normal(size)


class ExponentialComponent(Component):
    def __init__(self, rate):
        self.rate = float(rate)

    def logpdf(self, y):
        return math.log(self.rate) - self.rate * np.asarray(y, dtype=float)

    def log_normalizer(self, w):
        return w * math.log(self.rate) - math.log(w * self.rate)

    def tilted_moments(self, w):
        return math.log(self.rate) - 1.0 / w, 1.0 / w ** 2, -2.0 / w ** 3

    def sample(self, w, gen, size):
        return gen.exponential(1.0 / (w * self.rate), size)


class QuadratureComponent(Component):
    """Generic component; tilted moments by adaptive quadrature on ``support``."""

    def __init__(self, logpdf, support=(-np.inf, np.inf), tol=QUAD_TOL):
        self._logpdf = logpdf
        self.support = support
        self.tol = tol
        self._cache = {}

    def logpdf(self, y):
        return self._logpdf(y)

    def _raw(self, w):
        if w in self._cache:
            return self._cache[w]
        lo, hi = self.support
        # shift by the mode value for stability
        ref = self._logpdf(_probe_mode(self._logpdf, lo, hi))
        dens = lambda y: math.exp(w * (self._logpdf(y) - ref))  # noqa: E731
        c = quad(dens, lo, hi, self.tol)
        m1 = quad(lambda y: self._logpdf(y) * dens(y), lo, hi, self.tol) / c
        m2 = quad(lambda y: (self._logpdf(y) - m1) ** 2 * dens(y), lo, hi, self.tol) / c
        m3 = quad(lambda y: (self._logpdf(y) - m1) ** 3 * dens(y), lo, hi, self.tol) / c
        out = (math.log(c) + w * ref, m1, m2, m3)
        self._cache[w] = out
        return out

    def log_normalizer(self, w):
        return self._raw(float(w))[0]

    def tilted_moments(self, w):
        return self._raw(float(w))[1:]


def _probe_mode(logpdf, lo, hi):
    a = -50.0 if not np.isfinite(lo) else lo
    b = 50.0 if not np.isfinite(hi) else hi
    grid = np.linspace(a, b, 2001)[1:-1]
    with np.errstate(all="ignore"):
        vals = np.array([logpdf(g) for g in grid])
    vals[~np.isfinite(vals)] = -np.inf
    return float(grid[int(np.argmax(vals))])
