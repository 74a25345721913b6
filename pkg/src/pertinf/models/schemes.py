"""Perturbation schemes for independent-observation models."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate

from ..errors import (
    NormalizerDivergence,
    OrthogonalityViolation,
    UnsupportedFamily,
    ValidationError,
    ZeroDirection,
)
from ..geometry import PerturbedModel, ThetaLink, geometry_at, rescale_perturbation
from .families import (
    QUAD_TOL,
    ExponentialComponent,
    GaussianComponent,
    QuadratureComponent,
    get_density,
)
from .fit import newton_maximize

LOG2PI = math.log(2 * math.pi)


def _diag3(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros((v.size,) * 3)
    idx = np.arange(v.size)
    out[idx, idx, idx] = v
    return out


def _batched(y):
    return np.atleast_2d(np.asarray(y, dtype=float))


def _require(fit, kinds):
    if fit.kind not in kinds:
        raise ValidationError(f"scheme not available for a {fit.kind} fit")


def _singletons(fit):
    if np.any(fit.data.m != 1):
        raise ValidationError("scheme needs one observation per cluster")
    return fit.y


# ---------------------------------------------------------------------------
# case weights


def _components(fit):
    if fit.kind == "linear_regression":
        mean = fit.X @ fit.beta
        return [GaussianComponent(mu, fit.sigma2) for mu in mean]
    n = fit.data.n
    if fit.family == "exponential":
        return [ExponentialComponent(fit.theta[0]) for _ in range(n)]
    mu, sigma = fit.theta
    if fit.family == "gaussian":
        return [GaussianComponent(mu, sigma ** 2) for _ in range(n)]
    dens = get_density(fit.family)
    comp = QuadratureComponent(lambda y: float(dens.logpdf((y - mu) / sigma)) - math.log(sigma))
    return [comp] * n


def case_weight_scheme(fit) -> PerturbedModel:
    """``sum_i omega_i l(y_i) - log c_i(omega_i)``, ``omega0 = 1_n``, ``omega_i > 0``."""
    _require(fit, ("iid_parametric", "location_scale", "linear_regression"))
    y_obs = _singletons(fit)
    try:
        comps = _components(fit)
    except UnsupportedFamily:
        raise
    n = len(comps)

    def terms(y):
        y = _batched(y)
        return np.column_stack([comps[i].logpdf(y[:, i]) for i in range(n)])

    def loglik(omega, y):
        lognorm = sum(comps[i].log_normalizer(omega[i]) for i in range(n))
        return terms(y) @ omega - lognorm

    def score(omega, y):
        means = np.array([comps[i].tilted_moments(omega[i])[0] for i in range(n)])
        return terms(y) - means

    def geometry(omega):
        mom = np.array([comps[i].tilted_moments(omega[i]) for i in range(n)])
        T = _diag3(mom[:, 2])
        return np.diag(mom[:, 1]), T, 0.5 * T

    sampler = None
    if all(c.sample is not None for c in comps):
        def sampler(omega, gen, size):
            return np.column_stack([comps[i].sample(omega[i], gen, size) for i in range(n)])

    return PerturbedModel(
        name="case_weight",
        omega0=np.ones(n),
        loglik=loglik,
        data=y_obs,
        lower=np.zeros(n),
        geometry=geometry,
        sampler=sampler,
        score=score,
        theta=_case_weight_link(fit, y_obs),
        labels=fit.data.ids,
        info={"components": comps},
    )


def _case_weight_link(fit, y):
    if fit.kind == "linear_regression":
        X = fit.X
        n = y.size

        def ll(th, w):
            b, s2 = th[:-1], th[-1]
            if s2 <= 0:
                return -np.inf
            r = y - X @ b
            return float(w @ (-0.5 * (LOG2PI + math.log(s2)) - r ** 2 / (2 * s2)))

        def delta(th):
            b, s2 = th[:-1], th[-1]
            r = y - X @ b
            return np.vstack([X.T * (r / s2), -0.5 / s2 + r ** 2 / (2 * s2 ** 2)])

        def refit(w):
            b = np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (w * y))
            r = y - X @ b
            return np.append(b, float(w @ r ** 2 / w.sum()))

        def score(th, w):
            return delta(th) @ w

        return ThetaLink(ll, fit.theta, delta, refit, score)

    if fit.family == "exponential":
        def ll(th, w):
            return float(w @ (math.log(th[0]) - th[0] * y)) if th[0] > 0 else -np.inf

        def delta(th):
            return (1.0 / th[0] - y)[None, :]

        return ThetaLink(ll, fit.theta, delta, lambda w: np.array([w.sum() / (w @ y)]),
                         lambda th, w: delta(th) @ w)

    dens = get_density(fit.family)

    def per_obs(th):
        mu, sigma = th
        z = (y - mu) / sigma
        psi = dens.dlogpdf(z)
        return z, psi

    def ll(th, w):
        if th[1] <= 0:
            return -np.inf
        return float(w @ (dens.logpdf((y - th[0]) / th[1]) - math.log(th[1])))

    def delta(th):
        z, psi = per_obs(th)
        return np.vstack([-psi / th[1], -(1.0 + z * psi) / th[1]])

    return _ls_link(fit, ll, delta, lambda th, w: delta(th) @ w)


def _ls_link(fit, ll, delta, score):
    def refit(w):
        return newton_maximize(lambda th: ll(th, w), lambda th: score(th, w), fit.theta,
                               feasible=lambda th: th[1] > 0)

    return ThetaLink(ll, fit.theta, delta, refit, score)


# ---------------------------------------------------------------------------
# location-scale family


def location_scale_schemes(fit, which: str) -> PerturbedModel:
    """``case_weight``, ``variance`` (``Var = sigma^2 / omega_i^2``) or
    ``response`` (``y_i + omega_i``) perturbation of a location-scale model."""
    _require(fit, ("location_scale", "iid_parametric"))
    if fit.family not in ("gaussian", "logistic"):
        raise UnsupportedFamily(f"no location-scale schemes for {fit.family!r}")
    if which == "case_weight":
        return case_weight_scheme(fit)
    y = _singletons(fit)
    n = y.size
    dens = get_density(fit.family)
    mom = dens.moments
    mu, sigma = fit.theta

    if which == "variance":
        def loglik(omega, yy):
            u = (_batched(yy) - mu) / sigma * omega
            return (np.log(omega) - math.log(sigma) + dens.logpdf(u)).sum(axis=1)

        def score(omega, yy):
            u = (_batched(yy) - mu) / sigma * omega
            return (1.0 + u * dens.dlogpdf(u)) / omega

        def geometry(omega):
            return (np.diag(mom["scale_info"] / omega ** 2), _diag3(mom["scale_third"] / omega ** 3),
                    _diag3(-mom["scale_info"] / omega ** 3))

        def sampler(omega, gen, size):
            return mu + sigma * dens.sample(gen, (size, n)) / omega

        def ll(th, w):
            if th[1] <= 0:
                return -np.inf
            return float(np.sum(np.log(w) - math.log(th[1]) + dens.logpdf(w * (y - th[0]) / th[1])))

        def tscore(th, w):
            u = w * (y - th[0]) / th[1]
            psi = dens.dlogpdf(u)
            return np.array([-(w * psi).sum() / th[1], -(1.0 + u * psi).sum() / th[1]])

        def delta(th):
            z = (y - th[0]) / th[1]
            k = dens.dlogpdf(z) + z * dens.d2logpdf(z)
            return np.vstack([-k / th[1], -z * k / th[1]])

        omega0, lower = np.ones(n), np.zeros(n)
    elif which == "response":
        def loglik(omega, yy):
            u = (_batched(yy) + omega - mu) / sigma
            return (dens.logpdf(u) - math.log(sigma)).sum(axis=1)

        def score(omega, yy):
            return dens.dlogpdf((_batched(yy) + omega - mu) / sigma) / sigma

        zero3 = np.zeros((n, n, n))

        def geometry(omega):
            return (np.eye(n) * mom["loc_info"] / sigma ** 2, _diag3(np.full(n, mom["loc_third"] / sigma ** 3)),
                    zero3)

        def sampler(omega, gen, size):
            return mu - omega + sigma * dens.sample(gen, (size, n))

        def ll(th, w):
            if th[1] <= 0:
                return -np.inf
            return float(np.sum(dens.logpdf((y + w - th[0]) / th[1]) - math.log(th[1])))

        def tscore(th, w):
            u = (y + w - th[0]) / th[1]
            psi = dens.dlogpdf(u)
            return np.array([-psi.sum() / th[1], -(1.0 + u * psi).sum() / th[1]])

        def delta(th):
            z = (y - th[0]) / th[1]
            psi, dpsi = dens.dlogpdf(z), dens.d2logpdf(z)
            return np.vstack([-dpsi / th[1] ** 2, -(psi + z * dpsi) / th[1] ** 2])

        omega0, lower = np.zeros(n), None
    else:
        raise ValidationError(f"unknown location-scale scheme {which!r}")

    return PerturbedModel(
        name=f"ls_{which}",
        omega0=omega0,
        loglik=loglik,
        data=y,
        lower=lower,
        geometry=geometry,
        sampler=sampler,
        score=score,
        theta=_ls_link(fit, ll, delta, tscore),
        labels=fit.data.ids,
        info={"family": dens.name},
    )


# ---------------------------------------------------------------------------
# linear regression


def regression_variance_scheme(fit, parametrization: str = "inverse_omega", k0: float = 1.0) -> PerturbedModel:
    """``Var(eps_i) = sigma^2 / w_i(omega)``.

    ``inverse_omega`` uses ``w_i = omega_i``; ``inverse_omega_with_k0`` replaces
    the first precision by ``(k0 - 1 + omega_1) / k0``.
    """
    _require(fit, ("linear_regression",))
    _singletons(fit)
    if parametrization == "inverse_omega":
        k0 = 1.0
    elif parametrization != "inverse_omega_with_k0":
        raise ValidationError(f"unknown parametrization {parametrization!r}")
    if k0 <= 0:
        raise ValidationError("k0 must be positive")
    X, y = fit.X, fit.y
    n = y.size
    beta, s2 = fit.beta, fit.sigma2
    slope = np.ones(n)
    slope[0] = 1.0 / k0
    offset = np.zeros(n)
    offset[0] = (k0 - 1.0) / k0
    r0 = y - X @ beta

    def prec(omega):
        return offset + slope * omega

    def loglik(omega, yy):
        w = prec(omega)
        r = _batched(yy) - X @ beta
        return (0.5 * np.log(w) - 0.5 * (LOG2PI + math.log(s2)) - w * r ** 2 / (2 * s2)).sum(axis=1)

    def score(omega, yy):
        w = prec(omega)
        r = _batched(yy) - X @ beta
        return slope * (0.5 / w - r ** 2 / (2 * s2))

    def geometry(omega):
        a = slope / prec(omega)
        T = _diag3(-a ** 3)
        return np.diag(0.5 * a ** 2), T, 0.5 * T

    def sampler(omega, gen, size):
        return X @ beta + math.sqrt(s2) * gen.standard_normal((size, n)) / np.sqrt(prec(omega))

    def ll(th, omega):
        b, v = th[:-1], th[-1]
        if v <= 0:
            return -np.inf
        w = prec(omega)
        r = y - X @ b
        return float(np.sum(0.5 * np.log(w) - 0.5 * (LOG2PI + math.log(v)) - w * r ** 2 / (2 * v)))

    def tscore(th, omega):
        b, v = th[:-1], th[-1]
        w = prec(omega)
        r = y - X @ b
        return np.append(X.T @ (w * r) / v, -n / (2 * v) + (w @ r ** 2) / (2 * v ** 2))

    def delta(th):
        b, v = th[:-1], th[-1]
        r = y - X @ b
        return np.vstack([X.T * (slope * r / v), slope * r ** 2 / (2 * v ** 2)])

    def refit(omega):
        w = prec(omega)
        b = np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (w * y))
        r = y - X @ b
        return np.append(b, float(w @ r ** 2 / n))

    lower = np.zeros(n)
    lower[0] = 1.0 - k0
    return PerturbedModel(
        name="reg_variance" if k0 == 1.0 else f"reg_variance_k0={k0:g}",
        omega0=np.ones(n),
        loglik=loglik,
        data=y,
        lower=lower,
        geometry=geometry,
        sampler=sampler,
        score=score,
        theta=ThetaLink(ll, fit.theta, delta, refit, tscore),
        labels=fit.data.ids,
        info={"precision": prec, "residuals": r0},
    )


def explanatory_scheme(fit, which: str = "diagonal", scale=None) -> PerturbedModel:
    """Perturb the covariates: ``X + W S`` (``full_matrix``) or
    ``X + diag(omega) 1 S`` (``diagonal``).

    For ``full_matrix`` the coordinates are ordered covariate-major: entry
    ``k * n + i`` perturbs ``x_ik``.
    """
    _require(fit, ("linear_regression",))
    _singletons(fit)
    X, y = fit.X, fit.y
    n, q1 = X.shape
    s = np.ones(q1) if scale is None else np.asarray(scale, dtype=float).ravel()
    if s.shape != (q1,):
        raise ValidationError(f"scale needs {q1} entries")
    if np.any(s == 0):
        raise ValidationError("scale entries must be nonzero")
    beta, s2 = fit.beta, fit.sigma2
    sb = s * beta

    if which == "full_matrix":
        p = n * q1

        def shift_matrix(omega):
            return omega.reshape(q1, n).T * s  # n x q1

        G = np.kron(np.outer(sb, sb), np.eye(n)) / s2
        labels = tuple(f"{cid}:{name}" for name in fit.data.x_names for cid in fit.data.ids)
    elif which == "diagonal":
        p = n
        total = float(sb.sum())
        if total == 0.0:
            raise ZeroDirection("sum of s_k beta_k is zero; the metric vanishes identically")

        def shift_matrix(omega):
            return np.outer(omega, s)

        G = np.eye(n) * total ** 2 / s2
        labels = fit.data.ids
    else:
        raise ValidationError(f"unknown explanatory scheme {which!r}")

    zero3 = np.zeros((p, p, p))

    def mean(omega, b=beta):
        return (X + shift_matrix(omega)) @ b

    def loglik(omega, yy):
        r = _batched(yy) - mean(omega)
        return (-0.5 * (LOG2PI + math.log(s2)) - r ** 2 / (2 * s2)).sum(axis=1)

    def score(omega, yy):
        r = _batched(yy) - mean(omega)
        if which == "full_matrix":
            return np.hstack([r * sb[k] / s2 for k in range(q1)])
        return r * sb.sum() / s2

    def sampler(omega, gen, size):
        return mean(omega) + math.sqrt(s2) * gen.standard_normal((size, n))

    def ll(th, omega):
        b, v = th[:-1], th[-1]
        if v <= 0:
            return -np.inf
        r = y - mean(omega, b)
        return float(np.sum(-0.5 * (LOG2PI + math.log(v)) - r ** 2 / (2 * v)))

    def tscore(th, omega):
        b, v = th[:-1], th[-1]
        Xw = X + shift_matrix(omega)
        r = y - Xw @ b
        return np.append(Xw.T @ r / v, -n / (2 * v) + (r @ r) / (2 * v ** 2))

    def delta(th):
        b, v = th[:-1], th[-1]
        r = y - X @ b
        if which == "full_matrix":
            cols = []
            for k in range(q1):
                db = -(X.T * (s[k] * b[k])) / v
                db[k] += s[k] * r / v
                dv = -r * s[k] * b[k] / v ** 2
                cols.append(np.vstack([db, dv]))
            return np.hstack(cols)
        sbt = float((s * b).sum())
        db = (np.outer(s, r) - X.T * sbt) / v
        dv = -r * sbt / v ** 2
        return np.vstack([db, dv])

    def refit(omega):
        Xw = X + shift_matrix(omega)
        b = np.linalg.lstsq(Xw, y, rcond=None)[0]
        r = y - Xw @ b
        return np.append(b, float(r @ r / n))

    return PerturbedModel(
        name=f"explanatory_{'full' if which == 'full_matrix' else 'diag'}",
        omega0=np.zeros(p),
        loglik=loglik,
        data=y,
        geometry=lambda omega: (G, zero3, zero3),
        sampler=sampler,
        score=score,
        theta=ThetaLink(ll, fit.theta, delta, refit, tscore),
        labels=labels,
        info={"scale": s},
    )


# ---------------------------------------------------------------------------
# log-linear expansion


class _Tilt:
    """Moments of ``psi(Z)`` under ``p0(z) exp(omega' psi(z)) / c(omega)``."""

    def __init__(self, dens, psi, tol):
        self.dens = dens
        self.psi = psi
        self.tol = tol
        self._cache = {}

    def _vec(self, z):
        return np.array([f(z) for f in self.psi], dtype=float)

    def __call__(self, omega):
        key = np.asarray(omega, float).tobytes()
        if key in self._cache:
            return self._cache[key]
        omega = np.asarray(omega, dtype=float)
        m = omega.size
        iu = list(itertools.combinations_with_replacement(range(m), 2))
        it = list(itertools.combinations_with_replacement(range(m), 3))

        def integrand(z):
            v = self._vec(z)
            w = math.exp(float(self.dens.logpdf(z)) + float(omega @ v))
            return w * np.concatenate([[1.0], v, [v[a] * v[b] for a, b in iu], [v[a] * v[b] * v[c] for a, b, c in it]])

        with np.errstate(over="ignore"):
            try:
                raw, err = integrate.quad_vec(integrand, -np.inf, np.inf, epsabs=self.tol, epsrel=self.tol, limit=400)
            except (OverflowError, ValueError):
                raise NormalizerDivergence("normalizer diverges") from None
        if not np.all(np.isfinite(raw)) or raw[0] <= 0 or err > 1e-4 * max(abs(raw[0]), 1.0):
            raise NormalizerDivergence(f"normalizer c(omega) is not finite at omega={omega}")
        c = raw[0]
        e1 = raw[1 : 1 + m] / c
        e2 = np.zeros((m, m))
        for k, (a, b) in enumerate(iu):
            e2[a, b] = e2[b, a] = raw[1 + m + k] / c
        e3 = np.zeros((m, m, m))
        for k, (a, b, d) in enumerate(it):
            val = raw[1 + m + len(iu) + k] / c
            for perm in set(itertools.permutations((a, b, d))):
                e3[perm] = val
        cov = e2 - np.outer(e1, e1)
        third = (e3 - np.einsum("ij,k->ijk", e2, e1) - np.einsum("ik,j->ijk", e2, e1)
                 - np.einsum("jk,i->ijk", e2, e1) + 2 * np.einsum("i,j,k->ijk", e1, e1, e1))
        out = (math.log(c), e1, cov, third)
        self._cache[key] = out
        return out


def loglinear_scheme(fit, psi, box: float = 0.25, tol: float = QUAD_TOL):
    """Exponential tilting of the base density by ``omega' psi``.

    ``psi`` is a sequence of callables of the standardized value
    ``z = (y - mu) / sigma``.  Returns ``(raw, standardized)``; the
    standardized scheme has identity metric at ``omega0 = 0``.
    """
    _require(fit, ("iid_parametric", "location_scale"))
    if fit.family not in ("gaussian", "logistic"):
        raise UnsupportedFamily("log-linear scheme needs a location-scale base density")
    psi = tuple(psi)
    m = len(psi)
    if m == 0:
        raise ValidationError("need at least one psi function")
    dens = get_density(fit.family)
    mu, sigma = fit.theta
    y = _singletons(fit)
    n = y.size
    tilt = _Tilt(dens, psi, tol)

    _, e1, cov0, _ = tilt(np.zeros(m))
    e2 = cov0 + np.outer(e1, e1)
    scale = np.sqrt(np.outer(np.diag(e2), np.diag(e2)))
    off = ~np.eye(m, dtype=bool)
    if np.any(np.abs(e1) > 1e-6 * np.sqrt(np.diag(e2))) or np.any(np.abs(e2[off]) > 1e-6 * scale[off]):
        raise OrthogonalityViolation("psi functions are not orthogonal to each other and to 1 under p0")
    for corner in itertools.product((-box, box), repeat=m):
        tilt(np.array(corner))

    def psi_mat(yy):
        z = (_batched(yy) - mu) / sigma
        return np.stack([f(z) for f in psi], axis=-1), z

    def loglik(omega, yy):
        P, z = psi_mat(yy)
        base = (dens.logpdf(z) - math.log(sigma)).sum(axis=1)
        return base + n * (P.mean(axis=1) @ omega) - n * tilt(omega)[0]

    def score(omega, yy):
        P, _ = psi_mat(yy)
        return n * (P.mean(axis=1) - tilt(omega)[1])

    def geometry(omega):
        _, _, cov, third = tilt(omega)
        T = n * third
        return n * cov, T, 0.5 * T

    psi_bar = psi_mat(y)[0][0].mean(axis=0)
    raw = PerturbedModel(
        name="loglinear",
        omega0=np.zeros(m),
        loglik=loglik,
        data=y,
        lower=np.full(m, -box),
        upper=np.full(m, box),
        geometry=geometry,
        score=score,
        labels=tuple(f"psi{j + 1}" for j in range(m)),
        info={"psi_bar": psi_bar, "E0_psi2": np.diag(e2).copy(), "n": n,
              "loglik_hessian": lambda omega: -n * tilt(omega)[2]},
    )
    standardized = rescale_perturbation(raw, geometry_at(raw, raw.omega0), 1.0)
    return raw, standardized
