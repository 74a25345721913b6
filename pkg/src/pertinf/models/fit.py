"""Maximum-likelihood fits of the base models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .. import numdiff
from ..errors import NonConvergence, UnsupportedFamily, ValidationError
from .data import ClusteredDataset
from .families import get_density
from .lmm import LMMEngine, check_neg_hessian

KINDS = ("iid_parametric", "location_scale", "linear_regression", "linear_mixed")
FIT_TOL = 1e-8
MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class ModelFit:
    """A fitted base model.

    ``theta`` stacks the mean parameters first and the dispersion parameters
    after them; ``blocks`` names the two slices.  ``neg_hessian`` is the
    block-diagonal information used for likelihood displacement and
    ``neg_hessian_observed`` the finite-difference observed information.
    """

    kind: str
    data: ClusteredDataset
    theta: np.ndarray
    beta: np.ndarray
    loglik_at_fit: float
    residuals: tuple
    neg_hessian: np.ndarray
    neg_hessian_observed: np.ndarray
    param_names: tuple
    sigma2: Optional[float] = None
    xi: Optional[np.ndarray] = None
    structure: Any = None
    family: Optional[str] = None
    engine: Any = None
    iterations: int = 0
    score_norm: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def q1(self) -> int:
        return self.beta.size

    @property
    def q(self) -> int:
        return self.theta.size

    @property
    def blocks(self) -> dict:
        return {"beta": slice(0, self.q1), "xi": slice(self.q1, self.q)}

    @property
    def dispersion(self):
        return self.xi if self.xi is not None else self.sigma2

    @property
    def y(self) -> np.ndarray:
        return self.data.stacked()[1]

    @property
    def X(self) -> np.ndarray:
        return self.data.stacked()[0]


def _as_dataset(data):
    if isinstance(data, ClusteredDataset):
        return data
    y = np.asarray(data, dtype=float).ravel()
    return ClusteredDataset.from_regression(np.ones((y.size, 1)), y)


def fit_model(data, kind: str, covariance=None, *, family: str = "gaussian", known: Optional[dict] = None,
              tol: float = FIT_TOL, maxiter: int = MAX_ITER, start=None) -> ModelFit:
    """Fit ``kind`` to ``data``.

    ``linear_regression`` and ``linear_mixed`` use the covariates of ``data``;
    ``iid_parametric`` and ``location_scale`` read the stacked responses and
    accept a plain array.  ``known`` fixes ``mu``/``sigma`` (or ``rate``)
    instead of estimating them.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    data = _as_dataset(data)
    if kind == "linear_regression":
        return _fit_regression(data)
    if kind == "linear_mixed":
        return _fit_lmm(data, covariance or "scaled_identity", tol, maxiter, start)
    return _fit_iid(data, kind, family, known or {}, tol, maxiter)


def _fit_regression(data):
    data.check_rank()
    X, y = data.stacked()
    n = y.size
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    r = y - X @ beta
    s2 = float(r @ r / n)
    q1 = beta.size
    info = np.zeros((q1 + 1, q1 + 1))
    if s2 > 0:
        info[:q1, :q1] = X.T @ X / s2
        info[q1, q1] = n / (2 * s2 ** 2)
        ll = -0.5 * n * (math.log(2 * math.pi * s2) + 1.0)
    else:
        # interpolating fit: degenerate likelihood, infinite information
        info[:] = np.inf
        ll = float("inf")
    return ModelFit(
        kind="linear_regression",
        data=data,
        theta=np.append(beta, s2),
        beta=beta,
        loglik_at_fit=ll,
        residuals=tuple(cl.y - cl.x @ beta for cl in data.clusters),
        neg_hessian=info,
        neg_hessian_observed=info.copy(),
        param_names=tuple(data.x_names) + ("sigma2",),
        sigma2=s2,
    )


def _fit_lmm(data, covariance, tol, maxiter, start):
    data.check_rank()
    eng = LMMEngine(data, covariance)
    X, y = data.stacked()
    b0 = np.linalg.lstsq(X, y, rcond=None)[0]
    resid = [cl.y - cl.x @ b0 for cl in data.clusters]
    xi0 = eng.structure.initial(data, resid) if start is None else np.asarray(start, float)[eng.q1 :]
    if not eng.feasible(xi0):
        raise ValidationError("initial covariance parameters are not positive definite")
    theta0 = np.concatenate([eng.gls_beta(xi0), xi0])
    theta, L, iters = eng.maximize(theta0, tol=tol, maxiter=maxiter)
    observed = eng.observed_information(theta)
    check_neg_hessian(observed)
    beta, xi = eng.split(theta)
    s = eng.score(theta)
    return ModelFit(
        kind="linear_mixed",
        data=data,
        theta=theta,
        beta=beta,
        loglik_at_fit=L,
        residuals=eng.residuals(theta),
        neg_hessian=eng.block_information(theta),
        neg_hessian_observed=observed,
        param_names=tuple(data.x_names) + tuple(eng.structure.names),
        xi=xi,
        structure=eng.structure,
        engine=eng,
        iterations=iters,
        score_norm=float(np.linalg.norm(s)),
    )


# ---------------------------------------------------------------------------
# i.i.d. and location-scale fits


def ls_loglik_terms(dens, y, mu, sigma):
    return dens.logpdf((y - mu) / sigma) - math.log(sigma)


def ls_score(dens, y, mu, sigma):
    z = (y - mu) / sigma
    psi = dens.dlogpdf(z)
    return np.array([-psi.sum() / sigma, -(1.0 + z * psi).sum() / sigma])


def ls_neg_hessian(dens, y, mu, sigma):
    z = (y - mu) / sigma
    psi = dens.dlogpdf(z)
    dpsi = dens.d2logpdf(z)
    a = dpsi.sum()
    b = (psi + z * dpsi).sum()
    c = (1.0 + 2 * z * psi + z * z * dpsi).sum()
    return -np.array([[a, b], [b, c]]) / sigma ** 2


def newton_maximize(loglik, score, theta0, hess=None, tol=1e-10, maxiter=200, feasible=None):
    """Damped Newton ascent with finite-difference Hessian of an analytic score."""
    theta = np.asarray(theta0, dtype=float).copy()
    L = loglik(theta)
    for _ in range(maxiter):
        s = score(theta)
        if np.linalg.norm(s) < tol * (1.0 + abs(L)):
            return theta
        if hess is not None:
            M = hess(theta)
        else:
            J = numdiff.jacobian(score, theta)
            M = -0.5 * (J + J.T)
        try:
            np.linalg.cholesky(M)
            step = np.linalg.solve(M, s)
        except np.linalg.LinAlgError:
            step = s / max(np.abs(np.diag(M)).max(), 1.0)
        t = 1.0
        for _ in range(60):
            trial = theta + t * step
            if feasible is None or feasible(trial):
                Lt = loglik(trial)
                if np.isfinite(Lt) and Lt >= L - 1e-12 * (1.0 + abs(L)):
                    theta, L = trial, Lt
                    break
            t *= 0.5
        else:
            raise NonConvergence("line search failed")
    raise NonConvergence(f"no convergence after {maxiter} iterations")


def _fit_iid(data, kind, family, known, tol, maxiter):
    X, y = data.stacked()
    n = y.size
    if family == "exponential":
        if np.any(y < 0):
            raise ValidationError("exponential responses must be nonnegative")
        rate = float(known.get("rate", 1.0 / y.mean()))
        info = np.array([[n / rate ** 2]])
        return ModelFit(
            kind=kind, data=data, theta=np.array([rate]), beta=np.array([]),
            loglik_at_fit=float(n * math.log(rate) - rate * y.sum()),
            residuals=tuple(cl.y - 1.0 / rate for cl in data.clusters),
            neg_hessian=info, neg_hessian_observed=info.copy(),
            param_names=("rate",), family="exponential", info={"rate": rate},
        )
    try:
        dens = get_density(family)
    except UnsupportedFamily:
        raise
    if "mu" in known and "sigma" in known:
        mu, sigma = float(known["mu"]), float(known["sigma"])
    elif dens.name == "gaussian":
        mu = float(known.get("mu", y.mean()))
        sigma = float(known.get("sigma", math.sqrt(np.mean((y - mu) ** 2))))
    else:
        mu0, s0 = float(np.median(y)), float(np.std(y)) or 1.0
        theta = newton_maximize(
            lambda th: float(ls_loglik_terms(dens, y, th[0], th[1]).sum()),
            lambda th: ls_score(dens, y, th[0], th[1]),
            [mu0, s0],
            hess=lambda th: ls_neg_hessian(dens, y, th[0], th[1]),
            tol=tol,
            maxiter=maxiter,
            feasible=lambda th: th[1] > 0,
        )
        mu, sigma = float(theta[0]), float(theta[1])
    if sigma <= 0:
        raise ValidationError("scale must be positive")
    info = ls_neg_hessian(dens, y, mu, sigma)
    s = ls_score(dens, y, mu, sigma)
    return ModelFit(
        kind=kind,
        data=data,
        theta=np.array([mu, sigma]),
        beta=np.array([mu]),
        loglik_at_fit=float(ls_loglik_terms(dens, y, mu, sigma).sum()),
        residuals=tuple(cl.y - mu for cl in data.clusters),
        neg_hessian=info,
        neg_hessian_observed=info.copy(),
        param_names=("mu", "sigma"),
        sigma2=sigma ** 2,
        family=dens.name,
        score_norm=float(np.linalg.norm(s)),
        info={"mu": mu, "sigma": sigma, "known": dict(known)},
    )
