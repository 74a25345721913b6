"""Gaussian linear mixed model: likelihood engine and the three perturbation
schemes for clustered responses (covariance weights, cluster shifts and
per-observation mean shifts).

Responses are carried as a tuple of per-cluster arrays; each array may have a
leading draw axis so the same evaluators serve Monte Carlo batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .. import numdiff
from ..errors import DomainViolation, NonConvergence, SingularHessian, ValidationError
from ..geometry import PerturbedModel, ThetaLink, geometry_at, rescale_perturbation
from .covariance import get_structure

LOG2PI = math.log(2 * math.pi)
DEGENERATE_COND = 1e-10


@dataclass(frozen=True)
class DeltaMatrix:
    """Mixed partials of the perturbed log-likelihood in ``(theta, omega)`` at
    ``(theta_hat, omega0)``; ``values`` is ``q x p``."""

    values: np.ndarray
    scheme: str
    raw: Optional[np.ndarray] = None
    labels: tuple = field(default=())


@dataclass(frozen=True, eq=False)
class _ClusterCov:
    S: np.ndarray
    L: np.ndarray
    Sinv: np.ndarray
    logdet: float
    dS: np.ndarray


class LMMEngine:
    """Log-likelihood, score and information of ``y_i ~ N(x_i beta, Sigma_i(xi) / w_i)``
    with optional additive response shifts."""

    def __init__(self, data, structure):
        self.data = data
        self.structure = get_structure(structure)
        self.q1 = data.q1
        self.q2 = self.structure.q2
        self.q = self.q1 + self.q2
        self._key = None
        self._covs = None

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.q1], theta[self.q1 :]

    def feasible(self, xi) -> bool:
        return all(self.structure.feasible(xi, cl) for cl in self.data.clusters)

    def covs(self, xi):
        xi = np.asarray(xi, dtype=float)
        key = xi.tobytes()
        if key == self._key:
            return self._covs
        out = []
        for cl in self.data.clusters:
            S = self.structure.build(xi, cl)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise DomainViolation("covariance matrix is not positive definite") from None
            Li = solve_triangular(L, np.eye(cl.m), lower=True)
            out.append(_ClusterCov(S, L, Li.T @ Li, 2.0 * float(np.log(np.diag(L)).sum()),
                                   self.structure.deriv(xi, cl)))
        self._key, self._covs = key, out
        return out

    def _resid(self, beta, shifts):
        res = []
        for i, cl in enumerate(self.data.clusters):
            e = cl.y - cl.x @ beta
            if shifts is not None:
                e = e + shifts[i]
            res.append(e)
        return res

    def residuals(self, theta):
        beta, _ = self.split(theta)
        return tuple(self._resid(beta, None))

    def loglik(self, theta, weights=None, shifts=None) -> float:
        beta, xi = self.split(theta)
        covs = self.covs(xi)
        total = 0.0
        for i, (cl, c, e) in enumerate(zip(self.data.clusters, covs, self._resid(beta, shifts))):
            w = 1.0 if weights is None else weights[i]
            total += -0.5 * (cl.m * LOG2PI + c.logdet - cl.m * math.log(w) + w * (e @ c.Sinv @ e))
        return float(total)

    def score(self, theta, weights=None, shifts=None) -> np.ndarray:
        beta, xi = self.split(theta)
        covs = self.covs(xi)
        gb = np.zeros(self.q1)
        gx = np.zeros(self.q2)
        for i, (cl, c, e) in enumerate(zip(self.data.clusters, covs, self._resid(beta, shifts))):
            w = 1.0 if weights is None else weights[i]
            u = c.Sinv @ e
            gb += w * (cl.x.T @ u)
            gx += -0.5 * np.einsum("jk,akj->a", c.Sinv, c.dS) + 0.5 * w * np.einsum("j,ajk,k->a", u, c.dS, u)
        return np.concatenate([gb, gx])

    def block_information(self, theta) -> np.ndarray:
        """``diag(sum x' S^-1 x, 0.5 sum tr(S^-1 dS_a S^-1 dS_b))``."""
        _, xi = self.split(theta)
        covs = self.covs(xi)
        Ib = np.zeros((self.q1, self.q1))
        Ix = np.zeros((self.q2, self.q2))
        for cl, c in zip(self.data.clusters, covs):
            Ib += cl.x.T @ c.Sinv @ cl.x
            P = np.einsum("jk,akl->ajl", c.Sinv, c.dS)
            Ix += 0.5 * np.einsum("ajl,blj->ab", P, P)
        out = np.zeros((self.q, self.q))
        out[: self.q1, : self.q1] = Ib
        out[self.q1 :, self.q1 :] = Ix
        return 0.5 * (out + out.T)

    def observed_information(self, theta, weights=None, shifts=None) -> np.ndarray:
        J = numdiff.jacobian(lambda th: self.score(th, weights, shifts), np.asarray(theta, float))
        return -0.5 * (J + J.T)

    def gls_beta(self, xi, weights=None, shifts=None):
        covs = self.covs(xi)
        A = np.zeros((self.q1, self.q1))
        b = np.zeros(self.q1)
        for i, (cl, c) in enumerate(zip(self.data.clusters, covs)):
            w = 1.0 if weights is None else weights[i]
            y = cl.y if shifts is None else cl.y + shifts[i]
            A += w * cl.x.T @ c.Sinv @ cl.x
            b += w * cl.x.T @ c.Sinv @ y
        return np.linalg.solve(A, b)

    # -- maximization -----------------------------------------------------

    def maximize(self, theta0, weights=None, shifts=None, tol=1e-8, maxiter=500, fisher_first=True):
        """Damped Fisher scoring switching to Newton near the optimum.

        Converged when ``||score|| < tol (1 + |L|)``; one extra Newton step is
        taken after convergence.  Infeasible trial points halve the step.
        """
        theta = np.asarray(theta0, dtype=float).copy()
        if not self.feasible(self.split(theta)[1]):
            raise ValidationError("starting covariance parameters are infeasible")
        L = self.loglik(theta, weights, shifts)
        newton = not fisher_first
        for it in range(1, maxiter + 1):
            s = self.score(theta, weights, shifts)
            snorm = float(np.linalg.norm(s))
            if snorm < tol * (1.0 + abs(L)):
                theta, L = self._polish(theta, L, weights, shifts)
                return theta, L, it
            if snorm < 1e-3 * (1.0 + abs(L)):
                newton = True
            step = self._step(theta, s, newton, weights, shifts)
            theta, L, ok = self._line_search(theta, L, step, weights, shifts)
            self._check_degenerate()
            if not ok:
                if newton:
                    # retry with the always-PD scoring matrix
                    step = self._step(theta, s, False, weights, shifts)
                    theta, L, ok = self._line_search(theta, L, step, weights, shifts)
                if not ok:
                    raise NonConvergence(f"line search failed (score norm {snorm:.3g})")
        raise NonConvergence(f"no convergence after {maxiter} iterations")

    def _check_degenerate(self):
        # the likelihood is unbounded when a cluster covariance collapses
        for c in self._covs or ():
            d = np.diag(c.L)
            if (d.min() / d.max()) ** 2 < DEGENERATE_COND:
                raise NonConvergence("likelihood unbounded: a cluster covariance is approaching singularity")

    def _step(self, theta, s, newton, weights, shifts):
        M = self.observed_information(theta, weights, shifts) if newton else self._scoring_matrix(theta, weights)
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            M = self._scoring_matrix(theta, weights)
        return np.linalg.solve(M, s)

    def _scoring_matrix(self, theta, weights):
        M = self.block_information(theta)
        if weights is not None:
            # weights enter the beta block linearly; the xi block is unchanged
            beta, xi = self.split(theta)
            covs = self.covs(xi)
            Ib = sum(w * cl.x.T @ c.Sinv @ cl.x for w, cl, c in zip(weights, self.data.clusters, covs))
            M[: self.q1, : self.q1] = Ib
        return M

    def _line_search(self, theta, L, step, weights, shifts, max_halvings=60):
        t = 1.0
        for _ in range(max_halvings):
            trial = theta + t * step
            if self.feasible(self.split(trial)[1]):
                try:
                    Lt = self.loglik(trial, weights, shifts)
                except DomainViolation:  # admissible parameters, indefinite matrix
                    Lt = -np.inf
                if np.isfinite(Lt) and Lt >= L - 1e-12 * (1.0 + abs(L)):
                    return trial, Lt, True
            t *= 0.5
        return theta, L, False

    def _polish(self, theta, L, weights, shifts):
        s = self.score(theta, weights, shifts)
        M = self.observed_information(theta, weights, shifts)
        try:
            trial = theta + np.linalg.solve(M, s)
        except np.linalg.LinAlgError:
            return theta, L
        if not self.feasible(self.split(trial)[1]):
            return theta, L
        try:
            if np.linalg.norm(self.score(trial, weights, shifts)) <= np.linalg.norm(s):
                return trial, self.loglik(trial, weights, shifts)
        except DomainViolation:
            pass
        return theta, L

    def refit(self, theta_hat, weights=None, shifts=None, tol=1e-10, maxiter=200):
        theta, _, _ = self.maximize(theta_hat, weights, shifts, tol=tol, maxiter=maxiter, fisher_first=False)
        return theta


# ---------------------------------------------------------------------------
# helpers shared by the schemes


def _batched(y):
    return np.atleast_2d(np.asarray(y, dtype=float))


def _diag3(v):
    p = v.size
    out = np.zeros((p, p, p))
    idx = np.arange(p)
    out[idx, idx, idx] = v
    return out


def _require_lmm(fit):
    if fit.kind != "linear_mixed":
        raise ValidationError(f"scheme needs a linear mixed model fit, got {fit.kind!r}")
    return fit.engine


def _sampler(fit, mean_shift):
    """Draw responses ``x_i beta - shift_i(omega) + Sigma_i^{1/2} z / sqrt(w_i(omega))``."""
    eng = fit.engine
    beta, xi = eng.split(fit.theta)
    covs = eng.covs(xi)

    def draw(omega, gen, size, weights=None):
        out = []
        for i, (cl, c) in enumerate(zip(eng.data.clusters, covs)):
            z = gen.standard_normal((size, cl.m)) @ c.L.T
            if weights is not None:
                z = z / math.sqrt(weights(omega)[i])
            out.append(cl.x @ beta - mean_shift(omega, i) + z)
        return tuple(out)

    return draw


def _finish(raw, name):
    geom0 = geometry_at(raw, raw.omega0)
    appropriate = rescale_perturbation(raw, geom0, 1.0)
    delta_raw = raw.theta.delta(raw.theta.theta_hat)
    delta = DeltaMatrix(values=appropriate.theta.delta(raw.theta.theta_hat), scheme=name,
                        raw=delta_raw, labels=raw.labels)
    return raw, appropriate, delta


# ---------------------------------------------------------------------------
# schemes


def lmm_covariance_scheme(fit):
    """``Cov(y_i) = Sigma_i / omega_i``, ``omega0 = 1_n``.

    Returns ``(raw, appropriate, delta)`` where ``appropriate`` is the rescaled
    scheme with identity metric at the null point and ``delta`` its Delta
    matrix (the raw one is kept in ``delta.raw``).
    """
    eng = _require_lmm(fit)
    data = eng.data
    n = data.n
    m = data.m.astype(float)
    beta, xi = eng.split(fit.theta)
    covs = eng.covs(xi)

    def quad(y):
        return [np.einsum("nj,jk,nk->n", _batched(yi) - cl.x @ beta, c.Sinv, _batched(yi) - cl.x @ beta)
                for yi, cl, c in zip(y, data.clusters, covs)]

    def loglik(omega, y):
        qs = quad(y)
        total = 0.0
        for i, (cl, c) in enumerate(zip(data.clusters, covs)):
            total = total - 0.5 * (cl.m * LOG2PI + c.logdet - cl.m * np.log(omega[i]) + omega[i] * qs[i])
        return total

    def score(omega, y):
        qs = quad(y)
        return np.column_stack([0.5 * m[i] / omega[i] - 0.5 * qs[i] for i in range(n)])

    def geometry(omega):
        T = _diag3(-m / omega ** 3)
        return np.diag(0.5 * m / omega ** 2), T, 0.5 * T

    draw = _sampler(fit, lambda omega, i: 0.0)

    def delta(theta):
        b, x = eng.split(theta)
        cs = eng.covs(x)
        out = np.zeros((eng.q, n))
        for i, (cl, c, e) in enumerate(zip(data.clusters, cs, eng._resid(b, None))):
            u = c.Sinv @ e
            out[: eng.q1, i] = cl.x.T @ u
            out[eng.q1 :, i] = 0.5 * np.einsum("j,ajk,k->a", u, c.dS, u)
        return out

    link = ThetaLink(
        loglik=lambda th, w: eng.loglik(th, weights=w),
        theta_hat=fit.theta,
        delta=delta,
        refit=lambda w: eng.refit(fit.theta, weights=w),
        score=lambda th, w: eng.score(th, weights=w),
    )
    raw = PerturbedModel(
        name="lmm_cov",
        omega0=np.ones(n),
        loglik=loglik,
        data=tuple(cl.y for cl in data.clusters),
        lower=np.zeros(n),
        geometry=geometry,
        sampler=lambda omega, gen, size: draw(omega, gen, size, weights=lambda w: w),
        score=score,
        theta=link,
        labels=data.ids,
        info={"cluster_sizes": data.m},
    )
    return _finish(raw, "lmm_cov")


def _shift_common(fit, per_obs):
    eng = _require_lmm(fit)
    data = eng.data
    beta, xi = eng.split(fit.theta)
    covs = eng.covs(xi)
    sizes = data.m
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    if per_obs:
        def shifts_of(omega):
            return [omega[offsets[i] : offsets[i + 1]] for i in range(data.n)]
    else:
        def shifts_of(omega):
            return [np.full(cl.m, omega[i]) for i, cl in enumerate(data.clusters)]

    def resid(omega, y):
        sh = shifts_of(omega)
        return [_batched(yi) - cl.x @ beta + sh[i] for i, (yi, cl) in enumerate(zip(y, data.clusters))]

    def loglik(omega, y):
        total = 0.0
        for e, cl, c in zip(resid(omega, y), data.clusters, covs):
            total = total - 0.5 * (cl.m * LOG2PI + c.logdet + np.einsum("nj,jk,nk->n", e, c.Sinv, e))
        return total

    def score(omega, y):
        cols = []
        for e, c in zip(resid(omega, y), covs):
            u = -(e @ c.Sinv)
            cols.append(u if per_obs else u.sum(axis=1, keepdims=True))
        return np.hstack(cols)

    draw = _sampler(fit, lambda omega, i: shifts_of(omega)[i])
    link = ThetaLink(
        loglik=lambda th, w: eng.loglik(th, shifts=shifts_of(w)),
        theta_hat=fit.theta,
        refit=lambda w: eng.refit(fit.theta, shifts=shifts_of(w)),
        score=lambda th, w: eng.score(th, shifts=shifts_of(w)),
    )
    return eng, data, covs, loglik, score, draw, link


def lmm_cluster_shift_scheme(fit):
    """``y_i + omega_i 1``, ``omega0 = 0_n``; flat with ``g_ii = 1' Sigma_i^-1 1``."""
    eng, data, covs, loglik, score, draw, link = _shift_common(fit, per_obs=False)
    n = data.n
    gdiag = np.array([c.Sinv.sum() for c in covs])

    def delta(theta):
        b, x = eng.split(theta)
        cs = eng.covs(x)
        out = np.zeros((eng.q, n))
        for i, (cl, c, e) in enumerate(zip(data.clusters, cs, eng._resid(b, None))):
            v = c.Sinv.sum(axis=1)
            out[: eng.q1, i] = cl.x.T @ v
            out[eng.q1 :, i] = np.einsum("j,ajk,k->a", v, c.dS, c.Sinv @ e)
        return out

    raw = PerturbedModel(
        name="lmm_cluster_shift",
        omega0=np.zeros(n),
        loglik=loglik,
        data=tuple(cl.y for cl in data.clusters),
        geometry=lambda omega: (np.diag(gdiag), np.zeros((n, n, n)), np.zeros((n, n, n))),
        sampler=draw,
        score=score,
        theta=_with_delta(link, delta),
        labels=data.ids,
    )
    return _finish(raw, "lmm_cluster_shift")


def lmm_mean_shift_scheme(fit):
    """``y_i + omega_i`` per observation, ``omega0 = 0_M``; block metric ``Sigma_i^-1``."""
    eng, data, covs, loglik, score, draw, link = _shift_common(fit, per_obs=True)
    M = data.M
    G = np.zeros((M, M))
    pos = 0
    for c in covs:
        k = c.Sinv.shape[0]
        G[pos : pos + k, pos : pos + k] = c.Sinv
        pos += k
    G = 0.5 * (G + G.T)

    def delta(theta):
        b, x = eng.split(theta)
        cs = eng.covs(x)
        blocks = []
        for cl, c, e in zip(data.clusters, cs, eng._resid(b, None)):
            u = c.Sinv @ e
            top = cl.x.T @ c.Sinv
            bottom = np.einsum("jk,akl,l->aj", c.Sinv, c.dS, u)
            blocks.append(np.vstack([top, bottom]))
        return np.hstack(blocks)

    zeros = np.zeros((M, M, M))
    raw = PerturbedModel(
        name="lmm_mean_shift",
        omega0=np.zeros(M),
        loglik=loglik,
        data=tuple(cl.y for cl in data.clusters),
        geometry=lambda omega: (G, zeros, zeros),
        sampler=draw,
        score=score,
        theta=_with_delta(link, delta),
        labels=tuple(f"{cid}:{k}" for cid, k in data.observation_labels()),
        info={"observation_labels": data.observation_labels()},
    )
    return _finish(raw, "lmm_mean_shift")


def _with_delta(link, delta):
    return ThetaLink(link.loglik, link.theta_hat, delta, link.refit, link.score)


def check_neg_hessian(M):
    M = 0.5 * (np.asarray(M, float) + np.asarray(M, float).T)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SingularHessian("negative Hessian is not positive definite") from None
    return M
