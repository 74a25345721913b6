"""Geometry of a perturbation manifold.

A :class:`PerturbedModel` bundles the perturbed log-likelihood
``l(omega | Y, theta)`` (with ``theta`` already bound) together with whatever
closed forms a scheme can supply.  :func:`geometry_at` returns the metric
``G``, skewness ``T`` and the Levi-Civita / alpha connections at one point,
falling back to Monte Carlo expectations when no closed form exists.

Index convention: ``gamma[i, j, k]`` is symmetric in ``(i, j)`` and ``k`` is
the lowered index, so the geodesic acceleration is
``-g^{is} gamma[j, k, s] v_j v_k``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import numdiff, rng
from ._accel import connection_accel, score_moments
from .errors import (
    DegenerateCurve,
    DimensionMismatch,
    DomainViolation,
    GeometryUnavailable,
    SingularMetric,
)

DEFAULT_MC_DRAWS = 200_000
DEFAULT_MC_SEED = 0
DEFAULT_PD_TOL = 1e-10
DEFAULT_ISO_TOL = 1e-8
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ThetaLink:
    """Joint dependence of the perturbed log-likelihood on ``(theta, omega)``.

    ``loglik(theta, omega)`` evaluates ``L(theta | omega)`` on the observed
    data.  ``delta(theta)`` optionally returns the analytic ``q x p`` matrix of
    mixed partials at ``omega0``; ``refit(omega)`` returns the maximizer of
    ``L(. | omega)`` (used for likelihood displacement checks).
    """

    loglik: Callable[[np.ndarray, np.ndarray], float]
    theta_hat: np.ndarray
    delta: Optional[Callable[[np.ndarray], np.ndarray]] = None
    refit: Optional[Callable[[np.ndarray], np.ndarray]] = None
    score: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True, eq=False)
class PerturbedModel:
    """A perturbation scheme.

    ``loglik(omega, y)`` must accept a batch of responses with a leading draw
    axis and return one value per draw.  ``geometry(omega)`` returns
    ``(G, T, Gamma0)``; ``Gamma0`` may be ``None`` to have it derived from the
    metric by finite differences.  ``sampler(omega, generator, size)`` draws
    response batches from ``p(Y | theta, omega)``.
    """

    name: str
    omega0: np.ndarray
    loglik: Callable[[np.ndarray, Any], np.ndarray]
    data: Any = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    geometry: Optional[Callable[[np.ndarray], tuple]] = None
    sampler: Optional[Callable[[np.ndarray, np.random.Generator, int], Any]] = None
    score: Optional[Callable[[np.ndarray, Any], np.ndarray]] = None
    theta: Optional[ThetaLink] = None
    labels: tuple = ()
    to_base: Optional[Callable[[np.ndarray], np.ndarray]] = None
    base: Optional["PerturbedModel"] = None
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return int(np.size(self.omega0))

    def contains(self, omega) -> bool:
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (self.p,) or not np.all(np.isfinite(omega)):
            return False
        if self.base is not None:
            return self.base.contains(self.to_base(omega))
        if self.lower is not None and np.any(omega <= self.lower):
            return False
        if self.upper is not None and np.any(omega >= self.upper):
            return False
        return True

    def check(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (self.p,):
            raise DimensionMismatch(f"omega has shape {omega.shape}, expected ({self.p},)")
        if not self.contains(omega):
            raise DomainViolation(f"{self.name}: omega outside the perturbation domain")
        return omega

    def observed_loglik(self, omega) -> float:
        return float(np.squeeze(self.loglik(np.asarray(omega, float), self.data)))

    def scores(self, omega, y) -> np.ndarray:
        """Per-draw omega-scores, shape ``(N, p)``."""
        if self.score is not None:
            return np.asarray(self.score(omega, y), dtype=float)
        return numdiff.gradient(lambda w: self.loglik(w, y), omega)


@dataclass(frozen=True, eq=False)
class GeometryAtPoint:
    omega: np.ndarray
    G: np.ndarray
    T: np.ndarray
    Gamma0: np.ndarray
    alpha: float
    GammaAlpha: np.ndarray
    Ginv: np.ndarray
    source: str = "closed_form"
    invertible: bool = True
    G_stderr: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class AppropriatenessVerdict:
    is_appropriate: bool
    c_hat: float
    correlation: np.ndarray
    min_eigenvalue: float
    max_offdiag_abs_corr: float
    max_iso_deviation: float
    rank: int
    singular: bool


@dataclass(frozen=True)
class GeodesicPath:
    t: np.ndarray
    omega: np.ndarray
    velocity: np.ndarray
    alpha: float


# ---------------------------------------------------------------------------
# helpers


def _symmetrize(a):
    return 0.5 * (a + a.T)


def safe_inverse(G, rel_tol=1e-12):
    """Inverse via the spectral decomposition; pseudo-inverse when singular."""
    w, v = np.linalg.eigh(_symmetrize(G))
    scale = max(np.abs(w).max(initial=0.0), np.finfo(float).tiny)
    keep = w > rel_tol * scale
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    return (v * inv_w) @ v.T, bool(keep.all())


def sym_sqrt(G, inverse=False):
    w, v = np.linalg.eigh(_symmetrize(G))
    if np.any(w <= 0):
        raise SingularMetric("metric is not positive definite")
    d = w ** (-0.5 if inverse else 0.5)
    return _symmetrize((v * d) @ v.T)


def levi_civita_from_metric(metric_fn, omega):
    """Gamma0_{ijk} = (d_i g_jk + d_j g_ik - d_k g_ij) / 2 from finite differences."""
    dg = numdiff.gradient(metric_fn, omega)  # dg[j, k, i] = d_i g_jk
    dg = np.moveaxis(dg, -1, 0)  # dg[i, j, k]
    return 0.5 * (dg + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0))


def transform_tensors(G, T, Gamma0, A):
    """Push covariant tensors through a linear coordinate change ``omega = A phi``."""
    Gn = _symmetrize(A.T @ G @ A)
    return Gn, _push3(T, A), _push3(Gamma0, A)


def _push3(X, A):
    if not np.any(X):
        return np.zeros((A.shape[1],) * 3)
    # one index at a time keeps the cost at O(p^4)
    X = np.tensordot(X, A, axes=([2], [0]))
    X = np.tensordot(X, A, axes=([1], [0]))
    X = np.tensordot(X, A, axes=([0], [0]))
    return X.transpose(2, 1, 0)


# ---------------------------------------------------------------------------
# Monte Carlo expectations


def mc_moments(model, omega, draws=DEFAULT_MC_DRAWS, seed=DEFAULT_MC_SEED, workers=1,
               third=True, connection=False):
    """Monte Carlo estimates of the score moments at ``omega``.

    Returns a dict with ``G`` (mean of ``s_i s_j``), ``G_stderr``, ``T`` (mean of
    ``s_i s_j s_k``), ``score_mean`` and, when ``connection`` is set,
    ``E[d_i d_j l * d_k l]``.
    """
    if model.sampler is None:
        raise GeometryUnavailable(f"{model.name}: no sampler for Monte Carlo geometry")
    omega = model.check(omega)
    p = model.p

    def block(gen, size):
        y = model.sampler(omega, gen, size)
        s = model.scores(omega, y)
        prod, prod_sq, trip = score_moments(s, third)
        out = {"n": size, "prod": prod, "prod_sq": prod_sq, "trip": trip, "sum": s.sum(axis=0)}
        if connection:
            hess = numdiff.hessian(lambda w: model.loglik(w, y), omega)
            out["conn"] = np.einsum("nij,nk->ijk", hess, s)
        return out

    parts = rng.map_blocks(block, seed, draws, workers=workers)
    n = 0
    prod = np.zeros((p, p))
    prod_sq = np.zeros((p, p))
    trip = np.zeros((p, p, p))
    ssum = np.zeros(p)
    conn = np.zeros((p, p, p))
    for part in parts:  # fixed block order
        n += part["n"]
        prod += part["prod"]
        prod_sq += part["prod_sq"]
        ssum += part["sum"]
        if third:
            trip += part["trip"]
        if connection:
            conn += part["conn"]
    G = prod / n
    var = np.maximum(prod_sq / n - G ** 2, 0.0)
    res = {
        "G": G,
        "G_stderr": np.sqrt(var / n),
        "score_mean": ssum / n,
        "draws": n,
    }
    if third:
        res["T"] = trip / n
    if connection:
        res["conn"] = conn / n
    return res


# ---------------------------------------------------------------------------
# operations


def geometry_at(model: PerturbedModel, omega, alpha: float = 0.0, *,
                mc_draws=DEFAULT_MC_DRAWS, seed=DEFAULT_MC_SEED, workers=1) -> GeometryAtPoint:
    """Metric, skewness and connections at ``omega``."""
    omega = model.check(omega)
    stderr = None
    if model.geometry is not None:
        G, T, Gamma0 = model.geometry(omega)
        if Gamma0 is None:
            Gamma0 = levi_civita_from_metric(lambda w: model.geometry(w)[0], omega)
        source = "closed_form"
    elif model.sampler is not None:
        mc = mc_moments(model, omega, mc_draws, seed, workers, third=True, connection=True)
        G, T = mc["G"], mc["T"]
        # Gamma^alpha = E[d_i d_j l d_k l] + (1 - alpha) T / 2  =>  Gamma0 adds T / 2
        Gamma0 = mc["conn"] + 0.5 * T
        Gamma0 = 0.5 * (Gamma0 + Gamma0.transpose(1, 0, 2))
        stderr = mc["G_stderr"]
        source = "monte_carlo"
    else:
        raise GeometryUnavailable(f"{model.name}: neither closed-form geometry nor a sampler")
    G = _symmetrize(np.asarray(G, dtype=float))
    T = np.asarray(T, dtype=float)
    Gamma0 = np.asarray(Gamma0, dtype=float)
    Ginv, invertible = safe_inverse(G)
    return GeometryAtPoint(
        omega=omega,
        G=G,
        T=T,
        Gamma0=Gamma0,
        alpha=float(alpha),
        GammaAlpha=Gamma0 - 0.5 * float(alpha) * T,
        Ginv=Ginv,
        source=source,
        invertible=invertible,
        G_stderr=stderr,
    )


def tangent_length(geom: GeometryAtPoint, h) -> float:
    """Squared length ``h^T G h`` of a tangent vector."""
    h = np.asarray(h, dtype=float)
    if h.shape != (geom.p,):
        raise DimensionMismatch(f"direction has shape {h.shape}, expected ({geom.p},)")
    return float(h @ geom.G @ h)


def path_distance(model: PerturbedModel, t, omegas, alpha_for_geometry: float = 0.0) -> float:
    """Length of a sampled curve: the integral of ``sqrt(w' G w')`` over ``t``.

    Velocities come from second-order finite differences on the grid and the
    integral from composite Simpson quadrature (trapezoid for two points).
    """
    from scipy.integrate import simpson

    t = np.asarray(t, dtype=float)
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    if t.size < 2 or omegas.shape[0] != t.size:
        raise DegenerateCurve("a curve needs at least two sampled points")
    if np.any(np.diff(t) <= 0):
        raise DegenerateCurve("parameter grid must be strictly increasing")
    if omegas.shape[1] != model.p:
        raise DimensionMismatch("curve dimension does not match the model")
    if t.size == 2:
        vel = np.repeat(((omegas[1] - omegas[0]) / (t[1] - t[0]))[None, :], 2, axis=0)
    else:
        vel = np.gradient(omegas, t, axis=0, edge_order=2)
    speed = np.empty(t.size)
    for r in range(t.size):
        if not np.any(vel[r]):
            speed[r] = 0.0
            model.check(omegas[r])
            continue
        geom = geometry_at(model, omegas[r], alpha_for_geometry)
        speed[r] = math.sqrt(max(tangent_length(geom, vel[r]), 0.0))
    if t.size == 2:
        return float(0.5 * (speed[0] + speed[1]) * (t[1] - t[0]))
    return float(simpson(speed, x=t))


def _geodesic_rhs(model, alpha, omega, vel):
    if not model.contains(omega):
        raise DomainViolation(f"{model.name}: geodesic left the perturbation domain")
    geom = geometry_at(model, omega, alpha)
    w = np.linalg.eigvalsh(geom.G)
    if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
        raise SingularMetric(f"{model.name}: metric not invertible along the geodesic")
    return -connection_accel(geom.Ginv, geom.GammaAlpha, vel)


def geodesic_trace(model: PerturbedModel, alpha: float, h, t_end: float = 1.0,
                   steps: Optional[int] = None, omega_start=None) -> GeodesicPath:
    """Integrate the alpha-geodesic equation from ``(omega0, h)``.

    Classical fixed-step fourth-order Runge-Kutta on ``(omega, omega')``; the
    default is 1000 steps per unit of ``t``.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (model.p,):
        raise DimensionMismatch(f"direction has shape {h.shape}, expected ({model.p},)")
    if not np.any(h):
        raise DimensionMismatch("direction must be nonzero")
    if steps is None:
        steps = max(1, int(math.ceil(1000 * abs(t_end))))
    if steps < 1:
        raise ValueError("steps must be positive")
    start = model.omega0 if omega_start is None else omega_start
    omega = model.check(start).copy()
    vel = h.copy()
    dt = float(t_end) / steps
    ts = np.linspace(0.0, float(t_end), steps + 1)
    path = np.empty((steps + 1, model.p))
    vels = np.empty((steps + 1, model.p))
    path[0], vels[0] = omega, vel
    f = lambda w, v: _geodesic_rhs(model, alpha, w, v)  # noqa: E731
    for n in range(steps):
        k1w, k1v = vel, f(omega, vel)
        k2w, k2v = vel + 0.5 * dt * k1v, f(omega + 0.5 * dt * k1w, vel + 0.5 * dt * k1v)
        k3w, k3v = vel + 0.5 * dt * k2v, f(omega + 0.5 * dt * k2w, vel + 0.5 * dt * k2v)
        k4w, k4v = vel + dt * k3v, f(omega + dt * k3w, vel + dt * k3v)
        omega = omega + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        vel = vel + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not model.contains(omega):
            raise DomainViolation(f"{model.name}: geodesic left the perturbation domain at t={ts[n + 1]:.4g}")
        path[n + 1], vels[n + 1] = omega, vel
    return GeodesicPath(t=ts, omega=path, velocity=vels, alpha=float(alpha))


def appropriateness_report(geom: GeometryAtPoint, pd_tolerance: float = DEFAULT_PD_TOL,
                           iso_tolerance: float = DEFAULT_ISO_TOL) -> AppropriatenessVerdict:
    """Check positive definiteness and isotropy ``G = c I`` at the null point."""
    G = geom.G
    p = G.shape[0]
    c_hat = float(np.trace(G) / p)
    w = np.linalg.eigvalsh(G)
    min_eig = float(w[0])
    diag = np.diag(G)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = np.sqrt(np.outer(diag, diag))
        corr = np.where(denom > 0, G / np.where(denom > 0, denom, 1.0), np.nan)
    off = ~np.eye(p, dtype=bool)
    max_corr = float(np.nanmax(np.abs(corr[off]))) if p > 1 and np.any(np.isfinite(corr[off])) else 0.0
    dev = float(np.abs(G - c_hat * np.eye(p)).max())
    scale = max(abs(c_hat), np.finfo(float).tiny)
    rank = int(np.sum(w > 1e-12 * max(abs(w).max(), np.finfo(float).tiny)))
    pd_ok = c_hat > 0 and min_eig > pd_tolerance * scale
    iso_ok = c_hat > 0 and dev <= iso_tolerance * scale
    return AppropriatenessVerdict(
        is_appropriate=bool(pd_ok and iso_ok),
        c_hat=max(c_hat, 0.0),
        correlation=corr,
        min_eigenvalue=min_eig,
        max_offdiag_abs_corr=max_corr,
        max_iso_deviation=dev,
        rank=rank,
        singular=not pd_ok,
    )


def rescale_perturbation(model: PerturbedModel, geom_at_omega0: GeometryAtPoint, c: float = 1.0) -> PerturbedModel:
    """Re-coordinate the scheme so that its metric at the null point is ``c I``.

    New coordinates satisfy ``omega_new = omega0 + c^{-1/2} G^{1/2} (omega - omega0)``
    with the symmetric square root, i.e. ``omega = omega0 + A (omega_new - omega0)``
    with ``A = c^{1/2} G^{-1/2}``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    G0 = geom_at_omega0.G
    w = np.linalg.eigvalsh(G0)
    if w[0] <= DEFAULT_PD_TOL * max(np.trace(G0) / G0.shape[0], np.finfo(float).tiny):
        raise SingularMetric(f"{model.name}: metric at the null point is not positive definite")
    A = math.sqrt(c) * sym_sqrt(G0, inverse=True)
    w0 = np.asarray(model.omega0, dtype=float)

    def to_base(wt):
        return w0 + A @ (np.asarray(wt, dtype=float) - w0)

    def loglik(wt, y):
        return model.loglik(to_base(wt), y)

    score = None
    if model.score is not None:
        score = lambda wt, y: model.score(to_base(wt), y) @ A  # noqa: E731

    sampler = None
    if model.sampler is not None:
        sampler = lambda wt, gen, size: model.sampler(to_base(wt), gen, size)  # noqa: E731

    geometry = None
    if model.geometry is not None:
        def geometry(wt):
            G, T, C = model.geometry(to_base(wt))
            if C is None:
                C = levi_civita_from_metric(lambda u: model.geometry(u)[0], to_base(wt))
            return transform_tensors(np.asarray(G), np.asarray(T), np.asarray(C), A)

    theta = None
    if model.theta is not None:
        link = model.theta
        theta = ThetaLink(
            loglik=lambda th, wt: link.loglik(th, to_base(wt)),
            theta_hat=link.theta_hat,
            delta=(lambda th: link.delta(th) @ A) if link.delta is not None else None,
            refit=(lambda wt: link.refit(to_base(wt))) if link.refit is not None else None,
            score=(lambda th, wt: link.score(th, to_base(wt))) if link.score is not None else None,
        )

    info = dict(model.info)
    info.update({"rescaled_from": model.name, "rescale_matrix": A, "rescale_c": float(c)})
    return dataclasses.replace(
        model,
        name=f"{model.name}~rescaled",
        loglik=loglik,
        lower=None,
        upper=None,
        geometry=geometry,
        sampler=sampler,
        score=score,
        theta=theta,
        to_base=to_base,
        base=model,
        info=info,
    )
