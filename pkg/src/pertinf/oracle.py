"""Independent numerical checks for the closed forms.

Nothing here feeds a production report: the oracle recomputes metrics by
Monte Carlo, derivatives by finite differences, connections from the metric
and re-evaluates influence measures in transformed coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import numdiff
from .errors import DomainViolation, NoSampler, NonMonotoneDiffeo, ValidationError
from .geometry import (
    DEFAULT_MC_DRAWS,
    GeodesicPath,
    GeometryAtPoint,
    PerturbedModel,
    geometry_at,
    levi_civita_from_metric,
    mc_moments,
)
from .measures import (
    ObjectiveProbe,
    covariant_hessian,
    eigen_influence,
    first_order_influence,
    normal_curvature,
    second_order_influence,
)


@dataclass(frozen=True)
class OracleConfig:
    """``fd_rel_step`` is the relative gradient step; Hessians use its 3/4 power
    (``eps^(1/3) -> eps^(1/4)`` at the default)."""

    seed: int
    mc_draws: int = DEFAULT_MC_DRAWS
    fd_rel_step: float = numdiff.GRAD_REL_STEP
    quadrature_tol: float = 1e-10
    ode_steps_per_unit: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("the oracle needs an explicit seed")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValidationError("seed must be an integer")
        for name in ("mc_draws", "fd_rel_step", "quadrature_tol", "ode_steps_per_unit", "workers"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def hess_rel_step(self) -> float:
        return self.fd_rel_step ** 0.75


def mc_metric(model: PerturbedModel, omega, cfg: OracleConfig):
    """Monte Carlo metric ``mean(s_i s_j)`` and the standard error of each entry."""
    if model.sampler is None:
        raise NoSampler(f"{model.name}: no sampler")
    mc = mc_moments(model, omega, cfg.mc_draws, cfg.seed, cfg.workers, third=False)
    return mc["G"], mc["G_stderr"]


def fd_probe(f: Callable, omega0, cfg: OracleConfig, name: str = "objective") -> ObjectiveProbe:
    """Central-difference probe of a scalar objective."""
    omega0 = np.asarray(omega0, dtype=float)
    f0 = numdiff._checked(f, omega0)
    grad = numdiff.gradient(f, omega0, cfg.fd_rel_step)
    hess = numdiff.hessian(f, omega0, cfg.hess_rel_step)
    return ObjectiveProbe(float(f0), grad, hess, "finite_difference", name)


def metric_connection(model: PerturbedModel, omega, alpha: float = 0.0):
    """``Gamma^alpha`` with ``Gamma0`` rebuilt from finite differences of ``G``."""
    if model.geometry is None:
        raise ValidationError(f"{model.name}: needs a closed-form metric")
    omega = model.check(omega)
    G, T, _ = model.geometry(omega)
    C = levi_civita_from_metric(lambda w: model.geometry(w)[0], omega)
    return np.asarray(G, float), C - 0.5 * alpha * np.asarray(T, float)


def geodesic_residual(model: PerturbedModel, path, alpha: float, t=None) -> float:
    """Largest Euclidean norm of ``w'' + G^-1 Gamma^alpha(w', w')`` over interior grid points.

    ``path`` is a :class:`GeodesicPath` or an array of points with grid ``t``.
    Derivatives come from central differences on the (possibly uneven) grid.
    """
    if isinstance(path, GeodesicPath):
        t, pts = path.t, path.omega
    else:
        pts = np.atleast_2d(np.asarray(path, dtype=float))
        t = np.asarray(t, dtype=float)
    if pts.shape[0] < 3 or t.size != pts.shape[0]:
        raise ValidationError("need at least three path points on a matching grid")
    for w in pts:
        if not model.contains(w):
            raise DomainViolation(f"{model.name}: path leaves the perturbation domain")
    worst = 0.0
    for k in range(1, t.size - 1):
        h0, h1 = t[k] - t[k - 1], t[k + 1] - t[k]
        vel = (pts[k + 1] - pts[k - 1]) / (h0 + h1)
        if h0 != h1:
            vel = (h0 ** 2 * pts[k + 1] - h1 ** 2 * pts[k - 1] + (h1 ** 2 - h0 ** 2) * pts[k]) / (h0 * h1 * (h0 + h1))
        acc = 2.0 * (h0 * pts[k + 1] - (h0 + h1) * pts[k] + h1 * pts[k - 1]) / (h0 * h1 * (h0 + h1))
        G, gam = metric_connection(model, pts[k], alpha)
        force = np.linalg.solve(G, np.einsum("jks,j,k->s", gam, vel, vel))
        worst = max(worst, float(np.linalg.norm(acc + force)))
    return worst


# ---------------------------------------------------------------------------
# reparametrization harness


@dataclass(frozen=True)
class Diffeo:
    """Componentwise ``phi_i = w0_i + a_i u + c_i u^2 + b_i u^3`` with ``u = w_i - w0_i``.

    Strictly increasing on the whole line when ``a > 0``, ``b >= 0`` and
    ``c^2 < 3 a b`` (or ``c = 0``).
    """

    a: np.ndarray
    b: np.ndarray
    c: Optional[np.ndarray] = None

    def check(self, p):
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        c = np.zeros(p) if self.c is None else np.asarray(self.c, float)
        if a.shape != (p,) or b.shape != (p,) or c.shape != (p,):
            raise ValidationError("diffeomorphism coefficients must have one entry per coordinate")
        if np.any(a <= 0) or np.any(b < 0) or np.any((c != 0) & (c ** 2 >= 3 * a * b)):
            raise NonMonotoneDiffeo("diffeomorphism is not strictly increasing")
        return a, b, c


@dataclass(frozen=True)
class InvarianceRecord:
    fi: np.ndarray  # (n_dirs, 2): omega and phi coordinates
    si: np.ndarray
    ssi: np.ndarray
    deviation: dict

    @property
    def max_deviation(self) -> float:
        return max(self.deviation.values())


def transform_to_phi(probe: ObjectiveProbe, geom: GeometryAtPoint, diffeo: Diffeo):
    """Probe and geometry at the null point in ``phi`` coordinates.

    With ``B = d omega / d phi`` and ``K_s = d^2 omega_s / d phi^2`` (diagonal here):
    gradient ``B' grad``, Hessian ``B' H B + sum_s K_s grad_s``, metric ``B' G B``,
    ``T`` as a 3-tensor and ``Gamma0_abc = B B B Gamma0 + g_sk K_s,ab B_kc``.
    """
    p = probe.p
    a, b, c = diffeo.check(p)
    B = np.diag(1.0 / a)
    # inverse-function second derivative at the fixed point: -phi'' / phi'^3
    K = -2.0 * c / a ** 3
    Kt = np.zeros((p, p, p))  # Kt[s, a, b] = d^2 omega_s / d phi_a d phi_b
    idx = np.arange(p)
    Kt[idx, idx, idx] = K
    grad = B.T @ probe.grad
    hess = B.T @ probe.hess @ B + np.einsum("sab,s->ab", Kt, probe.grad)
    G = B.T @ geom.G @ B
    T = np.einsum("ijk,ia,jb,kc->abc", geom.T, B, B, B)
    C = np.einsum("ijk,ia,jb,kc->abc", geom.Gamma0, B, B, B) + np.einsum("sk,sab,kc->abc", geom.G, Kt, B)
    Ginv = np.linalg.inv(G)
    new_geom = GeometryAtPoint(
        omega=geom.omega, G=G, T=T, Gamma0=C, alpha=geom.alpha, GammaAlpha=C - 0.5 * geom.alpha * T,
        Ginv=Ginv, source=geom.source + "+reparametrized", invertible=geom.invertible,
    )
    return ObjectiveProbe(probe.f0, grad, hess, probe.provenance, probe.name), new_geom, np.diag(a)


def _rel_dev(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-12 * scale)))


def _measures(probe, geom, dirs):
    Ht = covariant_hessian(probe, geom)
    norm = eigen_influence(Ht, geom.G).norm
    fi = np.array([first_order_influence(probe, geom.G, h) for h in dirs])
    si = np.array([second_order_influence(Ht, geom.G, h) for h in dirs])
    ssi = si / norm if norm > 0 else np.full_like(si, np.nan)
    return fi, si, ssi


def invariance_harness(model: PerturbedModel, probe_builder, geom: GeometryAtPoint, diffeo_spec: Diffeo,
                       cfg: OracleConfig, directions: Optional[Sequence] = None) -> InvarianceRecord:
    """Compare FI, SI and SSI in ``omega`` and ``phi`` coordinates.

    ``probe_builder`` is an :class:`ObjectiveProbe` or a callable returning one
    for ``model``.  Directions default to the basis vectors plus a few seeded
    random ones; each is pushed forward by the Jacobian of the map.
    """
    probe = probe_builder(model) if callable(probe_builder) else probe_builder
    p = probe.p
    if directions is None:
        gen = np.random.default_rng(cfg.seed)
        directions = np.vstack([np.eye(p), gen.standard_normal((4, p))])
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    probe_phi, geom_phi, J = transform_to_phi(probe, geom, diffeo_spec)
    fi0, si0, ssi0 = _measures(probe, geom, dirs)
    fi1, si1, ssi1 = _measures(probe_phi, geom_phi, dirs @ J.T)
    dev = {"FI": _rel_dev(fi0, fi1), "SI": _rel_dev(si0, si1), "SSI": _rel_dev(ssi0, ssi1)}
    return InvarianceRecord(np.column_stack([fi0, fi1]), np.column_stack([si0, si1]),
                            np.column_stack([ssi0, ssi1]), dev)


def random_diffeo(gen: np.random.Generator, p: int, quadratic: bool = False) -> Diffeo:
    a = gen.uniform(0.5, 2.0, p)
    b = gen.uniform(0.0, 1.0, p)
    c = None
    if quadratic:
        c = gen.uniform(-1.0, 1.0, p) * np.sqrt(3 * a * b) * 0.99
    return Diffeo(a, b, c)


def curvature_scale_deviation(probe: ObjectiveProbe, k: float, directions) -> float:
    """Largest relative change of the normal curvature when ``f`` becomes ``k f``."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    scaled = probe.scaled(k)
    base = np.array([k * normal_curvature(probe, h) for h in dirs])
    new = np.array([normal_curvature(scaled, h) for h in dirs])
    return _rel_dev(base, new)


def fd_metric_check(model: PerturbedModel, omega, cfg: OracleConfig, k_sigma: float = 3.0):
    """Closed-form metric against Monte Carlo: returns ``(passed, max_z, G, G_hat, stderr)``."""
    G = geometry_at(model, omega).G
    G_hat, se = mc_metric(model, omega, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(G_hat - G) / se, np.where(np.abs(G_hat - G) > 1e-12, np.inf, 0.0))
    zmax = float(z.max())
    return zmax <= k_sigma, zmax, G, G_hat, se


def ode_steps(cfg: OracleConfig, t_end: float) -> int:
    return max(1, int(math.ceil(cfg.ode_steps_per_unit * abs(t_end))))
