"""First- and second-order influence measures on a perturbation manifold.

Everything here is evaluated at the null perturbation and takes the metric
``G`` explicitly, so the same functions serve raw and rescaled schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._accel import rayleigh_batch
from .errors import DegenerateDirection, DimensionMismatch, SingularMetric, ZeroHessian
from .geometry import AppropriatenessVerdict, GeometryAtPoint, appropriateness_report

UNDEFINED = float("nan")
SINGULAR_REL = 1e-12


@dataclass(frozen=True)
class ObjectiveProbe:
    """Value, gradient and Hessian of an objective at the null perturbation."""

    f0: float
    grad: np.ndarray
    hess: np.ndarray
    provenance: str = "closed_form"
    name: str = "objective"

    def __post_init__(self):
        grad = np.asarray(self.grad, dtype=float).ravel()
        hess = np.asarray(self.hess, dtype=float)
        if hess.shape != (grad.size, grad.size):
            raise DimensionMismatch("Hessian shape does not match the gradient")
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", 0.5 * (hess + hess.T))
        object.__setattr__(self, "f0", float(self.f0))

    @property
    def p(self) -> int:
        return self.grad.size

    def scaled(self, k: float) -> "ObjectiveProbe":
        return ObjectiveProbe(k * self.f0, k * self.grad, k * self.hess, self.provenance, f"{k}*{self.name}")


@dataclass(frozen=True)
class EigenInfluence:
    eigenvalues: np.ndarray
    normalized_eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    norm: float

    @property
    def defined(self) -> bool:
        return self.norm > 0


@dataclass(frozen=True)
class InfluenceReport:
    basis_fi: np.ndarray
    basis_si: np.ndarray
    basis_ssi: np.ndarray
    basis_c: np.ndarray
    basis_b: np.ndarray
    eigenvalues: np.ndarray
    normalized_eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    fi_max: float
    h_max: np.ndarray
    verdict: AppropriatenessVerdict
    ssi_defined: bool
    b_defined: bool
    h_max_defined: bool
    labels: tuple = ()
    scheme: str = ""
    objective: str = ""

    @property
    def p(self) -> int:
        return self.basis_si.size

    @property
    def warning(self) -> Optional[str]:
        if self.verdict.is_appropriate:
            return None
        return "perturbation is not appropriate (G(omega0) != c I); per-component measures are not comparable"


# ---------------------------------------------------------------------------


def _as_direction(h, p):
    h = np.asarray(h, dtype=float)
    if h.shape != (p,):
        raise DimensionMismatch(f"direction has shape {h.shape}, expected ({p},)")
    return h


def _metric_length(G, h):
    den = float(h @ G @ h)
    if not den > 0:
        raise DegenerateDirection("direction has zero length under the metric")
    return den


def _sign_fix(v):
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def _whitener(G):
    G = 0.5 * (np.asarray(G, dtype=float) + np.asarray(G, dtype=float).T)
    w, v = np.linalg.eigh(G)
    p = G.shape[0]
    if w[0] <= SINGULAR_REL * max(np.trace(G) / p, np.finfo(float).tiny):
        raise SingularMetric("metric is not positive definite")
    return (v * w ** -0.5) @ v.T


def first_order_influence(probe: ObjectiveProbe, G, h) -> float:
    """FI in direction ``h``: ``(h'grad)^2 / h'Gh``."""
    h = _as_direction(h, probe.p)
    den = _metric_length(G, h)
    return float((h @ probe.grad) ** 2 / den)


def fi_maximizer(probe: ObjectiveProbe, G):
    """Maximum FI over directions and the maximizing direction.

    Returns ``(fi_max, h_max, defined)``.  ``h_max`` is ``G^{-1/2} grad`` scaled
    to unit length with its largest entry positive; it is the zero vector and
    ``defined`` is false when the gradient vanishes.
    """
    W = _whitener(G)
    z = W @ probe.grad
    fi_max = float(z @ z)
    norm = math.sqrt(fi_max)
    if norm == 0.0:
        return 0.0, np.zeros(probe.p), False
    return fi_max, _sign_fix(z / norm), True


def covariant_hessian(probe: ObjectiveProbe, geom: GeometryAtPoint) -> np.ndarray:
    """``H_ij - g^{sr} Gamma0_{ijs} d_r f``, using the Levi-Civita connection."""
    if geom.p != probe.p:
        raise DimensionMismatch("probe and geometry dimensions differ")
    if not geom.invertible:
        raise SingularMetric("covariant Hessian needs an invertible metric")
    contra = geom.Ginv @ probe.grad
    Ht = probe.hess - np.einsum("ijs,s->ij", geom.Gamma0, contra)
    return 0.5 * (Ht + Ht.T)


def second_order_influence(Htilde, G, h) -> float:
    """SI in direction ``h``: ``h'H~h / h'Gh``."""
    h = _as_direction(h, np.shape(G)[0])
    den = _metric_length(G, h)
    return float(h @ Htilde @ h / den)


def hessian_norm(Htilde, G) -> float:
    """``||G^{-1} H~||_M`` as the root sum of squared generalized eigenvalues."""
    W = _whitener(G)
    M = W @ np.asarray(Htilde, dtype=float) @ W
    # trace(M^2) for symmetric M is the squared Frobenius norm
    return float(np.sqrt(np.sum((0.5 * (M + M.T)) ** 2)))


def standardized_si(Htilde, G, h, norm: Optional[float] = None) -> float:
    """SSI: SI divided by ``||G^{-1} H~||_M``.  Raises :class:`ZeroHessian` when undefined."""
    if norm is None:
        norm = hessian_norm(Htilde, G)
    if norm == 0.0:
        raise ZeroHessian("SSI undefined: covariant Hessian is identically zero")
    return second_order_influence(Htilde, G, h) / norm


def normal_curvature(probe: ObjectiveProbe, h) -> float:
    """Cook's normal curvature of the influence graph (Euclidean geometry)."""
    h = _as_direction(h, probe.p)
    g = probe.grad
    den = float(h @ h + (h @ g) ** 2)
    if not den > 0:
        raise DegenerateDirection("direction must be nonzero")
    return float(h @ probe.hess @ h / den / math.sqrt(1.0 + g @ g))


def classical_curvatures(probe: ObjectiveProbe, h):
    """Normal curvature ``C_h`` and conformal normal curvature ``B_h``."""
    c = normal_curvature(probe, h)
    hn = float(np.sqrt(np.sum(probe.hess ** 2)))
    if hn == 0.0:
        raise ZeroHessian("B_h undefined: Hessian is identically zero")
    return c, c * math.sqrt(1.0 + probe.grad @ probe.grad) / hn


def eigen_influence(Htilde, G) -> EigenInfluence:
    """Generalized eigenpairs of ``H~ u = lambda G u`` with G-orthonormal ``u``.

    Ordered by decreasing ``|lambda|``; ties go to the vector whose
    largest-magnitude coordinate has the smaller index.
    """
    W = _whitener(G)
    M = W @ np.asarray(Htilde, dtype=float) @ W
    lam, vecs = np.linalg.eigh(0.5 * (M + M.T))
    U = W @ vecs
    U = np.column_stack([_sign_fix(U[:, k]) for k in range(U.shape[1])])
    scale = max(np.abs(lam).max(initial=0.0), np.finfo(float).tiny)
    keys = [(-round(abs(l) / scale, 10), int(np.argmax(np.abs(U[:, k])))) for k, l in enumerate(lam)]
    order = sorted(range(lam.size), key=lambda k: keys[k])
    lam = lam[order]
    U = U[:, order]
    norm = float(np.sqrt(np.sum(lam ** 2)))
    lam_hat = lam / norm if norm > 0 else np.full_like(lam, UNDEFINED)
    return EigenInfluence(lam, lam_hat, U, norm)


def batch_influence(Htilde, G, hs, grad=None):
    """SI (and FI when ``grad`` is given) for many directions at once.

    ``hs`` holds one direction per row; returns ``(si, fi)`` arrays (``fi`` is
    ``None`` without a gradient).
    """
    num, den = rayleigh_batch(Htilde, G, hs)
    if np.any(den <= 0):
        raise DegenerateDirection("a direction has zero length under the metric")
    si = num / den
    fi = None
    if grad is not None:
        fi = (np.atleast_2d(hs) @ np.asarray(grad, dtype=float)) ** 2 / den
    return si, fi


def influence_report(model, probe: ObjectiveProbe, geom: GeometryAtPoint,
                     verdict: Optional[AppropriatenessVerdict] = None) -> InfluenceReport:
    """All measures along the coordinate directions plus the eigen-profile."""
    if geom.p != probe.p:
        raise DimensionMismatch("probe and geometry dimensions differ")
    if verdict is None:
        verdict = appropriateness_report(geom)
    G = geom.G
    gdiag = np.diag(G).copy()
    if np.any(gdiag <= 0):
        raise DegenerateDirection("a coordinate direction has zero metric length")
    Ht = covariant_hessian(probe, geom)
    fi = probe.grad ** 2 / gdiag
    si = np.diag(Ht) / gdiag
    eig = eigen_influence(Ht, G)
    ssi = si / eig.norm if eig.defined else np.full_like(si, UNDEFINED)
    g = probe.grad
    hdiag = np.diag(probe.hess)
    c = hdiag / (1.0 + g ** 2) / math.sqrt(1.0 + g @ g)
    hn = float(np.sqrt(np.sum(probe.hess ** 2)))
    b = hdiag / (1.0 + g ** 2) / hn if hn > 0 else np.full_like(c, UNDEFINED)
    fi_max, h_max, h_ok = fi_maximizer(probe, G)
    labels = tuple(getattr(model, "labels", ()) or ()) if model is not None else ()
    return InfluenceReport(
        basis_fi=fi,
        basis_si=si,
        basis_ssi=ssi,
        basis_c=c,
        basis_b=b,
        eigenvalues=eig.eigenvalues,
        normalized_eigenvalues=eig.normalized_eigenvalues,
        eigenvectors=eig.eigenvectors,
        fi_max=fi_max,
        h_max=h_max,
        verdict=verdict,
        ssi_defined=eig.defined,
        b_defined=hn > 0,
        h_max_defined=h_ok,
        labels=labels,
        scheme=getattr(model, "name", "") if model is not None else "",
        objective=probe.name,
    )
