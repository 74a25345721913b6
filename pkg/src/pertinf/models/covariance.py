"""Within-cluster covariance structures ``Sigma_i(xi)`` and their derivatives.

``deriv`` returns an array of shape ``(q2, m, m)``; reshaping it to
``(q2, m * m)`` gives the row-major ``d vec(Sigma) / d xi`` used in the
information and Delta formulas.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


class CovarianceStructure:
    tag = ""
    names: tuple = ()

    @property
    def q2(self) -> int:
        return len(self.names)

    def build(self, xi, cluster) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, xi, cluster) -> np.ndarray:
        raise NotImplementedError

    def feasible(self, xi, cluster) -> bool:
        try:
            S = self.build(xi, cluster)
        except ValidationError:
            return False
        if not np.all(np.isfinite(S)):
            return False
        return bool(np.linalg.eigvalsh(S)[0] > 0)

    def initial(self, data, resid) -> np.ndarray:
        raise NotImplementedError


class ScaledIdentity(CovarianceStructure):
    """``sigma^2 I``."""

    tag = "scaled_identity"
    names = ("sigma2",)

    def build(self, xi, cluster):
        if xi[0] <= 0:
            raise ValidationError("sigma2 must be positive")
        return xi[0] * np.eye(cluster.m)

    def deriv(self, xi, cluster):
        return np.eye(cluster.m)[None, :, :]

    def initial(self, data, resid):
        return np.array([np.mean(np.concatenate(resid) ** 2)])


class CompoundSymmetry(CovarianceStructure):
    """``sigma^2 [(1 - rho) I + rho 1 1']``."""

    tag = "compound_symmetry"
    names = ("sigma2", "rho")

    def build(self, xi, cluster):
        s2, rho = xi
        m = cluster.m
        if s2 <= 0 or not (-1.0 / max(m - 1, 1) < rho < 1.0):
            raise ValidationError("compound symmetry parameters outside the PD region")
        return s2 * ((1 - rho) * np.eye(m) + rho * np.ones((m, m)))

    def deriv(self, xi, cluster):
        s2, rho = xi
        m = cluster.m
        J = np.ones((m, m))
        I = np.eye(m)
        return np.stack([(1 - rho) * I + rho * J, s2 * (J - I)])

    def initial(self, data, resid):
        s2 = np.mean(np.concatenate(resid) ** 2)
        num = sum(r.sum() ** 2 - (r ** 2).sum() for r in resid)
        den = sum(r.size * (r.size - 1) for r in resid)
        rho = num / den / s2 if den > 0 else 0.0
        return np.array([s2, float(np.clip(rho, 0.0, 0.8))])


class VarianceFunctionLinearAR(CovarianceStructure):
    """Variance function with a linear autocorrelation in the visit lag.

    ``Sigma_jk = sqrt(V(d_j) V(d_k)) rho(|d_j - d_k|)`` for ``j != k`` and
    ``V(d_j)`` on the diagonal, where ``V(d) = exp(xi0 + xi1 d + xi2 d^2 + xi3 d^3)``
    and ``rho(l) = xi4 + xi5 l``.  Correlations must stay inside ``(-1, 1)``.
    """

    tag = "variance_function_with_linear_autocorrelation"
    names = ("xi0", "xi1", "xi2", "xi3", "xi4", "xi5")

    @staticmethod
    def _d(cluster):
        if cluster.d is None:
            raise ValidationError("variance-function covariance needs the visit covariate d")
        return cluster.d

    def _parts(self, xi, cluster):
        d = self._d(cluster)
        powers = np.vstack([d ** a for a in range(4)])
        logv = xi[:4] @ powers
        sv = np.exp(0.5 * logv)
        lag = np.abs(d[:, None] - d[None, :])
        rho = xi[4] + xi[5] * lag
        off = ~np.eye(d.size, dtype=bool)
        if np.any(np.abs(rho[off]) >= 1.0):
            raise ValidationError("autocorrelation outside (-1, 1)")
        R = np.where(off, rho, 1.0)
        return powers, sv, lag, off, R

    def build(self, xi, cluster):
        _, sv, _, _, R = self._parts(np.asarray(xi, float), cluster)
        return np.outer(sv, sv) * R

    def deriv(self, xi, cluster):
        xi = np.asarray(xi, float)
        powers, sv, lag, off, R = self._parts(xi, cluster)
        S = np.outer(sv, sv) * R
        out = np.empty((6,) + S.shape)
        for a in range(4):
            out[a] = S * 0.5 * (powers[a][:, None] + powers[a][None, :])
        base = np.outer(sv, sv)
        out[4] = np.where(off, base, 0.0)
        out[5] = np.where(off, base * lag, 0.0)
        return out

    def initial(self, data, resid):
        s2 = np.mean(np.concatenate(resid) ** 2)
        return np.array([np.log(s2), 0.0, 0.0, 0.0, 0.3, 0.0])


STRUCTURES = {
    ScaledIdentity.tag: ScaledIdentity,
    CompoundSymmetry.tag: CompoundSymmetry,
    VarianceFunctionLinearAR.tag: VarianceFunctionLinearAR,
    "cs": CompoundSymmetry,
    "identity": ScaledIdentity,
    "varfun": VarianceFunctionLinearAR,
}


def get_structure(tag) -> CovarianceStructure:
    if isinstance(tag, CovarianceStructure):
        return tag
    try:
        return STRUCTURES[tag]()
    except KeyError:
        raise ValidationError(f"unknown covariance structure {tag!r}") from None
