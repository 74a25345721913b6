"""Objective functions at the null perturbation: likelihood displacement,
negative residual sum of squares and the log-likelihood ratio."""

from __future__ import annotations

import numpy as np

from .. import numdiff
from ..errors import SingularHessian, ValidationError
from ..measures import ObjectiveProbe

INTERESTS = ("full", "beta", "xi")


def displacement_matrix(fit, interest: str = "full", hessian: str = "block") -> np.ndarray:
    """``M`` in ``H_LD = 2 Delta' M Delta``.

    For a sub-vector of interest the nuisance block ``N`` is removed:
    ``M = (-L)^-1 - E_N (-L_NN)^-1 E_N'``.
    """
    if interest not in INTERESTS:
        raise ValidationError(f"unknown parameter block {interest!r}")
    if hessian == "block":
        Lneg = fit.neg_hessian
    elif hessian == "observed":
        Lneg = fit.neg_hessian_observed
    else:
        raise ValidationError(f"unknown Hessian choice {hessian!r}")
    Lneg = 0.5 * (Lneg + Lneg.T)
    try:
        np.linalg.cholesky(Lneg)
    except np.linalg.LinAlgError:
        raise SingularHessian("-L'' is not positive definite at the fit") from None
    M = np.linalg.inv(Lneg)
    if interest != "full":
        nuis = fit.blocks["xi" if interest == "beta" else "beta"]
        idx = np.arange(fit.q)[nuis]
        if idx.size:
            sub = np.linalg.inv(Lneg[np.ix_(idx, idx)])
            M[np.ix_(idx, idx)] -= sub
    return 0.5 * (M + M.T)


def ld_probe(fit, scheme, interest: str = "full", hessian: str = "block") -> ObjectiveProbe:
    """Likelihood displacement probe: zero value and gradient, Hessian ``2 Delta' M Delta``."""
    if scheme.theta is None or scheme.theta.delta is None:
        raise ValidationError(f"{scheme.name}: no Delta matrix available for likelihood displacement")
    D = np.asarray(scheme.theta.delta(fit.theta), dtype=float)
    if D.shape != (fit.q, scheme.p):
        raise ValidationError("Delta matrix has the wrong shape")
    M = displacement_matrix(fit, interest, hessian)
    return ObjectiveProbe(0.0, np.zeros(scheme.p), 2.0 * D.T @ M @ D, "closed_form", f"ld_{interest}")


def ld_value(scheme, omega) -> float:
    """``2 [L(theta_hat) - L(theta_hat_omega)]`` with an inner refit at ``omega``."""
    link = scheme.theta
    omega = scheme.check(omega)
    th = link.refit(omega)
    return 2.0 * (link.loglik(link.theta_hat, scheme.omega0) - link.loglik(th, scheme.omega0))


def rss_value(fit, omega) -> float:
    """``-min_beta sum_i omega_i (y_i - x_i beta)^2``."""
    X, y = fit.X, fit.y
    w = np.asarray(omega, dtype=float)
    b = np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (w * y))
    r = y - X @ b
    return -float(w @ r ** 2)


def rss_probe(fit) -> ObjectiveProbe:
    """``-RSS`` under variance weights: gradient ``-r^2``, Hessian ``2 D(r) P_X D(r)``."""
    if fit.kind != "linear_regression":
        raise ValidationError("-RSS probe needs a linear regression fit")
    fit.data.check_rank()
    X, y = fit.X, fit.y
    r = y - X @ fit.beta
    P = X @ np.linalg.solve(X.T @ X, X.T)
    H = 2.0 * (r[:, None] * P * r[None, :])
    return ObjectiveProbe(-float(r @ r), -(r ** 2), H, "closed_form", "neg_rss")


def push_probe(probe: ObjectiveProbe, A) -> ObjectiveProbe:
    """Express a probe in coordinates ``omega = omega0 + A (omega_new - omega0)``."""
    A = np.asarray(A, dtype=float)
    return ObjectiveProbe(probe.f0, A.T @ probe.grad, A.T @ probe.hess @ A, probe.provenance, probe.name)


def for_model(probe: ObjectiveProbe, scheme) -> ObjectiveProbe:
    """Push a probe built for a base scheme through any rescaling applied to it."""
    chain = []
    model = scheme
    while model.base is not None:
        chain.append(model.info["rescale_matrix"])
        model = model.base
    for A in reversed(chain):
        probe = push_probe(probe, A)
    return probe


def loglik_ratio_probe(scheme) -> ObjectiveProbe:
    """``l(omega | Y) - l(omega0 | Y)`` on the observed data."""
    base = scheme
    while base.base is not None:
        base = base.base
    w0 = base.omega0
    grad = base.scores(w0, base.data)[0]
    hfun = base.info.get("loglik_hessian")
    if hfun is not None:
        H, prov = hfun(w0), "closed_form"
    else:
        H, prov = numdiff.hessian(lambda w: base.observed_loglik(w), w0), "finite_difference"
    return for_model(ObjectiveProbe(0.0, grad, H, prov, "loglik_ratio"), scheme)
