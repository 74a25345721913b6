"""The four-step analysis: fit, choose a scheme, check and repair its
appropriateness, then compute the influence measures for an objective."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import numdiff
from .errors import IncompatibleConfig, SingularMetric, ValidationError
from .geometry import (
    AppropriatenessVerdict,
    GeometryAtPoint,
    PerturbedModel,
    appropriateness_report,
    geodesic_trace,
    geometry_at,
    levi_civita_from_metric,
    rescale_perturbation,
)
from .measures import InfluenceReport, ObjectiveProbe, influence_report
from .models import (
    case_weight_scheme,
    explanatory_scheme,
    fit_model,
    for_model,
    ld_probe,
    ld_value,
    lmm_cluster_shift_scheme,
    lmm_covariance_scheme,
    lmm_mean_shift_scheme,
    location_scale_schemes,
    loglik_ratio_probe,
    loglinear_scheme,
    regression_variance_scheme,
    rss_probe,
    rss_value,
)
from .oracle import OracleConfig, fd_probe, geodesic_residual, mc_metric

SCHEMES = (
    "case_weight", "ls_variance", "ls_response", "reg_variance", "explanatory_full",
    "explanatory_diag", "loglinear", "lmm_cov", "lmm_cluster_shift", "lmm_mean_shift",
)
OBJECTIVES = ("ld_full", "ld_beta", "ld_xi", "neg_rss", "loglik_ratio")

SCHEME_KINDS = {
    "case_weight": ("linear_regression", "location_scale", "iid_parametric"),
    "ls_variance": ("location_scale", "iid_parametric"),
    "ls_response": ("location_scale", "iid_parametric"),
    "reg_variance": ("linear_regression",),
    "explanatory_full": ("linear_regression",),
    "explanatory_diag": ("linear_regression",),
    "loglinear": ("iid_parametric", "location_scale"),
    "lmm_cov": ("linear_mixed",),
    "lmm_cluster_shift": ("linear_mixed",),
    "lmm_mean_shift": ("linear_mixed",),
}

OBJECTIVE_SCHEMES = {
    "ld_full": tuple(s for s in SCHEMES if s != "loglinear"),
    "ld_beta": tuple(s for s in SCHEMES if s != "loglinear"),
    "ld_xi": tuple(s for s in SCHEMES if s != "loglinear"),
    "neg_rss": ("reg_variance",),
    "loglik_ratio": SCHEMES,
}

DEFAULT_OBJECTIVE = {"reg_variance": "neg_rss", "loglinear": "loglik_ratio"}

PSI_SETS = {
    "hermite2": (lambda z: z, lambda z: z * z - 1.0),
    "hermite3": (lambda z: z, lambda z: z * z - 1.0, lambda z: z ** 3 - 3.0 * z),
}


@dataclass
class AnalysisConfig:
    scheme: str = "lmm_cov"
    kind: Optional[str] = None
    covariance: str = "compound_symmetry"
    xi_init: Optional[tuple] = None
    objective: Optional[str] = None
    alpha: float = 0.0
    auto_rescale: bool = True
    family: str = "gaussian"
    mu: Optional[float] = None
    sigma: Optional[float] = None
    k0: float = 1.0
    scale: Optional[tuple] = None
    psi: str = "hermite2"
    box: float = 0.25
    hessian: str = "block"
    seed: int = 0
    mc_draws: int = 200_000
    geodesic_t: float = 0.2
    corrupt_gamma: float = 0.0
    out: str = "influence_out"

    _FLOATS = ("alpha", "k0", "box", "geodesic_t", "corrupt_gamma", "mu", "sigma")
    _INTS = ("seed", "mc_draws")

    @classmethod
    def from_mapping(cls, values: dict) -> "AnalysisConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in names:
                raise ValidationError(f"unknown configuration key {key!r}")
            kwargs[key] = cls._convert(key, raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def _convert(cls, key, raw):
        if not isinstance(raw, str):
            return raw
        try:
            if key in cls._FLOATS:
                return float(raw)
            if key in cls._INTS:
                return int(raw)
            if key == "auto_rescale":
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes")
            if key in ("xi_init", "scale"):
                return tuple(float(v) for v in raw.replace(",", " ").split())
        except ValueError:
            raise ValidationError(f"bad value for {key}: {raw!r}") from None
        return raw.strip()

    def resolved_kind(self, data) -> str:
        if self.kind:
            return self.kind
        allowed = SCHEME_KINDS.get(self.scheme, ())
        if self.scheme == "case_weight":
            return "linear_regression" if data.q1 > 1 else "location_scale"
        return allowed[0] if allowed else ""

    def resolved_objective(self) -> str:
        return self.objective or DEFAULT_OBJECTIVE.get(self.scheme, "ld_full")

    def validate(self, data=None):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        obj = self.resolved_objective()
        if obj not in OBJECTIVES:
            raise ValidationError(f"unknown objective {obj!r}; choose from {', '.join(OBJECTIVES)}")
        if self.scheme not in OBJECTIVE_SCHEMES[obj]:
            raise IncompatibleConfig(f"objective {obj} is not available for scheme {self.scheme}")
        if self.hessian not in ("block", "observed"):
            raise ValidationError("hessian must be 'block' or 'observed'")
        if self.psi not in PSI_SETS:
            raise ValidationError(f"unknown psi set {self.psi!r}")
        if data is not None:
            kind = self.resolved_kind(data)
            if kind not in SCHEME_KINDS[self.scheme]:
                raise IncompatibleConfig(f"scheme {self.scheme} is not available for a {kind} model")
            if kind != "linear_mixed" and int(data.m.max()) > 1:
                raise IncompatibleConfig(f"scheme {self.scheme} needs independent observations, one row per cluster_id")


@dataclass
class Analysis:
    cfg: AnalysisConfig
    fit: object
    raw: PerturbedModel
    raw_geom: GeometryAtPoint
    raw_verdict: AppropriatenessVerdict
    scheme: Optional[PerturbedModel] = None
    geom: Optional[GeometryAtPoint] = None
    verdict: Optional[AppropriatenessVerdict] = None
    probe: Optional[ObjectiveProbe] = None
    report: Optional[InfluenceReport] = None
    rescaled: bool = False
    extras: dict = field(default_factory=dict)


def fit_for(cfg: AnalysisConfig, data):
    kind = cfg.resolved_kind(data)
    known = {}
    if cfg.mu is not None:
        known["mu"] = cfg.mu
    if cfg.sigma is not None:
        known["sigma"] = cfg.sigma
    start = None
    if cfg.xi_init is not None:
        start = np.concatenate([np.zeros(data.q1), cfg.xi_init])
    return fit_model(data, kind, cfg.covariance, family=cfg.family, known=known, start=start)


def build_scheme(cfg: AnalysisConfig, fit) -> PerturbedModel:
    s = cfg.scheme
    if s == "case_weight":
        return case_weight_scheme(fit)
    if s in ("ls_variance", "ls_response"):
        return location_scale_schemes(fit, s[3:])
    if s == "reg_variance":
        if cfg.k0 == 1.0:
            return regression_variance_scheme(fit)
        return regression_variance_scheme(fit, "inverse_omega_with_k0", cfg.k0)
    if s in ("explanatory_full", "explanatory_diag"):
        return explanatory_scheme(fit, "full_matrix" if s.endswith("full") else "diagonal", cfg.scale)
    if s == "loglinear":
        return loglinear_scheme(fit, PSI_SETS[cfg.psi], box=cfg.box)[0]
    builders = {"lmm_cov": lmm_covariance_scheme, "lmm_cluster_shift": lmm_cluster_shift_scheme,
                "lmm_mean_shift": lmm_mean_shift_scheme}
    return builders[s](fit)[0]


def build_probe(cfg: AnalysisConfig, fit, scheme: PerturbedModel) -> ObjectiveProbe:
    obj = cfg.resolved_objective()
    if obj.startswith("ld_"):
        return ld_probe(fit, scheme, obj[3:], cfg.hessian)
    if obj == "neg_rss":
        return for_model(rss_probe(fit), scheme)
    return loglik_ratio_probe(scheme)


def remediation(scheme_name: str, verdict: AppropriatenessVerdict, p: int) -> str:
    msg = (f"metric at the null perturbation is singular (rank {verdict.rank} of {p}); "
           "too many perturbation parameters were introduced and some should be removed")
    if scheme_name.startswith("explanatory_full"):
        msg += "; use scheme explanatory_diag, which perturbs each row along a single direction"
    return msg


def analyze(cfg: AnalysisConfig, data) -> Analysis:
    """Steps 1 to 4.  Raises :class:`SingularMetric` right after the
    appropriateness check when the metric is singular."""
    cfg.validate(data)
    fit = fit_for(cfg, data)
    raw = build_scheme(cfg, fit)
    raw_geom = geometry_at(raw, raw.omega0, cfg.alpha)
    raw_verdict = appropriateness_report(raw_geom)
    res = Analysis(cfg, fit, raw, raw_geom, raw_verdict)
    if raw_verdict.singular:
        res.extras["halted"] = remediation(raw.name, raw_verdict, raw.p)
        err = SingularMetric(res.extras["halted"])
        err.analysis = res
        raise err
    scheme, geom, verdict = raw, raw_geom, raw_verdict
    if cfg.auto_rescale and not raw_verdict.is_appropriate:
        scheme = rescale_perturbation(raw, raw_geom, 1.0)
        geom = geometry_at(scheme, scheme.omega0, cfg.alpha)
        verdict = appropriateness_report(geom)
        res.rescaled = True
    res.scheme, res.geom, res.verdict = scheme, geom, verdict
    res.probe = build_probe(cfg, fit, scheme)
    res.report = influence_report(scheme, res.probe, geom, verdict)
    return res


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class Check:
    name: str
    quantity: str
    tolerance: float
    observed: float
    status: str  # pass | FAIL | skipped
    note: str = ""


def _corrupt(model: PerturbedModel, amount: float) -> PerturbedModel:
    if amount == 0.0 or model.geometry is None:
        return model
    inner = model.geometry

    def geometry(omega):
        G, T, C = inner(omega)
        if C is None:
            C = levi_civita_from_metric(lambda w: inner(w)[0], omega)
        C = np.array(C, dtype=float, copy=True)
        C[0, 0, 0] += amount * max(abs(float(G[0, 0])), 1.0)
        return G, T, C

    return dataclasses.replace(model, geometry=geometry)


def _status(ok):
    return "pass" if ok else "FAIL"


def _interior_point(model):
    w = np.array(model.omega0, dtype=float)
    step = 0.1 * np.linspace(1.0, 0.5, w.size)
    cand = w + step
    return cand if model.contains(cand) else w - step


def verify(cfg: AnalysisConfig, data, max_p_geodesic: int = 30, max_p_ld: int = 10) -> list:
    """Closed forms against the oracle for the configured scheme."""
    cfg.validate(data)
    ocfg = OracleConfig(seed=cfg.seed, mc_draws=cfg.mc_draws)
    fit = fit_for(cfg, data)
    raw = _corrupt(build_scheme(cfg, fit), cfg.corrupt_gamma)
    checks = []
    w0 = raw.omega0
    geom = geometry_at(raw, w0, cfg.alpha)

    if raw.sampler is not None:
        G_hat, se = mc_metric(raw, w0, ocfg)
        iu = np.triu_indices(raw.p)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(G_hat - geom.G)[iu] / se[iu]
        z = np.where(np.isfinite(z), z, np.where(np.abs(G_hat - geom.G)[iu] > 1e-12, np.inf, 0.0))
        # family-wise bound: the single-entry 3 SE false-alarm rate spread over all entries
        zcrit = float(norm.isf(norm.sf(3.0) / iu[0].size))
        checks.append(Check("metric_vs_monte_carlo", "G", zcrit, float(z.max()), _status(z.max() <= zcrit),
                            f"{ocfg.mc_draws} draws, max |z| over {iu[0].size} entries"))
    else:
        checks.append(Check("metric_vs_monte_carlo", "G", 3.0, float("nan"), "skipped", "no sampler"))

    for label, point in (("null", w0), ("interior", _interior_point(raw))):
        _, _, C = raw.geometry(point)
        C_fd = levi_civita_from_metric(lambda w: raw.geometry(w)[0], point)
        scale = max(np.abs(C_fd).max(initial=0.0), np.abs(geometry_at(raw, point).G).max(), 1.0)
        dev = float(np.abs(np.asarray(C) - C_fd).max() / scale) if C is not None else 0.0
        checks.append(Check(f"connection_vs_metric_fd@{label}", "Gamma0", 1e-6, dev, _status(dev <= 1e-6)))

    if raw.p <= max_p_geodesic:
        h = np.zeros(raw.p)
        h[0] = 1.0
        try:
            path = geodesic_trace(raw, cfg.alpha, h, cfg.geodesic_t,
                                  steps=max(2, int(round(ocfg.ode_steps_per_unit * cfg.geodesic_t))))
            res = geodesic_residual(raw, path, cfg.alpha)
            checks.append(Check("geodesic_residual", "Gamma0" if cfg.alpha == 0 else "GammaAlpha", 1e-6, res,
                                _status(res <= 1e-6), f"t_end={cfg.geodesic_t}"))
        except Exception as exc:  # report, do not abort the table
            checks.append(Check("geodesic_residual", "Gamma0", 1e-6, float("nan"), "FAIL", str(exc)))
    else:
        checks.append(Check("geodesic_residual", "Gamma0", 1e-6, float("nan"), "skipped", f"p={raw.p} too large"))

    link = raw.theta
    if link is not None and link.delta is not None and link.score is not None:
        D = link.delta(fit.theta)
        D_fd = numdiff.jacobian(lambda w: link.score(fit.theta, w), w0)
        dev = float(np.abs(D - D_fd).max() / max(np.abs(D).max(), 1e-300))
        checks.append(Check("delta_vs_fd", "Delta", 1e-5, dev, _status(dev <= 1e-5)))

    obj = cfg.resolved_objective()
    if obj == "neg_rss":
        closed = rss_probe(fit)
        fd = fd_probe(lambda w: rss_value(fit, w), w0, ocfg)
        dg = float(np.abs(closed.grad - fd.grad).max() / max(np.abs(closed.grad).max(), 1e-300))
        dh = float(np.abs(closed.hess - fd.hess).max() / max(np.abs(closed.hess).max(), 1e-300))
        checks.append(Check("neg_rss_gradient_vs_fd", "grad", 1e-5, dg, _status(dg <= 1e-5)))
        checks.append(Check("neg_rss_hessian_vs_fd", "hess", 1e-5, dh, _status(dh <= 1e-5)))
    elif obj == "ld_full" and link is not None and link.refit is not None:
        if raw.p <= max_p_ld:
            fd = fd_probe(lambda w: ld_value(raw, w), w0, ocfg)
            closed = ld_probe(fit, raw, "full", "observed")
            gn = float(np.linalg.norm(fd.grad))
            dh = float(np.abs(closed.hess - fd.hess).max() / max(np.abs(closed.hess).max(), 1e-300))
            checks.append(Check("ld_gradient_fd_norm", "grad", 1e-5, gn, _status(gn < 1e-5)))
            checks.append(Check("ld_hessian_vs_fd", "H_LD(observed -L'')", 1e-3, dh, _status(dh <= 1e-3)))
        else:
            checks.append(Check("ld_hessian_vs_fd", "H_LD", 1e-3, float("nan"), "skipped", f"p={raw.p} too large"))

    verdict = appropriateness_report(geom)
    if not verdict.singular:
        resc = rescale_perturbation(raw, geom, 1.0)
        Gt = geometry_at(resc, resc.omega0).G
        dev = float(np.abs(Gt - np.eye(raw.p)).max())
        checks.append(Check("rescaled_metric_identity", "G~", 1e-10, dev, _status(dev <= 1e-10)))
    else:
        checks.append(Check("rescaled_metric_identity", "G~", 1e-10, float("nan"), "skipped", "singular metric"))
    return checks
