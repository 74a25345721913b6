import numpy as np
import pytest

from pertinf.errors import NonMonotoneDiffeo, NoSampler, ValidationError
from pertinf.geometry import geometry_at
from pertinf.models import (
    case_weight_scheme,
    explanatory_scheme,
    fit_model,
    location_scale_schemes,
    regression_variance_scheme,
    rss_probe,
    rss_value,
)
from pertinf.oracle import (
    Diffeo,
    OracleConfig,
    curvature_scale_deviation,
    fd_probe,
    geodesic_residual,
    invariance_harness,
    mc_metric,
    metric_connection,
)

CFG = OracleConfig(seed=0)


@pytest.fixture(scope="module")
def cw5():
    y = np.random.default_rng(0).normal(size=5)
    return case_weight_scheme(fit_model(y, "location_scale"))


def test_config_requires_integer_seed():
    with pytest.raises(ValidationError):
        OracleConfig(seed=None)
    with pytest.raises(ValidationError):
        OracleConfig(seed=1.5)
    with pytest.raises(ValidationError):
        OracleConfig(seed=0, mc_draws=0)


def test_mc_case_weight_gaussian(cw5):
    G, se = mc_metric(cw5, cw5.omega0, CFG)
    assert np.all(np.abs(G - 0.5 * np.eye(5)) <= 3 * se)


def test_mc_variance_scheme_off_null(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    w = np.ones(sch.p)
    w[0] = 2.0
    G, se = mc_metric(sch, w, CFG)
    assert abs(G[0, 0] - 0.125) <= 3 * se[0, 0]


def test_mc_stderr_scales_with_draws(cw5):
    _, se1 = mc_metric(cw5, cw5.omega0, OracleConfig(seed=0, mc_draws=50_000))
    _, se2 = mc_metric(cw5, cw5.omega0, OracleConfig(seed=0, mc_draws=100_000))
    ratio = np.diag(se2) / np.diag(se1)
    assert np.all(np.abs(ratio * np.sqrt(2) - 1) < 0.2)


def test_mc_is_reproducible(cw5):
    a, _ = mc_metric(cw5, cw5.omega0, OracleConfig(seed=3, mc_draws=20_000))
    b, _ = mc_metric(cw5, cw5.omega0, OracleConfig(seed=3, mc_draws=20_000, workers=2))
    np.testing.assert_array_equal(a, b)


def test_mc_needs_sampler(cw5):
    import dataclasses
    with pytest.raises(NoSampler):
        mc_metric(dataclasses.replace(cw5, sampler=None), cw5.omega0, CFG)


def test_fd_quadratic():
    pr = fd_probe(lambda w: float(w @ w), np.zeros(3), CFG)
    np.testing.assert_allclose(pr.grad, 0.0, atol=1e-6)
    np.testing.assert_allclose(pr.hess, 2 * np.eye(3), atol=1e-6)


def test_fd_constant():
    pr = fd_probe(lambda w: 4.0, np.ones(3), CFG)
    assert not np.any(pr.grad) and not np.any(pr.hess)


def test_fd_rss_matches_closed_form(reg_fit):
    closed = rss_probe(reg_fit)
    pr = fd_probe(lambda w: rss_value(reg_fit, w), np.ones(reg_fit.data.n), CFG)
    np.testing.assert_allclose(pr.grad, closed.grad, atol=1e-5)
    np.testing.assert_allclose(pr.hess, closed.hess, atol=1e-5)


def test_metric_connection_variance_scheme(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    w = np.linspace(0.8, 1.5, sch.p)
    _, C = metric_connection(sch, w)
    np.testing.assert_allclose(C, sch.geometry(w)[2], atol=1e-8)


def test_residual_flat_straight_line(gauss_iid):
    sch = location_scale_schemes(gauss_iid, "response")
    t = np.linspace(0, 1, 21)
    assert geodesic_residual(sch, sch.omega0 + np.outer(t, np.ones(sch.p)), 0.0, t) < 1e-8


def test_residual_exponential_path(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    t = np.arange(0, 0.5 + 1e-12, 1e-3)
    h = np.linspace(-1, 1, sch.p)
    assert geodesic_residual(sch, np.exp(np.outer(t, h)), 0.0, t) < 1e-6


def test_residual_straight_line_is_not_variance_geodesic(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    t = np.linspace(0, 0.5, 51)
    h = np.zeros(sch.p)
    h[0] = 1.0
    assert geodesic_residual(sch, 1.0 + np.outer(t, h), 0.0, t) > 0.1


def test_residual_uneven_grid(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    t = 0.3 * np.linspace(0, 1, 301) ** 2
    h = np.ones(sch.p)
    assert geodesic_residual(sch, np.exp(np.outer(t, h)), 0.0, t) < 1e-4


def test_explanatory_diag_straight_any_alpha(reg_fit):
    sch = explanatory_scheme(reg_fit, "diagonal")
    t = np.linspace(0, 1, 11)
    for alpha in (-2.0, 0.0, 3.0):
        assert geodesic_residual(sch, np.outer(t, np.ones(sch.p)), alpha, t) < 1e-8


def _rss_setup(reg_fit):
    sch = regression_variance_scheme(reg_fit)
    return sch, rss_probe(reg_fit), geometry_at(sch, sch.omega0)


def test_harness_identity(reg_fit):
    sch, pr, g = _rss_setup(reg_fit)
    rec = invariance_harness(sch, pr, g, Diffeo(np.ones(sch.p), np.zeros(sch.p)), CFG)
    assert rec.max_deviation < 1e-14


def test_harness_affine(reg_fit):
    sch, pr, g = _rss_setup(reg_fit)
    a = np.random.default_rng(1).uniform(0.5, 2.0, sch.p)
    assert invariance_harness(sch, pr, g, Diffeo(a, np.zeros(sch.p)), CFG).max_deviation < 1e-8


def test_harness_cubic(reg_fit):
    sch, pr, g = _rss_setup(reg_fit)
    gen = np.random.default_rng(2)
    d = Diffeo(gen.uniform(0.5, 2.0, sch.p), gen.uniform(0, 1, sch.p))
    assert invariance_harness(sch, pr, g, d, CFG).max_deviation < 1e-6


def test_normal_curvature_not_scale_invariant(reg_fit):
    pr = rss_probe(reg_fit)
    assert curvature_scale_deviation(pr, 2.0, np.eye(pr.p)) > 1e-3
    assert curvature_scale_deviation(pr, 1.0, np.eye(pr.p)) == 0.0


def test_non_monotone_diffeo_rejected():
    with pytest.raises(NonMonotoneDiffeo):
        Diffeo(np.array([1.0]), np.array([-0.1])).check(1)
    with pytest.raises(NonMonotoneDiffeo):
        Diffeo(np.array([1.0]), np.array([0.1]), np.array([1.0])).check(1)
