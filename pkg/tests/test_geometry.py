import math

import numpy as np
import pytest

from pertinf.errors import DegenerateCurve, DomainViolation, SingularMetric
from pertinf.geometry import (
    GeometryAtPoint,
    appropriateness_report,
    geodesic_trace,
    geometry_at,
    levi_civita_from_metric,
    path_distance,
    rescale_perturbation,
    sym_sqrt,
    tangent_length,
    transform_tensors,
)
from pertinf.models import (
    case_weight_scheme,
    fit_model,
    lmm_covariance_scheme,
    location_scale_schemes,
    regression_variance_scheme,
)
from conftest import lmm_data, regression_data
from pertinf.models import ClusteredDataset


def geom_of(G):
    G = np.asarray(G, float)
    p = G.shape[0]
    z = np.zeros((p, p, p))
    return GeometryAtPoint(np.ones(p), G, z, z, 0.0, z, np.linalg.pinv(G))


@pytest.fixture(scope="module")
def reg3():
    X, y = regression_data(seed=4, n=3)
    return regression_variance_scheme(fit_model(ClusteredDataset.from_regression(X[:, :2], y), "linear_regression"))


@pytest.fixture(scope="module")
def std_normal():
    y = np.random.default_rng(1).standard_normal(6)
    return fit_model(y, "location_scale", known={"mu": 0.0, "sigma": 1.0})


def test_variance_scheme_geometry_at_null(reg3):
    g = geometry_at(reg3, reg3.omega0)
    np.testing.assert_allclose(g.G, 0.5 * np.eye(3))
    idx = np.arange(3)
    np.testing.assert_allclose(g.T[idx, idx, idx], -1.0)
    np.testing.assert_allclose(g.Gamma0[idx, idx, idx], -0.5)


def test_variance_scheme_connection_matches_metric_derivative(reg3):
    w = np.array([1.3, 0.8, 2.0])
    _, _, C = reg3.geometry(w)
    np.testing.assert_allclose(C, levi_civita_from_metric(lambda v: reg3.geometry(v)[0], w), atol=1e-8)


def test_response_scheme_is_flat(std_normal):
    sch = location_scale_schemes(std_normal, "response")
    for w in (sch.omega0, sch.omega0 + 0.7):
        assert not np.any(geometry_at(sch, w).Gamma0)


def test_case_weight_standard_normal(std_normal):
    g = geometry_at(case_weight_scheme(std_normal), np.ones(6))
    np.testing.assert_allclose(g.G, 0.5 * np.eye(6))
    idx = np.arange(6)
    np.testing.assert_allclose(g.T[idx, idx, idx], -1.0)


def test_case_weight_exponential():
    y = np.random.default_rng(2).exponential(size=4)
    g = geometry_at(case_weight_scheme(fit_model(y, "iid_parametric", family="exponential", known={"rate": 1.0})),
                    np.ones(4))
    np.testing.assert_allclose(g.G, np.eye(4))
    np.testing.assert_allclose(g.T[np.arange(4), np.arange(4), np.arange(4)], -2.0)


@pytest.mark.parametrize("G,h,expected", [
    (np.eye(3), [1.0, 0.0, 0.0], 1.0),
    (0.5 * np.eye(2), [1.0, 1.0], 1.0),
    (np.diag([2.0, 2.5]), [1.0, 2.0], 12.0),
])
def test_tangent_length(G, h, expected):
    assert tangent_length(geom_of(G), np.array(h)) == pytest.approx(expected)


def test_path_distance_constant_curve(reg3):
    t = np.linspace(0, 1, 5)
    assert path_distance(reg3, t, np.ones((5, 3))) == 0.0


def test_path_distance_euclidean(std_normal):
    sch = location_scale_schemes(std_normal, "response")  # G = I at sigma = 1
    t = np.linspace(0, 1, 11)
    h = np.array([3.0, 4.0, 0, 0, 0, 0])
    assert path_distance(sch, t, sch.omega0 + np.outer(t, h)) == pytest.approx(5.0, rel=1e-10)


def test_path_distance_log_form(reg3):
    t = np.linspace(0, 1, 2001)
    pts = np.ones((t.size, 3))
    pts[:, 0] = 1 + t
    assert path_distance(reg3, t, pts) == pytest.approx(math.log(2) / math.sqrt(2), abs=1e-9)


def test_path_distance_rejects_single_point(reg3):
    with pytest.raises(DegenerateCurve):
        path_distance(reg3, [0.0], np.ones((1, 3)))


def test_variance_geodesic_is_exponential(reg3):
    h = np.array([1.0, -0.5, 0.25])
    path = geodesic_trace(reg3, 0.0, h, t_end=0.5, steps=500)
    np.testing.assert_allclose(path.omega[-1], np.exp(0.5 * h), atol=1e-6)
    assert path.omega[-1, 0] == pytest.approx(1.6487212707, abs=1e-6)


def test_response_geodesic_straight_any_alpha(std_normal):
    sch = location_scale_schemes(std_normal, "response")
    h = np.linspace(-1, 1, 6)
    for alpha in (-1.0, 0.0, 2.0):
        path = geodesic_trace(sch, alpha, h, t_end=1.0, steps=50)
        np.testing.assert_allclose(path.omega, sch.omega0 + np.outer(path.t, h), atol=1e-12)


def test_case_weight_one_geodesic_straight(std_normal):
    sch = case_weight_scheme(std_normal)
    h = np.linspace(-0.5, 0.5, 6)
    path = geodesic_trace(sch, 1.0, h, t_end=1.0, steps=50)
    np.testing.assert_allclose(path.omega, sch.omega0 + np.outer(path.t, h), atol=1e-12)


def test_geodesic_leaving_domain_raises(reg3):
    with pytest.raises(DomainViolation):
        geodesic_trace(reg3, 1.0, np.array([-5.0, 0.0, 0.0]), t_end=1.0)


def test_lmm_covariance_scheme_not_appropriate():
    fit = fit_model(lmm_data((4, 5, 10)), "linear_mixed", "compound_symmetry")
    raw = lmm_covariance_scheme(fit)[0]
    g = geometry_at(raw, raw.omega0)
    np.testing.assert_array_equal(g.G, np.diag([2.0, 2.5, 5.0]))
    assert not appropriateness_report(g).is_appropriate


def test_isotropic_metric_appropriate():
    v = appropriateness_report(geom_of(3 * np.eye(4)))
    assert v.is_appropriate and v.c_hat == pytest.approx(3.0)


def test_k0_variant_not_appropriate():
    X, y = regression_data(seed=5, n=6)
    fit = fit_model(ClusteredDataset.from_regression(X, y), "linear_regression")
    sch = regression_variance_scheme(fit, "inverse_omega_with_k0", 2.0)
    g = geometry_at(sch, sch.omega0)
    np.testing.assert_allclose(np.diag(g.G), [1 / 8] + [0.5] * 5)
    assert not appropriateness_report(g).is_appropriate
    same = regression_variance_scheme(fit, "inverse_omega_with_k0", 1.0)
    np.testing.assert_array_equal(geometry_at(same, same.omega0).G, geometry_at(regression_variance_scheme(fit), same.omega0).G)


def test_singular_metric_report():
    v = appropriateness_report(geom_of(np.diag([1.0, 1.0, 1e-20])))
    assert v.singular and not v.is_appropriate and v.rank == 2


def test_rescale_identity_when_already_isotropic(std_normal):
    sch = case_weight_scheme(std_normal)
    g = geometry_at(sch, sch.omega0)
    new = rescale_perturbation(sch, g, 0.5)
    np.testing.assert_allclose(new.info["rescale_matrix"], np.eye(6), atol=1e-14)


def test_rescaled_lmm_covariance_scheme_form():
    sizes = np.array([4.0, 5.0, 10.0])
    fit = fit_model(lmm_data((4, 5, 10)), "linear_mixed", "compound_symmetry")
    raw = lmm_covariance_scheme(fit)[0]
    new = rescale_perturbation(raw, geometry_at(raw, raw.omega0), 1.0)
    wt = np.array([1.4, 0.9, 1.2])
    np.testing.assert_allclose(new.to_base(wt), 1 + (wt - 1) / np.sqrt(0.5 * sizes), rtol=1e-14)
    np.testing.assert_allclose(geometry_at(new, new.omega0).G, np.eye(3), atol=1e-10)


def test_rescale_singular_raises():
    fit = fit_model(lmm_data((4, 5, 10)), "linear_mixed", "compound_symmetry")
    raw = lmm_covariance_scheme(fit)[0]
    with pytest.raises(SingularMetric):
        rescale_perturbation(raw, geom_of(np.diag([1.0, 0.0, 1.0])), 1.0)


def test_transform_tensors_matches_einsum():
    gen = np.random.default_rng(0)
    p = 4
    G = np.eye(p) + 0.1
    T = gen.standard_normal((p, p, p))
    C = gen.standard_normal((p, p, p))
    A = gen.standard_normal((p, p))
    G2, T2, C2 = transform_tensors(G, T, C, A)
    np.testing.assert_allclose(G2, A.T @ G @ A, rtol=1e-12)
    np.testing.assert_allclose(T2, np.einsum("ijk,ia,jb,kc->abc", T, A, A, A), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(C2, np.einsum("ijk,ia,jb,kc->abc", C, A, A, A), rtol=1e-12, atol=1e-12)


def test_sym_sqrt_inverse():
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    R = sym_sqrt(G, inverse=True)
    np.testing.assert_allclose(R @ G @ R, np.eye(2), atol=1e-14)
