import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pertinf.errors import DimensionMismatch, ZeroHessian
from pertinf.geometry import GeometryAtPoint
from pertinf.measures import (
    ObjectiveProbe,
    classical_curvatures,
    covariant_hessian,
    eigen_influence,
    fi_maximizer,
    first_order_influence,
    hessian_norm,
    influence_report,
    normal_curvature,
    second_order_influence,
    standardized_si,
)


def flat_geom(G, gamma=None):
    G = np.asarray(G, float)
    p = G.shape[0]
    gamma = np.zeros((p, p, p)) if gamma is None else gamma
    return GeometryAtPoint(np.ones(p), G, np.zeros((p, p, p)), gamma, 0.0, gamma, np.linalg.inv(G))


def probe(grad, hess=None):
    grad = np.asarray(grad, float)
    hess = np.zeros((grad.size, grad.size)) if hess is None else hess
    return ObjectiveProbe(0.0, grad, hess)


# first order


def test_fi_zero_gradient():
    assert first_order_influence(probe([0.0, 0.0]), np.eye(2), [1.0, 3.0]) == 0.0


def test_fi_identity_metric():
    assert first_order_influence(probe([1.0, 2.0]), np.eye(2), [1.0, 0.0]) == pytest.approx(1.0)


def test_fi_max_attained_at_ginv_grad():
    G = np.diag([2.0, 2.5, 5.0])
    pr = probe([1.0, -2.0, 0.5])
    fi_max, h, ok = fi_maximizer(pr, G)
    assert ok
    assert fi_max == pytest.approx(pr.grad @ np.linalg.solve(G, pr.grad))
    assert first_order_influence(pr, G, np.linalg.solve(G, pr.grad)) == pytest.approx(fi_max)
    hs = np.random.default_rng(0).standard_normal((2000, 3))
    assert max(first_order_influence(pr, G, hh) for hh in hs) <= fi_max * (1 + 1e-12)


def test_fi_max_rss_form():
    r = np.array([0.3, -1.2, 0.7, 2.0])
    fi_max, h, _ = fi_maximizer(probe(-r ** 2), 0.5 * np.eye(4))
    assert fi_max == pytest.approx(2 * np.sum(r ** 4))
    np.testing.assert_allclose(h, r ** 2 / np.linalg.norm(r ** 2))


def test_fi_max_zero_gradient_flagged():
    fi_max, h, ok = fi_maximizer(probe([0.0, 0.0]), np.eye(2))
    assert fi_max == 0.0 and not ok and not np.any(h)


# covariant hessian and SI


def test_covariant_hessian_flat_is_plain_hessian():
    H = np.array([[1.0, 0.2], [0.2, -3.0]])
    pr = probe([1.0, 2.0], H)
    np.testing.assert_array_equal(covariant_hessian(pr, flat_geom(np.eye(2))), H)


def test_covariant_hessian_one_dim_hand_value():
    # f = w^2 at w0 = 1, g = 0.5, Gamma0_111 = -0.5
    g = flat_geom([[0.5]], np.full((1, 1, 1), -0.5))
    Ht = covariant_hessian(probe([2.0], [[2.0]]), g)
    assert Ht[0, 0] == pytest.approx(4.0)


def test_si_diag_example():
    assert second_order_influence(np.diag([4.0, 0.0]), np.eye(2), [1.0, 1.0]) == pytest.approx(2.0)


def test_ssi_example():
    assert standardized_si(np.diag([3.0, 4.0]), np.eye(2), [0.0, 1.0]) == pytest.approx(0.8)


def test_ssi_zero_hessian_raises():
    with pytest.raises(ZeroHessian):
        standardized_si(np.zeros((2, 2)), np.eye(2), [1.0, 0.0])


def test_eigen_diagonal_pair():
    eig = eigen_influence(np.diag([1.0, -2.0]), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(eig.eigenvalues, [1.0, -0.5])
    np.testing.assert_allclose(eig.normalized_eigenvalues, np.array([1.0, -0.5]) / math.sqrt(1.25))


def test_eigen_zero_hessian_undefined():
    eig = eigen_influence(np.zeros((3, 3)), np.eye(3))
    assert not eig.defined
    np.testing.assert_array_equal(eig.eigenvalues, 0.0)


def test_eigen_identity_metric_is_symmetric_eigh():
    A = np.array([[2.0, 1.0], [1.0, -1.0]])
    eig = eigen_influence(A, np.eye(2))
    np.testing.assert_allclose(sorted(eig.eigenvalues), np.linalg.eigvalsh(A))


# classical curvatures


def test_normal_curvature_zero_gradient():
    H = np.array([[2.0, 1.0], [1.0, 3.0]])
    h = np.array([1.0, -1.0])
    assert normal_curvature(probe([0.0, 0.0], H), h) == pytest.approx(h @ H @ h / (h @ h))


def test_normal_curvature_not_scale_invariant():
    pr = probe([0.5, -1.0], np.array([[1.0, 0.3], [0.3, 2.0]]))
    h = np.array([1.0, 0.5])
    assert normal_curvature(pr.scaled(2.0), h) != pytest.approx(2.0 * normal_curvature(pr, h))


def test_classical_b_is_c_over_hessian_norm_when_flat():
    H = np.diag([3.0, 4.0])
    c, b = classical_curvatures(probe([0.0, 0.0], H), np.array([0.0, 1.0]))
    assert c == pytest.approx(4.0) and b == pytest.approx(0.8)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        first_order_influence(probe([1.0, 2.0]), np.eye(2), [1.0, 2.0, 3.0])


# report


def test_report_zero_probe():
    rep = influence_report(None, probe(np.zeros(3)), flat_geom(np.eye(3)))
    np.testing.assert_array_equal(rep.basis_si, 0.0)
    np.testing.assert_array_equal(rep.basis_fi, 0.0)
    assert not rep.ssi_defined and not rep.h_max_defined


def test_report_si_equals_c_for_identity_metric():
    A = np.random.default_rng(0).standard_normal((3, 3))
    rep = influence_report(None, probe(np.zeros(3), A + A.T), flat_geom(np.eye(3)))
    np.testing.assert_allclose(rep.basis_si, rep.basis_c)


# properties


def spd(p, seed):
    B = np.random.default_rng(seed).standard_normal((p, p))
    return B @ B.T + 0.5 * np.eye(p)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(2, 6), seed=st.integers(0, 10_000), k=st.floats(0.1, 50.0))
def test_scaling_laws_positive_k(p, seed, k):
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((p, p))
    pr = probe(gen.standard_normal(p), A + A.T)
    geom = flat_geom(spd(p, seed + 1))
    h = gen.standard_normal(p)
    H1, Hk = covariant_hessian(pr, geom), covariant_hessian(pr.scaled(k), geom)
    assert first_order_influence(pr.scaled(k), geom.G, h) == pytest.approx(k * k * first_order_influence(pr, geom.G, h), rel=1e-10)
    assert second_order_influence(Hk, geom.G, h) == pytest.approx(k * second_order_influence(H1, geom.G, h), rel=1e-10, abs=1e-12)
    assert standardized_si(Hk, geom.G, h) == pytest.approx(standardized_si(H1, geom.G, h), rel=1e-10, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 6), seed=st.integers(0, 10_000),
       h=arrays(np.float64, 6, elements=st.floats(-5, 5, allow_nan=False)))
def test_ssi_bounded(p, seed, h):
    h = h[:p]
    if not np.any(np.abs(h) > 1e-3):
        return
    A = np.random.default_rng(seed).standard_normal((p, p))
    H = A + A.T
    G = spd(p, seed)
    if hessian_norm(H, G) == 0:
        return
    assert abs(standardized_si(H, G, h)) <= 1 + 1e-12
