import numpy as np
import pytest

from pertinf.models import ClusteredDataset, fit_model
from pertinf.models.data import Cluster

ACCEPTANCE = {}


def regression_data(seed=11, n=10):
    gen = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), gen.normal(size=(n, 2))])
    y = X @ np.array([1.0, 2.0, -1.0]) + gen.normal(size=n)
    return X, y


def lmm_data(sizes=(4, 5, 10), seed=3, rho=0.3):
    gen = np.random.default_rng(seed)
    clusters = []
    for i, m in enumerate(sizes):
        d = np.linspace(0.0, 1.0, m)
        x = np.column_stack([np.ones(m), d])
        S = (1 - rho) * np.eye(m) + rho
        e = np.linalg.cholesky(S) @ gen.standard_normal(m)
        clusters.append(Cluster(f"s{i + 1}", x @ np.array([1.0, 0.5]) + e, x, d))
    return ClusteredDataset(tuple(clusters), ("x1", "x2"))


@pytest.fixture(scope="session")
def reg_fit():
    X, y = regression_data()
    return fit_model(ClusteredDataset.from_regression(X, y), "linear_regression")


@pytest.fixture(scope="session")
def lmm_fit():
    return fit_model(lmm_data(), "linear_mixed", "compound_symmetry")


@pytest.fixture(scope="session")
def gauss_iid():
    y = np.random.default_rng(5).normal(1.0, 2.0, size=20)
    return fit_model(y, "location_scale")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
