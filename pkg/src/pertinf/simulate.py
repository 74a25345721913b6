"""Synthetic growth-curve style clustered data with optional planted outliers."""

from __future__ import annotations

import numpy as np

from . import rng
from .errors import ValidationError
from .io import write_csv
from .models.covariance import VarianceFunctionLinearAR
from .models.data import Cluster, ClusteredDataset

TRUE_BETA = np.array([1.0, 0.5])
# V(d) = exp(-0.5 + 0.8 d), rho(l) = 0.6 - 0.4 l
TRUE_XI = np.array([-0.5, 0.8, 0.0, 0.0, 0.6, -0.4])


def simulate_clustered(n_clusters: int, min_m: int, max_m: int, seed: int, outlier_cluster: int = 0,
                       inflate: float = 1.0, beta=TRUE_BETA, xi=TRUE_XI) -> ClusteredDataset:
    """Visit times ``d`` in ``[0, 1]``, design ``(1, d)`` and errors with a
    variance function and linear autocorrelation.  ``outlier_cluster`` is
    1-based (0 for none); its errors are multiplied by ``inflate``."""
    if n_clusters < 1 or min_m < 1 or max_m < min_m:
        raise ValidationError("need clusters >= 1 and 1 <= min-m <= max-m")
    if not 0 <= outlier_cluster <= n_clusters:
        raise ValidationError("outlier cluster index out of range")
    if inflate <= 0:
        raise ValidationError("inflation factor must be positive")
    gen = rng.block_generator(seed, 0)
    struct = VarianceFunctionLinearAR()
    width = len(str(n_clusters))
    clusters = []
    for i in range(1, n_clusters + 1):
        m = int(gen.integers(min_m, max_m + 1))
        d = np.sort(gen.uniform(0.0, 1.0, m))
        x = np.column_stack([np.ones(m), d])
        probe = Cluster(f"c{i:0{width}d}", np.zeros(m), x, d)
        L = np.linalg.cholesky(struct.build(xi, probe))
        e = L @ gen.standard_normal(m)
        if i == outlier_cluster:
            e = e * inflate
        clusters.append(Cluster(probe.cluster_id, x @ np.asarray(beta) + e, x, d, np.arange(1, m + 1)))
    return ClusteredDataset(tuple(clusters), ("x1", "x2"))


def write_dataset(data: ClusteredDataset, path):
    rows = []
    for cl in data.clusters:
        for k in range(cl.m):
            row = [cl.cluster_id, int(cl.obs_index[k]), float(cl.y[k])]
            row += [float(v) for v in cl.x[k]]
            if cl.d is not None:
                row.append(float(cl.d[k]))
            rows.append(row)
    header = ["cluster_id", "obs_index", "y"] + list(data.x_names)
    if data.clusters[0].d is not None:
        header.append("d")
    write_csv(path, header, rows)
