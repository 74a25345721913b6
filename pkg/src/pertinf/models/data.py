"""Clustered response data."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyCluster, RankDeficientDesign, ValidationError


@dataclass(frozen=True, eq=False)
class Cluster:
    cluster_id: str
    y: np.ndarray
    x: np.ndarray
    d: Optional[np.ndarray] = None
    obs_index: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.y.size


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    clusters: tuple
    x_names: tuple = field(default=())

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if not clusters:
            raise EmptyCluster("dataset has no clusters")
        q = None
        fixed = []
        for cl in clusters:
            y = np.asarray(cl.y, dtype=float).ravel()
            if y.size == 0:
                raise EmptyCluster(f"cluster {cl.cluster_id!r} is empty")
            x = np.asarray(cl.x, dtype=float).reshape(y.size, -1)
            if q is None:
                q = x.shape[1]
            elif x.shape[1] != q:
                raise ValidationError("all clusters must share the covariate columns")
            d = None if cl.d is None else np.asarray(cl.d, dtype=float).ravel()
            obs = np.arange(1, y.size + 1) if cl.obs_index is None else np.asarray(cl.obs_index)
            fixed.append(Cluster(str(cl.cluster_id), y, x, d, obs))
        object.__setattr__(self, "clusters", tuple(fixed))
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{k + 1}" for k in range(q)))

    @classmethod
    def from_regression(cls, X, y, ids: Optional[Sequence[str]] = None):
        """One observation per cluster."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            X = X.T
        ids = ids if ids is not None else [str(i + 1) for i in range(y.size)]
        return cls(tuple(Cluster(str(ids[i]), y[i : i + 1], X[i : i + 1]) for i in range(y.size)))

    @property
    def n(self) -> int:
        return len(self.clusters)

    @property
    def m(self) -> np.ndarray:
        return np.array([cl.m for cl in self.clusters])

    @property
    def M(self) -> int:
        return int(self.m.sum())

    @property
    def q1(self) -> int:
        return self.clusters[0].x.shape[1]

    @property
    def ids(self) -> tuple:
        return tuple(cl.cluster_id for cl in self.clusters)

    def stacked(self):
        """Stacked ``(X, y)`` over all clusters."""
        X = np.vstack([cl.x for cl in self.clusters])
        y = np.concatenate([cl.y for cl in self.clusters])
        return X, y

    def check_rank(self):
        X, _ = self.stacked()
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise RankDeficientDesign("stacked design matrix is not of full column rank")

    def observation_labels(self):
        return tuple((cl.cluster_id, int(k)) for cl in self.clusters for k in cl.obs_index)

    def summary(self) -> dict:
        m = self.m
        return {"n": self.n, "M": self.M, "min_m": int(m.min()), "max_m": int(m.max()), "q1": self.q1}
