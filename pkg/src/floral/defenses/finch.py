"""First-neighbour clustering (FINCH).

Each point links to its nearest neighbour; two points share a cluster when
one is the other's first neighbour or both have the same first neighbour.
Clusters of the first partition are the connected components of that graph;
coarser partitions repeat the step on cluster means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class ClusterPartition:
    labels: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def assignments(self) -> np.ndarray:
        """One-hot ``(m, K)`` membership matrix."""
        r = np.zeros((len(self.labels), self.n_clusters), dtype=int)
        r[np.arange(len(self.labels)), self.labels] = 1
        return r

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def first_neighbors(points) -> np.ndarray:
    """Index of each point's nearest other point (lowest index on ties)."""
    x = np.asarray(points, dtype=float)
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    return np.argmin(d, axis=1)


def _canonical(labels):
    # renumber so cluster ids follow the smallest member index
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[labels]


def _one_step(points):
    n = len(points)
    if n == 1:
        return np.zeros(1, dtype=int)
    kappa = first_neighbors(points)
    # j = kappa(i) and kappa(i) = kappa(j) both connect i and j through kappa(i)
    graph = coo_matrix((np.ones(n), (np.arange(n), kappa)), shape=(n, n))
    _, labels = connected_components(graph, directed=True, connection="weak")
    return _canonical(labels)


def finch_cluster(points) -> ClusterPartition:
    """First (finest) FINCH partition of ``points`` (shape ``(m, d)``)."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 1:
        raise ValueError("need at least one point")
    return ClusterPartition(_one_step(x))


def finch_partitions(points) -> list[ClusterPartition]:
    """All FINCH partitions, finest first, until a single cluster remains."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = _one_step(x)
    out = [ClusterPartition(labels)]
    while labels.max() > 0:
        k = labels.max() + 1
        means = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
        coarse = _one_step(means)
        if coarse.max() + 1 == k:
            break
        labels = coarse[labels]
        out.append(ClusterPartition(labels))
    return out
