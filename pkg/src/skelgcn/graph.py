"""Skeleton graph: adjacency, spatial-configuration partitions, normalization."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .skeleton import BoneTopology

PARTITIONS = ("root", "centripetal", "centrifugal")


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    num_joints: int
    center_joint: int
    adjacency: np.ndarray    # A, symmetric 0/1 without self loops
    partitions: np.ndarray   # [3, n, n]; sum equals A + I
    normalized: np.ndarray   # [3, n, n]; each partition degree-normalized

    @property
    def num_partitions(self) -> int:
        return self.partitions.shape[0]


def adjacency_from_edges(num_joints: int, edges) -> np.ndarray:
    a = np.zeros((num_joints, num_joints))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


def hop_distance(adjacency: np.ndarray, source: int) -> np.ndarray:
    """Breadth-first hop count from ``source``; unreachable joints get inf."""
    n = adjacency.shape[0]
    dist = np.full(n, np.inf)
    dist[source] = 0
    queue = deque([source])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adjacency[i]):
            if dist[j] == np.inf:
                dist[j] = dist[i] + 1
                queue.append(j)
    return dist


def partition_adjacency(adjacency: np.ndarray, center: int) -> np.ndarray:
    """Split ``A + I`` into root / centripetal / centrifugal matrices.

    Row i collects the neighbours of root joint i: itself (root), neighbours
    no farther from the center (centripetal) and farther ones (centrifugal).
    """
    n = adjacency.shape[0]
    hops = hop_distance(adjacency, center)
    parts = np.zeros((3, n, n))
    parts[0] = np.eye(n)
    for i, j in zip(*np.nonzero(adjacency)):
        if i == j:
            continue
        parts[1 if hops[j] <= hops[i] else 2, i, j] = 1.0
    return parts


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with D the row sums; zero-degree rows stay zero."""
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def build_graph(topology: BoneTopology) -> SpatialGraph:
    a = adjacency_from_edges(topology.num_joints, topology.edges)
    parts = partition_adjacency(a, topology.center_joint)
    normalized = np.stack([normalize_adjacency(p) for p in parts])
    return SpatialGraph(topology.num_joints, topology.center_joint, a, parts, normalized)


def spectral_radius(m: np.ndarray, iters: int = 2000, seed: int = 0) -> float:
    """Power iteration on ``m^T m`` (largest singular value, equal to the
    spectral radius for symmetric ``m``)."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.5, 1.5, m.shape[0])
    v /= np.linalg.norm(v)
    mtm = m.T @ m
    lam = 0.0
    for _ in range(iters):
        w = mtm @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        lam = norm
    return float(np.sqrt(lam))
