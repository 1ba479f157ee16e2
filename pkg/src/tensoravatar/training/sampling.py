"""Expression clustering of training frames and class-balanced frame sampling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import eigh

from ..errors import EmptyCluster, TooFewFrames, TopologyMismatch


@dataclass(frozen=True)
class FrameCluster:
    labels: np.ndarray  # (n_frames,) cluster id per frame
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= len(self.labels):
            raise ValueError("need 1 <= n <= frame count")

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n)


def frame_distance_matrix(meshes, eye_ids=(), eye_weight: float = 2.0) -> np.ndarray:
    """``dist[i, j] = sum_v w_v |M_i[v] - M_j[v]|^2`` with ``w_v = eye_weight`` on eye vertices."""
    if isinstance(meshes, np.ndarray):
        arr = np.asarray(meshes, dtype=float)
    else:
        shapes = {np.shape(m) for m in meshes}
        if len(shapes) > 1:
            raise TopologyMismatch(f"meshes have differing shapes: {sorted(shapes)}")
        arr = np.asarray(meshes, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise TopologyMismatch(f"expected (frames, V, 3) meshes, got {arr.shape}")
    w = np.ones(arr.shape[1])
    w[np.asarray(eye_ids, dtype=np.int64)] = eye_weight
    n = len(arr)
    dist = np.zeros((n, n))
    for i in range(n - 1):
        d2 = np.sum((arr[i + 1:] - arr[i]) ** 2, axis=2)  # (n-i-1, V)
        dist[i, i + 1:] = d2 @ w
    return dist + dist.T


def spectral_cluster(dist, n: int = 16, seed: int = 0, n_init: int = 10) -> FrameCluster:
    """Normalized spectral clustering of a frame distance matrix.

    Affinity ``exp(-dist / sigma2)`` with ``sigma2`` the median off-diagonal
    distance, symmetric normalized Laplacian, ``n`` smallest eigenvectors
    with unit rows, then seeded k-means++ (best of ``n_init`` restarts).
    """
    dist = np.asarray(dist, dtype=float)
    m = len(dist)
    if dist.shape != (m, m) or not np.allclose(dist, dist.T) or np.any(dist < 0):
        raise ValueError("distance matrix must be square, symmetric and non-negative")
    if m < n:
        raise TooFewFrames(f"{m} frames cannot form {n} clusters")
    if n == m:
        return FrameCluster(np.arange(m), n)
    if n == 1:
        return FrameCluster(np.zeros(m, dtype=np.int64), 1)
    off = dist[~np.eye(m, dtype=bool)]
    sigma2 = np.median(off)
    if sigma2 <= 0:
        sigma2 = off.max() if off.max() > 0 else 1.0
    A = np.exp(-dist / sigma2)
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1)
    dinv = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    L = np.eye(m) - dinv[:, None] * A * dinv[None, :]
    _, U = eigh(L, subset_by_index=[0, n - 1])
    U = U / np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-300)

    rng = np.random.default_rng(seed)
    best, best_cost = None, np.inf
    for _ in range(n_init):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centers, labels = kmeans2(U, n, iter=100, minit="++", seed=rng)
        if len(np.unique(labels)) < n:
            continue
        cost = np.sum((U - centers[labels]) ** 2)
        if cost < best_cost:
            best, best_cost = labels, cost
    if best is None:
        raise EmptyCluster("k-means left a cluster empty in every restart")
    # relabel by first occurrence so the output is canonical
    _, first = np.unique(best, return_index=True)
    remap = np.empty(n, dtype=np.int64)
    remap[best[np.sort(first)]] = np.arange(n)
    return FrameCluster(remap[best], n)


def balanced_sampler(clusters: FrameCluster, seed: int = 0):
    """Endless frame ids: a cluster uniformly at random, then a member uniformly."""
    groups = [clusters.members(c) for c in range(clusters.n)]
    if any(len(g) == 0 for g in groups):
        raise EmptyCluster("every cluster needs at least one frame")
    rng = np.random.default_rng(seed)
    while True:
        g = groups[rng.integers(len(groups))]
        yield int(g[rng.integers(len(g))])


def uniform_sampler(n_frames: int, seed: int = 0):
    """Endless frame ids drawn uniformly over all frames."""
    if n_frames < 1:
        raise EmptyCluster("no frames to sample")
    rng = np.random.default_rng(seed)
    while True:
        yield int(rng.integers(n_frames))
