"""Coarse inverted-file partition: spherical k-means over unit vectors.

This is the only trained layer of the index. Centroids live on the unit
sphere (means are renormalized after every Lloyd update) and assignment is
by maximum inner product, so for unit vectors the identity
``|x - c|^2 = 2 - 2<x, c>`` ties the Euclidean and IP views together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CoarsePartition", "train_partition", "assign"]

_EPS = 1e-12


@dataclass
class CoarsePartition:
    """Trained coarse partition plus per-list membership.

    Attributes:
        n_lists: Number of inverted lists L.
        dim: Vector dimension.
        centroids: (L, d) float32, every row unit-norm.
        lists: Per-centroid growable sequences of internal vector ids,
            kept in ascending id order.
    """

    n_lists: int
    dim: int
    centroids: np.ndarray
    lists: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.lists:
            self.lists = [[] for _ in range(self.n_lists)]

    @property
    def total_members(self) -> int:
        return sum(len(l) for l in self.lists)

    def assign_batch(self, vectors: np.ndarray):
        """Max-IP assignment for rows of a (n, d) matrix.

        Returns:
            (list_ids, ips): int64 and float64 arrays of length n. Ties go
            to the lowest centroid index.
        """
        v = np.asarray(vectors, dtype=np.float64)
        ips = v @ self.centroids.T.astype(np.float64)
        list_ids = np.argmax(ips, axis=1)
        return list_ids.astype(np.int64), ips[np.arange(len(v)), list_ids]


def assign(p: CoarsePartition, v: np.ndarray) -> tuple[int, float]:
    """Assign one unit vector to its max-IP centroid."""
    ids, ips = p.assign_batch(np.asarray(v, dtype=np.float64)[None, :])
    return int(ids[0]), float(ips[0])


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding on the sphere; D^2 distances are 2 - 2*IP.

    Samples 2 + log2(k) candidates per step by D^2 and keeps the one that
    most reduces the potential (the standard greedy variant), which makes
    recovery of well-separated clusters robust to unlucky draws.
    """
    n = data.shape[0]
    n_candidates = 2 + int(np.log2(k)) if k > 1 else 1
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    # squared distance to the nearest chosen center so far
    d2 = np.maximum(2.0 - 2.0 * (data @ data[chosen[0]]), 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total <= _EPS:
            # all remaining mass at zero distance: pick unchosen points uniformly
            mask = np.ones(n, dtype=bool)
            mask[chosen[:j]] = False
            pool = np.flatnonzero(mask)
            chosen[j] = rng.choice(pool) if len(pool) else rng.integers(n)
            d2 = np.minimum(
                d2, np.maximum(2.0 - 2.0 * (data @ data[chosen[j]]), 0.0)
            )
            continue
        candidates = rng.choice(n, size=n_candidates, p=d2 / total)
        cand_d2 = np.maximum(2.0 - 2.0 * (data @ data[candidates].T), 0.0)
        potentials = np.minimum(d2[:, None], cand_d2).sum(axis=0)
        best = int(np.argmin(potentials))
        chosen[j] = candidates[best]
        d2 = np.minimum(d2, cand_d2[:, best])
    return data[chosen].copy()


def train_partition(
    data: np.ndarray,
    n_lists: int,
    seed: int,
    max_iters: int = 25,
) -> CoarsePartition:
    """Spherical k-means with k-means++ seeding.

    Assignment is by maximum inner product; after each mean update the
    centroids are renormalized to the unit sphere. Empty clusters are
    re-seeded from the point farthest (lowest IP) from its assigned
    centroid. Stops early once no assignment changes. Deterministic for
    fixed (data, n_lists, seed, max_iters).

    Args:
        data: (n, d) rows, unit-norm.
        n_lists: Number of clusters L, 1 <= L <= n.
        seed: RNG seed for seeding and re-seeding.
        max_iters: Lloyd iteration budget.

    Returns:
        CoarsePartition with populated membership lists.

    Raises:
        ValueError: If n < n_lists or a row has (near-)zero norm.
    """
    data = np.asarray(data, dtype=np.float64)
    n, dim = data.shape
    if n_lists < 1:
        raise ValueError(f"n_lists must be >= 1, got {n_lists}")
    if n < n_lists:
        raise ValueError(f"need at least n_lists={n_lists} rows, got {n}")
    norms = np.linalg.norm(data, axis=1)
    if np.any(norms < _EPS):
        raise ValueError("zero-norm row in training data")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, n_lists, rng)

    prev_assign = None
    assignments = None
    for _ in range(max_iters):
        ips = data @ centroids.T
        assignments = np.argmax(ips, axis=1)
        if prev_assign is not None and np.array_equal(assignments, prev_assign):
            break
        prev_assign = assignments

        counts = np.bincount(assignments, minlength=n_lists)
        order = np.argsort(assignments, kind="stable")
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        nonempty = np.flatnonzero(counts > 0)
        sums = np.zeros((n_lists, dim))
        sums[nonempty] = np.add.reduceat(data[order], starts[nonempty], axis=0)

        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # farthest-point re-seeding: steal the worst-assigned points
            assigned_ip = ips[np.arange(n), assignments]
            order = np.argsort(assigned_ip, kind="stable")
            for slot, point in zip(empty, order[: len(empty)]):
                sums[slot] = data[point]
                counts[slot] = 1

        new_norms = np.linalg.norm(sums, axis=1)
        degenerate = new_norms < _EPS
        if np.any(degenerate):
            # antipodal cancellation: fall back to a random data point
            for slot in np.flatnonzero(degenerate):
                sums[slot] = data[rng.integers(n)]
            new_norms = np.linalg.norm(sums, axis=1)
        centroids = sums / new_norms[:, None]

    # final assignment against the final centroids
    final_ids = np.argmax(data @ centroids.T, axis=1)
    part = CoarsePartition(
        n_lists=n_lists, dim=dim, centroids=centroids.astype(np.float32)
    )
    for i, l in enumerate(final_ids):
        part.lists[l].append(i)
    return part
