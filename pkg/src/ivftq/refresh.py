"""Partition-only refresh: re-cluster, re-assign, re-encode.

Re-runs spherical k-means on a stratified sample of the indexed vectors
(TQ reconstructions by default, raw vectors when stored and allowed),
re-assigns every vector to the new centroids, and re-quantizes the new
residuals with the unchanged rotation and quantizer. The compression layer
is never touched, which is what makes a partition-only refresh possible in
the first place; the swap is atomic from a reader's perspective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .index import IvfTqIndex
from .partition import train_partition

__all__ = ["RefreshPolicy", "RefreshReport", "refresh", "reconstruct_vector"]


@dataclass(frozen=True)
class RefreshPolicy:
    """When and how to refresh.

    Attributes:
        trigger_every_n: Refresh after this many ingested vectors (consumed
            by the benchmark harness; :func:`refresh` itself always runs).
        sample_size: Stratified-sample size for re-clustering; defaults to
            min(n, max(100 * n_lists, n // 10)).
        use_raw_if_available: Cluster/re-assign from the raw store when the
            index kept one, otherwise from TQ reconstructions.
        seed: RNG seed for sampling and k-means.
    """

    trigger_every_n: int = 100_000
    sample_size: int | None = None
    use_raw_if_available: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.trigger_every_n < 1:
            raise ValueError("trigger_every_n must be >= 1")


@dataclass(frozen=True)
class RefreshReport:
    """Outcome of one refresh pass."""

    refreshed: bool
    duration_seconds: float
    n_reassigned: int
    sample_size: int
    used_raw: bool
    mean_assigned_ip_before: float
    mean_assigned_ip_after: float
    centroid_displacement_mean: float
    centroid_displacement_max: float


def reconstruct_all(index: IvfTqIndex, renormalize: bool = True) -> np.ndarray:
    """Decode every stored vector: x_hat = c_l + ||r|| * Pi^T rho_hat_recon.

    Rows are renormalized to the unit sphere by default (reconstruction
    norms are close to but not exactly 1).
    """
    table = index.quantizer.reconstruction_table(index.config.use_sign_bit)
    if index.config.use_sign_bit:
        units = table[index.bins, index.signs]
    else:
        units = table[index.bins]
    back = index.rot.apply_inverse(units)
    recon = index.norms.astype(np.float64)[:, None] * back
    if not index.config.flat:
        recon = recon + index.partition.centroids[index.list_ids].astype(np.float64)
    if renormalize:
        norms = np.linalg.norm(recon, axis=1)
        recon = recon / np.maximum(norms, 1e-12)[:, None]
    return recon


def reconstruct_vector(index: IvfTqIndex, internal_id: int) -> np.ndarray:
    """Unit-norm reconstruction of one indexed vector.

    A vector stored with zero residual norm decodes to its coarse centroid
    exactly.

    Raises:
        ValueError: If the id is not indexed.
    """
    if not 0 <= internal_id < index.count:
        raise ValueError(f"unknown internal id {internal_id}")
    table = index.quantizer.reconstruction_table(index.config.use_sign_bit)
    if index.config.use_sign_bit:
        unit = table[index.bins[internal_id], index.signs[internal_id]]
    else:
        unit = table[index.bins[internal_id]]
    back = index.rot.apply_inverse(unit)
    recon = float(index.norms[internal_id]) * back
    if not index.config.flat:
        recon = recon + index.partition.centroids[
            int(index.list_ids[internal_id])
        ].astype(np.float64)
    return recon / max(np.linalg.norm(recon), 1e-12)


def _stratified_sample_ids(
    index: IvfTqIndex, sample_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Proportional per-list sample with a floor of one per non-empty list."""
    n = index.count
    picked = []
    for members in index.partition.lists:
        if not members:
            continue
        take = max(1, int(np.ceil(sample_size * len(members) / n)))
        take = min(take, len(members))
        members_arr = np.asarray(members, dtype=np.int64)
        picked.append(rng.choice(members_arr, size=take, replace=False))
    ids = np.concatenate(picked)
    # top up if empty lists left the sample below n_lists (k-means needs
    # at least one point per cluster)
    if len(ids) < index.partition.n_lists:
        remaining = np.setdiff1d(np.arange(n, dtype=np.int64), ids)
        extra = index.partition.n_lists - len(ids)
        ids = np.concatenate(
            [ids, rng.choice(remaining, size=min(extra, len(remaining)), replace=False)]
        )
    return np.sort(ids)


def refresh(index: IvfTqIndex, policy: RefreshPolicy) -> RefreshReport:
    """Re-cluster the coarse partition and re-encode every vector.

    Count, external ids, quantizer, and rotation are preserved; only the
    partition and the residual codes change. Refreshing an empty index is
    a no-op.
    """
    t0 = time.perf_counter()
    n = index.count
    if n == 0:
        return RefreshReport(
            refreshed=False,
            duration_seconds=0.0,
            n_reassigned=0,
            sample_size=0,
            used_raw=False,
            mean_assigned_ip_before=float("nan"),
            mean_assigned_ip_after=float("nan"),
            centroid_displacement_mean=0.0,
            centroid_displacement_max=0.0,
        )
    if index.config.flat:
        raise ValueError("flat-mode indexes have no coarse partition to refresh")

    n_lists = index.partition.n_lists
    sample_size = policy.sample_size
    if sample_size is None:
        sample_size = min(n, max(100 * n_lists, n // 10))
    sample_size = max(sample_size, n_lists)

    used_raw = policy.use_raw_if_available and index.raw is not None
    if used_raw:
        source = index.raw.astype(np.float64)
        source = source / np.linalg.norm(source, axis=1)[:, None]
    else:
        source = reconstruct_all(index)

    rng = np.random.default_rng(policy.seed)
    sample_ids = _stratified_sample_ids(index, sample_size, rng)
    new_partition = train_partition(
        source[sample_ids], n_lists, seed=policy.seed
    )
    new_partition.lists = [[] for _ in range(n_lists)]

    old_centroids = index.partition.centroids.astype(np.float64)
    ip_before = float(
        np.mean(np.einsum("nd,nd->n", source, old_centroids[index.list_ids]))
    )

    bins, signs, list_ids, norms, _ = index._encode_batch(
        source, partition=new_partition
    )
    new_cent = new_partition.centroids.astype(np.float64)
    ip_after = float(np.mean(np.einsum("nd,nd->n", source, new_cent[list_ids])))

    # displacement of each new centroid from the nearest old one
    cross = new_cent @ old_centroids.T
    nearest_ip = np.max(cross, axis=1)
    displacement = np.sqrt(np.maximum(2.0 - 2.0 * nearest_ip, 0.0))

    for i, l in enumerate(list_ids):
        new_partition.lists[l].append(i)

    # atomic swap: all derived state is ready before any index field moves
    index.partition = new_partition
    index._bins.data[:] = bins
    index._signs.data[:] = signs
    index._list_ids.data[:] = list_ids
    index._norms.data[:] = norms
    index._version += 1

    return RefreshReport(
        refreshed=True,
        duration_seconds=time.perf_counter() - t0,
        n_reassigned=n,
        sample_size=int(len(sample_ids)),
        used_raw=used_raw,
        mean_assigned_ip_before=ip_before,
        mean_assigned_ip_after=ip_after,
        centroid_displacement_mean=float(displacement.mean()),
        centroid_displacement_max=float(displacement.max()),
    )
