"""Minimal IVF-PQ baseline (IVFADC-style, inner-product variant).

Shares the spherical coarse partition with the main index so that streaming
comparisons isolate the compression layer: residuals are product-quantized
by m independent 256-centroid k-means codebooks, one per subspace, and
scored through per-query lookup tables. Supports a stale mode (codebook
frozen after the initial fit) and a retrain mode (refit on cumulative data
and re-encode everything), which requires the mandatory raw store.

Codebook fitting follows the conventions of production IVF-PQ trainers:
k-means++ seeding, 25 Lloyd iterations, and a seeded cap on the fitting
sample (256 points per centroid) so retrains stay affordable as the
database grows. All subspaces are trained in one batched pass.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .index import _Rows, _EPS
from .partition import CoarsePartition, train_partition

__all__ = ["PqCodebook", "IvfPqIndex", "pq_train", "save_pq", "load_pq"]

_KS = 256
_FIT_CAP = 64 * _KS  # fitting-sample cap, 64 points per centroid
_SEED_CAP = 8192  # k-means++ seeding subsample


@dataclass(frozen=True)
class PqCodebook:
    """Per-subspace k-means codebooks.

    Attributes:
        m: Number of subquantizers.
        ks: Centroids per subspace (256, so codes fit one byte).
        sub_dim: d // m coordinates per subspace.
        sub_centroids: (m, ks, sub_dim) float32.
        trained_on: Number of residuals the codebook was fitted to.
    """

    m: int
    ks: int
    sub_dim: int
    sub_centroids: np.ndarray
    trained_on: int

    def __post_init__(self):
        self.sub_centroids.setflags(write=False)

    def encode(self, residuals: np.ndarray) -> np.ndarray:
        """Nearest sub-centroid per subspace; returns (n, m) uint8 codes."""
        r = np.ascontiguousarray(residuals, dtype=np.float32)
        blocks = r.reshape(len(r), self.m, self.sub_dim).transpose(1, 0, 2)
        return _assign_subspaces(blocks, self.sub_centroids).T.astype(np.uint8)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        """Reconstruct residuals from codes; returns (n, d) float64."""
        parts = [
            self.sub_centroids[j][codes[:, j]].astype(np.float64)
            for j in range(self.m)
        ]
        return np.concatenate(parts, axis=1)

    def distortion(self, residuals: np.ndarray) -> float:
        """Mean squared reconstruction error over the given residuals."""
        r = np.asarray(residuals, dtype=np.float64)
        return float(np.mean(np.sum((r - self.decode(self.encode(r))) ** 2, axis=1)))


def _assign_subspaces(blocks: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid codes for all subspaces at once.

    One-dimensional subspaces take an exact searchsorted fast path; wider
    subspaces use chunked batched matmuls with the score buffer capped at
    ~64 MB.

    Args:
        blocks: (m, n, e) float32 subspace views.
        centroids: (m, ks, e) float32.

    Returns:
        (m, n) int64 codes; ties go to the lower centroid index.
    """
    m, n, e = blocks.shape
    ks = centroids.shape[1]
    out = np.empty((m, n), dtype=np.int64)
    if e == 1:
        # scalar subspaces: nearest centroid via midpoint boundaries
        for j in range(m):
            order = np.argsort(centroids[j, :, 0], kind="stable")
            levels = centroids[j, order, 0].astype(np.float64)
            edges = 0.5 * (levels[:-1] + levels[1:])
            picked = np.searchsorted(edges, blocks[j, :, 0], side="right")
            # ties at equal distance must resolve to the lower original index
            lo = order[np.maximum(picked - 1, 0)]
            hi = order[np.minimum(picked, ks - 1)]
            vals = blocks[j, :, 0].astype(np.float64)
            d_lo = np.abs(vals - levels[np.maximum(picked - 1, 0)])
            d_hi = np.abs(vals - levels[np.minimum(picked, ks - 1)])
            better_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (hi < lo))
            out[j] = np.where(better_hi, hi, lo)
        return out
    chunk = min(n, max(256, (48 << 20) // (m * ks * 4)))
    c_sq = np.einsum("mke,mke->mk", centroids, centroids).astype(np.float32)
    ct = np.ascontiguousarray(centroids.transpose(0, 2, 1))
    scores = np.empty((m, chunk, ks), dtype=np.float32)
    for start in range(0, n, chunk):
        part = blocks[:, start : start + chunk, :]
        width = part.shape[1]
        buf = scores[:, :width, :]
        # ||x - c||^2 ranking needs only c^2 - 2 x.c
        np.matmul(part, ct, out=buf)
        buf *= -2.0
        buf += c_sq[:, None, :]
        out[:, start : start + chunk] = np.argmin(buf, axis=2)
    return out


def _seed_plusplus(
    blocks: np.ndarray, ks: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding for every subspace in parallel.

    Runs on a seeded subsample of the fitting points; returns (m, ks, e).
    """
    m, n, e = blocks.shape
    if n > _SEED_CAP:
        pick = np.sort(rng.choice(n, size=_SEED_CAP, replace=False))
        blocks = np.ascontiguousarray(blocks[:, pick, :])
        n = _SEED_CAP
    centroids = np.empty((m, ks, e), dtype=np.float32)
    first = rng.integers(n)
    centroids[:, 0, :] = blocks[:, first, :]
    diff_buf = np.empty_like(blocks)
    row_offsets = np.arange(m, dtype=np.float64)

    def dist_to(center_col: np.ndarray) -> np.ndarray:
        np.subtract(blocks, center_col[:, None, :], out=diff_buf)
        np.multiply(diff_buf, diff_buf, out=diff_buf)
        return diff_buf.sum(axis=2, dtype=np.float64)

    d2 = dist_to(centroids[:, 0, :])
    for j in range(1, ks):
        totals = d2.sum(axis=1)
        safe = np.maximum(totals, _EPS)
        cum = np.cumsum(d2 / safe[:, None], axis=1)
        # one flattened searchsorted: row i's CDF occupies [i, i+1)
        flat = (cum + row_offsets[:, None]).ravel()
        u = rng.random(m)
        picks = np.searchsorted(flat, u + row_offsets, side="right") - np.arange(
            m
        ) * n
        picks = np.clip(picks, 0, n - 1)
        degenerate = totals <= _EPS
        if np.any(degenerate):
            picks[degenerate] = rng.integers(n, size=int(degenerate.sum()))
        centroids[:, j, :] = blocks[np.arange(m), picks, :]
        np.minimum(d2, dist_to(centroids[:, j, :]), out=d2)
    return centroids


def _train_subspaces(
    blocks: np.ndarray, ks: int, rng: np.random.Generator, iters: int
) -> np.ndarray:
    """Batched Lloyd iterations over all subspaces; empty clusters are
    re-seeded from the worst-assigned points of their subspace."""
    m, n, e = blocks.shape
    centroids = _seed_plusplus(blocks, ks, rng)
    offsets = (np.arange(m, dtype=np.int64) * ks)[:, None]
    for _ in range(iters):
        codes = _assign_subspaces(blocks, centroids)
        flat_codes = (codes + offsets).ravel()
        counts = np.bincount(flat_codes, minlength=m * ks).reshape(m, ks)
        sums = np.empty((m, ks, e), dtype=np.float64)
        for dim in range(e):
            sums[:, :, dim] = np.bincount(
                flat_codes,
                weights=blocks[:, :, dim].astype(np.float64).ravel(),
                minlength=m * ks,
            ).reshape(m, ks)
        if np.any(counts == 0):
            for j in np.flatnonzero((counts == 0).any(axis=1)):
                assigned = centroids[j][codes[j]]
                dist = np.einsum(
                    "ne,ne->n", blocks[j] - assigned, blocks[j] - assigned
                )
                worst = np.argsort(-dist, kind="stable")
                for slot, point in zip(np.flatnonzero(counts[j] == 0), worst):
                    sums[j, slot] = blocks[j][point]
                    counts[j, slot] = 1
        centroids = (sums / counts[:, :, None]).astype(np.float32)
    return centroids


def pq_train(
    residuals: np.ndarray, m: int, seed: int, ks: int = _KS, iters: int = 25
) -> PqCodebook:
    """Fit independent per-subspace codebooks on residual sub-blocks.

    Fitting uses a seeded sample of at most 256 * ks residuals.

    Raises:
        ValueError: If fewer than ks residuals or d % m != 0.
    """
    r = np.asarray(residuals, dtype=np.float32)
    n, d = r.shape
    if n < ks:
        raise ValueError(f"need at least ks={ks} residuals to train, got {n}")
    if d % m != 0:
        raise ValueError(f"d={d} must be divisible by m={m}")
    rng = np.random.default_rng(seed)
    if n > _FIT_CAP:
        keep = np.sort(rng.choice(n, size=_FIT_CAP, replace=False))
        r = r[keep]
        n = _FIT_CAP
    sub_dim = d // m
    blocks = np.ascontiguousarray(r.reshape(n, m, sub_dim).transpose(1, 0, 2))
    sub_centroids = _train_subspaces(blocks, ks, rng, iters)
    return PqCodebook(
        m=m, ks=ks, sub_dim=sub_dim, sub_centroids=sub_centroids, trained_on=n
    )


class IvfPqIndex:
    """IVF over product-quantized residuals with a mandatory raw store."""

    def __init__(
        self,
        dim: int,
        m: int,
        partition: CoarsePartition,
        codebook: PqCodebook,
        kmeans_seed: int,
        pq_seed: int,
    ):
        self.dim = dim
        self.m = m
        self.partition = partition
        self.codebook = codebook
        self.kmeans_seed = kmeans_seed
        self.pq_seed = pq_seed
        self._codes = _Rows(m, np.uint8)
        self._list_ids = _Rows(0, np.int64)
        self._external_ids = _Rows(0, np.int64)
        self._raw = _Rows(dim, np.float32)

    @classmethod
    def build(
        cls,
        training_data: np.ndarray,
        m: int,
        n_lists: int,
        kmeans_seed: int = 42,
        pq_seed: int = 7,
        train_sample: np.ndarray | None = None,
    ) -> "IvfPqIndex":
        """Train partition + codebook, then encode and add the training rows.

        `train_sample` optionally decouples the fitting sample from the rows
        that get indexed (used by the capacity-vs-bias control).
        """
        data = _normalize_rows(np.asarray(training_data, dtype=np.float64))
        fit = data if train_sample is None else _normalize_rows(
            np.asarray(train_sample, dtype=np.float64)
        )
        if fit.shape[0] < n_lists:
            raise ValueError(f"need at least n_lists={n_lists} fitting rows")
        dim = data.shape[1]
        partition = train_partition(fit, n_lists, seed=kmeans_seed)
        partition.lists = [[] for _ in range(n_lists)]
        assign_fit, _ = partition.assign_batch(fit)
        residuals = fit - partition.centroids[assign_fit].astype(np.float64)
        codebook = pq_train(residuals, m, seed=pq_seed)
        index = cls(dim, m, partition, codebook, kmeans_seed, pq_seed)
        index.add_batch(data)
        return index

    @property
    def count(self) -> int:
        return len(self._list_ids)

    @property
    def codes(self) -> np.ndarray:
        return self._codes.data

    @property
    def list_ids(self) -> np.ndarray:
        return self._list_ids.data

    @property
    def external_ids(self) -> np.ndarray:
        return self._external_ids.data

    @property
    def raw(self) -> np.ndarray:
        return self._raw.data

    def codebook_fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(
            np.ascontiguousarray(self.codebook.sub_centroids).tobytes()
        ).hexdigest()

    def add_batch(
        self, x: np.ndarray, external_ids: np.ndarray | None = None
    ) -> np.ndarray:
        xn = _normalize_rows(np.asarray(x, dtype=np.float64))
        if xn.shape[1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {xn.shape[1]}")
        list_ids, _ = self.partition.assign_batch(xn)
        residuals = xn - self.partition.centroids[list_ids].astype(np.float64)
        codes = self.codebook.encode(residuals)
        first = self.count
        n_new = len(xn)
        if external_ids is None:
            external_ids = np.arange(first, first + n_new, dtype=np.int64)
        self._codes.extend(codes)
        self._list_ids.extend(list_ids)
        self._external_ids.extend(np.asarray(external_ids, dtype=np.int64))
        self._raw.extend(xn.astype(np.float32))
        for offset, l in enumerate(list_ids):
            self.partition.lists[l].append(first + offset)
        return np.arange(first, first + n_new, dtype=np.int64)

    def add(self, x: np.ndarray, external_id: int | None = None) -> int:
        ext = None if external_id is None else np.asarray([external_id])
        return int(self.add_batch(np.asarray(x)[None, :], ext)[0])

    def _luts(self, q_rows: np.ndarray) -> np.ndarray:
        """Per-query score tables: (nq, m, ks) of <q_sub, sub_centroid>."""
        nq = len(q_rows)
        blocks = q_rows.reshape(nq, self.m, self.codebook.sub_dim)
        return np.einsum(
            "qjs,jks->qjk",
            blocks,
            self.codebook.sub_centroids.astype(np.float64),
            optimize=True,
        )

    def search(self, q: np.ndarray, k: int, n_p: int, rerank_depth: int = 0):
        from .index import SearchResult

        ids, scores = self.search_batch(
            np.asarray(q, dtype=np.float64)[None, :], k, n_p, rerank_depth
        )
        return SearchResult(ids=ids[0], scores=scores[0])

    def search_batch(
        self, queries: np.ndarray, k: int, n_p: int, rerank_depth: int = 0
    ):
        """ADC search: score = <q, c_l> + sum_j LUT_j[code_j].

        Same output conventions as the main index's search_batch.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if n_p < 1:
            raise ValueError(f"n_p must be >= 1, got {n_p}")
        n_p = min(n_p, self.partition.n_lists)
        qn = _normalize_rows(np.asarray(queries, dtype=np.float64))
        nq = len(qn)
        coarse = qn @ self.partition.centroids.T.astype(np.float64)
        probe = np.argsort(-coarse, axis=1, kind="stable")[:, :n_p]
        luts = self._luts(qn).astype(np.float32)
        flat_luts = np.ascontiguousarray(
            luts.reshape(nq, self.m * self.codebook.ks)
        )
        col_offsets = np.arange(self.m, dtype=np.int64) * self.codebook.ks

        cand_ids: list[list[np.ndarray]] = [[] for _ in range(nq)]
        cand_scores: list[list[np.ndarray]] = [[] for _ in range(nq)]
        by_list: dict[int, list[int]] = {}
        for qi in range(nq):
            for l in probe[qi]:
                by_list.setdefault(int(l), []).append(qi)
        for l, qis in by_list.items():
            members = self.partition.lists[l]
            if not members:
                continue
            member_arr = np.asarray(members, dtype=np.int64)
            idx = self.codes[member_arr].astype(np.int64) + col_offsets
            for qi in qis:
                res = flat_luts[qi][idx].sum(axis=1, dtype=np.float64)
                cand_ids[qi].append(member_arr)
                cand_scores[qi].append(coarse[qi, l] + res)

        depth = max(k, rerank_depth) if rerank_depth > 0 else k
        out_ids = np.full((nq, k), -1, dtype=np.int64)
        out_scores = np.full((nq, k), -np.inf, dtype=np.float64)
        for qi in range(nq):
            if not cand_ids[qi]:
                continue
            ids = np.concatenate(cand_ids[qi])
            scores = np.concatenate(cand_scores[qi])
            pos = np.lexsort((ids, -scores))[:depth]
            sel, est = ids[pos], scores[pos]
            if rerank_depth > 0:
                exact = self.raw[sel].astype(np.float64) @ qn[qi]
                order = np.lexsort((sel, -exact))[:k]
                sel, est = sel[order], exact[order]
            else:
                sel, est = sel[:k], est[:k]
            out_ids[qi, : len(sel)] = sel
            out_scores[qi, : len(sel)] = est
        return out_ids, out_scores

    def retrain(self, seed: int) -> float:
        """Refit the codebook on cumulative residuals and re-encode all codes.

        The partition stays fixed. Returns wall-clock seconds (the cost
        ledger entry for one retrain pass).
        """
        if self.count == 0:
            return 0.0
        t0 = time.perf_counter()
        raw = self.raw.astype(np.float64)
        residuals = raw - self.partition.centroids[self.list_ids].astype(np.float64)
        self.codebook = pq_train(residuals, self.m, seed=seed)
        self._codes.data[:] = self.codebook.encode(residuals)
        return time.perf_counter() - t0


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < _EPS):
        raise ValueError("zero-norm row")
    return x / norms[:, None]


_PQ_MAGIC = b"IVPQ"


def save_pq(index: IvfPqIndex, path: str | Path) -> None:
    """Serialize the PQ baseline (round-trips arrays exactly)."""
    with open(path, "wb") as f:
        f.write(_PQ_MAGIC)
        f.write(
            struct.pack(
                "<IIIIqqQQ",
                index.dim,
                index.m,
                index.codebook.ks,
                index.partition.n_lists,
                index.kmeans_seed,
                index.pq_seed,
                index.codebook.trained_on,
                index.count,
            )
        )
        f.write(np.ascontiguousarray(index.codebook.sub_centroids, "<f4").tobytes())
        f.write(np.ascontiguousarray(index.partition.centroids, "<f4").tobytes())
        f.write(index.codes.tobytes())
        f.write(index.list_ids.astype("<u4").tobytes())
        f.write(index.external_ids.astype("<i8").tobytes())
        f.write(np.ascontiguousarray(index.raw, "<f4").tobytes())


def load_pq(path: str | Path) -> IvfPqIndex:
    from .storage import IndexFormatError, _read_array, _read_exact

    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _PQ_MAGIC:
            raise IndexFormatError("not a PQ index file (bad magic)")
        header = struct.calcsize("<IIIIqqQQ")
        dim, m, ks, n_lists, km_seed, pq_seed, trained_on, count = struct.unpack(
            "<IIIIqqQQ", _read_exact(f, header, "config")
        )
        sub_dim = dim // m
        sub = _read_array(f, "<f4", m * ks * sub_dim, "codebook").reshape(
            m, ks, sub_dim
        )
        codebook = PqCodebook(
            m=m, ks=ks, sub_dim=sub_dim, sub_centroids=sub, trained_on=int(trained_on)
        )
        cents = _read_array(f, "<f4", n_lists * dim, "centroids").reshape(
            n_lists, dim
        )
        partition = CoarsePartition(n_lists=n_lists, dim=dim, centroids=cents)
        n = int(count)
        codes = _read_array(f, "u1", n * m, "codes").reshape(n, m)
        list_ids = _read_array(f, "<u4", n, "list ids").astype(np.int64)
        external = _read_array(f, "<i8", n, "external ids")
        raw = _read_array(f, "<f4", n * dim, "raw").reshape(n, dim)

    index = IvfPqIndex(dim, m, partition, codebook, int(km_seed), int(pq_seed))
    if n:
        index._codes.extend(codes)
        index._list_ids.extend(list_ids)
        index._external_ids.extend(external)
        index._raw.extend(raw)
        for i, l in enumerate(list_ids):
            partition.lists[l].append(i)
    return index
