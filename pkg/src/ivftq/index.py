"""Inverted-file index over rotation + scalar-quantized residuals.

Encode path: normalize, assign to the max-IP coarse centroid, rotate the
residual, renormalize it to the unit sphere, quantize per coordinate
(Lloyd-Max bin + half-bin sign), and store the residual norm as binary16.
Search scores candidates asymmetrically: the coarse term <q, c_l> is exact,
the residual term is ||r|| * <Pi q, rho_hat> from the stored code.

The quantizer and rotation are fixed at construction and never touched by
adds or refreshes; only the coarse partition is trained.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lloydmax import ScalarQuantizer, design_quantizer
from .partition import CoarsePartition, train_partition
from .rotation import RotationMatrix, generate_rotation

__all__ = [
    "IndexConfig",
    "VectorCode",
    "SearchResult",
    "IvfTqIndex",
    "build",
    "search_flat_tq",
    "bit_accounting",
    "bit_flip_ablation",
    "pack_fields",
    "unpack_fields",
]

_EPS = 1e-12


@dataclass(frozen=True)
class IndexConfig:
    """Build-time parameters of an index.

    Attributes:
        dim: Vector dimension d >= 2.
        bits: Quantizer bits per coordinate, 1..8 (sign bit not included).
        n_lists: Number of coarse lists L >= 1.
        use_sign_bit: Reconstruct with half-bin means (one extra bit/coord).
        keep_raw: Retain normalized float32 vectors for re-ranking and
            refresh audits.
        flat: Quantize whole normalized vectors instead of residuals; the
            coarse partition is not used for scoring (n_lists must be 1).
        rotation_seed: Seed for the fixed rotation.
        kmeans_seed: Seed for coarse-partition training.
    """

    dim: int
    bits: int
    n_lists: int
    use_sign_bit: bool = True
    keep_raw: bool = False
    flat: bool = False
    rotation_seed: int = 42
    kmeans_seed: int = 42

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")
        if self.n_lists < 1:
            raise ValueError(f"n_lists must be >= 1, got {self.n_lists}")
        if self.flat and self.n_lists != 1:
            raise ValueError("flat mode requires n_lists == 1")


@dataclass(frozen=True)
class VectorCode:
    """Packed per-vector record.

    Attributes:
        codes: bits*dim quantizer bits, coordinate-major, little-endian
            within bytes.
        signs: dim half-bin indicator bits, same packing.
        list_id: Coarse list in [0, n_lists).
        residual_norm: binary16 of ||x_tilde - c_l||_2 (1.0 in flat mode).
    """

    codes: bytes
    signs: bytes
    list_id: int
    residual_norm: np.float16


@dataclass(frozen=True)
class SearchResult:
    """Top-k ids with scores in non-increasing order."""

    ids: np.ndarray
    scores: np.ndarray


def pack_fields(values: np.ndarray, width: int) -> np.ndarray:
    """Pack (n, d) uint8 field values of `width` bits each into bytes.

    Fields are laid out coordinate-major; bit p of value j lands at overall
    bit position j*width + p, little-endian within each byte.
    """
    if not 1 <= width <= 8:
        raise ValueError(f"width must be in [1, 8], got {width}")
    values = np.ascontiguousarray(values, dtype=np.uint8)
    n, d = values.shape
    bits = np.unpackbits(values[:, :, None], axis=2, count=width, bitorder="little")
    return np.packbits(bits.reshape(n, d * width), axis=1, bitorder="little")


def unpack_fields(packed: np.ndarray, width: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_fields`; returns (n, count) uint8 values."""
    if not 1 <= width <= 8:
        raise ValueError(f"width must be in [1, 8], got {width}")
    packed = np.ascontiguousarray(packed, dtype=np.uint8)
    n = packed.shape[0]
    bits = np.unpackbits(packed, axis=1, count=count * width, bitorder="little")
    return np.packbits(
        bits.reshape(n, count, width), axis=2, bitorder="little"
    ).reshape(n, count)


class _Rows:
    """Append-only 2D array with amortized O(1) row appends."""

    def __init__(self, width: int, dtype, capacity: int = 1024):
        self._arr = np.empty((capacity, width) if width else capacity, dtype=dtype)
        self._n = 0
        self._width = width

    def __len__(self) -> int:
        return self._n

    @property
    def data(self) -> np.ndarray:
        return self._arr[: self._n]

    def _reserve(self, extra: int):
        need = self._n + extra
        if need <= self._arr.shape[0]:
            return
        cap = max(need, 2 * self._arr.shape[0])
        shape = (cap, self._width) if self._width else cap
        grown = np.empty(shape, dtype=self._arr.dtype)
        grown[: self._n] = self._arr[: self._n]
        self._arr = grown

    def extend(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=self._arr.dtype)
        self._reserve(len(rows))
        self._arr[self._n : self._n + len(rows)] = rows
        self._n += len(rows)


class IvfTqIndex:
    """The index: trained coarse partition over a fixed compression layer."""

    def __init__(
        self,
        config: IndexConfig,
        quantizer: ScalarQuantizer,
        rot: RotationMatrix,
        partition: CoarsePartition,
    ):
        self.config = config
        self.quantizer = quantizer
        self.rot = rot
        self.partition = partition
        d = config.dim
        self._bins = _Rows(d, np.uint8)
        self._signs = _Rows(d, np.uint8)
        self._list_ids = _Rows(0, np.int64)
        self._norms = _Rows(0, np.float16)
        self._external_ids = _Rows(0, np.int64)
        self._raw = _Rows(d, np.float32) if config.keep_raw else None
        self._version = 0
        self._cache_version = -1
        self._scoring_rows: np.ndarray | None = None

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(cls, config: IndexConfig, training_data: np.ndarray) -> "IvfTqIndex":
        """Normalize training rows, train the partition, fix the compression
        layer, then encode and add every training vector.

        Raises:
            ValueError: On zero-norm rows (reported by row index) or fewer
                rows than n_lists.
        """
        data = np.asarray(training_data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != config.dim:
            raise ValueError(f"training data must be (n, {config.dim})")
        norms = np.linalg.norm(data, axis=1)
        bad = np.flatnonzero(norms < _EPS)
        if len(bad):
            raise ValueError(f"zero-norm training row at index {bad[0]}")
        if data.shape[0] < config.n_lists:
            raise ValueError(
                f"need at least n_lists={config.n_lists} rows, got {data.shape[0]}"
            )
        normalized = data / norms[:, None]

        quantizer = design_quantizer(config.bits, config.dim)
        rot = generate_rotation(config.dim, config.rotation_seed)
        if config.flat:
            placeholder = np.zeros((1, config.dim), dtype=np.float32)
            placeholder[0, 0] = 1.0  # unused in flat scoring
            partition = CoarsePartition(n_lists=1, dim=config.dim, centroids=placeholder)
        else:
            partition = train_partition(
                normalized, config.n_lists, seed=config.kmeans_seed
            )
            partition.lists = [[] for _ in range(config.n_lists)]

        index = cls(config, quantizer, rot, partition)
        index.add_batch(normalized)
        return index

    # ------------------------------------------------------------------
    # encoding

    def _encode_batch(self, x: np.ndarray, partition: CoarsePartition | None = None):
        """Canonical encode path for (n, d) rows; returns unpacked fields.

        `partition` overrides the index's own partition (used by refresh to
        re-encode against freshly trained centroids).
        """
        part = partition if partition is not None else self.partition
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.dim:
            raise ValueError(f"expected (n, {self.config.dim}) input, got {x.shape}")
        norms = np.linalg.norm(x, axis=1)
        bad = np.flatnonzero(norms < _EPS)
        if len(bad):
            raise ValueError(f"zero-norm input row at index {bad[0]}")
        xn = x / norms[:, None]

        if self.config.flat:
            list_ids = np.zeros(len(xn), dtype=np.int64)
            residuals = xn
        else:
            list_ids, _ = part.assign_batch(xn)
            residuals = xn - part.centroids[list_ids].astype(np.float64)

        rnorm = np.linalg.norm(residuals, axis=1)
        stored = rnorm.astype(np.float16)  # round-to-nearest-even

        bins = np.zeros(residuals.shape, dtype=np.uint8)
        signs = np.zeros(residuals.shape, dtype=np.uint8)
        # the rounded stored norm is the single source of truth: a vector
        # whose norm rounds to zero contributes nothing, so its direction
        # is not encoded either
        live = stored.astype(np.float64) > 0
        if np.any(live):
            rotated = self.rot.apply(residuals[live])
            unit = rotated / np.linalg.norm(rotated, axis=1)[:, None]
            bins[live], signs[live] = self.quantizer.quantize(unit)
        return bins, signs, list_ids, stored, xn

    def encode(self, x: np.ndarray) -> VectorCode:
        """Encode one vector to its packed record (does not add it)."""
        bins, signs, list_ids, stored, _ = self._encode_batch(
            np.asarray(x, dtype=np.float64)[None, :]
        )
        return VectorCode(
            codes=pack_fields(bins, self.config.bits).tobytes(),
            signs=pack_fields(signs, 1).tobytes(),
            list_id=int(list_ids[0]),
            residual_norm=stored[0],
        )

    def add(self, x: np.ndarray, external_id: int | None = None) -> int:
        """Encode and append one vector; returns its internal id."""
        ext = None if external_id is None else np.asarray([external_id], dtype=np.int64)
        return int(self.add_batch(np.asarray(x, dtype=np.float64)[None, :], ext)[0])

    def add_batch(
        self, x: np.ndarray, external_ids: np.ndarray | None = None
    ) -> np.ndarray:
        """Encode and append rows of x; returns assigned internal ids."""
        bins, signs, list_ids, stored, xn = self._encode_batch(x)
        n_new = len(bins)
        if external_ids is None:
            external_ids = np.arange(self.count, self.count + n_new, dtype=np.int64)
        else:
            external_ids = np.asarray(external_ids, dtype=np.int64)
            if len(external_ids) != n_new:
                raise ValueError("external_ids length mismatch")

        first = self.count
        self._bins.extend(bins)
        self._signs.extend(signs)
        self._list_ids.extend(list_ids)
        self._norms.extend(stored)
        self._external_ids.extend(external_ids)
        if self._raw is not None:
            self._raw.extend(xn.astype(np.float32))
        for offset, l in enumerate(list_ids):
            self.partition.lists[l].append(first + offset)
        self._version += 1
        return np.arange(first, first + n_new, dtype=np.int64)

    # ------------------------------------------------------------------
    # read-only views

    @property
    def count(self) -> int:
        return len(self._list_ids)

    @property
    def bins(self) -> np.ndarray:
        return self._bins.data

    @property
    def signs(self) -> np.ndarray:
        return self._signs.data

    @property
    def list_ids(self) -> np.ndarray:
        return self._list_ids.data

    @property
    def norms(self) -> np.ndarray:
        return self._norms.data

    @property
    def external_ids(self) -> np.ndarray:
        return self._external_ids.data

    @property
    def raw(self) -> np.ndarray | None:
        return self._raw.data if self._raw is not None else None

    @property
    def state_tag(self) -> str:
        """Changes whenever stored content changes; used to pin ground truth."""
        return f"n={self.count}/v={self._version}"

    def compression_fingerprint(self) -> str:
        """SHA-256 over the quantizer and rotation bytes.

        Adds and refreshes must never change this value.
        """
        h = hashlib.sha256()
        for a in (
            self.quantizer.boundaries,
            self.quantizer.centroids,
            self.quantizer.half_bin_means,
            self.rot.matrix,
        ):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # search

    def _scoring_matrix(self) -> np.ndarray:
        """(n, d) float32 rows of ||r|| * rho_hat_recon, cached per state."""
        if self._cache_version != self._version:
            table = self.quantizer.reconstruction_table(
                self.config.use_sign_bit
            ).astype(np.float32)
            if self.config.use_sign_bit:
                units = table[self.bins, self.signs]
            else:
                units = table[self.bins]
            self._scoring_rows = units * self.norms.astype(np.float32)[:, None]
            self._cache_version = self._version
        return self._scoring_rows

    def _normalize_queries(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.config.dim:
            raise ValueError(f"query dim {q.shape[1]} != index dim {self.config.dim}")
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < _EPS):
            raise ValueError("zero-norm query")
        return q / norms[:, None]

    def search(
        self, q: np.ndarray, k: int, n_p: int, rerank_depth: int = 0
    ) -> SearchResult:
        """Probe the top n_p coarse lists and return the top-k candidates.

        Estimated score per candidate is <q, c_l> + ||r|| * <Pi q, rho_hat>.
        With rerank_depth > 0 the top candidates by estimated score are
        re-scored exactly against the raw store.

        Raises:
            ValueError: On bad k/n_p, dimension mismatch, or rerank without
                a raw store. n_p > n_lists is clamped with a warning.
        """
        ids, scores = self.search_batch(
            np.asarray(q, dtype=np.float64)[None, :], k, n_p, rerank_depth
        )
        return SearchResult(ids=ids[0], scores=scores[0])

    def search_batch(
        self, queries: np.ndarray, k: int, n_p: int, rerank_depth: int = 0
    ):
        """Vectorized search over query rows.

        Returns:
            (ids, scores): (nq, <=k) int64 and float32 arrays, score-descending
            with ties broken by lower id. Rows are padded with id -1 and score
            -inf when fewer than k candidates exist.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if self.config.flat:
            return self._search_flat_batch(queries, k)
        if n_p < 1:
            raise ValueError(f"n_p must be >= 1, got {n_p}")
        if n_p > self.config.n_lists:
            warnings.warn(
                f"n_p={n_p} exceeds n_lists={self.config.n_lists}; clamping",
                stacklevel=2,
            )
            n_p = self.config.n_lists
        if rerank_depth > 0 and self._raw is None:
            raise ValueError("rerank requires an index built with keep_raw=True")

        qn = self._normalize_queries(queries)
        nq = len(qn)
        coarse = qn @ self.partition.centroids.T.astype(np.float64)
        # deterministic probe order: by coarse score, ties by lower list id
        probe = np.argsort(-coarse, axis=1, kind="stable")[:, :n_p]
        q_rot = self.rot.apply(qn).astype(np.float32)

        w = self._scoring_matrix()
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
            block = w[member_arr] @ q_rot[qis].T  # (m, nq_l) float32
            for col, qi in enumerate(qis):
                cand_ids[qi].append(member_arr)
                cand_scores[qi].append(
                    coarse[qi, l] + block[:, col].astype(np.float64)
                )

        depth = max(k, rerank_depth) if rerank_depth > 0 else k
        out_ids = np.full((nq, k), -1, dtype=np.int64)
        out_scores = np.full((nq, k), -np.inf, dtype=np.float64)
        for qi in range(nq):
            if not cand_ids[qi]:
                continue
            ids = np.concatenate(cand_ids[qi])
            scores = np.concatenate(cand_scores[qi])
            pos = self._positions(ids, scores, depth)
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

    @staticmethod
    def _positions(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
        """Indices of the top-k by score, ties broken by lower id."""
        return np.lexsort((ids, -scores))[:k]

    def _search_flat_batch(self, queries: np.ndarray, k: int):
        """Exhaustive scan in flat mode: score = <Pi q, rho_hat_recon>."""
        qn = self._normalize_queries(queries)
        q_rot = self.rot.apply(qn).astype(np.float32)
        w = self._scoring_matrix()
        scores = (w @ q_rot.T).T.astype(np.float64)  # (nq, n)
        nq, n = scores.shape
        kk = min(k, n)
        out_ids = np.full((nq, k), -1, dtype=np.int64)
        out_scores = np.full((nq, k), -np.inf, dtype=np.float64)
        all_ids = np.arange(n, dtype=np.int64)
        for qi in range(nq):
            top = self._positions(all_ids, scores[qi], kk)
            out_ids[qi, :kk] = top
            out_scores[qi, :kk] = scores[qi, top]
        return out_ids, out_scores

    # ------------------------------------------------------------------
    # diagnostics

    def bit_accounting(self) -> dict:
        """Logical per-vector bit budget plus fixed index overheads.

        Two conventions are reported: the exact ceil(log2 L) + 16 overhead
        and the rounded 32-bit id+norm overhead used in headline budgets.
        Physical storage pads to bytes and uses u32 list ids; the figures
        here are logical.
        """
        cfg = self.config
        code_bits = cfg.bits * cfg.dim
        sign_bits = cfg.dim if cfg.use_sign_bit else 0
        list_bits = int(np.ceil(np.log2(cfg.n_lists))) if cfg.n_lists > 1 else 0
        norm_bits = 16
        exact = code_bits + sign_bits + list_bits + norm_bits
        return {
            "bits_per_vec": exact,
            "bits_per_vec_32bit_overhead": code_bits + sign_bits + 32,
            "breakdown": {
                "code_bits": code_bits,
                "sign_bits": sign_bits,
                "list_id_bits": list_bits,
                "norm_bits": norm_bits,
            },
            "fixed_overhead_bits": {
                "centroid_table": cfg.n_lists * cfg.dim * 32,
                "rotation_matrix": cfg.dim * cfg.dim * 64,
            },
            "count": self.count,
            "total_logical_bytes": int(np.ceil(exact * self.count / 8)),
        }

    def bit_flip_ablation(
        self,
        bit_position: str,
        fraction: float,
        queries: np.ndarray,
        k: int,
        n_p: int,
        seed: int = 0,
        truth: np.ndarray | None = None,
    ) -> dict:
        """Recall drop when a fraction of one stored bit position is flipped.

        Flips the named bit in a seeded random fraction of all (vector,
        coordinate) slots, re-measures recall@k against exact ground truth,
        and restores the codes.

        Args:
            bit_position: One of "msb_primary", "lsb_primary", "sign".
            fraction: Share of slots to corrupt, in [0, 1].
            truth: (nq, k) exact ids; computed from the raw store if omitted.

        Returns:
            Dict with baseline/corrupted recall and the drop in recall.
        """
        from .evaluation import exact_topk, recall_at_k

        if not 0 <= fraction <= 1:
            raise ValueError(f"fraction must be in [0, 1], got {fraction}")
        if bit_position not in ("msb_primary", "lsb_primary", "sign"):
            raise ValueError(f"unknown bit_position {bit_position!r}")
        if bit_position == "sign" and not self.config.use_sign_bit:
            raise ValueError("sign-bit ablation requires use_sign_bit=True")
        if truth is None:
            if self.raw is None:
                raise ValueError("need truth or an index built with keep_raw=True")
            truth = exact_topk(self.raw, queries, k).ids

        def run() -> float:
            ids, _ = self.search_batch(queries, k, n_p)
            return recall_at_k(ids, truth, k)

        base = run()
        rng = np.random.default_rng(seed)
        mask = rng.random((self.count, self.config.dim)) < fraction
        target = self._signs if bit_position == "sign" else self._bins
        backup = target.data.copy()
        if bit_position == "msb_primary":
            flip = np.uint8(1 << (self.config.bits - 1))
        elif bit_position == "lsb_primary":
            flip = np.uint8(1)
        else:
            flip = np.uint8(1)
        try:
            target.data[mask] ^= flip
            self._version += 1
            corrupted = run()
        finally:
            target.data[:] = backup
            self._version += 1
        return {
            "bit_position": bit_position,
            "fraction": fraction,
            "recall_base": base,
            "recall_corrupted": corrupted,
            "recall_drop": base - corrupted,
        }


def build(config: IndexConfig, training_data: np.ndarray) -> IvfTqIndex:
    """Build an index from training rows (see :meth:`IvfTqIndex.build`)."""
    return IvfTqIndex.build(config, training_data)


def search_flat_tq(index: IvfTqIndex, q: np.ndarray, k: int) -> SearchResult:
    """Exhaustive flat-mode search; the index must be built with flat=True."""
    if not index.config.flat:
        raise ValueError("index was not built in flat mode")
    return index.search(q, k, n_p=1)


def bit_accounting(index: IvfTqIndex) -> dict:
    return index.bit_accounting()


def bit_flip_ablation(
    index: IvfTqIndex,
    bit_position: str,
    fraction: float,
    queries: np.ndarray,
    k: int,
    n_p: int,
    seed: int = 0,
    truth: np.ndarray | None = None,
) -> dict:
    return index.bit_flip_ablation(bit_position, fraction, queries, k, n_p, seed, truth)
