"""Index persistence: a little-endian binary container.

Layout: magic "IVTQ", format version u16, config block, quantizer block
(float64), rotation block (float64 row-major), coarse centroid block
(float32), per-vector arrays (u32 list ids, binary16 norms, i64 external
ids, bit-packed codes and signs), then the optional raw block (float32).
Codes round-trip bitwise; loading a truncated or foreign file raises
IndexFormatError without constructing a partial index.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .index import IndexConfig, IvfTqIndex, pack_fields, unpack_fields
from .lloydmax import ScalarQuantizer
from .partition import CoarsePartition
from .rotation import RotationMatrix

__all__ = ["IndexFormatError", "save_index", "load_index"]

_MAGIC = b"IVTQ"
_VERSION = 1


class IndexFormatError(RuntimeError):
    """Raised when an index file is truncated, corrupt, or unsupported."""


def save_index(index: IvfTqIndex, path: str | Path) -> None:
    """Serialize an index; the on-disk bytes round-trip exactly."""
    cfg = index.config
    q = index.quantizer
    flags = (
        (1 if cfg.use_sign_bit else 0)
        | (2 if cfg.keep_raw else 0)
        | (4 if cfg.flat else 0)
    )
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<H", _VERSION))
        f.write(
            struct.pack(
                "<IHIBqqQ",
                cfg.dim,
                cfg.bits,
                cfg.n_lists,
                flags,
                cfg.rotation_seed,
                cfg.kmeans_seed,
                index.count,
            )
        )
        for arr in (q.boundaries, q.centroids, q.half_bin_means):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        f.write(struct.pack("<dd", q.distortion, q.distortion_sign))
        f.write(np.ascontiguousarray(index.rot.matrix, dtype="<f8").tobytes())
        f.write(
            np.ascontiguousarray(index.partition.centroids, dtype="<f4").tobytes()
        )
        f.write(index.list_ids.astype("<u4").tobytes())
        f.write(index.norms.view(np.uint16).astype("<u2").tobytes())
        f.write(index.external_ids.astype("<i8").tobytes())
        f.write(pack_fields(index.bins, cfg.bits).tobytes())
        f.write(pack_fields(index.signs, 1).tobytes())
        if cfg.keep_raw:
            f.write(np.ascontiguousarray(index.raw, dtype="<f4").tobytes())


def _read_exact(f, nbytes: int, what: str) -> bytes:
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise IndexFormatError(
            f"truncated index file: wanted {nbytes} bytes for {what}, got {len(buf)}"
        )
    return buf


def _read_array(f, dtype, count: int, what: str) -> np.ndarray:
    dt = np.dtype(dtype)
    return np.frombuffer(_read_exact(f, dt.itemsize * count, what), dtype=dt).copy()


def load_index(path: str | Path) -> IvfTqIndex:
    """Load an index saved by :func:`save_index`.

    Raises:
        IndexFormatError: On bad magic, unsupported version, or truncation.
    """
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _MAGIC:
            raise IndexFormatError("not an index file (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != _VERSION:
            raise IndexFormatError(f"unsupported format version {version}")
        dim, bits, n_lists, flags, rot_seed, km_seed, count = struct.unpack(
            "<IHIBqqQ", _read_exact(f, struct.calcsize("<IHIBqqQ"), "config")
        )
        cfg = IndexConfig(
            dim=int(dim),
            bits=int(bits),
            n_lists=int(n_lists),
            use_sign_bit=bool(flags & 1),
            keep_raw=bool(flags & 2),
            flat=bool(flags & 4),
            rotation_seed=int(rot_seed),
            kmeans_seed=int(km_seed),
        )
        levels = 1 << cfg.bits
        boundaries = _read_array(f, "<f8", levels + 1, "boundaries")
        centroids_q = _read_array(f, "<f8", levels, "quantizer centroids")
        half = _read_array(f, "<f8", levels * 2, "half-bin means").reshape(levels, 2)
        dist, dist_sign = struct.unpack("<dd", _read_exact(f, 16, "distortions"))
        quantizer = ScalarQuantizer(
            bits=cfg.bits,
            dim=cfg.dim,
            boundaries=boundaries,
            centroids=centroids_q,
            half_bin_means=half,
            distortion=dist,
            distortion_sign=dist_sign,
        )
        matrix = _read_array(f, "<f8", cfg.dim * cfg.dim, "rotation").reshape(
            cfg.dim, cfg.dim
        )
        rot = RotationMatrix(dim=cfg.dim, matrix=matrix, seed=cfg.rotation_seed)
        cents = _read_array(f, "<f4", cfg.n_lists * cfg.dim, "centroids").reshape(
            cfg.n_lists, cfg.dim
        )
        partition = CoarsePartition(n_lists=cfg.n_lists, dim=cfg.dim, centroids=cents)

        n = int(count)
        list_ids = _read_array(f, "<u4", n, "list ids").astype(np.int64)
        norms = _read_array(f, "<u2", n, "norms").view(np.float16)
        external = _read_array(f, "<i8", n, "external ids")
        code_bytes = -(-cfg.bits * cfg.dim // 8)
        sign_bytes = -(-cfg.dim // 8)
        codes = _read_array(f, "u1", n * code_bytes, "codes").reshape(n, code_bytes)
        signs = _read_array(f, "u1", n * sign_bytes, "signs").reshape(n, sign_bytes)
        raw = None
        if cfg.keep_raw:
            raw = _read_array(f, "<f4", n * cfg.dim, "raw store").reshape(n, cfg.dim)
        trailing = f.read(1)
        if trailing:
            raise IndexFormatError("trailing bytes after index payload")

    index = IvfTqIndex(cfg, quantizer, rot, partition)
    if n:
        index._bins.extend(unpack_fields(codes, cfg.bits, cfg.dim))
        index._signs.extend(unpack_fields(signs, 1, cfg.dim))
        index._list_ids.extend(list_ids)
        index._norms.extend(norms)
        index._external_ids.extend(external)
        if raw is not None:
            index._raw.extend(raw)
        for i, l in enumerate(list_ids):
            partition.lists[l].append(i)
    return index
