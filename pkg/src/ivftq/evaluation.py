"""Exact ground truth, recall metrics, seed statistics, and theory checks.

Everything here is pure over immutable snapshots. Ground truth carries the
state tag of the database it was computed against so a grown database
cannot silently reuse a stale cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .index import IndexConfig, IvfTqIndex
from .lloydmax import ScalarQuantizer
from .rotation import RotationMatrix

__all__ = [
    "GroundTruth",
    "SeedStats",
    "exact_topk",
    "recall_at_k",
    "per_query_recall",
    "verify_marginal",
    "verify_theorem1",
    "verify_amplification",
]

# two-sided 95% Student-t critical values by degrees of freedom
_T_95 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365}


@dataclass(frozen=True)
class GroundTruth:
    """Exact top-k ids per query, pinned to a database state.

    Attributes:
        ids: (nq, k) int64, score-descending, ties broken by lower id.
        k: Depth of the lists.
        state_tag: Tag of the database state the truth was computed against.
    """

    ids: np.ndarray
    k: int
    state_tag: str = ""

    def validate(self, state_tag: str) -> None:
        """Raise if this truth was computed against a different state."""
        if self.state_tag and self.state_tag != state_tag:
            raise ValueError(
                f"ground truth is stale: computed at {self.state_tag!r}, "
                f"database is at {state_tag!r}"
            )


def exact_topk(
    database: np.ndarray,
    queries: np.ndarray,
    k: int,
    state_tag: str = "",
    chunk: int = 256,
) -> GroundTruth:
    """Brute-force inner-product top-k with deterministic tie-breaking.

    Raises:
        ValueError: On an empty database.
    """
    db = np.asarray(database, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64)
    if db.ndim != 2 or db.shape[0] == 0:
        raise ValueError("database must be a nonempty (n, d) matrix")
    kk = min(k, db.shape[0])
    out = np.empty((len(q), kk), dtype=np.int64)
    for start in range(0, len(q), chunk):
        block = q[start : start + chunk] @ db.T
        # stable sort on negated scores keeps ascending ids among ties
        out[start : start + chunk] = np.argsort(-block, axis=1, kind="stable")[:, :kk]
    return GroundTruth(ids=out, k=kk, state_tag=state_tag)


def per_query_recall(results: np.ndarray, truth, k: int) -> np.ndarray:
    """|retrieved ∩ true| / k for each query."""
    truth_ids = truth.ids if isinstance(truth, GroundTruth) else np.asarray(truth)
    results = np.asarray(results)
    if len(results) != len(truth_ids):
        raise ValueError(
            f"results have {len(results)} queries, truth has {len(truth_ids)}"
        )
    hits = np.empty(len(results), dtype=np.float64)
    for i in range(len(results)):
        hits[i] = len(np.intersect1d(results[i][:k], truth_ids[i][:k])) / k
    return hits


def recall_at_k(results: np.ndarray, truth, k: int) -> float:
    """Mean over queries of the top-k overlap fraction."""
    return float(np.mean(per_query_recall(results, truth, k)))


@dataclass(frozen=True)
class SeedStats:
    """Mean and 95% CI over a handful of seeded runs.

    The half-width uses the Student-t critical value at df = n - 1
    (4.303 at three seeds).
    """

    values: tuple[float, ...]
    mean: float
    std: float
    ci_half_width: float

    @classmethod
    def from_values(cls, values) -> "SeedStats":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("need at least one value")
        mean = float(np.mean(vals))
        if len(vals) == 1:
            return cls(values=vals, mean=mean, std=0.0, ci_half_width=0.0)
        df = len(vals) - 1
        if df not in _T_95:
            raise ValueError(f"no t critical value tabulated for df={df}")
        std = float(np.std(vals, ddof=1))
        return cls(
            values=vals,
            mean=mean,
            std=std,
            ci_half_width=_T_95[df] * std / np.sqrt(len(vals)),
        )

    @classmethod
    def paired(cls, a, b) -> "SeedStats":
        """Stats of the within-seed differences a - b."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError("paired series must have equal length")
        return cls.from_values(a - b)

    def to_dict(self) -> dict:
        return {
            "values": list(self.values),
            "mean": self.mean,
            "std": self.std,
            "ci_half_width": self.ci_half_width,
        }


def _ks_statistic(samples: np.ndarray) -> float:
    """One-sample Kolmogorov-Smirnov distance to the standard normal."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    cdf = ndtr(x)
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(n) / n)
    return float(max(upper, lower))


def verify_marginal(
    rot: RotationMatrix, dim: int, n_trials: int, seed: int = 0
) -> dict:
    """KS distance between sqrt(d) * rotated-unit-vector coordinates and N(0,1).

    Pools coordinates from as many seeded random unit vectors as needed to
    reach n_trials samples.
    """
    if dim != rot.dim:
        raise ValueError(f"dim {dim} does not match rotation dim {rot.dim}")
    # decorrelate the sample stream from the rotation's own seed: reusing
    # one seed for both would replay the Gaussians the rotation was built
    # from and bias the marginals
    rng = np.random.default_rng((seed, 0x6D61726769))
    n_vectors = -(-n_trials // dim)
    v = rng.standard_normal((n_vectors, dim))
    v /= np.linalg.norm(v, axis=1)[:, None]
    coords = (rot.apply(v) * np.sqrt(dim)).ravel()[:n_trials]
    return {
        "ks_statistic": _ks_statistic(coords),
        "n_samples": int(n_trials),
        "dim": dim,
    }


def verify_theorem1(
    quantizer: ScalarQuantizer,
    rot: RotationMatrix,
    n_trials: int,
    delta: float,
    seed: int = 0,
    use_sign: bool = False,
) -> dict:
    """Check the high-probability reconstruction-error envelope.

    Reconstructs random unit vectors through rotate-quantize-unrotate and
    compares the empirical (1 - delta) quantile of the error norm against
    sqrt(D_b) + sqrt(8 * log(2/delta) / (d - 2)). The O(1/sqrt(d)) marginal
    correction term has no published constant and is omitted, which makes
    the asserted bound strictly smaller (conservative).
    """
    d = rot.dim
    rng = np.random.default_rng((seed, 0x746871))  # decorrelated from rot.seed
    v = rng.standard_normal((n_trials, d))
    v /= np.linalg.norm(v, axis=1)[:, None]
    rotated = rot.apply(v)
    bins, signs = quantizer.quantize(rotated)
    recon = quantizer.reconstruct(bins, signs, use_sign)
    errors = np.linalg.norm(recon - rotated, axis=1)
    dist = quantizer.distortion_sign if use_sign else quantizer.distortion
    bound = np.sqrt(dist) + np.sqrt(8.0 * np.log(2.0 / delta) / (d - 2))
    empirical = float(np.quantile(errors, 1.0 - delta))
    return {
        "empirical_quantile": empirical,
        "quantile": 1.0 - delta,
        "bound_value": float(bound),
        "rate_term": float(np.sqrt(dist)),
        "deviation_term": float(np.sqrt(8.0 * np.log(2.0 / delta) / (d - 2))),
        "marginal_correction_term": None,  # unspecified constant, omitted
        "mean_error": float(errors.mean()),
        "holds": bool(empirical <= bound),
        "n_trials": int(n_trials),
    }


def verify_amplification(
    index: IvfTqIndex, dataset: np.ndarray, queries: np.ndarray
) -> dict:
    """Measured vs predicted score-error variance ratio of IVF over flat.

    Predicted ratio: 2 * (1 - mean assigned IP). Measured ratio: mean
    squared inner-product estimation error of the given index over a flat
    twin (same bits, sign setting, and rotation seed) on the same
    data/query pairs.
    """
    cfg = index.config
    data = np.asarray(dataset, dtype=np.float64)
    data = data / np.linalg.norm(data, axis=1)[:, None]
    qn = np.asarray(queries, dtype=np.float64)
    qn = qn / np.linalg.norm(qn, axis=1)[:, None]

    flat_cfg = IndexConfig(
        dim=cfg.dim,
        bits=cfg.bits,
        n_lists=1,
        use_sign_bit=cfg.use_sign_bit,
        flat=True,
        rotation_seed=cfg.rotation_seed,
        kmeans_seed=cfg.kmeans_seed,
    )
    flat = IvfTqIndex.build(flat_cfg, data)

    exact = qn @ data.T  # (nq, n)
    q_rot_ivf = index.rot.apply(qn)
    q_rot_flat = flat.rot.apply(qn)

    def estimated(idx: IvfTqIndex, q_rot: np.ndarray) -> np.ndarray:
        table = idx.quantizer.reconstruction_table(idx.config.use_sign_bit)
        units = (
            table[idx.bins, idx.signs]
            if idx.config.use_sign_bit
            else table[idx.bins]
        )
        w = idx.norms.astype(np.float64)[:, None] * units
        est = q_rot @ w.T
        if not idx.config.flat:
            cents = idx.partition.centroids.astype(np.float64)
            est = est + qn @ cents[idx.list_ids].T
        return est

    err_ivf = estimated(index, q_rot_ivf) - exact
    err_flat = estimated(flat, q_rot_flat) - exact
    _, ips = index.partition.assign_batch(data)
    mean_ip = float(ips.mean())
    predicted = 2.0 * (1.0 - mean_ip)
    measured = float(np.mean(err_ivf**2) / np.mean(err_flat**2))
    return {
        "mean_assigned_ip": mean_ip,
        "predicted_ratio": predicted,
        "measured_ratio": measured,
        "relative_gap": measured / predicted - 1.0 if predicted > 0 else None,
    }
