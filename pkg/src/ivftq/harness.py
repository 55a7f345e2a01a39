"""Experiment orchestration: static sweeps, streaming ingestion,
capacity-vs-bias control, and adversarial-shift recovery.

Protocols shared by every run: indexes are trained on the stream's training
prefix and never see future batches at train time; all arms within a run
share the identical stream plan, query set, and per-batch ground truth
(exact top-k over the cumulative normalized database, recomputed whenever
the database grows); multi-seed runs vary only the index seeds, and results
are aggregated with Student-t confidence intervals over seeds.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data_io import StreamPlan, make_sift_like, make_stream, make_synthetic_clusters, read_vecs
from .evaluation import GroundTruth, SeedStats, exact_topk, per_query_recall, recall_at_k
from .index import IndexConfig, IvfTqIndex
from .pq import IvfPqIndex
from .refresh import RefreshPolicy, refresh

__all__ = [
    "ExperimentPreset",
    "PRESETS",
    "get_preset",
    "load_preset_file",
    "resolve_dataset",
    "run_static",
    "run_streaming",
    "run_capacity_vs_bias",
    "run_recovery",
    "emit_report",
    "strip_timing",
]


@dataclass(frozen=True)
class ExperimentPreset:
    """Named bundle of dataset, index, stream, and search parameters."""

    name: str
    dataset: dict
    bits: int = 4
    n_lists: int = 128
    use_sign_bit: bool = True
    keep_raw: bool = False
    n_p: int = 8
    k: int = 10
    rerank_depth: int = 0
    pq_m: int = 64
    seeds: tuple[int, ...] = (42, 123, 7777)
    stream: dict | None = None
    n_p_sweep: tuple[int, ...] | None = None
    refresh_every: int | None = None
    refresh_sample: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentPreset":
        raw = dict(raw)
        for key in ("seeds", "n_p_sweep"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def _sift_like_preset(name: str, **overrides) -> ExperimentPreset:
    base = dict(
        name=name,
        dataset={"kind": "sift_like", "n": 10_000, "n_queries": 100, "d": 128, "seed": 9},
    )
    base.update(overrides)
    return ExperimentPreset(**base)


PRESETS: dict[str, ExperimentPreset] = {}


def _register(p: ExperimentPreset) -> ExperimentPreset:
    PRESETS[p.name] = p
    return p


_register(
    _sift_like_preset(
        "static-desk",
        n_lists=64,
        n_p_sweep=(1, 2, 4, 8, 16, 32, 64),
        keep_raw=True,
    )
)
_register(
    ExperimentPreset(
        name="streaming-desk",
        dataset={
            "kind": "sift_like",
            "n": 100_000,
            "n_queries": 1000,
            "d": 128,
            "seed": 9,
            "n_super": 40,
            "n_sub": 24,
        },
        bits=4,
        n_lists=128,
        n_p=16,
        k=10,
        pq_m=64,
        seeds=(42, 123, 7777),
        stream={
            "train_count": 20_000,
            "batch_size": 10_000,
            "n_batches": 8,
            "order": "original",
            "seed": 0,
        },
    )
)
_register(
    ExperimentPreset(
        name="streaming-desk-shuffled",
        dataset={
            "kind": "sift_like",
            "n": 100_000,
            "n_queries": 1000,
            "d": 128,
            "seed": 9,
            "n_super": 40,
            "n_sub": 24,
        },
        bits=4,
        n_lists=128,
        n_p=16,
        k=10,
        pq_m=64,
        seeds=(42,),
        stream={
            "train_count": 20_000,
            "batch_size": 10_000,
            "n_batches": 8,
            "order": "shuffled",
            "seed": 7,
        },
    )
)
_register(
    ExperimentPreset(
        name="capacity-desk",
        dataset={
            "kind": "sift_like",
            "n": 50_000,
            "n_queries": 1000,
            "d": 128,
            "seed": 9,
        },
        bits=4,
        n_lists=128,
        n_p=16,
        k=10,
        pq_m=32,
        seeds=(42,),
        stream={"train_count": 10_000, "batch_size": 0, "n_batches": 0},
    )
)
_register(
    ExperimentPreset(
        name="recovery-desk",
        dataset={
            "kind": "sift_like",
            "n": 80_000,
            "n_queries": 1000,
            "d": 96,
            "seed": 11,
        },
        bits=4,
        n_lists=128,
        n_p=16,
        k=10,
        rerank_depth=50,
        pq_m=96,
        keep_raw=True,
        seeds=(42,),
        stream={
            "train_count": 20_000,
            "batch_size": 10_000,
            "n_batches": 6,
            "order": "rotation_shift",
            "seed": 3,
        },
        refresh_every=20_000,
    )
)


def get_preset(name: str) -> ExperimentPreset:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]


def load_preset_file(path: str | Path) -> ExperimentPreset:
    """Load a preset from a JSON file (same fields as the built-ins)."""
    with open(path) as f:
        return ExperimentPreset.from_dict(json.load(f))


def resolve_dataset(spec: dict) -> tuple[np.ndarray, np.ndarray]:
    """Materialize a dataset spec into (base, queries) matrices.

    Kinds: "sift_like" and "clusters" generate synthetic data (queries are
    extra held-out rows from the same distribution); "fvecs" loads base and
    query files from disk.
    """
    kind = spec["kind"]
    if kind == "sift_like":
        n, nq = spec["n"], spec["n_queries"]
        params = {
            k: v for k, v in spec.items() if k not in ("kind", "n", "n_queries")
        }
        rows = make_sift_like(n + nq, **params)
        return rows[:n], rows[n:]
    if kind == "clusters":
        n, nq = spec["n"], spec["n_queries"]
        params = {
            k: v for k, v in spec.items() if k not in ("kind", "n", "n_queries")
        }
        rows = make_synthetic_clusters(n + nq, **params)
        return rows[:n], rows[n:]
    if kind == "fvecs":
        base = read_vecs(spec["base_path"])
        queries = read_vecs(spec["query_path"])
        if "n" in spec:
            base = base[: spec["n"]]
        if "n_queries" in spec:
            queries = queries[: spec["n_queries"]]
        return base, queries
    raise ValueError(f"unknown dataset kind {kind!r}")


def _normalize(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=1)[:, None]


def _tq_config(preset: ExperimentPreset, seed: int, dim: int) -> IndexConfig:
    return IndexConfig(
        dim=dim,
        bits=preset.bits,
        n_lists=preset.n_lists,
        use_sign_bit=preset.use_sign_bit,
        keep_raw=preset.keep_raw,
        rotation_seed=seed,
        kmeans_seed=seed + 1,
    )


# ----------------------------------------------------------------------
# static sweep


def run_static(preset: ExperimentPreset) -> dict:
    """Build once, sweep n_p, report recall / QPS / bit accounting."""
    base, queries = resolve_dataset(preset.dataset)
    seed = preset.seeds[0]
    dim = base.shape[1]
    index = IvfTqIndex.build(_tq_config(preset, seed, dim), base)
    qn = _normalize(queries)
    truth = exact_topk(_normalize(base), qn, preset.k, state_tag=index.state_tag)

    sweep = preset.n_p_sweep or (preset.n_p,)
    rows = []
    for n_p in sweep:
        index.search_batch(qn[:8], preset.k, n_p, preset.rerank_depth)  # warm-up
        t0 = time.perf_counter()
        ids, _ = index.search_batch(qn, preset.k, n_p, preset.rerank_depth)
        dt = time.perf_counter() - t0
        rows.append(
            {
                "n_p": int(n_p),
                "recall_at_k": recall_at_k(ids, truth, preset.k),
                "qps": len(qn) / dt if dt > 0 else float("inf"),
            }
        )
    return {
        "experiment": "static",
        "preset": preset.to_dict(),
        "seed": seed,
        "k": preset.k,
        "n_queries": len(qn),
        "accounting": index.bit_accounting(),
        "rows": rows,
    }


# ----------------------------------------------------------------------
# streaming


def _cumulative_truths(
    train: np.ndarray, batches, queries: np.ndarray, k: int
) -> list[GroundTruth]:
    """Exact ground truth per batch state (state 0 = training prefix only)."""
    truths = []
    db = _normalize(train)
    truths.append(exact_topk(db, queries, k, state_tag=f"state0/n={len(db)}"))
    for i, batch in enumerate(batches):
        db = np.vstack([db, _normalize(batch)])
        truths.append(
            exact_topk(db, queries, k, state_tag=f"state{i + 1}/n={len(db)}")
        )
    return truths


def run_streaming(preset: ExperimentPreset) -> dict:
    """Three-arm streaming ingestion: TQ, PQ stale, PQ retrain-per-batch.

    Ground truth is recomputed against the cumulative database after every
    batch and shared across arms and seeds (the stream content does not
    depend on the index seeds).
    """
    if preset.stream is None:
        raise ValueError("preset has no stream plan")
    base, queries = resolve_dataset(preset.dataset)
    plan = StreamPlan(**preset.stream)
    stream = make_stream(base, plan)
    qn = _normalize(stream.transform_queries(_normalize(queries)))
    truths = _cumulative_truths(stream.train, stream.batches, qn, preset.k)

    arms = ("ivftq", "ivfpq_stale", "ivfpq_retrain")
    per_seed = []
    for seed in preset.seeds:
        dim = base.shape[1]
        tq = IvfTqIndex.build(_tq_config(preset, seed, dim), stream.train)
        pq_stale = IvfPqIndex.build(
            stream.train,
            preset.pq_m,
            preset.n_lists,
            kmeans_seed=seed + 1,
            pq_seed=seed + 2,
        )
        pq_retrain = copy.deepcopy(pq_stale)

        def measure(state: int) -> dict:
            out = {}
            for arm, idx in (
                ("ivftq", tq),
                ("ivfpq_stale", pq_stale),
                ("ivfpq_retrain", pq_retrain),
            ):
                t0 = time.perf_counter()
                ids, _ = idx.search_batch(qn, preset.k, preset.n_p)
                out[arm] = {
                    "recall": recall_at_k(ids, truths[state], preset.k),
                    "search_seconds": time.perf_counter() - t0,
                }
            return out

        retrain_cumulative = 0.0
        rows = []
        state0 = measure(0)
        rows.append(
            {
                "cumulative_n": tq.count,
                "recall": {a: state0[a]["recall"] for a in arms},
                "search_seconds": {a: state0[a]["search_seconds"] for a in arms},
                "add_seconds": {a: 0.0 for a in arms},
                "retrain_seconds_cumulative": {
                    "ivftq": 0.0,
                    "ivfpq_stale": 0.0,
                    "ivfpq_retrain": 0.0,
                },
            }
        )
        for b, batch in enumerate(stream.batches):
            adds = {}
            t0 = time.perf_counter()
            tq.add_batch(batch)
            adds["ivftq"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            pq_stale.add_batch(batch)
            adds["ivfpq_stale"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            pq_retrain.add_batch(batch)
            adds["ivfpq_retrain"] = time.perf_counter() - t0
            retrain_cumulative += pq_retrain.retrain(seed=seed + 100)

            state = measure(b + 1)
            rows.append(
                {
                    "cumulative_n": tq.count,
                    "recall": {a: state[a]["recall"] for a in arms},
                    "search_seconds": {a: state[a]["search_seconds"] for a in arms},
                    "add_seconds": adds,
                    "retrain_seconds_cumulative": {
                        "ivftq": 0.0,
                        "ivfpq_stale": 0.0,
                        "ivfpq_retrain": retrain_cumulative,
                    },
                }
            )
        per_seed.append(
            {
                "seed": seed,
                "rows": rows,
                "initial": {a: rows[0]["recall"][a] for a in arms},
                "final": {a: rows[-1]["recall"][a] for a in arms},
                "delta": {
                    a: rows[-1]["recall"][a] - rows[0]["recall"][a] for a in arms
                },
            }
        )

    aggregate = {
        "delta": {
            a: SeedStats.from_values([s["delta"][a] for s in per_seed]).to_dict()
            for a in arms
        },
        "final": {
            a: SeedStats.from_values([s["final"][a] for s in per_seed]).to_dict()
            for a in arms
        },
        "final_gap_tq_minus_pq_stale": SeedStats.paired(
            [s["final"]["ivftq"] for s in per_seed],
            [s["final"]["ivfpq_stale"] for s in per_seed],
        ).to_dict(),
        "retrain_minus_stale_max_abs_per_batch": [
            float(
                np.max(
                    np.abs(
                        [
                            s["rows"][b]["recall"]["ivfpq_retrain"]
                            - s["rows"][b]["recall"]["ivfpq_stale"]
                            for s in per_seed
                        ]
                    )
                )
            )
            for b in range(len(per_seed[0]["rows"]))
        ],
    }
    return {
        "experiment": "streaming",
        "preset": preset.to_dict(),
        "plan": asdict(plan),
        "n_queries": len(qn),
        "per_seed": per_seed,
        "aggregate": aggregate,
    }


# ----------------------------------------------------------------------
# capacity vs bias


def run_capacity_vs_bias(preset: ExperimentPreset) -> dict:
    """Three PQ variants trained on prefix / random-sample / full data,
    all encoding and evaluated on the full database."""
    if preset.stream is None or preset.stream.get("train_count", 0) <= 0:
        raise ValueError("preset needs a stream.train_count for the initial prefix")
    base, queries = resolve_dataset(preset.dataset)
    n0 = preset.stream["train_count"]
    seed = preset.seeds[0]
    full = _normalize(base)
    qn = _normalize(queries)
    rng = np.random.default_rng(seed)
    random_ids = np.sort(rng.choice(len(full), size=n0, replace=False))

    samples = {
        "A_initial_prefix": full[:n0],
        "B_random_sample": full[random_ids],
        "C_full_oracle": full,
    }
    truth = exact_topk(full, qn, preset.k, state_tag=f"full/n={len(full)}")
    results = {}
    for label, sample in samples.items():
        idx = IvfPqIndex.build(
            full,
            preset.pq_m,
            preset.n_lists,
            kmeans_seed=seed + 1,
            pq_seed=seed + 2,
            train_sample=sample,
        )
        ids, _ = idx.search_batch(qn, preset.k, preset.n_p)
        recall = recall_at_k(ids, truth, preset.k)
        results[label] = {
            "recall": recall,
            "training_rows": len(sample),
            "standard_error": float(np.sqrt(recall * (1.0 - recall) / len(qn))),
        }
    b_minus_a = results["B_random_sample"]["recall"] - results["A_initial_prefix"]["recall"]
    c_minus_b = results["C_full_oracle"]["recall"] - results["B_random_sample"]["recall"]
    return {
        "experiment": "capacity_vs_bias",
        "preset": preset.to_dict(),
        "seed": seed,
        "n_queries": len(qn),
        "variants": results,
        "bias_contribution_B_minus_A": b_minus_a,
        "capacity_contribution_C_minus_B": c_minus_b,
    }


# ----------------------------------------------------------------------
# adversarial-shift recovery


def run_recovery(preset: ExperimentPreset) -> dict:
    """Rotation-shift stress test across four arms, with and without rerank.

    The streaming portion is rotated into a decorrelated space and queries
    are drawn from the shifted space. The frozen TQ arm never refreshes;
    the adaptive arm refreshes every `refresh_every` ingested vectors
    (partition only; compression-layer fingerprints are reported so tests
    can assert they never change).
    """
    if preset.stream is None:
        raise ValueError("preset has no stream plan")
    if preset.refresh_every is None:
        raise ValueError("recovery preset needs refresh_every")
    base, queries = resolve_dataset(preset.dataset)
    plan = StreamPlan(**preset.stream)
    stream = make_stream(base, plan)
    qn = _normalize(stream.transform_queries(_normalize(queries)))

    seed = preset.seeds[0]
    dim = base.shape[1]
    frozen = IvfTqIndex.build(_tq_config(preset, seed, dim), stream.train)
    adaptive = IvfTqIndex.build(_tq_config(preset, seed, dim), stream.train)
    pq_stale = IvfPqIndex.build(
        stream.train,
        preset.pq_m,
        preset.n_lists,
        kmeans_seed=seed + 1,
        pq_seed=seed + 2,
    )
    pq_retrain = copy.deepcopy(pq_stale)
    arms = {
        "ivftq_frozen": frozen,
        "ivftq_adaptive": adaptive,
        "ivfpq_stale": pq_stale,
        "ivfpq_retrain": pq_retrain,
    }
    fingerprints_before = {
        "ivftq_frozen": frozen.compression_fingerprint(),
        "ivftq_adaptive": adaptive.compression_fingerprint(),
    }

    def measure(truth: GroundTruth) -> dict:
        out = {}
        for name, idx in arms.items():
            ids0, _ = idx.search_batch(qn, preset.k, preset.n_p)
            entry = {"rr0": recall_at_k(ids0, truth, preset.k)}
            ids_rr, _ = idx.search_batch(
                qn, preset.k, preset.n_p, preset.rerank_depth
            )
            entry[f"rr{preset.rerank_depth}"] = recall_at_k(
                ids_rr, truth, preset.k
            )
            out[name] = entry
        return out

    truth0 = exact_topk(_normalize(stream.train), qn, preset.k)
    initial = measure(truth0)

    policy = RefreshPolicy(
        trigger_every_n=preset.refresh_every,
        sample_size=preset.refresh_sample,
        seed=seed + 5,
    )
    refresh_calls = 0
    refresh_seconds = 0.0
    retrain_cumulative = 0.0
    since_refresh = 0
    db = _normalize(stream.train)
    for b, batch in enumerate(stream.batches):
        for idx in arms.values():
            idx.add_batch(batch)
        retrain_cumulative += pq_retrain.retrain(seed=seed + 100)
        since_refresh += len(batch)
        if since_refresh >= policy.trigger_every_n:
            report = refresh(adaptive, policy)
            refresh_calls += 1
            refresh_seconds += report.duration_seconds
            since_refresh = 0
        db = np.vstack([db, _normalize(batch)])

    truth_final = exact_topk(db, qn, preset.k)
    final = measure(truth_final)

    return {
        "experiment": "recovery",
        "preset": preset.to_dict(),
        "seed": seed,
        "n_queries": len(qn),
        "rerank_depth": preset.rerank_depth,
        "initial": initial,
        "final": final,
        "refresh": {
            "calls": {"ivftq_frozen": 0, "ivftq_adaptive": refresh_calls},
            "seconds_total": refresh_seconds,
            "every_n": preset.refresh_every,
        },
        "retrain_seconds_cumulative": {
            "ivftq_frozen": 0.0,
            "ivftq_adaptive": 0.0,
            "ivfpq_retrain": retrain_cumulative,
        },
        "compression_fingerprints": {
            "before": fingerprints_before,
            "after": {
                "ivftq_frozen": frozen.compression_fingerprint(),
                "ivftq_adaptive": adaptive.compression_fingerprint(),
            },
        },
    }


# ----------------------------------------------------------------------
# report emission


def _jsonify(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def strip_timing(report):
    """Recursively drop wall-clock fields (keys mentioning seconds/qps).

    Two runs of the same preset must agree exactly after this projection.
    """
    if isinstance(report, dict):
        return {
            k: strip_timing(v)
            for k, v in report.items()
            if "seconds" not in k and k != "qps"
        }
    if isinstance(report, list):
        return [strip_timing(v) for v in report]
    return report


def _render_rows(rows: list[dict]) -> str:
    """Aligned text table for a list of flat dicts."""
    flat_rows = []
    for row in rows:
        flat = {}
        for key, val in row.items():
            if isinstance(val, dict):
                for sub, v in val.items():
                    flat[f"{key}.{sub}"] = v
            else:
                flat[key] = val
        flat_rows.append(flat)
    cols = list(dict.fromkeys(k for r in flat_rows for k in r))
    rendered = [
        [
            (f"{r.get(c):.4f}" if isinstance(r.get(c), float) else str(r.get(c, "")))
            for c in cols
        ]
        for r in flat_rows
    ]
    widths = [
        max(len(c), *(len(row[i]) for row in rendered)) for i, c in enumerate(cols)
    ]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rendered:
        lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def emit_report(report: dict, path: str | Path, format: str = "json") -> Path:
    """Write a report file. JSON is canonical (sorted keys); "text" renders
    row tables in an aligned layout; "csv" emits the row lists only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "json":
        with open(path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True, default=_jsonify)
            f.write("\n")
        return path
    rows = report.get("rows")
    if rows is None and "per_seed" in report:
        rows = [r for s in report["per_seed"] for r in s["rows"]]
    if format == "text":
        body = _render_rows(rows) if rows else json.dumps(
            strip_timing(report), indent=2, sort_keys=True, default=_jsonify
        )
        header = f"experiment: {report.get('experiment', '?')}\n"
        path.write_text(header + body + "\n")
        return path
    if format == "csv":
        import csv as _csv

        if not rows:
            raise ValueError("report has no row table to emit as CSV")
        flat_rows = []
        for row in rows:
            flat = {}
            for key, val in row.items():
                if isinstance(val, dict):
                    for sub, v in val.items():
                        flat[f"{key}.{sub}"] = v
                else:
                    flat[key] = val
            flat_rows.append(flat)
        cols = list(dict.fromkeys(k for r in flat_rows for k in r))
        with open(path, "w", newline="") as f:
            writer = _csv.DictWriter(f, fieldnames=cols)
            writer.writeheader()
            writer.writerows(flat_rows)
        return path
    raise ValueError(f"unknown report format {format!r}")
