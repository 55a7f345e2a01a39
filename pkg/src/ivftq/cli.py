"""Command-line entry point.

Subcommands mirror the library operations one-to-one: quantizer design,
index lifecycle (build/add/search/accounting/ablate-bits/refresh), the PQ
baseline (pq-build/pq-retrain), benchmark protocols (bench), theory checks
(verify), and synthetic dataset generation (make-data). All data output is
JSON on stdout or under --out; diagnostics go to stderr. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _emit(payload: dict, out: str | None) -> None:
    from .harness import _jsonify

    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonify)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_matrix(path: str) -> np.ndarray:
    from .data_io import read_vecs

    return read_vecs(path)


def _cmd_design_quantizer(args) -> int:
    from .lloydmax import design_quantizer, eval_distortion_oracle

    q = design_quantizer(args.bits, args.dim, tol=args.tol, max_iters=args.max_iters)
    payload = {
        "bits": q.bits,
        "dim": q.dim,
        # infinite edge boundaries rendered as strings for strict-JSON readers
        "boundaries": [
            b if np.isfinite(b) else ("inf" if b > 0 else "-inf")
            for b in q.boundaries.tolist()
        ],
        "centroids": q.centroids.tolist(),
        "half_bin_means": q.half_bin_means.tolist(),
        "distortion": q.distortion,
        "distortion_sign": q.distortion_sign,
    }
    if args.oracle:
        payload["distortion_oracle"] = eval_distortion_oracle(q, use_sign=False)
        payload["distortion_sign_oracle"] = eval_distortion_oracle(q, use_sign=True)
    _emit(payload, args.out)
    return 0


def _cmd_build(args) -> int:
    from .index import IndexConfig, IvfTqIndex
    from .storage import save_index

    data = _load_matrix(args.data)
    n_lists = args.nlists
    if n_lists is None:
        n_lists = 1 if args.flat else int(np.clip(np.sqrt(len(data)), 16, 4096))
    config = IndexConfig(
        dim=data.shape[1],
        bits=args.bits,
        n_lists=n_lists,
        use_sign_bit=args.sign_bit,
        keep_raw=args.keep_raw,
        flat=args.flat,
        rotation_seed=args.seed,
        kmeans_seed=args.seed + 1,
    )
    index = IvfTqIndex.build(config, data)
    save_index(index, args.out)
    _emit(
        {"built": str(args.out), "count": index.count, **index.bit_accounting()},
        None,
    )
    return 0


def _cmd_add(args) -> int:
    from .storage import load_index, save_index

    index = load_index(args.index)
    data = _load_matrix(args.data)
    ids = index.add_batch(data)
    save_index(index, args.out or args.index)
    _emit({"added": len(ids), "count": index.count}, None)
    return 0


def _cmd_search(args) -> int:
    from .storage import load_index

    index = load_index(args.index)
    queries = _load_matrix(args.queries)
    ids, scores = index.search_batch(queries, args.k, args.nprobe, args.rerank)
    _emit(
        {
            "k": args.k,
            "n_p": args.nprobe,
            "rerank_depth": args.rerank,
            "ids": ids.tolist(),
            "scores": [[round(float(s), 8) for s in row] for row in scores],
        },
        args.out,
    )
    return 0


def _cmd_accounting(args) -> int:
    from .storage import load_index

    index = load_index(args.index)
    _emit(index.bit_accounting(), args.out)
    return 0


def _cmd_ablate_bits(args) -> int:
    from .storage import load_index

    index = load_index(args.index)
    queries = _load_matrix(args.queries)
    report = index.bit_flip_ablation(
        args.bit, args.fraction, queries, args.k, args.nprobe, seed=args.seed
    )
    _emit(report, args.out)
    return 0


def _cmd_refresh(args) -> int:
    from .refresh import RefreshPolicy, refresh
    from .storage import load_index, save_index

    index = load_index(args.index)
    policy = RefreshPolicy(
        trigger_every_n=args.every, sample_size=args.sample, seed=args.seed
    )
    report = refresh(index, policy)
    save_index(index, args.out or args.index)
    from dataclasses import asdict

    _emit(asdict(report), None)
    return 0


def _cmd_pq_build(args) -> int:
    from .pq import IvfPqIndex, save_pq

    data = _load_matrix(args.data)
    n_lists = args.nlists or int(np.clip(np.sqrt(len(data)), 16, 4096))
    index = IvfPqIndex.build(
        data, args.m, n_lists, kmeans_seed=args.seed + 1, pq_seed=args.seed + 2
    )
    save_pq(index, args.out)
    _emit(
        {
            "built": str(args.out),
            "count": index.count,
            "m": index.m,
            "bits_per_vec_codes": 8 * index.m,
        },
        None,
    )
    return 0


def _cmd_pq_retrain(args) -> int:
    from .pq import load_pq, save_pq

    index = load_pq(args.index)
    seconds = index.retrain(seed=args.seed)
    save_pq(index, args.out or args.index)
    _emit({"retrain_seconds": seconds, "count": index.count}, None)
    return 0


def _cmd_bench(args) -> int:
    from . import harness

    preset = (
        harness.load_preset_file(args.preset_file)
        if args.preset_file
        else harness.get_preset(args.preset)
    )
    if args.seeds:
        preset = harness.ExperimentPreset.from_dict(
            {**preset.to_dict(), "seeds": tuple(args.seeds)}
        )
    runner = {
        "static": harness.run_static,
        "stream": harness.run_streaming,
        "capacity": harness.run_capacity_vs_bias,
        "recovery": harness.run_recovery,
    }[args.protocol]
    report = runner(preset)
    out_dir = Path(args.out)
    path = harness.emit_report(report, out_dir / f"{preset.name}-{args.protocol}.json")
    if args.text:
        harness.emit_report(
            report, out_dir / f"{preset.name}-{args.protocol}.txt", format="text"
        )
    print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_verify(args) -> int:
    from .evaluation import verify_marginal, verify_theorem1
    from .lloydmax import design_quantizer
    from .rotation import generate_rotation

    rot = generate_rotation(args.dim, args.seed)
    if args.check == "marginal":
        report = verify_marginal(rot, args.dim, args.trials, seed=args.seed)
        report["passes"] = report["ks_statistic"] < 0.05
    elif args.check == "theorem1":
        q = design_quantizer(args.bits, args.dim)
        report = verify_theorem1(q, rot, args.trials, args.delta, seed=args.seed)
        report["passes"] = report["holds"]
    else:  # amplification
        from .data_io import make_synthetic_clusters
        from .evaluation import verify_amplification
        from .index import IndexConfig, IvfTqIndex

        rows = make_synthetic_clusters(
            args.trials + 200, args.dim, 8, spread=0.08, seed=args.seed
        )
        data, queries = rows[: args.trials], rows[args.trials :]
        cfg = IndexConfig(
            dim=args.dim,
            bits=args.bits,
            n_lists=8,
            rotation_seed=args.seed,
            kmeans_seed=args.seed + 1,
        )
        index = IvfTqIndex.build(cfg, data)
        report = verify_amplification(index, data, queries)
        report["passes"] = abs(report["relative_gap"]) <= 0.25
    _emit(report, args.out)
    return 0 if report.get("passes", True) else 2


def _cmd_make_data(args) -> int:
    from .data_io import make_sift_like, make_synthetic_clusters, write_vecs

    if args.recipe == "sift-like":
        rows = make_sift_like(args.n, args.dim, seed=args.seed)
    else:
        rows = make_synthetic_clusters(
            args.n, args.dim, args.clusters, args.spread, seed=args.seed
        )
    write_vecs(args.out, rows.astype(np.float32), kind="f32")
    _emit({"wrote": str(args.out), "n": int(args.n), "dim": int(args.dim)}, None)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ivftq", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("design-quantizer", help="design and print a quantizer")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=1_000_000)
    p.add_argument("--oracle", action="store_true", help="also integrate numerically")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_design_quantizer)

    p = sub.add_parser("build", help="build an index from an fvecs file")
    p.add_argument("--data", required=True)
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--nlists", type=int, default=None)
    p.add_argument("--sign-bit", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--keep-raw", action="store_true")
    p.add_argument("--flat", action="store_true")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("add", help="add vectors to an existing index")
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write to a new path instead of in place")
    p.set_defaults(func=_cmd_add)

    p = sub.add_parser("search", help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--rerank", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("accounting", help="report the logical bit budget")
    p.add_argument("--index", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_accounting)

    p = sub.add_parser("ablate-bits", help="bit-flip importance diagnostic")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument(
        "--bit", choices=("msb_primary", "lsb_primary", "sign"), required=True
    )
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ablate_bits)

    p = sub.add_parser("refresh", help="re-cluster the coarse partition")
    p.add_argument("--index", required=True)
    p.add_argument("--every", type=int, default=100_000)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_refresh)

    p = sub.add_parser("pq-build", help="build the IVF-PQ baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--nlists", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pq_build)

    p = sub.add_parser("pq-retrain", help="refit the PQ codebook and re-encode")
    p.add_argument("--index", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_pq_retrain)

    p = sub.add_parser("bench", help="run a benchmark protocol")
    p.add_argument(
        "protocol", choices=("static", "stream", "capacity", "recovery")
    )
    p.add_argument("--preset", default="static-desk")
    p.add_argument("--preset-file", help="JSON preset overriding --preset")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", default="reports")
    p.add_argument("--text", action="store_true", help="also write a text table")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("verify", help="run a theory check")
    p.add_argument("check", choices=("theorem1", "marginal", "amplification"))
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("make-data", help="generate a synthetic fvecs dataset")
    p.add_argument("recipe", choices=("sift-like", "clusters"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--spread", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        OSError,
        RuntimeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
