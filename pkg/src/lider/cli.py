"""Command-line interface: data synthesis, index build, query, oracle,
evaluation, and parameter sweeps."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import bench
from . import index as lider_index
from . import sklsh as sklsh_mode
from .core_model import CoreModelParams
from .vectorstore import (
    exact_topk,
    generate_synthetic,
    load_vectors,
    normalize,
    write_vectors,
)


def _add_build_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--c", type=int, default=1000, help="number of clusters")
    parser.add_argument("--c0", type=int, default=20, help="clusters probed per query")
    parser.add_argument("--h", type=int, default=10, help="hashkey arrays per core model")
    parser.add_argument("--wc", type=int, default=10, help="centroid retriever RMI width")
    parser.add_argument("--wi", type=int, default=5, help="in-cluster retriever RMI width")
    parser.add_argument("--b", type=int, default=3, help="distance window bits")
    parser.add_argument("--r0", type=int, default=5, help="expansion factor (range = r0 * k)")
    parser.add_argument("--kmeans-iters", type=int, default=25)
    parser.add_argument("--seed", type=int, default=0)


def _params_from_args(args: argparse.Namespace) -> lider_index.LiderParams:
    return lider_index.LiderParams(
        n_clusters=args.c,
        n_probes=args.c0,
        n_arrays=args.h,
        centroid_rmi_width=args.wc,
        cluster_rmi_width=args.wi,
        window_bits=args.b,
        expansion_factor=args.r0,
        kmeans_iters=args.kmeans_iters,
        seed=args.seed,
    )


def _cmd_synth(args: argparse.Namespace) -> int:
    collection = generate_synthetic(args.n, args.dim, args.centers, args.spread, args.seed)
    write_vectors(collection, args.out)
    print(f"wrote {len(collection)} x {collection.dim} vectors to {args.out}")
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    vectors = normalize(load_vectors(args.vectors))
    t = time.perf_counter()
    if args.sklsh_baseline:
        params = CoreModelParams(
            n_arrays=args.h,
            key_bits=lider_index.key_bits_for(len(vectors)),
            window_bits=args.b,
            expansion_factor=args.r0,
            seed=args.seed,
        )
        idx = sklsh_mode.build_sklsh(vectors, params)
        size = sklsh_mode.save_sklsh(idx, args.out_index)
    else:
        idx = lider_index.build_index(vectors, _params_from_args(args))
        size = lider_index.save_index(idx, args.out_index)
    elapsed = time.perf_counter() - t
    print(f"built index over {len(vectors)} vectors in {elapsed:.2f}s ({size} bytes)")
    return 0


def _is_sklsh_file(path: str) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == sklsh_mode.SKLSH_MAGIC


def _cmd_query(args: argparse.Namespace) -> int:
    vectors = normalize(load_vectors(args.vectors))
    queries = normalize(load_vectors(args.queries))
    runs = []
    if _is_sklsh_file(args.index):
        idx = sklsh_mode.load_sklsh(args.index, vectors)
        budget = idx.params.expansion_factor * args.k * idx.params.n_arrays
        for q in queries.matrix:
            hits = sklsh_mode.search_sklsh(idx, q, args.k, budget)
            runs.append([(h.id, h.score) for h in hits])
    else:
        idx = lider_index.load_index(args.index, vectors)
        for q in queries.matrix:
            result = lider_index.query(idx, q, args.k)
            runs.append([(h.id, h.score) for h in result.hits])
    bench.write_run(args.out, runs)
    print(f"wrote {sum(len(r) for r in runs)} hits for {len(runs)} queries to {args.out}")
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    vectors = normalize(load_vectors(args.vectors))
    queries = normalize(load_vectors(args.queries))
    runs = [
        [(h.id, h.score) for h in exact_topk(vectors, q, args.k)] for q in queries.matrix
    ]
    bench.write_run(args.out, runs)
    print(f"wrote exact top-{args.k} for {len(runs)} queries to {args.out}")
    return 0


def _eval_config(args: argparse.Namespace) -> bench.ExperimentConfig:
    mode = "sklsh" if args.index and Path(args.index).exists() and _is_sklsh_file(args.index) else "lider"
    return bench.ExperimentConfig(
        vectors_path=args.vectors,
        queries_path=args.queries,
        params=_params_from_args(args),
        k=args.k,
        index_path=args.index,
        oracle_path=args.oracle,
        qrels_path=args.qrels,
        mode=mode,
    )


def _cmd_eval(args: argparse.Namespace) -> int:
    report = bench.run_experiment(_eval_config(args))
    text = bench.report_to_text(report)
    Path(args.report).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    values = [int(v) for v in args.values.split(",")]
    reports = bench.sweep(_eval_config(args), args.param, values)
    for value, report in zip(values, reports):
        out = Path(f"{args.report}.{args.param}={value}")
        out.write_text(bench.report_to_text(report), encoding="utf-8")
        print(
            f"{args.param}={value}: recall_at_k={report.recall_at_k:.4f} "
            f"aqt={report.aqt_seconds * 1000:.3f}ms -> {out}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lider", description="Clustering-based learned ANN index"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic vector file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--centers", type=int, required=True)
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build", help="build and save an index")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out-index", required=True)
    _add_build_flags(p)
    p.add_argument("--sklsh-baseline", action="store_true", help="build the iterative baseline")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("query", help="run queries against a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("oracle", help="compute the exact brute-force top-k")
    p.add_argument("--vectors", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("eval", help="evaluate an index against the oracle")
    p.add_argument("--index", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--oracle", default=None)
    p.add_argument("--qrels", default=None)
    p.add_argument("--report", required=True)
    _add_build_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="evaluate across one varying parameter")
    p.add_argument("--param", choices=["c0", "c", "h", "r0"], required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--index", default=None)
    p.add_argument("--vectors", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--oracle", default=None)
    p.add_argument("--qrels", default=None)
    p.add_argument("--report", required=True)
    _add_build_flags(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
