"""Evaluation harness: retrieval metrics, run files, oracle caching,
experiment execution, and report serialization.

Run files hold one tab-separated ``query_index id score`` triple per line,
grouped by query in rank order. Reports are UTF-8 key-value text followed
by a machine-readable JSON block.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import index as lider_index
from . import sklsh as sklsh_mode
from ._util import resident_bytes, worker_budget
from .core_model import CoreModelParams
from .vectorstore import VectorCollection, exact_topk, load_vectors, normalize

WARMUP_QUERIES = 10


def recall_at_k(approx: list[list[int]], oracle: list[list[int]], k: int) -> float:
    """Mean over queries of |approx top-k intersected with oracle top-k| / k.

    The divisor shrinks to the oracle list length when fewer than k exist.
    """
    if len(approx) != len(oracle):
        raise ValueError(f"query count mismatch: {len(approx)} vs {len(oracle)}")
    if not approx:
        raise ValueError("no queries to score")
    total = 0.0
    for mine, truth in zip(approx, oracle):
        want = truth[: min(k, len(truth))]
        total += len(set(mine[:k]) & set(want)) / len(want)
    return total / len(approx)


def load_qrels(path: str | Path) -> dict[int, set[int]]:
    """Parse a relevance file: query_index, passage id, positive relevance."""
    qrels: dict[int, set[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
                qi, pid, rel = int(parts[0]), int(parts[1]), int(parts[2])
                if rel < 1:
                    raise ValueError(f"relevance must be a positive integer, got {rel}")
            except ValueError as exc:
                raise ValueError(f"malformed qrels line {lineno}: {exc}") from None
            qrels.setdefault(qi, set()).add(pid)
    return qrels


def mrr_at_10(ranked: list[list[int]], qrels: dict[int, set[int]]) -> float:
    """Mean reciprocal rank of the first relevant id within each top 10."""
    if not ranked:
        raise ValueError("no queries to score")
    total = 0.0
    for qi, ids in enumerate(ranked):
        relevant = qrels.get(qi, set())
        for rank, id in enumerate(ids[:10], start=1):
            if id in relevant:
                total += 1.0 / rank
                break
    return total / len(ranked)


def write_run(path: str | Path, runs: list[list[tuple[int, float]]]) -> None:
    """Write (id, score) lists per query as query_index/id/score triples."""
    with open(path, "w", encoding="utf-8") as fh:
        for qi, hits in enumerate(runs):
            for id, score in hits:
                fh.write(f"{qi}\t{id}\t{score:.8f}\n")


def load_run(path: str | Path) -> list[list[tuple[int, float]]]:
    runs: list[list[tuple[int, float]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"malformed run line {lineno}: expected 3 fields")
            qi = int(parts[0])
            while len(runs) <= qi:
                runs.append([])
            runs[qi].append((int(parts[1]), float(parts[2])))
    return runs


def compute_oracle(
    vectors: VectorCollection, queries: VectorCollection, k: int
) -> list[list[tuple[int, float]]]:
    """Flat brute-force top-k per query."""
    return [
        [(hit.id, hit.score) for hit in exact_topk(vectors, q, k)] for q in queries.matrix
    ]


def oracle_cache_path(
    vectors: VectorCollection, queries: VectorCollection, k: int, directory: str | Path
) -> Path:
    """Cache location keyed by (vector digest, query digest, k)."""
    vd = vectors.digest().hex()[:12]
    qd = queries.digest().hex()[:12]
    return Path(directory) / f"oracle-{vd}-{qd}-k{k}.tsv"


def cached_oracle(
    vectors: VectorCollection,
    queries: VectorCollection,
    k: int,
    directory: str | Path,
    allow_build: bool = True,
) -> list[list[tuple[int, float]]]:
    path = oracle_cache_path(vectors, queries, k, directory)
    if path.exists():
        return load_run(path)
    if not allow_build:
        raise FileNotFoundError(f"oracle {path} is missing and oracle building is disabled")
    runs = compute_oracle(vectors, queries, k)
    write_run(path, runs)
    return runs


@dataclass(frozen=True)
class EvalReport:
    """One experiment's quality, latency, and footprint numbers."""

    recall_at_k: float
    mrr_at_10: float | None
    aqt_seconds: float
    per_stage_ms: dict[str, float]
    candidate_mean: float
    build_seconds: float
    index_bytes: int
    workers: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.recall_at_k <= 1.0:
            raise ValueError(f"recall_at_k out of [0, 1]: {self.recall_at_k}")
        if self.mrr_at_10 is not None and not 0.0 <= self.mrr_at_10 <= 1.0:
            raise ValueError(f"mrr_at_10 out of [0, 1]: {self.mrr_at_10}")
        if self.aqt_seconds < 0 or self.build_seconds < 0:
            raise ValueError("times must be non-negative")


def report_to_text(report: EvalReport) -> str:
    lines = [
        f"recall_at_k: {report.recall_at_k:.6f}",
        f"mrr_at_10: {'-' if report.mrr_at_10 is None else f'{report.mrr_at_10:.6f}'}",
        f"aqt_seconds: {report.aqt_seconds:.9f}",
        f"per_stage_ms: "
        + " ".join(f"{name}={ms:.4f}" for name, ms in report.per_stage_ms.items()),
        f"candidate_mean: {report.candidate_mean:.2f}",
        f"build_seconds: {report.build_seconds:.3f}",
        f"index_bytes: {report.index_bytes}",
        f"workers: {report.workers}",
        "--- json ---",
        json.dumps(
            {
                "recall_at_k": report.recall_at_k,
                "mrr_at_10": report.mrr_at_10,
                "aqt_seconds": report.aqt_seconds,
                "per_stage_ms": report.per_stage_ms,
                "candidate_mean": report.candidate_mean,
                "build_seconds": report.build_seconds,
                "index_bytes": report.index_bytes,
                "workers": report.workers,
            },
            sort_keys=True,
        ),
    ]
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> EvalReport:
    marker = "--- json ---"
    if marker not in text:
        raise ValueError("report text has no JSON block")
    payload = json.loads(text.split(marker, 1)[1])
    return EvalReport(**payload)


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs for one evaluation run."""

    vectors_path: str
    queries_path: str
    params: lider_index.LiderParams
    k: int = 100
    index_path: str | None = None  # load when present on disk, else build (and save)
    oracle_path: str | None = None
    qrels_path: str | None = None
    mode: str = "lider"  # or "sklsh"
    sklsh_budget: int | None = None
    warmup: int = WARMUP_QUERIES
    no_oracle_build: bool = False
    vector_limit: int | None = None
    query_limit: int | None = None


def _load_normalized(path: str, limit: int | None) -> VectorCollection:
    collection = load_vectors(path, limit)
    return normalize(collection)


def run_experiment(config: ExperimentConfig) -> EvalReport:
    """Build or load the index, run every query, score against the oracle."""
    vectors = _load_normalized(config.vectors_path, config.vector_limit)
    queries = _load_normalized(config.queries_path, config.query_limit)

    if config.oracle_path and Path(config.oracle_path).exists():
        oracle_runs = load_run(config.oracle_path)
    else:
        oracle_runs = cached_oracle(
            vectors,
            queries,
            config.k,
            Path(config.vectors_path).parent,
            allow_build=not config.no_oracle_build,
        )
    oracle_ids = [[id for id, _ in hits] for hits in oracle_runs]

    if config.mode == "lider":
        return _run_lider(config, vectors, queries, oracle_ids)
    if config.mode == "sklsh":
        return _run_sklsh(config, vectors, queries, oracle_ids)
    raise ValueError(f"unknown mode {config.mode!r}")


def _finish_report(
    config: ExperimentConfig,
    approx_ids: list[list[int]],
    oracle_ids: list[list[int]],
    aqt: float,
    per_stage_ms: dict[str, float],
    candidate_mean: float,
    build_seconds: float,
    index_bytes: int,
) -> EvalReport:
    mrr = None
    if config.qrels_path:
        mrr = mrr_at_10(approx_ids, load_qrels(config.qrels_path))
    return EvalReport(
        recall_at_k=recall_at_k(approx_ids, oracle_ids, config.k),
        mrr_at_10=mrr,
        aqt_seconds=aqt,
        per_stage_ms=per_stage_ms,
        candidate_mean=candidate_mean,
        build_seconds=build_seconds,
        index_bytes=index_bytes,
        workers=worker_budget(),
    )


def _run_lider(
    config: ExperimentConfig,
    vectors: VectorCollection,
    queries: VectorCollection,
    oracle_ids: list[list[int]],
) -> EvalReport:
    build_seconds = 0.0
    rss_before = resident_bytes()
    if config.index_path and Path(config.index_path).exists():
        idx = lider_index.load_index(config.index_path, vectors)
        index_bytes = Path(config.index_path).stat().st_size
        # Query-time knobs follow the experiment, not the stored build.
        idx = lider_index.replace_params(
            idx,
            replace(
                idx.params,
                n_probes=config.params.n_probes,
                expansion_factor=config.params.expansion_factor,
            ),
        )
    else:
        t = time.perf_counter()
        idx = lider_index.build_index(vectors, config.params)
        build_seconds = time.perf_counter() - t
        if config.index_path:
            index_bytes = lider_index.save_index(idx, config.index_path)
        else:
            index_bytes = 0
    rss_after = resident_bytes()
    if rss_before is not None and rss_after is not None and index_bytes == 0:
        index_bytes = max(0, rss_after - rss_before)

    for q in queries.matrix[: config.warmup]:
        lider_index.query(idx, q, config.k)

    approx_ids: list[list[int]] = []
    elapsed = []
    stage_sums = {"centroid": 0.0, "clusters": 0.0, "merge": 0.0}
    candidates = 0
    for q in queries.matrix:
        t = time.perf_counter()
        result = lider_index.query(idx, q, config.k)
        elapsed.append(time.perf_counter() - t)
        approx_ids.append([hit.id for hit in result.hits])
        stage_sums["centroid"] += result.stats.centroid_seconds
        stage_sums["clusters"] += result.stats.cluster_seconds
        stage_sums["merge"] += result.stats.merge_seconds
        candidates += result.stats.candidates_total
    nq = len(queries)
    return _finish_report(
        config,
        approx_ids,
        oracle_ids,
        aqt=float(np.mean(elapsed)),
        per_stage_ms={name: 1000.0 * s / nq for name, s in stage_sums.items()},
        candidate_mean=candidates / nq,
        build_seconds=build_seconds,
        index_bytes=index_bytes,
    )


def _run_sklsh(
    config: ExperimentConfig,
    vectors: VectorCollection,
    queries: VectorCollection,
    oracle_ids: list[list[int]],
) -> EvalReport:
    params = CoreModelParams(
        n_arrays=config.params.n_arrays,
        key_bits=lider_index.key_bits_for(len(vectors)),
        window_bits=config.params.window_bits,
        expansion_factor=config.params.expansion_factor,
        seed=config.params.seed,
    )
    build_seconds = 0.0
    if config.index_path and Path(config.index_path).exists():
        idx = sklsh_mode.load_sklsh(config.index_path, vectors)
        index_bytes = Path(config.index_path).stat().st_size
    else:
        t = time.perf_counter()
        idx = sklsh_mode.build_sklsh(vectors, params)
        build_seconds = time.perf_counter() - t
        index_bytes = sklsh_mode.save_sklsh(idx, config.index_path) if config.index_path else 0

    budget = config.sklsh_budget
    if budget is None:
        budget = params.expansion_factor * config.k * params.n_arrays

    for q in queries.matrix[: config.warmup]:
        sklsh_mode.search_sklsh(idx, q, config.k, budget)

    approx_ids = []
    elapsed = []
    for q in queries.matrix:
        t = time.perf_counter()
        hits = sklsh_mode.search_sklsh(idx, q, config.k, budget)
        elapsed.append(time.perf_counter() - t)
        approx_ids.append([hit.id for hit in hits])
    return _finish_report(
        config,
        approx_ids,
        oracle_ids,
        aqt=float(np.mean(elapsed)),
        per_stage_ms={},
        candidate_mean=float(budget),
        build_seconds=build_seconds,
        index_bytes=index_bytes,
    )


def sweep(config: ExperimentConfig, param: str, values: list[int]) -> list[EvalReport]:
    """Re-evaluate over one varying parameter.

    Probe count and expansion factor are query-time parameters evaluated
    against one shared index; cluster count and array count rebuild.
    """
    field_by_param = {
        "c0": "n_probes",
        "c": "n_clusters",
        "h": "n_arrays",
        "r0": "expansion_factor",
    }
    if param not in field_by_param:
        raise ValueError(f"sweep parameter must be one of {sorted(field_by_param)}, got {param!r}")
    reports = []
    for value in values:
        params = replace(config.params, **{field_by_param[param]: value})
        run_config = replace(config, params=params)
        if param in ("c", "h") and config.index_path:
            run_config = replace(run_config, index_path=f"{config.index_path}.{param}{value}")
        reports.append(run_experiment(run_config))
    return reports
