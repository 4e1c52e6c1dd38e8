"""The two-layer clustered index: k-means partitioning, a centroids
retriever routing queries to clusters, per-cluster retrievers, heap merge
of their sorted results, and binary index persistence.
"""
from __future__ import annotations

import heapq
import struct
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rmi
from ._util import crc32c, shared_pool, worker_budget
from .core_model import CoreModel, CoreModelParams, build_core, search_core_with_stats
from .hashkey import SortedHashkeyArray
from .lsh import make_compound_functions
from .vectorstore import ScoredHit, VectorCollection

MAGIC = b"LIDR"
FORMAT_VERSION = 1

MIN_KEY_BITS = 4  # tiny clusters still get a non-degenerate key


class IndexFormatError(ValueError):
    """Index file cannot be read; message names the offending section."""


class LiderConfigWarning(UserWarning):
    """Build-time guidance when parameters leave the recommended ranges."""


def key_bits_for(count: int) -> int:
    """Hashkey length for an indexed set of ``count`` items: ceil(log2 N)."""
    return max(MIN_KEY_BITS, (count - 1).bit_length())


@dataclass(frozen=True)
class LiderParams:
    """Build and query parameters for the full two-layer index."""

    n_clusters: int = 1000
    n_probes: int = 20  # clusters retrieved per query
    n_arrays: int = 10  # hashkey arrays per core model
    centroid_rmi_width: int = 10
    cluster_rmi_width: int = 5
    window_bits: int = 3
    expansion_factor: int = 5
    kmeans_iters: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if not 1 <= self.n_probes <= self.n_clusters:
            raise ValueError(
                f"n_probes must be in 1..{self.n_clusters}, got {self.n_probes}"
            )
        for name in ("n_arrays", "centroid_rmi_width", "cluster_rmi_width", "expansion_factor", "kmeans_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 1 <= self.window_bits <= 8:
            raise ValueError(f"window_bits must be in 1..8, got {self.window_bits}")


@dataclass
class Clustering:
    """k-means output: unit centroids and a full id-to-cluster assignment."""

    centroids: np.ndarray  # (c, dim) float32, unit rows
    assignment: np.ndarray  # (n,) int32
    sizes: np.ndarray  # (c,) int64

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, cluster: int) -> np.ndarray:
        return np.nonzero(self.assignment == cluster)[0].astype(np.int64)


def _centroid_means(matrix: np.ndarray, assignment: np.ndarray, c: int) -> np.ndarray:
    sums = np.empty((c, matrix.shape[1]))
    for d in range(matrix.shape[1]):
        sums[:, d] = np.bincount(assignment, weights=matrix[:, d], minlength=c)
    return sums


def _repair_empty(assignment: np.ndarray, sizes: np.ndarray, matrix: np.ndarray, centroids: np.ndarray) -> None:
    """Give each empty cluster the farthest point of the currently largest one."""
    for j in np.nonzero(sizes == 0)[0]:
        largest = int(np.argmax(sizes))
        members = np.nonzero(assignment == largest)[0]
        sims = matrix[members] @ centroids[largest]
        steal = int(members[np.argmin(sims)])
        assignment[steal] = j
        sizes[largest] -= 1
        sizes[j] += 1


def kmeans(vectors: VectorCollection, c: int, iters: int, seed: int) -> Clustering:
    """Lloyd iterations with k-means++ seeding on unit vectors.

    Centroids are re-normalized each round, so assignment by maximum inner
    product equals assignment by minimum Euclidean distance. Deterministic
    for a fixed seed; empty clusters are repaired, never returned.
    """
    n = len(vectors)
    if c > n:
        raise ValueError(f"cannot form {c} clusters from {n} vectors")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    matrix = vectors.matrix
    rng = np.random.default_rng(seed)

    chosen = np.empty(c, dtype=np.int64)
    chosen[0] = rng.integers(n)
    min_sq = ((matrix - matrix[chosen[0]]) ** 2).sum(axis=1).astype(np.float64)
    for i in range(1, c):
        total = min_sq.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=min_sq / total))
        else:  # all remaining points coincide with chosen centers
            unchosen = np.setdiff1d(np.arange(n), chosen[:i])
            nxt = int(rng.choice(unchosen))
        chosen[i] = nxt
        min_sq = np.minimum(min_sq, ((matrix - matrix[nxt]) ** 2).sum(axis=1))
    centroids = matrix[chosen].copy()

    assignment = np.zeros(n, dtype=np.int32)
    prev = None
    for _ in range(iters):
        assignment = np.argmax(matrix @ centroids.T, axis=1).astype(np.int32)
        sizes = np.bincount(assignment, minlength=c).astype(np.int64)
        _repair_empty(assignment, sizes, matrix, centroids)
        if prev is not None and np.array_equal(assignment, prev):
            break
        prev = assignment.copy()
        means = _centroid_means(matrix, assignment, c)
        norms = np.linalg.norm(means, axis=1)
        fresh = norms > 0
        centroids[fresh] = (means[fresh] / norms[fresh, None]).astype(np.float32)

    sizes = np.bincount(assignment, minlength=c).astype(np.int64)
    return Clustering(centroids=centroids, assignment=assignment, sizes=sizes)


@dataclass
class LiderIndex:
    """Complete two-layer index over one vector collection."""

    params: LiderParams
    clustering: Clustering
    centroids_retriever: CoreModel
    in_cluster: list[CoreModel]
    dim: int
    n: int
    vectors: VectorCollection


@dataclass(frozen=True)
class QueryStats:
    """Per-stage wall-clock seconds and candidate counts for one query."""

    centroid_seconds: float
    cluster_seconds: float
    merge_seconds: float
    candidates_centroid: int
    candidates_clusters: int

    @property
    def candidates_total(self) -> int:
        return self.candidates_centroid + self.candidates_clusters


@dataclass
class QueryResult:
    hits: list[ScoredHit]
    stats: QueryStats


def _core_params(params: LiderParams, key_bits: int, width: int) -> CoreModelParams:
    return CoreModelParams(
        n_arrays=params.n_arrays,
        key_bits=key_bits,
        window_bits=params.window_bits,
        expansion_factor=params.expansion_factor,
        rmi_width=width,
        seed=params.seed,
    )


def build_index(vectors: VectorCollection, params: LiderParams) -> LiderIndex:
    """Cluster the data, then build the centroid and per-cluster retrievers."""
    if not vectors.normalized:
        raise ValueError("vectors must be normalized before indexing")
    n = len(vectors)
    if params.n_clusters > n:
        raise ValueError(f"n_clusters {params.n_clusters} exceeds collection size {n}")

    avg = n / params.n_clusters
    if not 10_000 <= avg <= 50_000:
        warnings.warn(
            f"average cluster size {avg:.0f} is outside the recommended 10k-50k range",
            LiderConfigWarning,
            stacklevel=2,
        )
    lo, hi = params.n_clusters / 100, params.n_clusters / 50
    if not lo <= params.n_probes <= hi and params.n_clusters >= 100:
        warnings.warn(
            f"n_probes {params.n_probes} is outside the recommended "
            f"{lo:.0f}-{hi:.0f} range for {params.n_clusters} clusters",
            LiderConfigWarning,
            stacklevel=2,
        )

    clustering = kmeans(vectors, params.n_clusters, params.kmeans_iters, params.seed)
    centroid_coll = VectorCollection(
        dim=vectors.dim, matrix=clustering.centroids, normalized=True
    )
    centroids_retriever = build_core(
        centroid_coll,
        np.arange(params.n_clusters, dtype=np.int64),
        _core_params(params, key_bits_for(params.n_clusters), params.centroid_rmi_width),
    )

    def build_cluster(j: int) -> CoreModel:
        members = clustering.members(j)
        cp = _core_params(params, key_bits_for(len(members)), params.cluster_rmi_width)
        return build_core(vectors, members, cp)

    if worker_budget() > 1 and params.n_clusters > 1:
        in_cluster = list(shared_pool().map(build_cluster, range(params.n_clusters)))
    else:
        in_cluster = [build_cluster(j) for j in range(params.n_clusters)]

    return LiderIndex(
        params=params,
        clustering=clustering,
        centroids_retriever=centroids_retriever,
        in_cluster=in_cluster,
        dim=vectors.dim,
        n=n,
        vectors=vectors,
    )


def merge_topk(lists: list[list[ScoredHit]], k: int) -> list[ScoredHit]:
    """Global top-k from descending-sorted hit lists via a bounded heap.

    O(len(lists) + k log len(lists)) comparisons; ties follow
    (score descending, id ascending).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    heap = []
    for li, hits in enumerate(lists):
        if hits:
            heap.append((-hits[0].score, hits[0].id, li, 0))
    heapq.heapify(heap)
    out: list[ScoredHit] = []
    while heap and len(out) < k:
        _, _, li, pos = heapq.heappop(heap)
        out.append(lists[li][pos])
        if pos + 1 < len(lists[li]):
            nxt = lists[li][pos + 1]
            heapq.heappush(heap, (-nxt.score, nxt.id, li, pos + 1))
    return out


def query(index: LiderIndex, q: np.ndarray, k: int, c0: int | None = None) -> QueryResult:
    """Route the query to the closest clusters, search them, merge top-k.

    ``c0`` overrides the number of probed clusters for this query only.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float32).ravel()
    if q.shape[0] != index.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs index {index.dim}")
    n_probes = index.params.n_probes if c0 is None else c0
    parallel = worker_budget() > 1

    r0 = index.params.expansion_factor
    t0 = time.perf_counter()
    centroid_hits, cand_centroid = search_core_with_stats(
        index.centroids_retriever, q, n_probes, parallel=parallel, expansion_factor=r0
    )
    selected = [hit.id for hit in centroid_hits]
    t1 = time.perf_counter()

    def search_cluster(j: int) -> tuple[list[ScoredHit], int]:
        return search_core_with_stats(
            index.in_cluster[j], q, k, parallel=False, expansion_factor=r0
        )

    if parallel and len(selected) > 1:
        futures = [shared_pool().submit(search_cluster, j) for j in selected]
        results = [f.result() for f in futures]
    else:
        results = [search_cluster(j) for j in selected]
    t2 = time.perf_counter()

    hits = merge_topk([hits for hits, _ in results], k)
    t3 = time.perf_counter()

    stats = QueryStats(
        centroid_seconds=t1 - t0,
        cluster_seconds=t2 - t1,
        merge_seconds=t3 - t2,
        candidates_centroid=cand_centroid,
        candidates_clusters=sum(count for _, count in results),
    )
    return QueryResult(hits=hits, stats=stats)


# ---------------------------------------------------------------------------
# Persistence. Little-endian binary: magic, version u32, then length-prefixed
# sections (4-byte tag, u64 payload length, payload, CRC-32C u32). Unknown
# trailing sections are skippable by construction. Original vectors are not
# stored; the file carries the collection digest and the loader re-attaches.
# ---------------------------------------------------------------------------

_PARAM_STRUCT = struct.Struct("<IIIIIIIIQIQ32s")


def _pack_section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload + struct.pack("<I", crc32c(payload))


def iter_sections(buf: bytes, offset: int):
    """Yield (tag, payload) pairs; raises IndexFormatError on corruption."""
    while offset < len(buf):
        if offset + 12 > len(buf):
            raise IndexFormatError(f"truncated section header at byte {offset}")
        tag = buf[offset : offset + 4].decode("ascii", errors="replace")
        (length,) = struct.unpack_from("<Q", buf, offset + 4)
        start = offset + 12
        end = start + length
        if end + 4 > len(buf):
            raise IndexFormatError(f"truncated section {tag!r} at byte {offset}")
        payload = buf[start:end]
        (stored,) = struct.unpack_from("<I", buf, end)
        if crc32c(payload) != stored:
            raise IndexFormatError(f"checksum mismatch in section {tag!r}")
        yield tag, payload
        offset = end + 4


def _pack_core_model(model: CoreModel) -> bytes:
    parts = [
        struct.pack(
            "<IIQ", model.params.key_bits, model.params.rmi_width, len(model.member_ids)
        )
    ]
    for array, predictor in zip(model.arrays, model.rmis):
        parts.append(array.keys.astype("<u8").tobytes())
        parts.append(array.ids.astype("<u4").tobytes())
        rs = predictor.rescaler
        parts.append(struct.pack("<QQdd", rs.x_min, rs.x_max, rs.a, rs.b))
        parts.append(struct.pack("<dd", predictor.root.slope, predictor.root.intercept))
        for leaf in predictor.leaves:
            parts.append(struct.pack("<dd", leaf.slope, leaf.intercept))
    return b"".join(parts)


def _unpack_core_model(
    payload: bytes,
    params: LiderParams,
    member_check: int,
    vectors: VectorCollection,
    section: str,
) -> CoreModel:
    try:
        key_bits, width, count = struct.unpack_from("<IIQ", payload, 0)
        if count != member_check:
            raise IndexFormatError(
                f"section {section!r} holds {count} members, expected {member_check}"
            )
        core_params = _core_params(params, key_bits, width)
        funcs = make_compound_functions(params.n_arrays, key_bits, vectors.dim, params.seed)
        offset = 16
        arrays = []
        rmis = []
        for h in range(params.n_arrays):
            keys = np.frombuffer(payload, dtype="<u8", count=count, offset=offset)
            offset += 8 * count
            ids = np.frombuffer(payload, dtype="<u4", count=count, offset=offset)
            offset += 4 * count
            x_min, x_max, a, b = struct.unpack_from("<QQdd", payload, offset)
            offset += 32
            slope, intercept = struct.unpack_from("<dd", payload, offset)
            offset += 16
            leaves = []
            for _ in range(width):
                ls, li = struct.unpack_from("<dd", payload, offset)
                offset += 16
                leaves.append(rmi.LinearModel(ls, li))
            arrays.append(
                SortedHashkeyArray(
                    func_id=h,
                    key_len=key_bits,
                    keys=keys.astype(np.uint64),
                    ids=ids.astype(np.int64),
                )
            )
            rmis.append(
                rmi.RmiModel(
                    rescaler=rmi.KeyRescaler(x_min=x_min, x_max=x_max, a=a, b=b),
                    root=rmi.LinearModel(slope, intercept),
                    leaves=tuple(leaves),
                    l_array=count,
                )
            )
        if offset != len(payload):
            raise IndexFormatError(f"section {section!r} has {len(payload) - offset} stray bytes")
    except struct.error as exc:
        raise IndexFormatError(f"section {section!r} is truncated: {exc}") from exc
    return CoreModel(
        params=core_params,
        funcs=funcs,
        arrays=arrays,
        rmis=rmis,
        member_ids=np.sort(arrays[0].ids),
        vectors=vectors,
    )


def save_index(index: LiderIndex, path: str | Path) -> int:
    """Serialize the index; returns the number of bytes written."""
    p = index.params
    param_payload = _PARAM_STRUCT.pack(
        p.n_clusters,
        p.n_probes,
        p.n_arrays,
        p.centroid_rmi_width,
        p.cluster_rmi_width,
        p.window_bits,
        p.expansion_factor,
        p.kmeans_iters,
        p.seed & (1 << 64) - 1,
        index.dim,
        index.n,
        index.vectors.digest(),
    )
    blob = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_section(b"PARM", param_payload)]
    clus_payload = (
        index.clustering.centroids.astype("<f4").tobytes()
        + index.clustering.assignment.astype("<u4").tobytes()
    )
    blob.append(_pack_section(b"CLUS", clus_payload))
    blob.append(_pack_section(b"CMDL", _pack_core_model(index.centroids_retriever)))
    for model in index.in_cluster:
        blob.append(_pack_section(b"ICMD", _pack_core_model(model)))
    data = b"".join(blob)
    Path(path).write_bytes(data)
    return len(data)


def load_index(path: str | Path, vectors: VectorCollection) -> LiderIndex:
    """Read an index file and re-attach the vector collection it was built on."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise IndexFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version > FORMAT_VERSION:
        raise IndexFormatError(
            f"unsupported format version {version}, newest supported is {FORMAT_VERSION}"
        )

    sections = iter_sections(buf, 8)
    tag, payload = next(sections)
    if tag != "PARM":
        raise IndexFormatError(f"expected section 'PARM' first, found {tag!r}")
    fields = _PARAM_STRUCT.unpack(payload)
    params = LiderParams(
        n_clusters=fields[0],
        n_probes=fields[1],
        n_arrays=fields[2],
        centroid_rmi_width=fields[3],
        cluster_rmi_width=fields[4],
        window_bits=fields[5],
        expansion_factor=fields[6],
        kmeans_iters=fields[7],
        seed=fields[8],
    )
    dim, n, digest = fields[9], fields[10], fields[11]
    if dim != vectors.dim or n != len(vectors):
        raise IndexFormatError(
            f"index was built on {n} x {dim} vectors, got {len(vectors)} x {vectors.dim}"
        )
    if digest != vectors.digest():
        raise IndexFormatError("vector collection digest does not match the index file")

    tag, payload = next(sections)
    if tag != "CLUS":
        raise IndexFormatError(f"expected section 'CLUS', found {tag!r}")
    c = params.n_clusters
    centroids = (
        np.frombuffer(payload, dtype="<f4", count=c * dim).reshape(c, dim).astype(np.float32)
    )
    assignment = np.frombuffer(payload, dtype="<u4", count=n, offset=4 * c * dim).astype(
        np.int32
    )
    sizes = np.bincount(assignment, minlength=c).astype(np.int64)
    clustering = Clustering(centroids=centroids, assignment=assignment, sizes=sizes)

    centroid_coll = VectorCollection(dim=dim, matrix=centroids, normalized=True)
    tag, payload = next(sections)
    if tag != "CMDL":
        raise IndexFormatError(f"expected section 'CMDL', found {tag!r}")
    retriever = _unpack_core_model(payload, params, c, centroid_coll, "CMDL")

    in_cluster = []
    for tag, payload in sections:
        if tag != "ICMD":
            continue  # unknown trailing section: skip
        j = len(in_cluster)
        in_cluster.append(
            _unpack_core_model(payload, params, int(sizes[j]), vectors, f"ICMD[{j}]")
        )
    if len(in_cluster) != c:
        raise IndexFormatError(f"expected {c} cluster sections, found {len(in_cluster)}")

    return LiderIndex(
        params=params,
        clustering=clustering,
        centroids_retriever=retriever,
        in_cluster=in_cluster,
        dim=dim,
        n=n,
        vectors=vectors,
    )


def with_probes(index: LiderIndex, n_probes: int) -> LiderIndex:
    """Shallow copy with a different probe count (query-time parameter)."""
    return replace_params(index, replace(index.params, n_probes=n_probes))


def replace_params(index: LiderIndex, params: LiderParams) -> LiderIndex:
    clone = LiderIndex(
        params=params,
        clustering=index.clustering,
        centroids_retriever=index.centroids_retriever,
        in_cluster=index.in_cluster,
        dim=index.dim,
        n=index.n,
        vectors=index.vectors,
    )
    return clone
