"""Dense embedding collections: file IO, normalization, exact top-k search.

Vector files are a flat sequence of records, each a little-endian uint32
dimension header followed by that many little-endian float32 values (the
common ".fvecs" layout). Embedding ids are dense 0..N-1 in file order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RECORD_HEADER_BYTES = 4


class VectorLoadError(ValueError):
    """Malformed vector file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ScoredHit:
    """One search result: embedding id and its cosine similarity."""

    id: int
    score: float


@dataclass
class VectorCollection:
    """An in-memory embedding matrix; row index is the embedding id."""

    dim: int
    matrix: np.ndarray  # (n, dim) float32
    normalized: bool = False
    _digest: bytes | None = field(default=None, repr=False, compare=False)
    _matrix64: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dim:
            raise ValueError(f"matrix shape {self.matrix.shape} does not match dim {self.dim}")
        if len(self.matrix) < 1:
            raise ValueError("collection must hold at least one vector")
        if self.matrix.dtype != np.float32:
            raise ValueError(f"matrix must be float32, got {self.matrix.dtype}")

    def __len__(self) -> int:
        return len(self.matrix)

    def vector(self, id: int) -> np.ndarray:
        return self.matrix[id]

    def record_bytes(self) -> bytes:
        """Serialized record stream, identical to what write_vectors emits."""
        n = len(self.matrix)
        rec = np.empty((n, RECORD_HEADER_BYTES + 4 * self.dim), dtype=np.uint8)
        rec[:, :RECORD_HEADER_BYTES] = np.frombuffer(
            np.uint32(self.dim).astype("<u4").tobytes(), dtype=np.uint8
        )
        floats = np.ascontiguousarray(self.matrix, dtype="<f4")
        rec[:, RECORD_HEADER_BYTES:] = floats.view(np.uint8).reshape(n, 4 * self.dim)
        return rec.tobytes()

    def digest(self) -> bytes:
        """SHA-256 of the serialized records; cached after first call."""
        if self._digest is None:
            object.__setattr__(self, "_digest", hashlib.sha256(self.record_bytes()).digest())
        return self._digest

    def matrix64(self) -> np.ndarray:
        """Float64 view of the matrix for 64-bit-accumulated scoring; cached."""
        if self._matrix64 is None:
            object.__setattr__(self, "_matrix64", self.matrix.astype(np.float64))
        return self._matrix64


def load_vectors(path: str | Path, limit: int | None = None) -> VectorCollection:
    """Load a vector file, validating layout, dimensions, and finiteness."""
    if limit is not None and limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    raw = Path(path).read_bytes()
    if len(raw) < RECORD_HEADER_BYTES:
        raise VectorLoadError("file too short for a record header", 0)
    dim = int(np.frombuffer(raw, dtype="<u4", count=1)[0])
    if dim < 1:
        raise VectorLoadError(f"record declares dimension {dim}", 0)
    record_size = RECORD_HEADER_BYTES + 4 * dim
    n_complete = len(raw) // record_size
    n_wanted = n_complete if limit is None else min(limit, n_complete)
    if n_wanted == 0:
        raise VectorLoadError("truncated record", 0)

    used = raw[: n_wanted * record_size]
    headers = np.frombuffer(used, dtype="<u4").reshape(n_wanted, dim + 1)[:, 0]
    bad = np.nonzero(headers != dim)[0]
    if bad.size:
        rec = int(bad[0])
        raise VectorLoadError(
            f"record {rec} declares dimension {int(headers[rec])}, expected {dim}",
            rec * record_size,
        )
    if (limit is None or n_complete < limit) and len(raw) % record_size != 0:
        raise VectorLoadError("truncated record", n_complete * record_size)

    floats = np.frombuffer(used, dtype="<f4").reshape(n_wanted, dim + 1)[:, 1:]
    finite = np.isfinite(floats).all(axis=1)
    bad = np.nonzero(~finite)[0]
    if bad.size:
        rec = int(bad[0])
        raise VectorLoadError(f"non-finite value in record {rec}", rec * record_size)
    return VectorCollection(dim=dim, matrix=np.ascontiguousarray(floats))


def write_vectors(collection: VectorCollection, path: str | Path) -> None:
    """Write the collection in the record layout load_vectors reads."""
    Path(path).write_bytes(collection.record_bytes())


def normalize(collection: VectorCollection) -> VectorCollection:
    """Return a copy with every vector scaled to unit Euclidean norm."""
    norms = np.linalg.norm(collection.matrix.astype(np.float64), axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"cannot normalize zero vector id={int(zero[0])}")
    scaled = (collection.matrix / norms[:, None]).astype(np.float32)
    return VectorCollection(dim=collection.dim, matrix=scaled, normalized=True)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, accumulated in float64."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def cosine_scores(
    collection: VectorCollection, query: np.ndarray, ids: np.ndarray | None = None
) -> np.ndarray:
    """Float64 cosine scores of the query against (a subset of) the collection.

    Dot products accumulate in float64; for normalized collections this is a
    plain inner product.
    """
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != collection.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs collection {collection.dim}")
    rows = collection.matrix64() if ids is None else collection.matrix[ids].astype(np.float64)
    scores = rows @ q
    if not collection.normalized:
        norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(q)
        if (norms == 0.0).any():
            raise ValueError("cosine similarity undefined for zero vectors")
        scores = scores / norms
    return scores


def top_hits(ids: np.ndarray, scores: np.ndarray, k: int) -> list[ScoredHit]:
    """Top-k of (ids, scores) ordered by score descending, ties by id ascending.

    Ordering uses the float32 score the hits carry, so ranked lists merged
    later by that score stay consistent with this sort.
    """
    scores32 = scores.astype(np.float32)
    order = np.lexsort((ids, -scores32))[:k]
    return [ScoredHit(int(ids[i]), float(scores32[i])) for i in order]


def exact_topk(collection: VectorCollection, query: np.ndarray, k: int) -> list[ScoredHit]:
    """Brute-force exact top-k by cosine similarity (the Flat oracle)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = cosine_scores(collection, query)
    return top_hits(np.arange(len(collection)), scores, min(k, len(collection)))


def generate_synthetic(
    n: int, dim: int, n_centers: int, spread: float, seed: int
) -> VectorCollection:
    """Deterministic unit-normalized Gaussian mixture for desk-scale experiments.

    ``n_centers`` isotropic clusters with per-coordinate standard deviation
    ``spread`` around unit-normalized random centers.
    """
    if n < 1 or dim < 1 or n_centers < 1:
        raise ValueError("n, dim, and n_centers must all be >= 1")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_centers, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(0, n_centers, size=n)
    vectors = centers[labels] + spread * rng.standard_normal((n, dim))
    raw = VectorCollection(dim=dim, matrix=vectors.astype(np.float32))
    return normalize(raw)
