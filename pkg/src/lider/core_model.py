"""The basic retrieval unit: hash functions, sorted arrays, location
predictors, windowed expansion search, and exact-score verification.

Querying hashes the query once per array, predicts a start location,
scans a fixed-width window around it, then scores the union of window
candidates by exact cosine similarity and returns the best k_m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rmi
from ._util import shared_pool, worker_budget
from .hashkey import (
    Hashkey,
    SortedHashkeyArray,
    packed_distance_many,
    sorted_array_from_packed,
)
from .lsh import CompoundHashFunction, make_compound_functions
from .vectorstore import ScoredHit, VectorCollection, cosine_scores, top_hits


@dataclass(frozen=True)
class CoreModelParams:
    """Shape of one core model.

    R, the per-array expansion width, is not stored: it is derived at query
    time as expansion_factor * k_m.
    """

    n_arrays: int
    key_bits: int
    window_bits: int = 3
    expansion_factor: int = 5
    rmi_width: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_arrays < 1:
            raise ValueError(f"n_arrays must be >= 1, got {self.n_arrays}")
        if not 1 <= self.key_bits <= 64:
            raise ValueError(f"key_bits must be in 1..64, got {self.key_bits}")
        if not 1 <= self.window_bits <= 8:
            raise ValueError(f"window_bits must be in 1..8, got {self.window_bits}")
        if self.expansion_factor < 1:
            raise ValueError(f"expansion_factor must be >= 1, got {self.expansion_factor}")
        if self.rmi_width < 1:
            raise ValueError(f"rmi_width must be >= 1, got {self.rmi_width}")


@dataclass
class CoreModel:
    """H hash functions, H sorted arrays, H predictors over one id subset."""

    params: CoreModelParams
    funcs: list[CompoundHashFunction]
    arrays: list[SortedHashkeyArray]
    rmis: list[rmi.RmiModel]
    member_ids: np.ndarray  # int64, sorted ascending
    vectors: VectorCollection

    def __len__(self) -> int:
        return len(self.member_ids)


def build_core(
    vectors: VectorCollection, ids: np.ndarray, params: CoreModelParams
) -> CoreModel:
    """Hash all members, sort per function, and fit one predictor per array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot build a core model over an empty id set")
    if ids.min() < 0 or ids.max() >= len(vectors):
        raise ValueError("member id out of range for the vector collection")

    funcs = make_compound_functions(params.n_arrays, params.key_bits, vectors.dim, params.seed)
    member_matrix = vectors.matrix[ids]
    arrays = []
    rmis = []
    for func in funcs:
        packed = func.hash_many(member_matrix)
        array = sorted_array_from_packed(packed, ids, params.key_bits, func.func_id)
        rescaler = rmi.KeyRescaler.fit(array.keys, len(array))
        keys = rescaler.rescale_many(array.keys)
        pairs = np.column_stack((keys, np.arange(len(array), dtype=np.float64)))
        arrays.append(array)
        rmis.append(rmi.train(pairs, params.rmi_width, len(array), rescaler=rescaler))
    return CoreModel(
        params=params,
        funcs=funcs,
        arrays=arrays,
        rmis=rmis,
        member_ids=np.sort(ids),
        vectors=vectors,
    )


def window_bounds(center: int, width: int, length: int) -> tuple[int, int]:
    """Inclusive window of min(width, length) positions around ``center``.

    The window is centered and shifted (never shrunk) at the array ends, so
    the inspected-candidate budget is always met.
    """
    w = min(width, length)
    start = center - (w + 1) // 2 + 1
    if start < 0:
        start = 0
    elif start + w > length:
        start = length - w
    return start, start + w - 1


def expansion_search(
    model: CoreModel, array_index: int, query_key: Hashkey | int, range_width: int
) -> np.ndarray:
    """Window scan around the predicted location of ``query_key``.

    Returns the window's embedding ids ordered by ascending key distance to
    the query key, ties by array position.
    """
    if range_width < 1:
        raise ValueError(f"range_width must be >= 1, got {range_width}")
    array = model.arrays[array_index]
    value = query_key.value if isinstance(query_key, Hashkey) else int(query_key)
    center = model.rmis[array_index].predict_key(value)
    start, end = window_bounds(center, range_width, len(array))
    window = array.keys[start : end + 1]
    dists = packed_distance_many(value, window, array.key_len, model.params.window_bits)
    order = np.lexsort((np.arange(len(window)), dists))
    return array.ids[start : end + 1][order]


def _array_candidates(model: CoreModel, array_index: int, query: np.ndarray, r: int) -> np.ndarray:
    key = model.funcs[array_index].hash_one(query)
    return expansion_search(model, array_index, key, r)


def search_core(
    model: CoreModel,
    query: np.ndarray,
    k_m: int,
    parallel: bool = True,
    expansion_factor: int | None = None,
) -> list[ScoredHit]:
    """Top-k_m members by exact cosine similarity over window candidates."""
    hits, _ = search_core_with_stats(model, query, k_m, parallel, expansion_factor)
    return hits


def search_core_with_stats(
    model: CoreModel,
    query: np.ndarray,
    k_m: int,
    parallel: bool = True,
    expansion_factor: int | None = None,
) -> tuple[list[ScoredHit], int]:
    """``search_core`` plus the deduplicated candidate count.

    The per-array window is expansion_factor * k_m entries, derived here at
    query time; the factor defaults to the one the model was built with.
    """
    if k_m < 1:
        raise ValueError(f"k_m must be >= 1, got {k_m}")
    query = np.asarray(query, dtype=np.float32).ravel()
    if query.shape[0] != model.vectors.dim:
        raise ValueError(f"dimension mismatch: query {query.shape[0]} vs {model.vectors.dim}")
    if expansion_factor is None:
        expansion_factor = model.params.expansion_factor
    r = expansion_factor * k_m
    h = model.params.n_arrays

    if parallel and h > 1 and worker_budget() > 1:
        futures = [
            shared_pool().submit(_array_candidates, model, i, query, r) for i in range(h)
        ]
        per_array = [f.result() for f in futures]
    else:
        per_array = [_array_candidates(model, i, query, r) for i in range(h)]

    candidates = np.unique(np.concatenate(per_array))
    scores = cosine_scores(model.vectors, query, candidates)
    return top_hits(candidates, scores, min(k_m, len(candidates))), len(candidates)
