"""Original sortable-key LSH search mode: one global frontier over all
arrays, popping the globally closest key next, with the original one-bit
element distance. Kept as a comparison baseline for the windowed,
per-array-parallel search of the core model.
"""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import crc32c
from .core_model import CoreModelParams
from .hashkey import SortedHashkeyArray, packed_distance, sorted_array_from_packed
from .index import IndexFormatError, iter_sections
from .lsh import CompoundHashFunction, make_compound_functions
from .vectorstore import ScoredHit, VectorCollection, cosine_scores, top_hits

SKLSH_MAGIC = b"SKLH"
SKLSH_VERSION = 1

# The original element distance looks only at the single bit after the
# common prefix, scaled by a constant > its maximum: KL + bit_diff / 2.
ORIGINAL_WINDOW_BITS = 1


@dataclass
class SkLshIndex:
    """H sorted hashkey arrays addressed by binary search (no predictor)."""

    params: CoreModelParams
    funcs: list[CompoundHashFunction]
    arrays: list[SortedHashkeyArray]
    vectors: VectorCollection

    def __len__(self) -> int:
        return len(self.arrays[0])


def build_sklsh(vectors: VectorCollection, params: CoreModelParams) -> SkLshIndex:
    """Hash the whole collection and sort per function; same arrays as a
    core model built with identical parameters."""
    funcs = make_compound_functions(params.n_arrays, params.key_bits, vectors.dim, params.seed)
    ids = np.arange(len(vectors), dtype=np.int64)
    arrays = [
        sorted_array_from_packed(f.hash_many(vectors.matrix), ids, params.key_bits, f.func_id)
        for f in funcs
    ]
    return SkLshIndex(params=params, funcs=funcs, arrays=arrays, vectors=vectors)


def candidate_stream(index: SkLshIndex, q: np.ndarray, budget: int):
    """Yield (distance, array, position, id) in globally closest-first order.

    Per array the frontier holds the next unvisited entry on each side of
    the query key's insertion position; each pop advances that side.
    """
    query = np.asarray(q, dtype=np.float32).ravel()
    if query.shape[0] != index.vectors.dim:
        raise ValueError(f"dimension mismatch: query {query.shape[0]} vs {index.vectors.dim}")
    m = index.params.key_bits
    keys = [f.hash_one(query).value for f in index.funcs]

    heap = []

    def push(h: int, pos: int, step: int) -> None:
        array = index.arrays[h]
        if 0 <= pos < len(array):
            d = packed_distance(keys[h], int(array.keys[pos]), m, ORIGINAL_WINDOW_BITS)
            heapq.heappush(heap, (d, h, pos, step))

    for h, array in enumerate(index.arrays):
        start = int(np.searchsorted(array.keys, np.uint64(keys[h]), side="left"))
        push(h, start, 1)
        push(h, start - 1, -1)

    popped = 0
    while heap and popped < budget:
        d, h, pos, step = heapq.heappop(heap)
        yield d, h, pos, int(index.arrays[h].ids[pos])
        popped += 1
        push(h, pos + step, step)


def search_sklsh(index: SkLshIndex, q: np.ndarray, k: int, budget: int) -> list[ScoredHit]:
    """Pop ``budget`` globally closest keys, verify exactly, return top-k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if budget < k:
        raise ValueError(f"budget {budget} must be >= k {k}")
    seen: set[int] = set()
    for _, _, _, id in candidate_stream(index, q, budget):
        seen.add(id)
    candidates = np.fromiter(seen, dtype=np.int64, count=len(seen))
    candidates.sort()
    scores = cosine_scores(index.vectors, np.asarray(q, dtype=np.float32).ravel(), candidates)
    return top_hits(candidates, scores, min(k, len(candidates)))


def save_sklsh(index: SkLshIndex, path: str | Path) -> int:
    """Serialize the baseline index; returns the number of bytes written."""
    p = index.params
    header = struct.pack(
        "<IIIIQIQ32s",
        p.n_arrays,
        p.key_bits,
        p.window_bits,
        p.expansion_factor,
        p.seed & ((1 << 64) - 1),
        index.vectors.dim,
        len(index.vectors),
        index.vectors.digest(),
    )
    blob = [SKLSH_MAGIC, struct.pack("<I", SKLSH_VERSION)]
    blob.append(_pack_section(b"PARM", header))
    for array in index.arrays:
        payload = array.keys.astype("<u8").tobytes() + array.ids.astype("<u4").tobytes()
        blob.append(_pack_section(b"ARRY", payload))
    data = b"".join(blob)
    Path(path).write_bytes(data)
    return len(data)


def _pack_section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload + struct.pack("<I", crc32c(payload))


def load_sklsh(path: str | Path, vectors: VectorCollection) -> SkLshIndex:
    buf = Path(path).read_bytes()
    if buf[:4] != SKLSH_MAGIC:
        raise IndexFormatError(f"bad magic {buf[:4]!r}, expected {SKLSH_MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version > SKLSH_VERSION:
        raise IndexFormatError(
            f"unsupported format version {version}, newest supported is {SKLSH_VERSION}"
        )
    sections = iter_sections(buf, 8)
    tag, payload = next(sections)
    if tag != "PARM":
        raise IndexFormatError(f"expected section 'PARM' first, found {tag!r}")
    h, key_bits, window_bits, r0, seed, dim, n, digest = struct.unpack("<IIIIQIQ32s", payload)
    if dim != vectors.dim or n != len(vectors):
        raise IndexFormatError(
            f"index was built on {n} x {dim} vectors, got {len(vectors)} x {vectors.dim}"
        )
    if digest != vectors.digest():
        raise IndexFormatError("vector collection digest does not match the index file")
    params = CoreModelParams(
        n_arrays=h, key_bits=key_bits, window_bits=window_bits, expansion_factor=r0, seed=seed
    )
    funcs = make_compound_functions(h, key_bits, dim, seed)
    arrays = []
    for tag, payload in sections:
        if tag != "ARRY":
            continue
        i = len(arrays)
        keys = np.frombuffer(payload, dtype="<u8", count=n)
        ids = np.frombuffer(payload, dtype="<u4", count=n, offset=8 * n)
        arrays.append(
            SortedHashkeyArray(
                func_id=i, key_len=key_bits, keys=keys.astype(np.uint64), ids=ids.astype(np.int64)
            )
        )
    if len(arrays) != h:
        raise IndexFormatError(f"expected {h} array sections, found {len(arrays)}")
    return SkLshIndex(params=params, funcs=funcs, arrays=arrays, vectors=vectors)
