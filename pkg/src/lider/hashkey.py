"""Hashkey ordering and distances over bit keys, plus sorted-array construction.

Keys are fixed-length bit strings packed MSB-first into integers, so the
lexicographic (dictionary) order over bit sequences coincides with integer
order. The distance between two keys combines the non-prefix length KL
(bits after the longest common prefix) with a fractional refinement read
from the first window of bits where the keys diverge:

    distance = KL + |window(k1) - window(k2)| / 2**window_bits

The fractional part is always < 1, so KL strictly dominates and the
distance is compatible with the sorted order (monotone on either side of
any fixed key in a sorted array).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_VECTOR_MAX_BITS = 52  # float64-exact range for the vectorized bit-length


@dataclass(frozen=True)
class Hashkey:
    """Fixed-length bit key; ``value`` holds the bits packed MSB-first."""

    value: int
    length: int
    source_id: int | None = None

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if not 0 <= self.value < (1 << self.length):
            raise ValueError(f"value {self.value} does not fit in {self.length} bits")

    @classmethod
    def from_bits(cls, bits: str, source_id: int | None = None) -> Hashkey:
        if not bits or any(c not in "01" for c in bits):
            raise ValueError(f"bits must be a non-empty 0/1 string, got {bits!r}")
        return cls(value=int(bits, 2), length=len(bits), source_id=source_id)

    def to_bits(self) -> str:
        return format(self.value, f"0{self.length}b")


def _check_lengths(k1: Hashkey, k2: Hashkey) -> int:
    if k1.length != k2.length:
        raise ValueError(f"hashkey length mismatch: {k1.length} vs {k2.length}")
    return k1.length


def compare(k1: Hashkey, k2: Hashkey) -> int:
    """Lexicographic order from the most significant bit: -1, 0, or 1."""
    _check_lengths(k1, k2)
    if k1.value < k2.value:
        return -1
    return 1 if k1.value > k2.value else 0


def non_prefix_length(k1: Hashkey, k2: Hashkey) -> int:
    """Key length minus the longest common prefix of the two keys."""
    _check_lengths(k1, k2)
    return (k1.value ^ k2.value).bit_length()


def extended_element_distance(k1: Hashkey, k2: Hashkey, window_bits: int) -> int:
    """Absolute difference of the first post-prefix windows, read as integers.

    The window is ``window_bits`` long, truncated when fewer bits remain
    after the common prefix; identical keys give 0.
    """
    length = _check_lengths(k1, k2)
    if window_bits < 1:
        raise ValueError(f"window_bits must be >= 1, got {window_bits}")
    return _packed_element_distance(k1.value, k2.value, length, window_bits)


def extended_distance(k1: Hashkey, k2: Hashkey, window_bits: int) -> float:
    """Non-prefix length plus the window difference scaled by 2**window_bits."""
    kl = non_prefix_length(k1, k2)
    kd = extended_element_distance(k1, k2, window_bits)
    return kl + kd / (1 << window_bits)


def _packed_element_distance(v1: int, v2: int, length: int, window_bits: int) -> int:
    xor = v1 ^ v2
    if xor == 0:
        return 0
    kl = xor.bit_length()
    w = min(window_bits, kl)
    shift = kl - w
    mask = (1 << w) - 1
    return abs(((v1 >> shift) & mask) - ((v2 >> shift) & mask))


def packed_distance(v1: int, v2: int, length: int, window_bits: int) -> float:
    """Distance between two packed key values of the same bit length."""
    xor = v1 ^ v2
    if xor == 0:
        return 0.0
    return xor.bit_length() + _packed_element_distance(v1, v2, length, window_bits) / (
        1 << window_bits
    )


def packed_distance_many(
    query: int, keys: np.ndarray, length: int, window_bits: int
) -> np.ndarray:
    """Vectorized ``packed_distance`` of one query value against many keys."""
    if length > _VECTOR_MAX_BITS:
        return np.array(
            [packed_distance(query, int(k), length, window_bits) for k in keys],
            dtype=np.float64,
        )
    keys = keys.astype(np.uint64, copy=False)
    q = np.uint64(query)
    xor = keys ^ q
    kl = np.frexp(xor.astype(np.float64))[1].astype(np.uint64)  # bit length
    w = np.minimum(np.uint64(window_bits), kl)
    shift = kl - w
    mask = (np.uint64(1) << w) - np.uint64(1)
    win_q = (q >> shift) & mask
    win_k = (keys >> shift) & mask
    kd = np.abs(win_q.astype(np.int64) - win_k.astype(np.int64))
    return kl.astype(np.float64) + kd / float(1 << window_bits)


def packed_distance_pairwise(
    a: np.ndarray, b: np.ndarray, length: int, window_bits: int
) -> np.ndarray:
    """Vectorized elementwise ``packed_distance`` between two key arrays."""
    if length > _VECTOR_MAX_BITS:
        return np.array(
            [packed_distance(int(x), int(y), length, window_bits) for x, y in zip(a, b)],
            dtype=np.float64,
        )
    a = a.astype(np.uint64, copy=False)
    b = b.astype(np.uint64, copy=False)
    xor = a ^ b
    kl = np.frexp(xor.astype(np.float64))[1].astype(np.uint64)
    w = np.minimum(np.uint64(window_bits), kl)
    shift = kl - w
    mask = (np.uint64(1) << w) - np.uint64(1)
    kd = np.abs(
        ((a >> shift) & mask).astype(np.int64) - ((b >> shift) & mask).astype(np.int64)
    )
    return kl.astype(np.float64) + kd / float(1 << window_bits)


@dataclass(frozen=True)
class SortedHashkeyArray:
    """All keys of one compound function, sorted; entries carry embedding ids."""

    func_id: int
    key_len: int
    keys: np.ndarray  # uint64, non-decreasing
    ids: np.ndarray  # int64, embedding ids; ascending within equal keys

    def __post_init__(self) -> None:
        if len(self.keys) != len(self.ids):
            raise ValueError("keys and ids must have equal length")
        if len(self.keys) < 1:
            raise ValueError("sorted array must hold at least one entry")

    def __len__(self) -> int:
        return len(self.keys)


def sorted_array_from_packed(
    keys: np.ndarray, ids: np.ndarray, key_len: int, func_id: int
) -> SortedHashkeyArray:
    """Sort packed (key, id) pairs by key, ties by ascending id."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate embedding id in sorted array input")
    order = np.lexsort((ids, keys))
    return SortedHashkeyArray(
        func_id=func_id,
        key_len=key_len,
        keys=np.ascontiguousarray(keys[order], dtype=np.uint64),
        ids=np.ascontiguousarray(ids[order]),
    )


def build_sorted_array(
    entries: list[tuple[Hashkey, int]], func_id: int = 0
) -> SortedHashkeyArray:
    """Build a sorted array from (Hashkey, id) pairs; ids must be unique."""
    if not entries:
        raise ValueError("cannot build a sorted array from no entries")
    length = entries[0][0].length
    for key, _ in entries:
        if key.length != length:
            raise ValueError(f"hashkey length mismatch: {key.length} vs {length}")
        if key.length > 64:
            raise ValueError("packed arrays support key lengths up to 64 bits")
    keys = np.array([key.value for key, _ in entries], dtype=np.uint64)
    ids = np.array([id for _, id in entries], dtype=np.int64)
    return sorted_array_from_packed(keys, ids, length, func_id)
