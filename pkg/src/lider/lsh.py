"""Hyperplane random-projection LSH producing sortable bit hashkeys.

A compound function concatenates the sign bits of M independent random
hyperplane projections. For unit vectors at angle theta, each bit collides
with probability 1 - theta/pi, so a shared key prefix of length l occurs
with probability (1 - theta/pi)^l.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hashkey import Hashkey, packed_distance_pairwise

_MASK64 = (1 << 64) - 1


def collision_probability(theta: float) -> float:
    """Per-bit collision probability for unit vectors at angle ``theta``."""
    return 1.0 - theta / math.pi


def _plane(seed: int, func_id: int, plane_idx: int, dim: int) -> np.ndarray:
    # Counter-based generator keyed by (seed, function, plane): regeneration
    # is bit-identical and independent of generation order, so persisted
    # indexes only need to store the seed.
    key = np.array([seed & _MASK64, ((func_id << 32) | plane_idx) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(dim)


@dataclass(frozen=True)
class CompoundHashFunction:
    """M stacked hyperplanes; the hash of a vector is its M projection signs."""

    func_id: int
    key_len: int
    dim: int
    seed: int
    planes: np.ndarray  # (key_len, dim) float64

    def hash_one(self, vector: np.ndarray, source_id: int | None = None) -> Hashkey:
        v = np.asarray(vector).ravel()
        if v.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: vector {v.shape[0]} vs planes {self.dim}")
        bits = self.planes @ v.astype(np.float64) >= 0.0
        value = 0
        for bit in bits:
            value = (value << 1) | int(bit)
        return Hashkey(value=value, length=self.key_len, source_id=source_id)

    def hash_many(self, matrix: np.ndarray) -> np.ndarray:
        """Hash each row of ``matrix``; returns packed uint64 keys (MSB-first)."""
        if matrix.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: vectors {matrix.shape[1]} vs planes {self.dim}")
        if self.key_len > 64:
            raise ValueError(f"packed hashing supports key_len <= 64, got {self.key_len}")
        bits = (matrix @ self.planes.T >= 0.0).astype(np.uint64)
        weights = np.uint64(1) << np.arange(self.key_len - 1, -1, -1, dtype=np.uint64)
        return (bits * weights).sum(axis=1, dtype=np.uint64)


def make_compound_functions(
    h_count: int, key_len: int, dim: int, seed: int
) -> list[CompoundHashFunction]:
    """H independent compound functions, deterministic in (seed, id, plane)."""
    if h_count < 1 or key_len < 1 or dim < 1:
        raise ValueError("h_count, key_len, and dim must all be >= 1")
    funcs = []
    for func_id in range(h_count):
        planes = np.stack([_plane(seed, func_id, i, dim) for i in range(key_len)])
        funcs.append(
            CompoundHashFunction(
                func_id=func_id, key_len=key_len, dim=dim, seed=seed, planes=planes
            )
        )
    return funcs


def collision_law_check(
    theta: float,
    l: int,
    trials: int,
    seed: int,
    key_len: int = 16,
    dim: int = 8,
) -> float:
    """Monte Carlo estimate of P[dist between two hashkeys < M - l + 1].

    Each trial draws a fresh compound function and a fresh pair of unit
    vectors at angle ``theta``; the law predicts (1 - theta/pi)^l.
    """
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta must be in (0, pi), got {theta}")
    if not 0 <= l <= key_len:
        raise ValueError(f"l must be in [0, {key_len}], got {l}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if key_len > 52:
        raise ValueError("vectorized check supports key_len <= 52")

    rng = np.random.default_rng(seed)
    threshold = key_len - l + 1
    hits = 0
    done = 0
    batch = 20_000
    while done < trials:
        b = min(batch, trials - done)
        u = rng.standard_normal((b, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        w = rng.standard_normal((b, dim))
        w -= (w * u).sum(axis=1, keepdims=True) * u
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        v = math.cos(theta) * u + math.sin(theta) * w

        planes = rng.standard_normal((b, key_len, dim))
        bits_u = (np.einsum("bkd,bd->bk", planes, u) >= 0.0).astype(np.uint64)
        bits_v = (np.einsum("bkd,bd->bk", planes, v) >= 0.0).astype(np.uint64)
        weights = np.uint64(1) << np.arange(key_len - 1, -1, -1, dtype=np.uint64)
        keys_u = (bits_u * weights).sum(axis=1, dtype=np.uint64)
        keys_v = (bits_v * weights).sum(axis=1, dtype=np.uint64)

        # Original hashkey distance: single next-bit element distance over 2.
        dists = packed_distance_pairwise(keys_u, keys_v, key_len, 1)
        hits += int((dists < threshold).sum())
        done += b
    return hits / trials
