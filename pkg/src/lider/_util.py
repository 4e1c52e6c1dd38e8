"""Shared plumbing: CRC-32C, worker budget, process memory probe."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

WORKERS_ENV = "LIDER_WORKERS"

_CRC32C_POLY = 0x82F63B78  # Castagnoli, reflected form


def _make_crc32c_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC32C_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return table


_TABLE = _make_crc32c_table()
_NP_TABLE = np.array(_TABLE, dtype=np.uint32)

# The byte-wise CRC recurrence is GF(2)-linear in (state, data), which lets
# large buffers be split into equal chunks whose raw CRCs are computed in
# parallel numpy lanes and folded with a precomputed "advance through one
# chunk of zero bytes" operator.
_CHUNK = 8192
_VECTOR_MIN = 1 << 16


def _crc_raw_scalar(data: bytes, state: int) -> int:
    for byte in data:
        state = _TABLE[(state ^ byte) & 0xFF] ^ (state >> 8)
    return state


def _advance_one_zero(state: int) -> int:
    return _TABLE[state & 0xFF] ^ (state >> 8)


def _mat_apply(mat: list[int], value: int) -> int:
    out = 0
    bit = 0
    while value:
        if value & 1:
            out ^= mat[bit]
        value >>= 1
        bit += 1
    return out


def _make_zero_chunk_tables() -> np.ndarray:
    mat = [_advance_one_zero(1 << i) for i in range(32)]
    for _ in range(_CHUNK.bit_length() - 1):  # square log2(_CHUNK) times
        mat = [_mat_apply(mat, col) for col in mat]
    tables = np.zeros((4, 256), dtype=np.uint32)
    for j in range(4):
        for byte in range(256):
            tables[j, byte] = _mat_apply(mat, byte << (8 * j))
    return tables


_ZERO_CHUNK_TABLES = _make_zero_chunk_tables()


def _advance_chunk_zeros(state: int) -> int:
    t = _ZERO_CHUNK_TABLES
    return int(
        t[0, state & 0xFF]
        ^ t[1, (state >> 8) & 0xFF]
        ^ t[2, (state >> 16) & 0xFF]
        ^ t[3, (state >> 24) & 0xFF]
    )


def crc32c(data: bytes) -> int:
    """CRC-32C checksum (Castagnoli polynomial) of ``data``."""
    state = 0xFFFFFFFF
    n = len(data)
    if n >= _VECTOR_MIN:
        lanes = n // _CHUNK
        body = np.frombuffer(data, dtype=np.uint8, count=lanes * _CHUNK)
        columns = np.ascontiguousarray(body.reshape(lanes, _CHUNK).T)
        states = np.zeros(lanes, dtype=np.uint32)
        for col in range(_CHUNK):
            states = _NP_TABLE[(states ^ columns[col]) & 0xFF] ^ (states >> 8)
        for raw in states.tolist():
            state = _advance_chunk_zeros(state) ^ raw
        data = data[lanes * _CHUNK :]
    return _crc_raw_scalar(data, state) ^ 0xFFFFFFFF


def worker_budget() -> int:
    """Number of parallel workers: LIDER_WORKERS env var, else CPU count."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is not None:
        n = int(raw)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {raw}")
        return n
    return os.cpu_count() or 1


_pool: ThreadPoolExecutor | None = None
_pool_size = 0


def shared_pool() -> ThreadPoolExecutor:
    """Process-wide thread pool sized to the current worker budget."""
    global _pool, _pool_size
    budget = worker_budget()
    if _pool is None or _pool_size != budget:
        if _pool is not None:
            _pool.shutdown(wait=False)
        _pool = ThreadPoolExecutor(max_workers=budget, thread_name_prefix="lider")
        _pool_size = budget
    return _pool


def resident_bytes() -> int | None:
    """Current RSS in bytes, or None where /proc is unavailable."""
    try:
        with open("/proc/self/statm", encoding="ascii") as fh:
            pages = int(fh.read().split()[1])
        return pages * os.sysconf("SC_PAGE_SIZE")
    except (OSError, ValueError, IndexError):
        return None
