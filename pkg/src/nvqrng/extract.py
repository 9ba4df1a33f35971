"""Two-universal hashing over GF(2): planning, seeded matrices and blockwise extraction.

Matrix expansion rule. For a block of n input bits and k output bits the
seed is stretched to k * n / 8 bytes as

    SHA-256(seed || counter as u64 little-endian), counter = 0, 1, 2, ...

concatenated and truncated. Row i of the matrix is bytes
[i * n/8, (i+1) * n/8) of that stream, bits taken most-significant first,
so matrix entry (i, j) is bit j of row i. Output bit i is the parity of
row i AND x.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tags import RawBits

DEFAULT_BLOCK_BITS = 8192


def _neg_log2(epsilon: float) -> float:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return -math.log2(epsilon)


@dataclass(frozen=True)
class HashSeed:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 32:
            raise ValueError("hash seed must be exactly 256 bits")

    @classmethod
    def from_int(cls, n: int) -> "HashSeed":
        return cls(int(n).to_bytes(32, "big"))

    @classmethod
    def from_hex(cls, text: str) -> "HashSeed":
        return cls(bytes.fromhex(text.removeprefix("0x")))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.value).hexdigest()[:16]

    def expand(self, n_bytes: int) -> bytes:
        out = bytearray()
        counter = 0
        while len(out) < n_bytes:
            out += hashlib.sha256(self.value + struct.pack("<Q", counter)).digest()
            counter += 1
        return bytes(out[:n_bytes])

    def matrix_words(self, n_block: int, k_block: int) -> np.ndarray:
        """Rows as uint64 words, shape (k_block, n_block // 64)."""
        return _matrix_words(self.value, n_block, k_block)

    def matrix_bits(self, n_block: int, k_block: int) -> np.ndarray:
        raw = np.frombuffer(self.expand(k_block * n_block // 8), dtype=np.uint8)
        return np.unpackbits(raw).reshape(k_block, n_block)


@lru_cache(maxsize=8)
def _matrix_words(seed: bytes, n_block: int, k_block: int) -> np.ndarray:
    if n_block % 64:
        raise ValueError("block length must be a multiple of 64 bits")
    raw = HashSeed(seed).expand(k_block * n_block // 8)
    m = np.frombuffer(raw, dtype=np.uint64).reshape(k_block, n_block // 64)
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class ExtractionPlan:
    n_total: int
    h: float  # min-entropy per raw bit
    epsilon_total: float
    k_total: int  # output of one hash over the whole input
    n_block: int
    k_block: int
    block_count: int
    epsilon_block: float  # achieved per-block deviation
    seed: HashSeed = field(default_factory=lambda: HashSeed(bytes(32)))

    @property
    def blockwise_output(self) -> int:
        return self.block_count * self.k_block

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "h": self.h,
            "epsilon_total": self.epsilon_total,
            "k_total": self.k_total,
            "n_block": self.n_block,
            "k_block": self.k_block,
            "block_count": self.block_count,
            "epsilon_block": self.epsilon_block,
            "blockwise_output": self.blockwise_output,
            "seed_fingerprint": self.seed.fingerprint,
        }


def extractable_bits(n: int, h: float, epsilon: float) -> int:
    """floor(h * n - 2 log2(1/epsilon)), clipped at zero."""
    if n < 0 or not 0 <= h <= 1:
        raise ValueError("need n >= 0 and 0 <= h <= 1")
    return max(0, math.floor(h * n - 2.0 * _neg_log2(epsilon)))


def plan_extraction(
    n: int,
    h: float,
    epsilon: float,
    n_block: int = DEFAULT_BLOCK_BITS,
    seed: HashSeed | None = None,
) -> ExtractionPlan:
    """Size the hash for n raw bits with h bits of min-entropy each.

    The per-block budget is epsilon / block_count so the union over all
    blocks stays within epsilon. A plan with k_block = 0 extracts nothing.
    """
    if n < 1:
        raise ValueError("need at least one raw bit")
    if n_block <= 0 or n_block % 64:
        raise ValueError("block length must be a positive multiple of 64")
    k_total = extractable_bits(n, h, epsilon)
    blocks = n // n_block
    if blocks:
        eps_b = epsilon / blocks
        k_block = max(0, min(n_block, math.floor(h * n_block - 2.0 * _neg_log2(eps_b))))
    else:
        k_block = 0
    achieved = 2.0 ** (-(h * n_block - k_block) / 2) if k_block else 0.0
    return ExtractionPlan(
        n_total=n,
        h=h,
        epsilon_total=epsilon,
        k_total=k_total,
        n_block=n_block,
        k_block=k_block,
        block_count=blocks if k_block else 0,
        epsilon_block=achieved,
        seed=seed if seed is not None else HashSeed(bytes(32)),
    )


def _pack_blocks(bits: np.ndarray, n_block: int) -> np.ndarray:
    # bit j of a block lands at the same position as column j of the matrix
    b = np.asarray(bits, dtype=np.uint8).reshape(-1, n_block)
    return np.packbits(b, axis=1).view(np.uint64)


def _parity_rows(matrix: np.ndarray, xw: np.ndarray) -> np.ndarray:
    """Parity of (row AND x) for every row and every block in xw."""
    acc = np.bitwise_xor.reduce(matrix[None, :, :] & xw[:, None, :], axis=2)
    return (np.bitwise_count(acc) & 1).astype(np.uint8)


def hash_block(x, seed: HashSeed, k_block: int, n_block: int | None = None) -> np.ndarray:
    """y = M x over GF(2) for one block of 0/1 values."""
    x = np.asarray(x, dtype=np.uint8)
    if x.ndim != 1:
        raise ValueError("input block must be one-dimensional")
    if n_block is not None and len(x) != n_block:
        raise ValueError(f"block has {len(x)} bits, plan expects {n_block}")
    m = seed.matrix_words(len(x), k_block)
    return _parity_rows(m, _pack_blocks(x, len(x)))[0]


def hash_blocks(xs, seed: HashSeed, k_block: int) -> np.ndarray:
    """Row-wise hash_block over a (blocks, n_block) array of 0/1 values."""
    xs = np.asarray(xs, dtype=np.uint8)
    if xs.ndim != 2:
        raise ValueError("expected a 2-D array of blocks")
    m = seed.matrix_words(xs.shape[1], k_block)
    xw = _pack_blocks(xs, xs.shape[1])
    return np.concatenate([_parity_rows(m, xw[i : i + 1]) for i in range(len(xw))]).reshape(-1, k_block)


def worker_count() -> int:
    env = os.environ.get("QRNG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"QRNG_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def extract_stream(bits: RawBits, plan: ExtractionPlan, batch: int = 1, threads: int | None = None) -> RawBits:
    """Hash consecutive blocks with the plan's seed; a trailing partial block is dropped."""
    n = len(bits)
    if n < plan.n_block:
        raise ValueError(f"need at least one block of {plan.n_block} bits, got {n}")
    blocks = n // plan.n_block
    if plan.k_block == 0:
        return RawBits(np.zeros(0, np.uint8))
    m = plan.seed.matrix_words(plan.n_block, plan.k_block)
    xw = _pack_blocks(bits.bits[: blocks * plan.n_block], plan.n_block)
    spans = [(s, min(s + batch, blocks)) for s in range(0, blocks, batch)]
    threads = threads or worker_count()
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda se: _parity_rows(m, xw[se[0] : se[1]]), spans))
    else:
        parts = [_parity_rows(m, xw[s:e]) for s, e in spans]
    return RawBits(np.concatenate(parts).reshape(-1))


def write_bits(bits: RawBits, fh) -> int:
    """Write packed bits, most significant first; the last byte is zero-padded."""
    data = bits.packed()
    fh.write(data)
    return len(data)
