import hashlib
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nvqrng.extract import (
    HashSeed,
    extract_stream,
    extractable_bits,
    hash_block,
    hash_blocks,
    plan_extraction,
    worker_count,
    write_bits,
)
from nvqrng.tags import RawBits

EPS = 2.0**-100
SEED = HashSeed.from_hex("0123456789abcdef" * 4)


def _reference_matrix(seed: bytes, n_block: int, k_block: int) -> list[list[int]]:
    # counter-mode SHA-256 expansion, rows of n_block bits, most significant bit first
    need = k_block * n_block // 8
    stream = b"".join(hashlib.sha256(seed + i.to_bytes(8, "little")).digest() for i in range(need // 32 + 1))
    rows = []
    for i in range(k_block):
        chunk = stream[i * n_block // 8 : (i + 1) * n_block // 8]
        rows.append([(byte >> (7 - j)) & 1 for byte in chunk for j in range(8)])
    return rows


def test_plan_examples():
    assert plan_extraction(55796707904, 0.5559, EPS).k_total == pytest.approx(3.10e10, rel=5e-3)
    assert plan_extraction(55796707904, 3.746e-4, EPS).k_total == pytest.approx(2.09e7, rel=5e-3)
    assert extractable_bits(200, 1.0, EPS) == 0
    empty = plan_extraction(200, 1.0, EPS)
    assert empty.k_total == 0 and empty.block_count == 0


def test_plan_block_sizing():
    plan = plan_extraction(10**6, 0.5553, EPS)
    assert plan.block_count == 10**6 // 8192
    eps_b = EPS / plan.block_count
    assert plan.k_block == math.floor(0.5553 * 8192 - 2 * math.log2(1 / eps_b))
    assert plan.epsilon_block == pytest.approx(2 ** (-(0.5553 * 8192 - plan.k_block) / 2))
    assert plan.block_count * plan.epsilon_block <= EPS
    assert 0 < plan.k_block <= plan.n_block


def test_plan_rejects_bad_input():
    with pytest.raises(ValueError):
        plan_extraction(0, 0.5, EPS)
    with pytest.raises(ValueError):
        plan_extraction(100, 0.5, EPS, n_block=100)
    with pytest.raises(ValueError):
        plan_extraction(100, 0.5, 1.0)


def test_zero_input_hashes_to_zero():
    assert not hash_block(np.zeros(8192, np.uint8), SEED, 100).any()


def test_unit_vector_selects_first_column():
    ref = _reference_matrix(SEED.value, 64, 8)
    e1 = np.zeros(64, np.uint8)
    e1[0] = 1
    assert hash_block(e1, SEED, 8).tolist() == [row[0] for row in ref]


def test_matrix_matches_reference_expansion():
    ref = np.array(_reference_matrix(SEED.value, 256, 16), dtype=np.uint8)
    assert np.array_equal(SEED.matrix_bits(256, 16), ref)
    x = np.random.default_rng(1).integers(0, 2, 256, dtype=np.uint8)
    assert np.array_equal(hash_block(x, SEED, 16), (ref.astype(int) @ x) % 2)


@settings(max_examples=50)
@given(st.binary(min_size=64, max_size=64), st.binary(min_size=64, max_size=64), st.integers(1, 200))
def test_linearity(xa, xb, k):
    a = np.unpackbits(np.frombuffer(xa, np.uint8))
    b = np.unpackbits(np.frombuffer(xb, np.uint8))
    assert np.array_equal(hash_block(a ^ b, SEED, k), hash_block(a, SEED, k) ^ hash_block(b, SEED, k))


def test_size_mismatch_rejected():
    with pytest.raises(ValueError):
        hash_block(np.zeros(128, np.uint8), SEED, 8, n_block=64)
    with pytest.raises(ValueError):
        hash_block(np.zeros(100, np.uint8), SEED, 8)
    plan = plan_extraction(10**5, 0.9, EPS)
    with pytest.raises(ValueError):
        extract_stream(RawBits(np.zeros(100, np.uint8)), plan)


def test_hash_blocks_matches_single_blocks():
    xs = np.random.default_rng(2).integers(0, 2, (5, 512), dtype=np.uint8)
    ys = hash_blocks(xs, SEED, 40)
    for x, y in zip(xs, ys):
        assert np.array_equal(hash_block(x, SEED, 40), y)


def test_output_length_contract():
    bits = RawBits(np.random.default_rng(3).integers(0, 2, 10**6, dtype=np.uint8))
    plan = plan_extraction(len(bits), 0.5559, EPS, seed=SEED)
    y = extract_stream(bits, plan)
    assert len(y) == (10**6 // 8192) * plan.k_block


def test_biased_input_gives_balanced_output():
    rng = np.random.default_rng(4)
    n = 2 * 10**6
    bits = RawBits((rng.random(n) < 0.61).astype(np.uint8))
    plan = plan_extraction(n, -math.log2(0.61), EPS, seed=SEED)
    y = extract_stream(bits, plan)
    assert abs(y.bits.mean() - 0.5) < 3 / (2 * math.sqrt(len(y)))


def test_determinism_and_identical_blocks():
    block = np.random.default_rng(5).integers(0, 2, 8192, dtype=np.uint8)
    bits = RawBits(np.tile(block, 4))
    plan = plan_extraction(len(bits), 0.9, EPS, seed=SEED)
    y = extract_stream(bits, plan).bits.reshape(4, -1)
    assert all(np.array_equal(y[0], row) for row in y)
    assert extract_stream(bits, plan) == extract_stream(bits, plan)
    other = plan_extraction(len(bits), 0.9, EPS, seed=HashSeed.from_int(1))
    assert extract_stream(bits, other) != extract_stream(bits, plan)


def test_threads_and_batches_do_not_change_output(monkeypatch):
    bits = RawBits(np.random.default_rng(6).integers(0, 2, 20 * 8192, dtype=np.uint8))
    plan = plan_extraction(len(bits), 0.6, EPS, seed=SEED)
    ref = extract_stream(bits, plan, batch=1, threads=1)
    assert extract_stream(bits, plan, batch=3, threads=4) == ref
    monkeypatch.setenv("QRNG_THREADS", "2")
    assert worker_count() == 2
    assert extract_stream(bits, plan) == ref
    monkeypatch.setenv("QRNG_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_throughput():
    bits = RawBits(np.random.default_rng(7).integers(0, 2, 2 * 10**6, dtype=np.uint8))
    plan = plan_extraction(len(bits), 0.5559, EPS, seed=SEED)
    extract_stream(RawBits(bits.bits[:8192]), plan, threads=1)  # build the matrix once
    t0 = time.perf_counter()
    extract_stream(bits, plan, threads=1)
    rate = len(bits) / (time.perf_counter() - t0)
    assert rate >= 1e6


def test_write_bits_msb_first(tmp_path):
    p = tmp_path / "out.bin"
    with open(p, "wb") as fh:
        assert write_bits(RawBits.from_string("1000000011"), fh) == 2
    assert p.read_bytes() == b"\x80\xc0"


@pytest.mark.slow
def test_full_entropy_output_is_uniform_on_bytes():
    rng = np.random.default_rng(8)
    n_out = 10**7
    plan = plan_extraction(10**8, 1.0, EPS, seed=SEED)
    blocks = -(-n_out // plan.k_block)
    bits = RawBits(rng.integers(0, 2, blocks * plan.n_block, dtype=np.uint8))
    y = extract_stream(bits, plan).bits[:n_out]
    counts = np.bincount(np.packbits(y), minlength=256)
    assert stats.chisquare(counts).pvalue > 0.01
