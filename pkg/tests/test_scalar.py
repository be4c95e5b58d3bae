"""Differential testing: SIMT pipeline versus the per-thread interpreter."""

import numpy as np

from gksim.gpu import GpuConfig

import helpers
from helpers import assert_equivalent, divergence_tree_source, words


def test_vecadd_equivalence():
    rng = np.random.default_rng(23)
    a = rng.integers(0, 1 << 32, 64, dtype=np.uint32)
    b = rng.integers(0, 1 << 32, 64, dtype=np.uint32)
    assert_equivalent(helpers.VECADD_SOURCE, 2, 32,
                      words(0x1000, 0x2000, 0x3000),
                      placements=[(0x1000, a), (0x2000, b)])


def test_guarded_arithmetic_equivalence():
    src = """
.kernel guards
.regs 8
  ISETP p1, R0, 10
  @p1.LT MVI R4, 111
  @p1.GE MVI R4, 222
  ISETP p2, R0, 20
  @p2.HI IADD R4, R4, 1000
  SHL R5, R0, 2
  LDG R6, [A0+0]
  IADD R6, R6, R5
  R2A A1, R6
  STG [A1+0], R4
  EXIT
"""
    result = assert_equivalent(src, 1, 32, words(0x1000))
    out = result.memory.read_words(0x1000, 32)
    expect = [111 if t < 10 else 222 for t in range(32)]
    expect = [v + 1000 if t > 20 else v for t, v in enumerate(expect)]
    assert list(out) == expect


def test_divergent_loop_equivalence():
    # per-lane trip counts differ; parked lanes must reconverge exactly
    src = """
.kernel varloop
.regs 8
  IADD R4, R0, 1        # trips = tid + 1
  MVI R5, 0
  SSY done
loop:
  IADD R5, R5, R4       # acc += trips (any per-lane value)
  ISUB R4, R4, 1
  ISETP p0, R4, 0
  @p0.NE BRA loop
  SYNC
done:
  SHL R6, R0, 2
  LDG R7, [A0+0]
  IADD R7, R7, R6
  R2A A1, R7
  STG [A1+0], R5
  EXIT
"""
    result = assert_equivalent(src, 1, 32, words(0x1000))
    out = result.memory.read_words(0x1000, 32)
    # acc sums trips, trips-1, ..., 1: a triangular number per lane
    assert list(out) == [(t + 1) * (t + 2) // 2 for t in range(32)]


def test_divergence_tree_equivalence():
    src = divergence_tree_source(depth=5)
    result = assert_equivalent(src, 1, 32, words(0x1000))
    out = result.memory.read_words(0x1000, 32)
    assert list(out) == list(range(32))


def test_nested_guarded_exit_equivalence():
    src = """
.kernel exits
.regs 8
  ISETP p0, R0, 8
  @p0.LT EXIT           # lanes 0..7 leave immediately
  SHL R4, R0, 2
  LDG R5, [A0+0]
  IADD R5, R5, R4
  R2A A1, R5
  STG [A1+0], R0
  EXIT
"""
    result = assert_equivalent(src, 1, 32, words(0x1000))
    out = result.memory.read_words(0x1000, 32)
    assert (out[:8] == 0).all()
    assert list(out[8:]) == list(range(8, 32))


def test_barrier_shared_memory_equivalence():
    # block-wide reversal through shared memory with two warps
    src = """
.kernel reverse
.regs 10
.shared 256
  SHL R4, R0, 2
  R2A A1, R4
  STS [A1+0], R0
  BAR
  MVI R5, 63
  ISUB R5, R5, R0        # partner = 63 - tid
  SHL R5, R5, 2
  R2A A2, R5
  LDS R6, [A2+0]
  LDG R7, [A0+0]
  IADD R7, R7, R4
  R2A A3, R7
  STG [A3+0], R6
  EXIT
"""
    result = assert_equivalent(src, 1, 64, words(0x1000))
    out = result.memory.read_words(0x1000, 64)
    assert list(out) == list(range(63, -1, -1))


def test_multi_block_equivalence_multiple_shapes():
    rng = np.random.default_rng(29)
    a = rng.integers(0, 1 << 32, 128, dtype=np.uint32)
    b = rng.integers(0, 1 << 32, 128, dtype=np.uint32)
    for num_sms in (1, 2):
        for sps in (8, 32):
            assert_equivalent(
                helpers.VECADD_SOURCE, 4, 32, words(0x1000, 0x2000, 0x3000),
                placements=[(0x1000, a), (0x2000, b)],
                config=GpuConfig(num_sms=num_sms, sps_per_sm=sps,
                                 global_mem_bytes=1 << 18))
