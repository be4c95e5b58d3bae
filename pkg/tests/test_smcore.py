"""Flags, conditions, ALU, warp-stack protocol, barriers, and timing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gksim import kasm, smcore
from gksim.errors import (
    EmptyStackSync,
    InvalidSpCount,
    NotAnAluOpcode,
    ReservedCondCode,
    StackOverflow,
)
from gksim.gpu import GpuConfig, LaunchParams, launch
from gksim.isa import CondCode, Opcode
from gksim.memsys import MemoryImage
from gksim.smcore import (
    EntryType,
    Flags,
    Warp,
    alu_exec,
    eval_cond,
    mask_from_int,
    mask_to_int,
    partition_rows,
    push_sync,
    resolve_branch,
    set_flags,
    sync_pop,
)

import helpers

U32 = st.integers(min_value=0, max_value=0xFFFFFFFF)


# --- row partitioning ------------------------------------------------------------

@pytest.mark.parametrize("sp,rows", [(8, 4), (16, 2), (32, 1)])
def test_partition_rows(sp, rows):
    assert partition_rows(32, sp) == rows


def test_partition_rows_rejects_other_counts():
    for sp in (0, 1, 4, 12, 64):
        with pytest.raises(InvalidSpCount):
            partition_rows(32, sp)


# --- flags ------------------------------------------------------------------------

def test_set_flags_examples():
    assert set_flags(7, 7) == Flags(s=0, z=1, c=1, o=0)
    assert set_flags(5, 7) == Flags(s=1, z=0, c=0, o=0)
    # most negative minus one wraps to 0x7FFFFFFF with signed overflow
    assert set_flags(-2147483648, 1) == Flags(s=0, z=0, c=1, o=1)


@given(U32, U32)
def test_set_flags_against_wide_arithmetic(a, b):
    f = set_flags(a, b)
    diff = (a - b) & 0xFFFFFFFF
    signed = lambda v: v - (1 << 32) if v >> 31 else v
    assert f.z == (1 if diff == 0 else 0)
    assert f.s == diff >> 31
    assert f.c == (1 if a >= b else 0)  # carry = no unsigned borrow
    exact = signed(a) - signed(b)
    assert f.o == (0 if -(1 << 31) <= exact < (1 << 31) else 1)
    assert not (f.z == 1 and f.s == 1)


def test_flags_nibble_round_trip():
    for nib in range(16):
        f = Flags.from_nibble(nib)
        assert f.nibble() == nib


# --- condition codes ---------------------------------------------------------------

def test_eval_cond_constants():
    for nib in range(16):
        f = Flags.from_nibble(nib)
        assert eval_cond(CondCode.TR, f) is True
        assert eval_cond(CondCode.FL, f) is False


def test_eval_cond_examples():
    assert eval_cond(CondCode.LT, Flags(s=1, z=0, c=0, o=0)) is True
    assert eval_cond(CondCode.EQ, Flags(s=0, z=0, c=1, o=0)) is False


def test_eval_cond_reserved():
    with pytest.raises(ReservedCondCode):
        eval_cond(12, Flags(0, 0, 0, 0))
    with pytest.raises(ReservedCondCode):
        eval_cond(31, Flags(0, 0, 0, 0))


@given(st.integers(-(1 << 31), (1 << 31) - 1), st.integers(-(1 << 31), (1 << 31) - 1))
def test_eval_cond_matches_comparisons(a, b):
    """Every signed/unsigned comparison is some condition over set_flags."""
    f = set_flags(a, b)
    au, bu = a & 0xFFFFFFFF, b & 0xFFFFFFFF
    assert eval_cond(CondCode.LT, f) == (a < b)
    assert eval_cond(CondCode.LE, f) == (a <= b)
    assert eval_cond(CondCode.GT, f) == (a > b)
    assert eval_cond(CondCode.GE, f) == (a >= b)
    assert eval_cond(CondCode.EQ, f) == (a == b)
    assert eval_cond(CondCode.NE, f) == (a != b)
    assert eval_cond(CondCode.LO, f) == (au < bu)
    assert eval_cond(CondCode.LS, f) == (au <= bu)
    assert eval_cond(CondCode.HI, f) == (au > bu)
    assert eval_cond(CondCode.HS, f) == (au >= bu)


# --- scalar ALU -----------------------------------------------------------------------

def test_alu_examples():
    assert alu_exec(Opcode.IADD, 3, 4) == 7
    assert alu_exec(Opcode.IMAD, 2, 3, 10) == 16
    assert alu_exec(Opcode.SHR, 0x80000000, 1) == 0x40000000


def test_alu_rejects_non_alu():
    with pytest.raises(NotAnAluOpcode):
        alu_exec(Opcode.LDG, 1, 2)


@given(U32, U32, U32)
def test_alu_against_wide_arithmetic(a, b, c):
    M = 0xFFFFFFFF
    signed = lambda v: v - (1 << 32) if v >> 31 else v
    assert alu_exec(Opcode.IADD, a, b) == (a + b) & M
    assert alu_exec(Opcode.ISUB, a, b) == (a - b) & M
    assert alu_exec(Opcode.IMUL, a, b) == (a * b) & M
    assert alu_exec(Opcode.IMAD, a, b, c) == (a * b + c) & M
    assert alu_exec(Opcode.IMIN, a, b) == min(signed(a), signed(b)) & M
    assert alu_exec(Opcode.IMAX, a, b) == max(signed(a), signed(b)) & M
    assert alu_exec(Opcode.INEG, a) == (-a) & M
    assert alu_exec(Opcode.NOT, a) == a ^ M
    assert alu_exec(Opcode.SHL, a, b) == (a << (b % 32)) & M
    assert alu_exec(Opcode.SHR, a, b) == a >> (b % 32)
    assert alu_exec(Opcode.MOV, a, b) == a
    assert alu_exec(Opcode.MVI, a, b) == b


@given(U32, U32, U32)
@settings(max_examples=300)
def test_vector_alu_matches_scalar_alu(a, b, c):
    """The pipeline's lane-parallel ALU agrees with the scalar definition."""
    av = np.full(32, a, dtype=np.uint32)
    bv = np.full(32, b, dtype=np.uint32)
    cv = np.full(32, c, dtype=np.uint32)
    out = np.zeros(32, dtype=np.uint32)
    for op, fn in smcore.ALU_VEC.items():
        # MVI's operand is always an immediate scalar by construction
        b_arg = np.uint32(b) if op == Opcode.MVI else bv
        fn(av, b_arg, cv if op == Opcode.IMAD else 0, out)
        assert int(out[0]) == alu_exec(op, a, b, c), op.name
        # immediate-operand form for the two-source opcodes
        if op not in (Opcode.IMAD, Opcode.MVI):
            fn(av, np.uint32(b if op not in (Opcode.SHL, Opcode.SHR) else b & 31),
               0, out)
            assert int(out[0]) == alu_exec(op, a, b, 0), f"{op.name} imm"


# --- warp stack protocol --------------------------------------------------------------

def _warp(active=0xFFFFFFFF):
    warp = Warp(warp_id=0, num_regs=4)
    warp.active = mask_from_int(active)
    warp.active_count = int(warp.active.sum())
    return warp


def test_branch_uniform_taken():
    warp = _warp()
    warp.pc = 0x10
    diverged = resolve_branch(warp, mask_from_int(0xFFFFFFFF), 0x40, 0x18)
    assert not diverged
    assert warp.pc == 0x40
    assert warp.stack == []


def test_branch_uniform_not_taken():
    warp = _warp()
    diverged = resolve_branch(warp, mask_from_int(0), 0x40, 0x18)
    assert not diverged
    assert warp.pc == 0x18
    assert warp.stack == []


def test_branch_divergence_splits_masks():
    warp = _warp()
    diverged = resolve_branch(warp, mask_from_int(0x0000FFFF), 0x40, 0x18)
    assert diverged
    assert warp.pc == 0x18
    assert mask_to_int(warp.active) == 0xFFFF0000
    entry = warp.stack[-1]
    assert entry.etype == EntryType.DIV
    assert entry.addr == 0x40
    assert mask_to_int(entry.mask) == 0xFFFFFFFF


def test_sync_pop_div_inverts_within_saved_mask():
    warp = _warp()
    resolve_branch(warp, mask_from_int(0x0000FFFF), 0x40, 0x18)
    sync_pop(warp)
    assert warp.pc == 0x40
    assert mask_to_int(warp.active) == 0x0000FFFF


def test_sync_pop_ssy_restores_saved_mask():
    warp = _warp(0x00FF00FF)
    push_sync(warp, 0x80)
    warp.active = mask_from_int(0x000000FF)
    warp.active_count = 8
    entry = sync_pop(warp)
    assert entry.etype == EntryType.SYNC
    assert warp.pc == 0x80
    assert mask_to_int(warp.active) == 0x00FF00FF


def test_sync_pop_excludes_finished_threads():
    warp = _warp(0x0000000F)
    push_sync(warp, 0x80)
    warp.finished = mask_from_int(0x00000003)
    warp.active = mask_from_int(0x0000000C)
    warp.active_count = 2
    sync_pop(warp)
    assert mask_to_int(warp.active) == 0x0000000C


def test_sync_empty_stack_raises():
    warp = _warp()
    with pytest.raises(EmptyStackSync):
        sync_pop(warp)


def test_stack_overflow_at_configured_depth():
    warp = _warp()
    push_sync(warp, 0, stack_limit=2)
    push_sync(warp, 0, stack_limit=2)
    with pytest.raises(StackOverflow):
        push_sync(warp, 0, stack_limit=2)
    with pytest.raises(StackOverflow):
        resolve_branch(warp, mask_from_int(1), 0x40, 0x18, stack_limit=2)


@given(st.integers(1, 0xFFFFFFFE))
@settings(max_examples=200)
def test_mask_conservation_property(taken_bits):
    """Divergence splits the active set into two disjoint covering halves."""
    warp = _warp()
    taken = mask_from_int(taken_bits)
    resolve_branch(warp, taken, 0x40, 0x18)
    not_taken = mask_to_int(warp.active)
    assert (taken_bits | not_taken) == 0xFFFFFFFF
    assert (taken_bits & not_taken) == 0
    sync_pop(warp)
    assert mask_to_int(warp.active) == taken_bits


# --- pipeline timing -----------------------------------------------------------------

def _timed_run(source, grid, block, config, params=b""):
    trace = []
    image, meta = kasm.assemble(source)
    memory = MemoryImage(config.global_mem_bytes)
    launch(image, LaunchParams(grid, block, params), config, meta=meta,
           memory=memory, trace=trace)
    return trace


def test_single_warp_iadd_retires_at_8_with_8sp():
    trace = _timed_run("IADD R1, R1, R1\nEXIT\n", 1, 32,
                       GpuConfig(sps_per_sm=8))
    t, retire, _, _, name = trace[0]
    assert name == "IADD" and t == 0 and retire == 8  # 5 + (4-1)


def test_single_warp_iadd_retires_at_5_with_32sp():
    trace = _timed_run("IADD R1, R1, R1\nEXIT\n", 1, 32,
                       GpuConfig(sps_per_sm=32))
    t, retire, _, _, name = trace[0]
    assert name == "IADD" and t == 0 and retire == 5


def test_memory_penalty_applies_to_loads():
    cfg = GpuConfig(sps_per_sm=32)
    trace = _timed_run("LDG R1, [A0]\nEXIT\n", 1, 32, cfg)
    t, retire, _, _, name = trace[0]
    assert name == "LDG" and retire - t == 5 + 10
    trace = _timed_run(".shared 64\nLDS R1, [A0]\nEXIT\n", 1, 32, cfg)
    t, retire, _, _, name = trace[0]
    assert name == "LDS" and retire - t == 5 + 2


def test_two_ready_warps_issue_alternating_consecutive_cycles():
    src = "IADD R4, R4, R4\nIADD R4, R4, R4\nIADD R4, R4, R4\nEXIT\n"
    trace = _timed_run(src, 1, 64, GpuConfig(sps_per_sm=32))
    issues = [(t, wid) for t, _, _, wid, _ in trace]
    assert issues[0] == (0, 0)
    assert issues[1] == (1, 1)
    # round-robin continues: each warp re-issues only after its retire
    assert issues[2] == (5, 0)
    assert issues[3] == (6, 1)


def test_issue_front_occupied_for_rows_cycles():
    src = "IADD R4, R4, R4\nEXIT\n"
    trace = _timed_run(src, 1, 64, GpuConfig(sps_per_sm=8))
    issues = [(t, wid) for t, _, _, wid, _ in trace]
    # rows = 4: warp 1 cannot enter the front before cycle 4
    assert issues[0] == (0, 0)
    assert issues[1] == (4, 1)


def test_warp_not_ready_while_in_flight():
    src = "IADD R4, R4, R4\nIADD R4, R4, R4\nEXIT\n"
    trace = _timed_run(src, 1, 32, GpuConfig(sps_per_sm=32))
    issues = [t for t, _, _, _, _ in trace]
    assert issues[0] == 0
    assert issues[1] == 5  # next issue waits for retire, not rows


def test_step_advances_one_cycle():
    image, meta = kasm.assemble("IADD R1, R1, R1\nEXIT\n")
    config = GpuConfig(sps_per_sm=8)
    program = smcore.compile_program(image.code)
    sm = smcore.SmCore(0, program, image, config, MemoryImage(1 << 12),
                       [0], 1, 32)
    sm.set_occupancy(1)
    sm.load_block(0)
    for _ in range(16):  # IADD issues at 0, retires 8; EXIT issues at 8
        sm.step()
        assert not sm.done()
    sm.step()  # EXIT retires at cycle 16
    assert sm.done()
    assert sm.finish_cycle == 16


# --- barriers --------------------------------------------------------------------------

BARRIER_TWO_WARPS = """
.kernel bar2
.regs 8
.shared 256
  SHL R4, R0, 2
  R2A A1, R4
  STS [A1+0], R0
  BAR
  ISETP p0, R0, 32       # warp 0 loads what warp 1's last lane wrote
  MVI R5, 252
  R2A A2, R5
  @p0.LT LDS R6, [A2+0]
  SHL R7, R0, 2
  LDG R5, [A0+0]
  IADD R5, R5, R7
  R2A A3, R5
  @p0.LT STG [A3+0], R6
  EXIT
"""


def test_barrier_two_warps_orders_shared_memory():
    result = helpers.run_kernel(
        BARRIER_TWO_WARPS, 1, 64, helpers.words(0x1000),
        config=GpuConfig(global_mem_bytes=1 << 16))
    out = result.memory.read_words(0x1000, 32)
    assert (out == 63).all()  # shared word 63 was stored by thread 63
    assert result.counters.barriers == 2  # one BAR per warp


def test_single_warp_block_barrier_releases_immediately():
    result = helpers.run_kernel(
        ".shared 32\nBAR\nEXIT\n", 1, 32,
        config=GpuConfig(global_mem_bytes=1 << 16))
    assert result.status == "success"


def test_barrier_makes_early_warp_wait():
    # warp 0 reaches BAR immediately; warp 1 burns cycles first
    src = """
.kernel wait
.regs 6
.shared 32
  ISETP p0, R0, 32
  @p0.LT BRA meet        # warp 0 goes straight to the barrier
  IADD R4, R4, 1
  IADD R4, R4, 1
  IADD R4, R4, 1
  IADD R4, R4, 1
meet:
  BAR
  IADD R5, R5, 1
  EXIT
"""
    trace = _timed_run(src, 1, 64, GpuConfig(sps_per_sm=32))
    bar_retires = {wid: retire for _, retire, _, wid, name in trace
                   if name == "BAR"}
    post_bar_issue = min(t for t, _, _, wid, name in trace
                         if name == "IADD" and wid == 0)
    # warp 0 cannot proceed past the barrier before warp 1's BAR retires
    assert post_bar_issue >= bar_retires[1]
    assert bar_retires[0] < bar_retires[1]


def test_barrier_releases_when_other_warps_finished():
    # warp 1 exits without reaching BAR; warp 0 must still be released
    src = """
.kernel barexit
.regs 6
.shared 32
  ISETP p0, R0, 32
  @p0.GE EXIT
  BAR
  EXIT
"""
    result = helpers.run_kernel(src, 1, 64,
                                config=GpuConfig(global_mem_bytes=1 << 16))
    assert result.status == "success"


def test_exit_runs_stack_drain():
    # all lanes exit inside a divergent region; the warp must still finish
    src = """
.kernel exitdrain
.regs 6
  ISETP p0, R0, 16
  SSY fin
  @p0.LT BRA low
  EXIT
low:
  EXIT
fin:
  EXIT
"""
    result = helpers.run_kernel(src, 1, 32,
                                config=GpuConfig(global_mem_bytes=1 << 16))
    assert result.status == "success"
    ct = result.counters
    assert ct.stack_pushes == ct.stack_pops
