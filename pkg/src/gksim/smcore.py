"""One streaming multiprocessor: warps, predicates, ALU, divergence, timing.

Execution model
---------------
A warp is 32 threads sharing one PC and one active-lane mask.  Guarded
instructions mask off lanes whose predicate condition is false for that
instruction only.  Branch divergence is handled with a per-warp stack of
{address, type, mask} entries: a divergent BRA pushes a DIV entry holding
the taken-path address and the pre-branch mask, then runs the not-taken
lanes first; SSY pushes a SYNC entry holding the reconvergence point.
SYNC pops the stack: a DIV entry flips execution to the taken lanes, a
SYNC entry restores the pre-divergence mask minus finished threads.
Guards on SSY/SYNC/BAR are ignored; they act on the whole warp.

Timing model
------------
Cycle-approximate, not RTL-faithful.  The issue stage picks the next Ready
warp in round-robin order by warp id and holds the pipeline front for
ceil(32 / num_sp) consecutive cycles (one row per cycle).  A warp
instruction retires 5 + (rows - 1) + mem_penalty cycles after issue and
the warp is not Ready in between, so per-warp execution never overlaps.
Architectural effects are computed when the instruction enters the
pipeline and warp state transitions (Ready/AtBarrier/Finished) happen at
retire; because a warp's own state cannot change while it is in flight
and same-space memory penalties are uniform, this is observably identical
to committing everything at retire.  The simulator advances event to
event, which leaves cycle numbering exactly as if it stepped every cycle.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

from . import isa, memsys
from .errors import (
    Deadlock,
    EmptyStackSync,
    InvalidPc,
    InvalidSpCount,
    NotAnAluOpcode,
    OutOfBounds,
    ReservedCondCode,
    RuntimeFault,
    StackOverflow,
    UnsupportedInstruction,
)
from .isa import CondCode, Opcode

WARP_SIZE = 32
WARPS_PER_SM = 24
THREADS_PER_SM = 768
REGISTERS_PER_SM = 8192
BLOCKS_PER_SM = 8
PIPELINE_DEPTH = 5

_U32MASK = 0xFFFFFFFF
_U31 = np.uint32(31)

# round-robin visit order for each last-issued warp id
_SCAN_ORDER = tuple(
    tuple((rr + 1 + i) % WARPS_PER_SM for i in range(WARPS_PER_SM))
    for rr in range(WARPS_PER_SM)
)


def partition_rows(threads_per_warp: int, num_sp: int) -> int:
    """Issue rows per warp instruction: ceil(threads / scalar processors)."""
    if num_sp not in (8, 16, 32):
        raise InvalidSpCount(f"num_sp={num_sp} (must be 8, 16, or 32)")
    return -(-threads_per_warp // num_sp)


# --- predicate flags and condition codes --------------------------------------

class Flags(NamedTuple):
    """Comparison flag nibble: sign, zero, carry, overflow."""

    s: int
    z: int
    c: int
    o: int

    def nibble(self) -> int:
        return (self.s << 3) | (self.z << 2) | (self.c << 1) | self.o

    @classmethod
    def from_nibble(cls, value: int) -> "Flags":
        return cls((value >> 3) & 1, (value >> 2) & 1, (value >> 1) & 1, value & 1)


def set_flags(a: int, b: int) -> Flags:
    """Flags of the 32-bit two's-complement subtraction a - b.

    Carry is 1 when no unsigned borrow occurred (a >= b unsigned).
    """
    a &= _U32MASK
    b &= _U32MASK
    d = (a - b) & _U32MASK
    s = d >> 31
    z = 1 if d == 0 else 0
    c = 1 if a >= b else 0
    o = ((a ^ b) & (a ^ d)) >> 31
    return Flags(s, z, c, o)


def eval_cond(cond, flags: Flags) -> bool:
    """Condition-code truth for one flag nibble."""
    try:
        cond = CondCode(cond)
    except ValueError:
        raise ReservedCondCode(f"condition code {cond}") from None
    s, z, c, o = flags.s, flags.z, flags.c, flags.o
    lt = s ^ o
    if cond == CondCode.FL:
        return False
    if cond == CondCode.LT:
        return bool(lt)
    if cond == CondCode.EQ:
        return bool(z)
    if cond == CondCode.LE:
        return bool(z or lt)
    if cond == CondCode.GT:
        return not z and not lt
    if cond == CondCode.NE:
        return not z
    if cond == CondCode.GE:
        return not lt
    if cond == CondCode.TR:
        return True
    if cond == CondCode.LO:
        return not c
    if cond == CondCode.LS:
        return bool((not c) or z)
    if cond == CondCode.HI:
        return bool(c and not z)
    return bool(c)  # HS


def _build_cond_table() -> np.ndarray:
    table = np.zeros((len(CondCode), 16), dtype=bool)
    for cond in CondCode:
        for nib in range(16):
            table[cond, nib] = eval_cond(cond, Flags.from_nibble(nib))
    return table


# Lookup table indexed by [condition, flag nibble]; the hardware analogue
# of evaluating a guard against a predicate register.
COND_TABLE = _build_cond_table()


# --- scalar ALU ------------------------------------------------------------------

def alu_exec(op: Opcode, a: int, b: int = 0, c: int = 0) -> int:
    """32-bit wrapping integer ALU; a/b/c are src1/src2/src3 values.

    For MVI the resolved src2 value (the immediate) arrives in b.
    """
    a &= _U32MASK
    b &= _U32MASK
    c &= _U32MASK
    if op == Opcode.IADD:
        return (a + b) & _U32MASK
    if op == Opcode.ISUB:
        return (a - b) & _U32MASK
    if op == Opcode.IMUL:
        return (a * b) & _U32MASK
    if op == Opcode.IMAD:
        return (a * b + c) & _U32MASK
    if op in (Opcode.IMIN, Opcode.IMAX):
        sa = a - (1 << 32) if a >> 31 else a
        sb = b - (1 << 32) if b >> 31 else b
        res = min(sa, sb) if op == Opcode.IMIN else max(sa, sb)
        return res & _U32MASK
    if op == Opcode.INEG:
        return (-a) & _U32MASK
    if op == Opcode.AND:
        return a & b
    if op == Opcode.OR:
        return a | b
    if op == Opcode.XOR:
        return a ^ b
    if op == Opcode.NOT:
        return (~a) & _U32MASK
    if op == Opcode.SHL:
        return (a << (b & 31)) & _U32MASK
    if op == Opcode.SHR:
        return a >> (b & 31)
    if op == Opcode.MOV:
        return a
    if op == Opcode.MVI:
        return b
    raise NotAnAluOpcode(op.name)


# Vectorized ALU used by the pipeline, writing into a caller-provided
# destination row (a register row, or a scratch row for masked commits).
# a is a 32-lane uint32 view, b a lane array or uint32 scalar, c as b.

def _as_i32(b):
    if isinstance(b, np.ndarray):
        return b.view(np.int32)
    return np.int32(np.uint32(b))


def _v_imad(a, b, c, out):
    # two steps so dst may alias the accumulator operand
    t = a * b
    np.add(t, c, out=out)


def _v_imin(a, b, c, out):
    np.minimum(a.view(np.int32), _as_i32(b), out=out.view(np.int32))


def _v_imax(a, b, c, out):
    np.maximum(a.view(np.int32), _as_i32(b), out=out.view(np.int32))


def _v_shl(a, b, c, out):
    if isinstance(b, np.ndarray):
        b = b & _U31
    np.left_shift(a, b, out=out)


def _v_shr(a, b, c, out):
    if isinstance(b, np.ndarray):
        b = b & _U31
    np.right_shift(a, b, out=out)


def _v_mvi(a, b, c, out):
    out.fill(b)


ALU_VEC = {
    Opcode.IADD: lambda a, b, c, out: np.add(a, b, out=out),
    Opcode.ISUB: lambda a, b, c, out: np.subtract(a, b, out=out),
    Opcode.IMUL: lambda a, b, c, out: np.multiply(a, b, out=out),
    Opcode.IMAD: _v_imad,
    Opcode.IMIN: _v_imin,
    Opcode.IMAX: _v_imax,
    Opcode.INEG: lambda a, b, c, out: np.subtract(np.uint32(0), a, out=out),
    Opcode.AND: lambda a, b, c, out: np.bitwise_and(a, b, out=out),
    Opcode.OR: lambda a, b, c, out: np.bitwise_or(a, b, out=out),
    Opcode.XOR: lambda a, b, c, out: np.bitwise_xor(a, b, out=out),
    Opcode.NOT: lambda a, b, c, out: np.invert(a, out=out),
    Opcode.SHL: _v_shl,
    Opcode.SHR: _v_shr,
    Opcode.MOV: lambda a, b, c, out: np.copyto(out, a),
    Opcode.MVI: _v_mvi,
}


# --- warps and the divergence stack ------------------------------------------------

class EntryType(IntEnum):
    """2-bit stack entry type; the other two codes are reserved."""

    DIV = 0
    SYNC = 1


class WarpState(IntEnum):
    READY = 0
    IN_FLIGHT = 1
    AT_BARRIER = 2
    FINISHED = 3


@dataclass
class WarpStackEntry:
    addr: int
    etype: EntryType
    mask: np.ndarray  # 32 bools, nonzero for every pushed entry


def mask_from_int(bits: int) -> np.ndarray:
    return np.array([(bits >> i) & 1 == 1 for i in range(WARP_SIZE)], dtype=bool)


def mask_to_int(mask: np.ndarray) -> int:
    bits = 0
    for i in range(WARP_SIZE):
        if mask[i]:
            bits |= 1 << i
    return bits


class Warp:
    """Per-warp architectural and scheduling state."""

    __slots__ = (
        "warp_id", "block", "warp_in_block", "pc", "active", "finished",
        "alloc", "stack", "state", "busy_until", "pending", "active_count",
        "max_depth", "regs", "aregs", "preds", "reg_rows", "areg_rows",
        "pred_rows",
    )

    def __init__(self, warp_id: int, num_regs: int, alloc_lanes: int = WARP_SIZE,
                 pc: int = 0, block=None, warp_in_block: int = 0):
        self.warp_id = warp_id
        self.block = block
        self.warp_in_block = warp_in_block
        self.pc = pc
        self.alloc = np.zeros(WARP_SIZE, dtype=bool)
        self.alloc[:alloc_lanes] = True
        self.active = self.alloc.copy()
        self.finished = np.zeros(WARP_SIZE, dtype=bool)
        self.stack: list[WarpStackEntry] = []
        self.state = WarpState.READY
        self.busy_until = 0
        self.pending = None
        self.active_count = alloc_lanes
        self.max_depth = 0
        self.regs = np.zeros((max(num_regs, 1), WARP_SIZE), dtype=np.uint32)
        self.aregs = np.zeros((isa.NUM_ADDR_REGS, WARP_SIZE), dtype=np.uint32)
        self.preds = np.zeros((isa.NUM_PREDICATES, WARP_SIZE), dtype=np.uint8)
        self.reg_rows = list(self.regs)
        self.areg_rows = list(self.aregs)
        self.pred_rows = list(self.preds)


def _push(warp: Warp, entry: WarpStackEntry, limit: int):
    if len(warp.stack) + 1 > limit:
        raise StackOverflow(f"stack depth limit {limit} exceeded")
    warp.stack.append(entry)
    if len(warp.stack) > warp.max_depth:
        warp.max_depth = len(warp.stack)


def resolve_branch(warp: Warp, taken: np.ndarray, target: int,
                   fallthrough: int, stack_limit: int = 32) -> bool:
    """Apply a (possibly divergent) branch to the warp; True if it diverged.

    Uniform taken jumps to the target, uniform not-taken falls through.
    On divergence the taken address and the pre-branch active mask are
    pushed as a DIV entry and the not-taken lanes execute first.
    """
    taken_count = int(taken.sum())
    if taken_count == warp.active_count:
        warp.pc = target
        return False
    if taken_count == 0:
        warp.pc = fallthrough
        return False
    _push(warp, WarpStackEntry(target, EntryType.DIV, warp.active.copy()),
          stack_limit)
    warp.active = warp.active & ~taken
    warp.active_count -= taken_count
    warp.pc = fallthrough
    return True


def push_sync(warp: Warp, target: int, stack_limit: int = 32):
    """SSY: record the reconvergence point with the current active mask."""
    _push(warp, WarpStackEntry(target, EntryType.SYNC, warp.active.copy()),
          stack_limit)


def sync_pop(warp: Warp) -> WarpStackEntry:
    """SYNC: pop one entry and switch or restore the active mask.

    DIV entries invert within the saved pre-branch mask, which yields
    exactly the not-yet-executed taken lanes; SYNC entries restore the
    mask recorded at SSY.  Threads that finished meanwhile stay off.
    """
    if not warp.stack:
        raise EmptyStackSync("SYNC with empty warp stack")
    entry = warp.stack.pop()
    if entry.etype == EntryType.DIV:
        warp.active = entry.mask & ~warp.active & ~warp.finished
    else:
        warp.active = entry.mask & ~warp.finished
    warp.active_count = int(warp.active.sum())
    warp.pc = entry.addr
    return entry


# --- instruction executors -----------------------------------------------------------
# Module-level functions dispatched through a per-instruction pointer;
# each updates warp.pc itself.  Signature:
#   fn(sm, warp, op, exec_mask, exec_count, full)

def _x_alu(sm, warp, op, exec_mask, exec_count, full):
    if op.is_mul and not sm.mad_enabled:
        raise UnsupportedInstruction(
            f"{op.opcode.name} (multiplier removed by configuration)"
        )
    rows = warp.reg_rows
    a = rows[op.src1]
    b = op.imm_u if op.imm_u is not None else rows[op.src2]
    c = rows[op.src3] if op.is_mad else 0
    if full:
        op.alu(a, b, c, rows[op.dst])
    elif exec_count:
        scratch = sm.scratch
        op.alu(a, b, c, scratch)
        rows[op.dst][exec_mask] = scratch[exec_mask]
    warp.pc = op.next_pc


def _x_setp(sm, warp, op, exec_mask, exec_count, full):
    rows = warp.reg_rows
    a = rows[op.src1]
    b = op.imm_u if op.imm_u is not None else rows[op.src2]
    d = a - b
    s = (d >> _U31).astype(np.uint8)
    z = (d == 0).astype(np.uint8)
    c = (a >= b).astype(np.uint8)
    o = (((a ^ b) & (a ^ d)) >> _U31).astype(np.uint8)
    nib = (s << 3) | (z << 2) | (c << 1) | o
    dst = warp.pred_rows[op.dst]
    if full:
        dst[:] = nib
    elif exec_count:
        dst[exec_mask] = nib[exec_mask]
    warp.pc = op.next_pc


def _x_load_global(sm, warp, op, exec_mask, exec_count, full):
    addrs = warp.areg_rows[op.src1]
    if op.imm_u is not None:
        addrs = addrs + op.imm_u
    sm.ct.global_loads += exec_count
    if full:
        # bitwise OR upper-bounds every lane address, so one reduce
        # screens both alignment and range; hits fall to a precise check
        r = int(np.bitwise_or.reduce(addrs))
        if (r & 3) or r > sm.gmem_limit:
            memsys._check_lanes(addrs, None, sm.gmem.size, "global")
        warp.reg_rows[op.dst][:] = sm.gmem.words[addrs >> 2]
    elif exec_count:
        vals = sm.gmem.load(addrs, exec_mask)
        warp.reg_rows[op.dst][exec_mask] = vals[exec_mask]
    warp.pc = op.next_pc


def _x_store_global(sm, warp, op, exec_mask, exec_count, full):
    addrs = warp.areg_rows[op.src1]
    if op.imm_u is not None:
        addrs = addrs + op.imm_u
    sm.ct.global_stores += exec_count
    if full:
        r = int(np.bitwise_or.reduce(addrs))
        if (r & 3) or r > sm.gmem_limit:
            memsys._check_lanes(addrs, None, sm.gmem.size, "global")
        sm.gmem.words[addrs >> 2] = warp.reg_rows[op.dst]
    elif exec_count:
        sm.gmem.store(addrs, warp.reg_rows[op.dst], exec_mask)
    warp.pc = op.next_pc


def _x_load_shared(sm, warp, op, exec_mask, exec_count, full):
    addrs = warp.areg_rows[op.src1]
    if op.imm_u is not None:
        addrs = addrs + op.imm_u
    sm.ct.shared_loads += exec_count
    part = warp.block.partition
    if part is None:
        raise OutOfBounds("shared access but kernel declares 0 shared bytes")
    if full:
        warp.reg_rows[op.dst][:] = part.load(addrs)
    elif exec_count:
        warp.reg_rows[op.dst][exec_mask] = part.load(addrs, exec_mask)[exec_mask]
    warp.pc = op.next_pc


def _x_store_shared(sm, warp, op, exec_mask, exec_count, full):
    addrs = warp.areg_rows[op.src1]
    if op.imm_u is not None:
        addrs = addrs + op.imm_u
    sm.ct.shared_stores += exec_count
    part = warp.block.partition
    if part is None:
        raise OutOfBounds("shared access but kernel declares 0 shared bytes")
    if exec_count:
        part.store(addrs, warp.reg_rows[op.dst], None if full else exec_mask)
    warp.pc = op.next_pc


def _x_r2a(sm, warp, op, exec_mask, exec_count, full):
    src = warp.reg_rows[op.src1]
    dst = warp.areg_rows[op.dst]
    if full:
        dst[:] = src
    elif exec_count:
        dst[exec_mask] = src[exec_mask]
    warp.pc = op.next_pc


def _x_a2r(sm, warp, op, exec_mask, exec_count, full):
    src = warp.areg_rows[op.src1]
    dst = warp.reg_rows[op.dst]
    if full:
        dst[:] = src
    elif exec_count:
        dst[exec_mask] = src[exec_mask]
    warp.pc = op.next_pc


def _x_bra(sm, warp, op, taken, taken_count, full):
    pre_active = warp.active.copy() if sm.check_invariants else None
    pre_count = warp.active_count
    diverged = resolve_branch(warp, taken, op.target, op.next_pc, sm.stack_limit)
    if diverged:
        sm.ct.divergences += 1
        sm.ct.stack_pushes += 1
        if sm.check_invariants:
            not_taken = pre_active & ~taken
            assert not (taken & not_taken).any(), "taken/not-taken overlap"
            assert ((taken | not_taken) == pre_active).all(), (
                "mask conservation violated at divergent branch"
            )
            assert (warp.active == not_taken).all()
            assert warp.active_count == pre_count - taken_count


def _x_ssy(sm, warp, op, exec_mask, exec_count, full):
    push_sync(warp, op.target, sm.stack_limit)
    sm.ct.stack_pushes += 1
    warp.pc = op.next_pc


def _x_sync(sm, warp, op, exec_mask, exec_count, full):
    entry = sync_pop(warp)
    sm.ct.stack_pops += 1
    if sm.check_invariants and entry.etype == EntryType.SYNC:
        expect = entry.mask & ~warp.finished
        assert (warp.active == expect).all(), (
            "reconvergence restoration violated at SYNC"
        )
    _settle(sm, warp)


def _x_bar(sm, warp, op, exec_mask, exec_count, full):
    sm.ct.barriers += 1
    warp.pc = op.next_pc
    warp.pending = "bar"


def _x_exit(sm, warp, op, exec_mask, exec_count, full):
    if exec_count:
        warp.finished = warp.finished | exec_mask
        warp.active = warp.active & ~warp.finished
        warp.active_count = int(warp.active.sum())
    warp.pc = op.next_pc
    _settle(sm, warp)


def _settle(sm, warp):
    """Drain the stack while no lane is active; finish when it empties."""
    while warp.active_count == 0 and warp.stack:
        sync_pop(warp)
        sm.ct.stack_pops += 1
    if warp.active_count == 0:
        warp.pending = "finish"


_EXEC_BY_SHAPE = {
    "alu3": _x_alu,
    "alu2": _x_alu,
    "mvi": _x_alu,
    "imad": _x_alu,
    "setp": _x_setp,
    "r2a": _x_r2a,
    "a2r": _x_a2r,
}

_EXEC_BY_OPCODE = {
    Opcode.LDG: _x_load_global,
    Opcode.STG: _x_store_global,
    Opcode.LDS: _x_load_shared,
    Opcode.STS: _x_store_shared,
    Opcode.BRA: _x_bra,
    Opcode.SSY: _x_ssy,
    Opcode.SYNC: _x_sync,
    Opcode.BAR: _x_bar,
    Opcode.EXIT: _x_exit,
}


# --- compiled program ----------------------------------------------------------------

class _Op:
    """One pre-decoded instruction with everything the hot loop needs."""

    __slots__ = (
        "instr", "opcode", "opcode_i", "kind", "length", "next_pc", "penalty",
        "guarded", "greg", "cond_row", "dst", "src1", "src2", "src3", "imm_u",
        "target", "reads", "writes_reg", "fn", "alu", "is_mul", "is_mad",
    )

    def __init__(self, offset: int, instr: isa.Instruction, length: int,
                 gpen: int, spen: int):
        shape = isa.SHAPES[instr.opcode]
        self.instr = instr
        self.opcode = instr.opcode
        self.opcode_i = int(instr.opcode)
        self.kind = shape
        self.length = length
        self.next_pc = offset + length
        self.guarded = instr.guard_cond != CondCode.TR
        self.greg = instr.guard_reg
        self.cond_row = COND_TABLE[instr.guard_cond]
        self.dst = instr.dst
        self.src1 = instr.src1
        self.src2 = instr.src2
        self.src3 = instr.src3
        imm = instr.imm
        if imm == 0 and instr.opcode in isa.LOAD_OPCODES | isa.STORE_OPCODES:
            imm = None  # zero offsets skip the address add
        elif imm is not None and instr.opcode in (Opcode.SHL, Opcode.SHR):
            imm &= 31  # shift amounts are mod 32; pre-mask immediates
        self.imm_u = None if imm is None else np.uint32(imm)
        self.target = instr.imm if shape == "branch" else None
        self.is_mul = instr.opcode in isa.MULTIPLY_OPCODES
        self.is_mad = instr.opcode == Opcode.IMAD
        self.alu = ALU_VEC.get(instr.opcode)
        self.fn = _EXEC_BY_OPCODE.get(instr.opcode) or _EXEC_BY_SHAPE[shape]
        if instr.opcode in isa.GLOBAL_MEM_OPCODES:
            self.penalty = gpen
        elif instr.opcode in isa.SHARED_MEM_OPCODES:
            self.penalty = spen
        else:
            self.penalty = 0
        # general-purpose register file traffic per active lane
        if shape in ("alu3", "setp"):
            self.reads = 1 if instr.imm is not None else 2
        elif shape in ("alu2", "r2a", "store"):
            self.reads = 1
        elif shape == "imad":
            self.reads = 3
        else:
            self.reads = 0
        self.writes_reg = 1 if shape in ("alu3", "alu2", "mvi", "imad", "load", "a2r") else 0


def compile_program(code: bytes, entry: int = 0,
                    global_penalty: int = 10, shared_penalty: int = 2) -> dict:
    """Pre-decode a kernel into an offset-indexed executable form."""
    program = {}
    for offset, instr, length in isa.walk(code, entry):
        program[offset] = _Op(offset, instr, length, global_penalty, shared_penalty)
    return program


# --- block context -----------------------------------------------------------------

class BlockCtx:
    __slots__ = (
        "block_id", "warps", "total_warps", "finished_warps", "arrived",
        "partition", "partition_slot", "threads",
    )

    def __init__(self, block_id: int, threads: int):
        self.block_id = block_id
        self.threads = threads
        self.warps: list[Warp] = []
        self.total_warps = 0
        self.finished_warps = 0
        self.arrived = 0
        self.partition = None
        self.partition_slot = 0


class SmCounters:
    """Raw per-SM event tallies; merged into metrics.Counters at the end."""

    __slots__ = (
        "warp_instructions", "thread_instructions", "global_loads",
        "global_stores", "shared_loads", "shared_stores", "register_reads",
        "register_writes", "stack_pushes", "stack_pops", "barriers",
        "divergences", "pred_idle_lanes", "histogram", "warp_depths",
    )

    def __init__(self):
        self.warp_instructions = 0
        self.thread_instructions = 0
        self.global_loads = 0
        self.global_stores = 0
        self.shared_loads = 0
        self.shared_stores = 0
        self.register_reads = 0
        self.register_writes = 0
        self.stack_pushes = 0
        self.stack_pops = 0
        self.barriers = 0
        self.divergences = 0
        self.pred_idle_lanes = 0
        self.histogram = [0] * (len(Opcode) + 1)
        self.warp_depths = {}


class SmCore:
    """Event-driven model of one SM executing its assigned thread blocks.

    Two event queues drive the model: plain retirements only flip a warp
    back to Ready (they coalesce with the next issue opportunity), while
    barrier and exit retirements reshape scheduling state and fire at
    their exact retire cycle.
    """

    def __init__(self, sm_index: int, program: dict, image, config, gmem,
                 block_queue, grid_dim: int, block_dim: int,
                 collect_registers: bool = False, check_invariants: bool = False,
                 trace=None):
        self.sm_index = sm_index
        self.program = program
        self.image = image
        self.config = config
        self.gmem = gmem
        self.gmem_limit = gmem.size - 4
        self.scratch = np.empty(WARP_SIZE, dtype=np.uint32)
        self.rows = partition_rows(WARP_SIZE, config.sps_per_sm)
        self.base_latency = PIPELINE_DEPTH + (self.rows - 1)
        self.stack_limit = config.warp_stack_depth
        self.mad_enabled = config.mad_enabled
        self.shared = memsys.SharedMem()
        self.block_queue = list(block_queue)
        self.queue_pos = 0
        self.grid_dim = grid_dim
        self.block_dim = block_dim
        self.slots: list[Optional[Warp]] = [None] * WARPS_PER_SM
        self.free_slots = list(range(WARPS_PER_SM - 1, -1, -1))  # pop() -> lowest id
        self.free_partitions = []
        self.resident = 0
        self.max_resident = BLOCKS_PER_SM
        self.front_free = 0
        self.rr = WARPS_PER_SM - 1
        self.ready_count = 0
        self.manual_cycle = 0
        self.plain_retires = []    # heap of (busy_until, warp_id)
        self.special_retires = []  # heap of (busy_until, warp_id): bar/finish
        self.finish_cycle = 0
        self.ct = SmCounters()
        self.collect_registers = collect_registers
        self.check_invariants = check_invariants
        self.trace = trace
        self.register_dump = {}
        # partition placement stride, rounded up to word alignment
        self.partition_stride = (image.shared_bytes + 3) & ~3

    # -- block residency ---------------------------------------------------------

    def set_occupancy(self, occupancy: int):
        """Cap concurrent resident blocks at the device-computed occupancy."""
        self.max_resident = occupancy
        if self.partition_stride:
            # word-aligned placement may fit one block fewer than the
            # byte-exact occupancy formula in rare unaligned cases
            fit = memsys.SHARED_BYTES_PER_SM // self.partition_stride
            self.max_resident = min(occupancy, fit)
        self.free_partitions = list(range(self.max_resident - 1, -1, -1))

    def can_load_block(self) -> bool:
        if self.queue_pos >= len(self.block_queue):
            return False
        if self.resident >= self.max_resident:
            return False
        warps_needed = -(-self.block_dim // WARP_SIZE)
        return len(self.free_slots) >= warps_needed

    def load_block(self, t: int):
        block_id = self.block_queue[self.queue_pos]
        self.queue_pos += 1
        block = BlockCtx(block_id, self.block_dim)
        if self.partition_stride:
            slot = self.free_partitions.pop()
            block.partition_slot = slot
            block.partition = self.shared.partition(
                slot * self.partition_stride, self.image.shared_bytes
            )
        warps_needed = -(-self.block_dim // WARP_SIZE)
        regs = self.image.regs_per_thread
        for w in range(warps_needed):
            lanes = min(WARP_SIZE, self.block_dim - w * WARP_SIZE)
            wid = self.free_slots.pop()
            warp = Warp(wid, regs, lanes, self.image.entry, block, w)
            warp.busy_until = t
            # thread-id registers are initialized before the first issue
            base = w * WARP_SIZE
            warp.regs[0] = np.arange(base, base + WARP_SIZE, dtype=np.uint32)
            if regs > 1:
                warp.regs[1] = np.uint32(block_id)
            if regs > 2:
                warp.regs[2] = np.uint32(self.block_dim)
            if regs > 3:
                warp.regs[3] = np.uint32(self.grid_dim)
            block.warps.append(warp)
            self.slots[wid] = warp
            self.ct.warp_depths[(block_id, w)] = 0
            self.ready_count += 1
        block.total_warps = warps_needed
        self.resident += 1

    def _complete_block(self, block: BlockCtx, t: int):
        if self.collect_registers:
            for warp in block.warps:
                base = warp.warp_in_block * WARP_SIZE
                for lane in range(int(warp.alloc.sum())):
                    self.register_dump[(block.block_id, base + lane)] = {
                        "regs": [int(v) for v in warp.regs[:, lane]],
                        "aregs": [int(v) for v in warp.aregs[:, lane]],
                        "preds": [int(v) for v in warp.preds[:, lane]],
                    }
        for warp in block.warps:
            key = (block.block_id, warp.warp_in_block)
            if warp.max_depth > self.ct.warp_depths[key]:
                self.ct.warp_depths[key] = warp.max_depth
            self.slots[warp.warp_id] = None
            self.free_slots.append(warp.warp_id)
        self.free_slots.sort(reverse=True)
        if block.partition is not None:
            self.free_partitions.append(block.partition_slot)
            self.free_partitions.sort(reverse=True)
        self.resident -= 1
        self.finish_cycle = max(self.finish_cycle, t)
        if self.can_load_block():
            self.load_block(t)

    # -- scheduling ---------------------------------------------------------------

    def next_event(self):
        """Earliest cycle at which this SM can issue or change warp state."""
        best = None
        if self.ready_count:
            best = self.front_free
        elif self.plain_retires:
            cand = self.plain_retires[0][0]
            best = cand if cand > self.front_free else self.front_free
        if self.special_retires:
            cand = self.special_retires[0][0]
            if best is None or cand < best:
                best = cand
        return best

    def advance(self, t: int):
        """Apply retirements due at or before t, then issue at most once."""
        plain = self.plain_retires
        while plain and plain[0][0] <= t:
            _, wid = heapq.heappop(plain)
            self.slots[wid].state = WarpState.READY
            self.ready_count += 1
        special = self.special_retires
        while special and special[0][0] <= t:
            _, wid = heapq.heappop(special)
            self._retire_special(self.slots[wid], t)
        if self.ready_count and self.front_free <= t:
            warp = self._pick_ready()
            try:
                self._issue(warp, t)
            except RuntimeFault as exc:
                raise type(exc)(
                    f"block={warp.block.block_id} warp={warp.warp_in_block} "
                    f"pc={warp.pc:#06x} {exc}"
                ) from None

    def run_single(self):
        """Drive this SM to completion (single-SM launches)."""
        next_event, advance = self.next_event, self.advance
        ev = next_event()
        while ev is not None:
            advance(ev)
            ev = next_event()

    def step(self):
        """Advance exactly one cycle.

        Convenience over the event core for tests and exploration; the
        launch loop skips idle cycles but makes identical decisions.
        """
        self.advance(self.manual_cycle)
        self.manual_cycle += 1

    def _retire_special(self, warp: Warp, t: int):
        pending, warp.pending = warp.pending, None
        if pending == "bar":
            warp.state = WarpState.AT_BARRIER
            warp.block.arrived += 1
            self._check_barrier(warp.block)
        else:  # finish
            warp.state = WarpState.FINISHED
            block = warp.block
            block.finished_warps += 1
            self._check_barrier(block)
            if block.finished_warps == block.total_warps:
                self._complete_block(block, t)

    def _check_barrier(self, block: BlockCtx):
        live = block.total_warps - block.finished_warps
        if live > 0 and block.arrived == live:
            for warp in block.warps:
                if warp.state == WarpState.AT_BARRIER:
                    warp.state = WarpState.READY
                    self.ready_count += 1
            block.arrived = 0

    def _pick_ready(self) -> Warp:
        slots = self.slots
        ready = WarpState.READY
        for i in _SCAN_ORDER[self.rr]:
            warp = slots[i]
            if warp is not None and warp.state == ready:
                return warp
        raise Deadlock("ready_count out of sync")  # pragma: no cover

    def done(self) -> bool:
        return self.resident == 0 and self.queue_pos >= len(self.block_queue)

    def assert_live(self):
        """Called when the device sees no future events anywhere."""
        if not self.done():
            raise Deadlock(
                f"sm={self.sm_index} has unfinished warps but no runnable work"
            )

    # -- execution -------------------------------------------------------------------

    def _issue(self, warp: Warp, t: int):
        op = self.program.get(warp.pc)
        if op is None:
            raise InvalidPc(f"pc={warp.pc:#06x} is not an instruction boundary")
        ct = self.ct
        ct.warp_instructions += 1
        ct.thread_instructions += warp.active_count
        ct.histogram[op.opcode_i] += 1

        if op.guarded:
            exec_mask = op.cond_row[warp.pred_rows[op.greg]] & warp.active
            exec_count = int(exec_mask.sum())
            ct.pred_idle_lanes += warp.active_count - exec_count
            full = False
        else:
            exec_mask = warp.active
            exec_count = warp.active_count
            full = exec_count == WARP_SIZE

        if op.reads:
            ct.register_reads += op.reads * exec_count
        if op.writes_reg:
            ct.register_writes += exec_count

        op.fn(self, warp, op, exec_mask, exec_count, full)

        warp.state = WarpState.IN_FLIGHT
        retire = t + self.base_latency + op.penalty
        warp.busy_until = retire
        if warp.pending is None:
            heapq.heappush(self.plain_retires, (retire, warp.warp_id))
        else:
            heapq.heappush(self.special_retires, (retire, warp.warp_id))
        self.ready_count -= 1
        self.front_free = t + self.rows
        self.rr = warp.warp_id
        if self.trace is not None:
            self.trace.append((t, retire, self.sm_index, warp.warp_id,
                               op.opcode.name))
