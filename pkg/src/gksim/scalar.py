"""Per-thread scalar reference interpreter.

Executes every thread of a launch independently in program order with
plain Python integers, ignoring warps, masks, and timing entirely: BRA
follows the thread's own guard, SSY pushes a reconvergence address onto
a per-thread stack, SYNC pops it and jumps there (a single thread never
diverges, so that is the whole protocol), and EXIT ends the thread.
Threads of a block run one at a time in thread-id order, synchronized
only at BAR boundaries (each phase runs every live thread up to its next
barrier).  For kernels free of inter-thread races this produces the same
final registers and memory as the SIMT pipeline, which is exactly what
the differential tests assert.

Deliberately implemented apart from the pipeline: no shared ALU, flag,
or memory code, so the two routes can check each other.
"""

from __future__ import annotations

from . import isa
from .isa import CondCode, Opcode

_M = 0xFFFFFFFF

STEP_LIMIT = 50_000_000  # safety net against runaway kernels in tests


def _flags_nibble(a: int, b: int) -> int:
    d = (a - b) & _M
    s = d >> 31
    z = 1 if d == 0 else 0
    c = 1 if (a & _M) >= (b & _M) else 0
    o = ((a ^ b) & (a ^ d)) >> 31
    return (s << 3) | (z << 2) | (c << 1) | o


def _cond_true(cond: CondCode, nib: int) -> bool:
    s = (nib >> 3) & 1
    z = (nib >> 2) & 1
    c = (nib >> 1) & 1
    o = nib & 1
    lt = s ^ o
    if cond == CondCode.FL:
        return False
    if cond == CondCode.LT:
        return lt == 1
    if cond == CondCode.EQ:
        return z == 1
    if cond == CondCode.LE:
        return z == 1 or lt == 1
    if cond == CondCode.GT:
        return z == 0 and lt == 0
    if cond == CondCode.NE:
        return z == 0
    if cond == CondCode.GE:
        return lt == 0
    if cond == CondCode.TR:
        return True
    if cond == CondCode.LO:
        return c == 0
    if cond == CondCode.LS:
        return c == 0 or z == 1
    if cond == CondCode.HI:
        return c == 1 and z == 0
    return c == 1  # HS


def _signed(v: int) -> int:
    return v - (1 << 32) if v >> 31 else v


class _Thread:
    __slots__ = ("regs", "aregs", "preds", "pc", "done", "at_barrier",
                 "steps", "sync_stack")

    def __init__(self, num_regs, tid, block_id, block_dim, grid_dim):
        self.regs = [0] * max(num_regs, 1)
        self.regs[0] = tid
        if num_regs > 1:
            self.regs[1] = block_id
        if num_regs > 2:
            self.regs[2] = block_dim
        if num_regs > 3:
            self.regs[3] = grid_dim
        self.aregs = [0, 0, 0, 0]
        self.preds = [0, 0, 0, 0]
        self.pc = 0
        self.done = False
        self.at_barrier = False
        self.steps = 0
        self.sync_stack = []


class ScalarMemory:
    """Flat byte-addressable memory on a plain bytearray."""

    def __init__(self, size: int):
        self.data = bytearray(size)

    def load_word(self, addr: int) -> int:
        return int.from_bytes(self.data[addr:addr + 4], "little")

    def store_word(self, addr: int, value: int):
        self.data[addr:addr + 4] = (value & _M).to_bytes(4, "little")


def _run_thread(th: _Thread, program: dict, gmem: ScalarMemory,
                smem: ScalarMemory):
    """Run one thread until BAR, EXIT, or guard-false EXIT fallthrough."""
    while True:
        th.steps += 1
        if th.steps > STEP_LIMIT:
            raise RuntimeError("scalar interpreter step limit exceeded")
        instr, length = program[th.pc]
        op = instr.opcode
        next_pc = th.pc + length

        execute = True
        if instr.guard_cond != CondCode.TR and op not in (
            Opcode.SSY, Opcode.SYNC, Opcode.BAR
        ):
            execute = _cond_true(instr.guard_cond, th.preds[instr.guard_reg])

        if op == Opcode.BRA:
            th.pc = instr.imm if execute else next_pc
            continue
        if op == Opcode.SSY:
            th.sync_stack.append(instr.imm)
            th.pc = next_pc
            continue
        if op == Opcode.SYNC:
            if not th.sync_stack:
                raise RuntimeError("scalar interpreter: SYNC without SSY")
            th.pc = th.sync_stack.pop()
            continue
        if op == Opcode.BAR:
            th.pc = next_pc
            th.at_barrier = True
            return
        if op == Opcode.EXIT:
            if execute:
                th.done = True
                return
            th.pc = next_pc
            continue

        if not execute:
            th.pc = next_pc
            continue

        r = th.regs
        if op == Opcode.ISETP:
            b = instr.imm if instr.imm is not None else r[instr.src2]
            th.preds[instr.dst] = _flags_nibble(r[instr.src1], b)
        elif op in (Opcode.LDG, Opcode.LDS):
            mem = gmem if op == Opcode.LDG else smem
            addr = (th.aregs[instr.src1] + (instr.imm or 0)) & _M
            r[instr.dst] = mem.load_word(addr)
        elif op in (Opcode.STG, Opcode.STS):
            mem = gmem if op == Opcode.STG else smem
            addr = (th.aregs[instr.src1] + (instr.imm or 0)) & _M
            mem.store_word(addr, r[instr.dst])
        elif op == Opcode.R2A:
            th.aregs[instr.dst] = r[instr.src1]
        elif op == Opcode.A2R:
            r[instr.dst] = th.aregs[instr.src1]
        else:
            a = r[instr.src1]
            b = instr.imm if instr.imm is not None else r[instr.src2]
            if op == Opcode.IADD:
                r[instr.dst] = (a + b) & _M
            elif op == Opcode.ISUB:
                r[instr.dst] = (a - b) & _M
            elif op == Opcode.IMUL:
                r[instr.dst] = (a * b) & _M
            elif op == Opcode.IMAD:
                r[instr.dst] = (a * b + r[instr.src3]) & _M
            elif op == Opcode.IMIN:
                r[instr.dst] = min(_signed(a), _signed(b)) & _M
            elif op == Opcode.IMAX:
                r[instr.dst] = max(_signed(a), _signed(b)) & _M
            elif op == Opcode.INEG:
                r[instr.dst] = (-a) & _M
            elif op == Opcode.AND:
                r[instr.dst] = a & b
            elif op == Opcode.OR:
                r[instr.dst] = a | b
            elif op == Opcode.XOR:
                r[instr.dst] = a ^ b
            elif op == Opcode.NOT:
                r[instr.dst] = (~a) & _M
            elif op == Opcode.SHL:
                r[instr.dst] = (a << (b & 31)) & _M
            elif op == Opcode.SHR:
                r[instr.dst] = (a & _M) >> (b & 31)
            elif op == Opcode.MOV:
                r[instr.dst] = a
            elif op == Opcode.MVI:
                r[instr.dst] = b
            else:
                raise RuntimeError(f"scalar interpreter: unhandled {op.name}")
        th.pc = next_pc


def run(image, grid_dim: int, block_dim: int, params: bytes = b"",
        memory: ScalarMemory | None = None,
        mem_size: int = 16 * 1024 * 1024):
    """Execute a launch thread by thread; returns (memory, register dump).

    The dump maps (block, thread) to {"regs", "aregs", "preds"} lists,
    matching the shape of the pipeline's register dump.
    """
    program = {off: (instr, length) for off, instr, length in
               isa.walk(image.code, image.entry)}
    if memory is None:
        memory = ScalarMemory(mem_size)
    if params:
        memory.data[0:len(params)] = params

    dump = {}
    for block_id in range(grid_dim):
        smem = ScalarMemory(max(image.shared_bytes, 4))
        threads = [
            _Thread(image.regs_per_thread, tid, block_id, block_dim, grid_dim)
            for tid in range(block_dim)
        ]
        while True:
            live = [th for th in threads if not th.done]
            if not live:
                break
            for th in live:
                if not th.at_barrier:
                    _run_thread(th, program, memory, smem)
            if all(th.done or th.at_barrier for th in threads):
                released = False
                for th in threads:
                    if th.at_barrier:
                        th.at_barrier = False
                        released = True
                if not released and any(not th.done for th in threads):
                    raise RuntimeError("scalar interpreter stalled")
        for tid, th in enumerate(threads):
            dump[(block_id, tid)] = {
                "regs": list(th.regs),
                "aregs": list(th.aregs),
                "preds": list(th.preds),
            }
    return memory, dump
