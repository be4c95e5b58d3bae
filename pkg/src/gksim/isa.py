"""Integer SIMT ISA: opcodes, condition codes, and the binary encoding.

Instructions are little-endian 32-bit words, one or two per instruction.
Bit 0 of the first word selects the length: 0 = short (4 bytes),
1 = long (8 bytes).

Long form, word 0:

  bit  0      1 (long)
  bits 6..1   opcode (1..27, 0 illegal)
  bits 8..7   guard predicate register (p0..p3)
  bits 13..9  guard condition code (0..11, 12..31 reserved)
  bits 21..14 dst register
  bits 29..22 src1 register
  bit  30     src2-is-immediate flag
  bit  31     reserved, must be 0

Long form, word 1: a 32-bit immediate (or branch target) when bit 30 is
set, otherwise bits 7..0 = src2, bits 15..8 = src3, bits 31..16 reserved.

Short form (single word):

  bit  0      0 (short)
  bits 6..1   opcode
  bits 14..7  dst register
  bits 22..15 src1 register
  bits 30..23 src2 register
  bit  31     reserved, must be 0

Short form always means guard p0.TR, no immediate, no src3.  Register
fields are 8 bits wide but only indices 0..127 are valid; 128..255 are
reserved encodings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import (
    IllegalOpcode,
    ReservedBitsSet,
    TruncatedInstruction,
    UnencodableForm,
)

WORD_MASK = 0xFFFFFFFF
MAX_REGS = 128
NUM_PREDICATES = 4
NUM_ADDR_REGS = 4


class Opcode(IntEnum):
    IADD = 1
    ISUB = 2
    IMUL = 3
    IMAD = 4
    IMIN = 5
    IMAX = 6
    INEG = 7
    AND = 8
    OR = 9
    XOR = 10
    NOT = 11
    SHL = 12
    SHR = 13
    MOV = 14
    MVI = 15
    LDG = 16
    STG = 17
    LDS = 18
    STS = 19
    R2A = 20
    A2R = 21
    ISETP = 22
    BRA = 23
    SSY = 24
    SYNC = 25
    BAR = 26
    EXIT = 27


class CondCode(IntEnum):
    """Guard condition codes evaluated against a 4-bit flag nibble."""

    FL = 0   # never
    LT = 1   # signed less:            S xor O
    EQ = 2   # equal:                  Z
    LE = 3   # signed less-or-equal:   Z or (S xor O)
    GT = 4   # signed greater:         not Z and not (S xor O)
    NE = 5   # not equal:              not Z
    GE = 6   # signed greater-or-equal: not (S xor O)
    TR = 7   # always
    LO = 8   # unsigned lower:         not C
    LS = 9   # unsigned lower-or-same: not C or Z
    HI = 10  # unsigned higher:        C and not Z
    HS = 11  # unsigned higher-or-same: C


class Form(IntEnum):
    SHORT = 0
    LONG = 1


# Operand shape per opcode; drives the assembler, disassembler, analyzer
# and both interpreters.
#   alu3   OP Rd, Ra, (Rb | imm)
#   alu2   OP Rd, Ra
#   mvi    MVI Rd, imm
#   imad   IMAD Rd, Ra, Rb, Rc          (no immediate form)
#   load   OP Rd, [An] | [An+imm]
#   store  OP [An] | [An+imm], Rd       (data register sits in dst field)
#   r2a    R2A An, Ra
#   a2r    A2R Rd, An
#   setp   ISETP pN, Ra, (Rb | imm)
#   branch OP target                    (target in immediate slot)
#   none   OP
SHAPES = {
    Opcode.IADD: "alu3",
    Opcode.ISUB: "alu3",
    Opcode.IMUL: "alu3",
    Opcode.IMAD: "imad",
    Opcode.IMIN: "alu3",
    Opcode.IMAX: "alu3",
    Opcode.INEG: "alu2",
    Opcode.AND: "alu3",
    Opcode.OR: "alu3",
    Opcode.XOR: "alu3",
    Opcode.NOT: "alu2",
    Opcode.SHL: "alu3",
    Opcode.SHR: "alu3",
    Opcode.MOV: "alu2",
    Opcode.MVI: "mvi",
    Opcode.LDG: "load",
    Opcode.STG: "store",
    Opcode.LDS: "load",
    Opcode.STS: "store",
    Opcode.R2A: "r2a",
    Opcode.A2R: "a2r",
    Opcode.ISETP: "setp",
    Opcode.BRA: "branch",
    Opcode.SSY: "branch",
    Opcode.SYNC: "none",
    Opcode.BAR: "none",
    Opcode.EXIT: "none",
}

ALU_OPCODES = frozenset(
    op for op, shape in SHAPES.items() if shape in ("alu3", "alu2", "mvi", "imad")
)
LOAD_OPCODES = frozenset((Opcode.LDG, Opcode.LDS))
STORE_OPCODES = frozenset((Opcode.STG, Opcode.STS))
GLOBAL_MEM_OPCODES = frozenset((Opcode.LDG, Opcode.STG))
SHARED_MEM_OPCODES = frozenset((Opcode.LDS, Opcode.STS))
MULTIPLY_OPCODES = frozenset((Opcode.IMUL, Opcode.IMAD))

# Opcodes whose encoding requires the immediate slot.
_REQUIRES_IMM = frozenset((Opcode.MVI, Opcode.BRA, Opcode.SSY))
# Opcodes that cannot take an immediate (word 1 already holds src2/src3).
_NO_IMM = frozenset((Opcode.IMAD,))


@dataclass(frozen=True)
class Instruction:
    """Decoded form of one ISA operation.

    `imm` is None when src2 is a register; otherwise it holds the 32-bit
    immediate pattern (branch target for BRA/SSY, value for MVI, signed
    byte offset for loads/stores, second operand otherwise).
    """

    opcode: Opcode
    form: Form = Form.SHORT
    guard_reg: int = 0
    guard_cond: CondCode = CondCode.TR
    dst: int = 0
    src1: int = 0
    src2: int = 0
    src3: int = 0
    imm: int | None = None

    def is_guarded(self) -> bool:
        return self.guard_cond != CondCode.TR


def default_form(opcode: Opcode, guard_reg: int, guard_cond: CondCode,
                 imm: int | None) -> Form:
    """Form the assembler picks when no .long/.short suffix is given."""
    if opcode == Opcode.IMAD:
        return Form.LONG
    if imm is not None or guard_cond != CondCode.TR or guard_reg != 0:
        return Form.LONG
    return Form.SHORT


def _check_reg(value, what):
    if not 0 <= value < MAX_REGS:
        raise UnencodableForm(f"{what} index {value} outside 0..{MAX_REGS - 1}")


def encode(instr: Instruction) -> bytes:
    """Encode one instruction; 4 bytes for short form, 8 for long."""
    op = Opcode(instr.opcode)
    _check_reg(instr.dst, "dst")
    _check_reg(instr.src1, "src1")
    _check_reg(instr.src2, "src2")
    _check_reg(instr.src3, "src3")
    if not 0 <= instr.guard_reg < NUM_PREDICATES:
        raise UnencodableForm(f"guard register p{instr.guard_reg} out of range")
    cond = CondCode(instr.guard_cond)

    if op in _REQUIRES_IMM and instr.imm is None:
        raise UnencodableForm(f"{op.name} requires an immediate operand")
    if op in _NO_IMM and instr.imm is not None:
        raise UnencodableForm(f"{op.name} cannot take an immediate operand")
    if instr.imm is not None and not 0 <= instr.imm <= WORD_MASK:
        raise UnencodableForm(f"immediate {instr.imm:#x} does not fit in 32 bits")
    if op in (Opcode.BRA, Opcode.SSY) and instr.imm % 4 != 0:
        raise UnencodableForm(f"{op.name} target {instr.imm:#x} not 4-byte aligned")

    if instr.form == Form.SHORT:
        if instr.imm is not None:
            raise UnencodableForm("short form cannot carry an immediate")
        if cond != CondCode.TR or instr.guard_reg != 0:
            raise UnencodableForm("short form implies guard p0.TR")
        if instr.src3 != 0:
            raise UnencodableForm("short form has no src3 field")
        word = (op << 1) | (instr.dst << 7) | (instr.src1 << 15) | (instr.src2 << 23)
        return struct.pack("<I", word)

    word0 = (
        1
        | (op << 1)
        | (instr.guard_reg << 7)
        | (cond << 9)
        | (instr.dst << 14)
        | (instr.src1 << 22)
    )
    if instr.imm is not None:
        word0 |= 1 << 30
        word1 = instr.imm
        if instr.src2 != 0 or instr.src3 != 0:
            raise UnencodableForm("immediate form leaves no room for src2/src3")
    else:
        word1 = instr.src2 | (instr.src3 << 8)
    return struct.pack("<II", word0, word1)


def decode(code: bytes, offset: int = 0) -> tuple[Instruction, int]:
    """Decode the instruction at `offset`; returns (instruction, length)."""
    if offset + 4 > len(code):
        raise TruncatedInstruction(f"offset {offset:#x}: fewer than 4 bytes left")
    (word0,) = struct.unpack_from("<I", code, offset)
    if word0 & (1 << 31):
        raise ReservedBitsSet(f"offset {offset:#x}: bit 31 set")
    opcode_val = (word0 >> 1) & 0x3F
    if not 1 <= opcode_val <= 27:
        raise IllegalOpcode(f"offset {offset:#x}: opcode field {opcode_val}")
    op = Opcode(opcode_val)

    if word0 & 1 == 0:
        dst = (word0 >> 7) & 0xFF
        src1 = (word0 >> 15) & 0xFF
        src2 = (word0 >> 23) & 0xFF
        for v, what in ((dst, "dst"), (src1, "src1"), (src2, "src2")):
            if v >= MAX_REGS:
                raise ReservedBitsSet(f"offset {offset:#x}: {what} field {v} reserved")
        return (
            Instruction(op, Form.SHORT, 0, CondCode.TR, dst, src1, src2, 0, None),
            4,
        )

    if offset + 8 > len(code):
        raise TruncatedInstruction(f"offset {offset:#x}: long form needs 8 bytes")
    (word1,) = struct.unpack_from("<I", code, offset + 4)
    guard_reg = (word0 >> 7) & 0x3
    cond_val = (word0 >> 9) & 0x1F
    if cond_val >= 12:
        raise ReservedBitsSet(f"offset {offset:#x}: guard condition {cond_val} reserved")
    dst = (word0 >> 14) & 0xFF
    src1 = (word0 >> 22) & 0xFF
    for v, what in ((dst, "dst"), (src1, "src1")):
        if v >= MAX_REGS:
            raise ReservedBitsSet(f"offset {offset:#x}: {what} field {v} reserved")
    if word0 & (1 << 30):
        imm = word1
        src2 = src3 = 0
    else:
        if word1 & 0xFFFF0000:
            raise ReservedBitsSet(f"offset {offset:#x}: word1 bits 31..16 set")
        src2 = word1 & 0xFF
        src3 = (word1 >> 8) & 0xFF
        for v, what in ((src2, "src2"), (src3, "src3")):
            if v >= MAX_REGS:
                raise ReservedBitsSet(f"offset {offset:#x}: {what} field {v} reserved")
        imm = None
    instr = Instruction(
        op, Form.LONG, guard_reg, CondCode(cond_val), dst, src1, src2, src3, imm
    )
    return instr, 8


def walk(code: bytes, entry: int = 0):
    """Yield (offset, instruction, length) from entry to the end of code."""
    offset = entry
    while offset < len(code):
        instr, length = decode(code, offset)
        yield offset, instr, length
        offset += length


def instruction_length(code: bytes, offset: int) -> int:
    """Length in bytes of the instruction at offset (4 or 8), from bit 0."""
    if offset + 4 > len(code):
        raise TruncatedInstruction(f"offset {offset:#x}: fewer than 4 bytes left")
    return 8 if code[offset] & 1 else 4


def _signed(imm: int) -> int:
    return imm - (1 << 32) if imm >= (1 << 31) else imm


def disassemble(instr: Instruction) -> str:
    """Canonical text for one instruction; re-assembles byte-identically."""
    op = Opcode(instr.opcode)
    shape = SHAPES[op]

    mnem = op.name
    if instr.form != default_form(op, instr.guard_reg, instr.guard_cond, instr.imm):
        mnem += ".long" if instr.form == Form.LONG else ".short"

    if shape == "alu3":
        second = str(_signed(instr.imm)) if instr.imm is not None else f"R{instr.src2}"
        body = f"{mnem} R{instr.dst}, R{instr.src1}, {second}"
    elif shape == "alu2":
        body = f"{mnem} R{instr.dst}, R{instr.src1}"
    elif shape == "mvi":
        body = f"{mnem} R{instr.dst}, {_signed(instr.imm)}"
    elif shape == "imad":
        body = f"{mnem} R{instr.dst}, R{instr.src1}, R{instr.src2}, R{instr.src3}"
    elif shape == "load":
        body = f"{mnem} R{instr.dst}, {_memref(instr)}"
    elif shape == "store":
        body = f"{mnem} {_memref(instr)}, R{instr.dst}"
    elif shape == "r2a":
        body = f"{mnem} A{instr.dst}, R{instr.src1}"
    elif shape == "a2r":
        body = f"{mnem} R{instr.dst}, A{instr.src1}"
    elif shape == "setp":
        second = str(_signed(instr.imm)) if instr.imm is not None else f"R{instr.src2}"
        body = f"{mnem} p{instr.dst}, R{instr.src1}, {second}"
    elif shape == "branch":
        body = f"{mnem} {instr.imm:#06x}"
    else:
        body = mnem

    if instr.is_guarded() or instr.guard_reg != 0:
        return f"@p{instr.guard_reg}.{CondCode(instr.guard_cond).name} {body}"
    return body


def _memref(instr: Instruction) -> str:
    if instr.imm is None:
        return f"[A{instr.src1}]"
    off = _signed(instr.imm)
    return f"[A{instr.src1}{off:+d}]"


def reg_refs(instr: Instruction):
    """General-purpose register indices referenced by one instruction."""
    shape = SHAPES[Opcode(instr.opcode)]
    if shape in ("alu3", "setp"):
        refs = [instr.src1] if shape == "setp" else [instr.dst, instr.src1]
        if instr.imm is None:
            refs.append(instr.src2)
        return refs
    if shape == "alu2":
        return [instr.dst, instr.src1]
    if shape == "mvi":
        return [instr.dst]
    if shape == "imad":
        return [instr.dst, instr.src1, instr.src2, instr.src3]
    if shape in ("load", "store"):
        return [instr.dst]
    if shape == "r2a":
        return [instr.src1]
    if shape == "a2r":
        return [instr.dst]
    return []
