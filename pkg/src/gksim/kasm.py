"""Assembler and static analyzer for `.gka` kernel sources.

Grammar, one instruction per line:

    .kernel <name>          # optional, names the kernel
    .regs <n>               # registers per thread (1..128)
    .shared <bytes>         # shared memory per block (0..16384)
    label:                  # byte-offset label, may prefix an instruction
    [@pN.COND] MNEMONIC[.long|.short] operands   # '#' starts a comment

Operands: general registers R0..R127, predicate registers p0..p3, address
registers A0..A3, memory references [An] / [An+imm] / [An-imm], immediates
in decimal or 0x-hex, and label names for branch targets.  Without a
.long/.short suffix an instruction is encoded long when it carries a guard,
an immediate, or a third source, otherwise short.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import isa
from .errors import (
    AsmError,
    DuplicateLabel,
    RegisterOutOfRange,
    SharedMemTooLarge,
    UndefinedLabel,
    UnknownMnemonic,
)
from .isa import CondCode, Form, Instruction, Opcode

MAX_SHARED_BYTES = 16384


@dataclass
class KernelImage:
    """Assembled kernel: code bytes plus launch-relevant header fields."""

    name: str
    code: bytes
    regs_per_thread: int
    shared_bytes: int = 0
    entry: int = 0
    symbols: dict = field(default_factory=dict)


@dataclass
class KernelMetadata:
    """Static facts about a kernel derived from its code alone."""

    histogram: dict
    uses_mad: bool
    static_ssy_depth: int
    max_reg_used: int


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*):(.*)$")
_GUARD_RE = re.compile(r"^@p([0-9]+)\.([A-Z]+)\s+(.*)$")
_REG_RE = re.compile(r"^[Rr]([0-9]+)$")
_PRED_RE = re.compile(r"^[Pp]([0-9]+)$")
_AREG_RE = re.compile(r"^[Aa]([0-9]+)$")
_MEM_RE = re.compile(r"^\[[Aa]([0-9]+)\s*(?:([+-])\s*([^\]]+))?\]$")
_INT_RE = re.compile(r"^[+-]?(0[xX][0-9a-fA-F]+|[0-9]+)$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z_0-9]*$")


def _parse_int(text, lineno):
    if not _INT_RE.match(text):
        raise AsmError(f"line {lineno}: bad integer '{text}'")
    value = int(text, 0)
    if not -(1 << 31) <= value < (1 << 32):
        raise AsmError(f"line {lineno}: immediate {text} does not fit in 32 bits")
    return value & isa.WORD_MASK


def _parse_reg(text, lineno):
    m = _REG_RE.match(text)
    if not m:
        raise AsmError(f"line {lineno}: expected register, got '{text}'")
    n = int(m.group(1))
    if n >= isa.MAX_REGS:
        raise RegisterOutOfRange(f"line {lineno}: R{n} (registers are R0..R127)")
    return n


def _parse_pred(text, lineno):
    m = _PRED_RE.match(text)
    if not m:
        raise AsmError(f"line {lineno}: expected predicate register, got '{text}'")
    n = int(m.group(1))
    if n >= isa.NUM_PREDICATES:
        raise AsmError(f"line {lineno}: p{n} (predicates are p0..p3)")
    return n


def _parse_areg(text, lineno):
    m = _AREG_RE.match(text)
    if not m:
        raise AsmError(f"line {lineno}: expected address register, got '{text}'")
    n = int(m.group(1))
    if n >= isa.NUM_ADDR_REGS:
        raise AsmError(f"line {lineno}: A{n} (address registers are A0..A3)")
    return n


def _parse_memref(text, lineno):
    m = _MEM_RE.match(text)
    if not m:
        raise AsmError(f"line {lineno}: expected memory reference, got '{text}'")
    areg = int(m.group(1))
    if areg >= isa.NUM_ADDR_REGS:
        raise AsmError(f"line {lineno}: A{areg} (address registers are A0..A3)")
    if m.group(2) is None:
        return areg, None
    off = _parse_int(m.group(3).strip(), lineno)
    if m.group(2) == "-":
        off = (-off) & isa.WORD_MASK
    return areg, off


@dataclass
class _Stmt:
    lineno: int
    opcode: Opcode
    guard_reg: int
    guard_cond: CondCode
    operands: list
    forced_form: Form | None
    form: Form = Form.SHORT
    offset: int = 0
    length: int = 0


def _split_operands(text):
    return [part.strip() for part in text.split(",")] if text.strip() else []


def _parse_statement(line, lineno):
    guard_reg, guard_cond = 0, CondCode.TR
    m = _GUARD_RE.match(line)
    if m:
        guard_reg = int(m.group(1))
        if guard_reg >= isa.NUM_PREDICATES:
            raise AsmError(f"line {lineno}: guard p{guard_reg} out of range")
        try:
            guard_cond = CondCode[m.group(2)]
        except KeyError:
            raise AsmError(f"line {lineno}: unknown condition '{m.group(2)}'") from None
        line = m.group(3)
    elif line.startswith("@"):
        raise AsmError(f"line {lineno}: malformed guard prefix")

    parts = line.split(None, 1)
    mnem = parts[0]
    rest = parts[1] if len(parts) > 1 else ""

    forced_form = None
    base = mnem
    if mnem.upper().endswith(".LONG"):
        base, forced_form = mnem[:-5], Form.LONG
    elif mnem.upper().endswith(".SHORT"):
        base, forced_form = mnem[:-6], Form.SHORT
    try:
        opcode = Opcode[base.upper()]
    except KeyError:
        raise UnknownMnemonic(f"line {lineno}: '{base}'") from None

    return _Stmt(lineno, opcode, guard_reg, guard_cond, _split_operands(rest),
                 forced_form)


def _build_instruction(stmt, labels):
    """Map parsed operands onto Instruction fields for the opcode's shape."""
    lineno, ops = stmt.lineno, stmt.operands
    shape = isa.SHAPES[stmt.opcode]
    dst = src1 = src2 = src3 = 0
    imm = None

    def want(n):
        if len(ops) != n:
            raise AsmError(
                f"line {lineno}: {stmt.opcode.name} takes {n} operand(s), got {len(ops)}"
            )

    def reg_or_imm(text):
        if _REG_RE.match(text):
            return _parse_reg(text, lineno), None
        return 0, _parse_int(text, lineno)

    if shape == "alu3":
        want(3)
        dst = _parse_reg(ops[0], lineno)
        src1 = _parse_reg(ops[1], lineno)
        src2, imm = reg_or_imm(ops[2])
    elif shape == "alu2":
        want(2)
        dst = _parse_reg(ops[0], lineno)
        src1 = _parse_reg(ops[1], lineno)
    elif shape == "mvi":
        want(2)
        dst = _parse_reg(ops[0], lineno)
        imm = _parse_int(ops[1], lineno)
    elif shape == "imad":
        want(4)
        dst = _parse_reg(ops[0], lineno)
        src1 = _parse_reg(ops[1], lineno)
        src2 = _parse_reg(ops[2], lineno)
        src3 = _parse_reg(ops[3], lineno)
    elif shape == "load":
        want(2)
        dst = _parse_reg(ops[0], lineno)
        src1, imm = _parse_memref(ops[1], lineno)
    elif shape == "store":
        want(2)
        src1, imm = _parse_memref(ops[0], lineno)
        dst = _parse_reg(ops[1], lineno)
    elif shape == "r2a":
        want(2)
        dst = _parse_areg(ops[0], lineno)
        src1 = _parse_reg(ops[1], lineno)
    elif shape == "a2r":
        want(2)
        dst = _parse_reg(ops[0], lineno)
        src1 = _parse_areg(ops[1], lineno)
    elif shape == "setp":
        want(3)
        dst = _parse_pred(ops[0], lineno)
        src1 = _parse_reg(ops[1], lineno)
        src2, imm = reg_or_imm(ops[2])
    elif shape == "branch":
        want(1)
        target = ops[0]
        if _IDENT_RE.match(target):
            if target not in labels:
                raise UndefinedLabel(f"line {lineno}: '{target}'")
            imm = labels[target]
        else:
            imm = _parse_int(target, lineno)
    else:  # none
        want(0)

    return Instruction(stmt.opcode, stmt.form, stmt.guard_reg,
                       stmt.guard_cond, dst, src1, src2, src3, imm)


def _statement_imm_present(stmt):
    """Whether the statement will carry an immediate, decided syntactically."""
    shape = isa.SHAPES[stmt.opcode]
    ops = stmt.operands
    if shape in ("mvi", "branch"):
        return True
    if shape in ("alu3", "setp") and len(ops) == 3 and not _REG_RE.match(ops[2]):
        return True
    if shape in ("load", "store") and ops:
        memref = ops[1] if shape == "load" else ops[0]
        m = _MEM_RE.match(memref)
        return bool(m and m.group(2) is not None)
    return False


def assemble(source: str, name: str | None = None):
    """Assemble `.gka` text into a (KernelImage, KernelMetadata) pair."""
    kernel_name = name or "kernel"
    regs_decl = None
    shared_bytes = 0
    labels = {}
    stmts = []
    offset = 0

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        m = _LABEL_RE.match(line)
        if m and not line.startswith("@"):
            label = m.group(1)
            if label in labels:
                raise DuplicateLabel(f"line {lineno}: '{label}'")
            labels[label] = offset
            line = m.group(2).strip()
            if not line:
                continue

        if line.startswith("."):
            parts = line.split()
            directive = parts[0]
            if directive == ".kernel":
                if len(parts) != 2 or not _IDENT_RE.match(parts[1]):
                    raise AsmError(f"line {lineno}: .kernel expects an identifier")
                kernel_name = parts[1]
            elif directive == ".regs":
                if len(parts) != 2:
                    raise AsmError(f"line {lineno}: .regs expects a count")
                regs_decl = int(_parse_int(parts[1], lineno))
                if not 1 <= regs_decl <= isa.MAX_REGS:
                    raise RegisterOutOfRange(
                        f"line {lineno}: .regs {regs_decl} (valid range 1..128)"
                    )
            elif directive == ".shared":
                if len(parts) != 2:
                    raise AsmError(f"line {lineno}: .shared expects a byte count")
                shared_bytes = int(_parse_int(parts[1], lineno))
                if shared_bytes > MAX_SHARED_BYTES:
                    raise SharedMemTooLarge(
                        f"line {lineno}: .shared {shared_bytes} exceeds {MAX_SHARED_BYTES}"
                    )
            else:
                raise AsmError(f"line {lineno}: unknown directive '{directive}'")
            continue

        stmt = _parse_statement(line, lineno)
        form = stmt.forced_form
        if form is None:
            has_imm = _statement_imm_present(stmt)
            form = isa.default_form(
                stmt.opcode, stmt.guard_reg, stmt.guard_cond,
                0 if has_imm else None,
            )
        stmt.form = form
        stmt.offset = offset
        stmt.length = 8 if form == Form.LONG else 4
        offset += stmt.length
        stmts.append(stmt)

    boundaries = {s.offset for s in stmts}

    chunks = []
    for stmt in stmts:
        instr = _build_instruction(stmt, labels)
        if instr.opcode in (Opcode.BRA, Opcode.SSY) and instr.imm not in boundaries:
            raise AsmError(
                f"line {stmt.lineno}: target {instr.imm:#x} is not an instruction "
                "boundary inside the kernel"
            )
        try:
            encoded = isa.encode(instr)
        except Exception as exc:
            raise AsmError(f"line {stmt.lineno}: {exc}") from exc
        if len(encoded) != stmt.length:
            raise AsmError(f"line {stmt.lineno}: internal length mismatch")
        chunks.append(encoded)

    code = b"".join(chunks)
    meta = analyze_code(code)

    if regs_decl is not None and meta.max_reg_used >= regs_decl:
        raise RegisterOutOfRange(
            f"kernel references R{meta.max_reg_used} but declares .regs {regs_decl}"
        )
    regs = regs_decl if regs_decl is not None else max(meta.max_reg_used + 1, 1)

    image = KernelImage(kernel_name, code, regs, shared_bytes, 0, dict(labels))
    return image, meta


def analyze_code(code: bytes, entry: int = 0) -> KernelMetadata:
    """Instruction census over raw code bytes; see analyze()."""
    histogram = {op: 0 for op in Opcode}
    depth = 0
    max_depth = 0
    max_reg = -1
    for _, instr, _ in isa.walk(code, entry):
        histogram[instr.opcode] += 1
        if instr.opcode == Opcode.SSY:
            depth += 1
            max_depth = max(max_depth, depth)
        elif instr.opcode == Opcode.SYNC:
            depth -= 1
        for ref in isa.reg_refs(instr):
            max_reg = max(max_reg, ref)
    uses_mad = histogram[Opcode.IMUL] + histogram[Opcode.IMAD] > 0
    return KernelMetadata(histogram, uses_mad, max_depth, max_reg)


def analyze(image: KernelImage) -> KernelMetadata:
    """Histogram, multiplier usage, and conservative static SSY depth.

    The SSY depth is a flow-insensitive counter walk: SSY increments,
    SYNC decrements, and the maximum is reported.  It can over-approximate
    the runtime stack depth; the profiler reports the exact figure.
    """
    return analyze_code(image.code, image.entry)


def disassemble_image(image: KernelImage) -> str:
    """Render an image as assemblable `.gka` text (directives included)."""
    lines = [
        f".kernel {image.name}",
        f".regs {image.regs_per_thread}",
        f".shared {image.shared_bytes}",
    ]
    for _, instr, _ in isa.walk(image.code, image.entry):
        lines.append(isa.disassemble(instr))
    return "\n".join(lines) + "\n"
