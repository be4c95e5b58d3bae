"""Command-line frontend and the `.gk` kernel container format.

Subcommands: asm, disasm, run, profile, sweep.  Exit codes: 0 success,
1 usage error, 2 assembly/validation error, 3 runtime fault; every
failure prints one `error: <Kind> <detail>` line to stderr.

Container layout (all fields little-endian):

    magic   "GK01"
    u8      name length, followed by the name bytes (ASCII)
    u32     regs_per_thread
    u32     shared_bytes
    u32     entry offset
    u32     code length in bytes
    u8      uses_mad flag
    u16     static SSY depth
    u16     max register referenced + 1 (0 when none)
    u32[27] per-opcode instruction counts (opcode order)
    bytes   code
"""

from __future__ import annotations

import argparse
import struct
import sys
from pathlib import Path

from . import gpu, kasm, metrics
from .errors import ContainerError, GkError, RuntimeFault, ValidationError
from .gpu import GpuConfig, LaunchParams
from .isa import Opcode
from .kasm import KernelImage, KernelMetadata
from .memsys import MemoryImage

MAGIC = b"GK01"


def write_container(image: KernelImage, meta: KernelMetadata) -> bytes:
    name = image.name.encode("ascii")
    if len(name) > 255:
        raise ContainerError("kernel name longer than 255 bytes")
    head = bytearray()
    head += MAGIC
    head += struct.pack("<B", len(name))
    head += name
    head += struct.pack(
        "<IIIIBHH",
        image.regs_per_thread,
        image.shared_bytes,
        image.entry,
        len(image.code),
        1 if meta.uses_mad else 0,
        meta.static_ssy_depth,
        meta.max_reg_used + 1,
    )
    head += struct.pack("<27I", *(meta.histogram[op] for op in Opcode))
    return bytes(head) + image.code


def read_container(blob: bytes):
    """Parse and re-verify a container; returns (image, metadata)."""
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic (not a .gk kernel container)")
    try:
        pos = 4
        (name_len,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        name = blob[pos:pos + name_len].decode("ascii")
        pos += name_len
        regs, shared, entry, code_len, uses_mad, ssy_depth, max_reg1 = (
            struct.unpack_from("<IIIIBHH", blob, pos)
        )
        pos += struct.calcsize("<IIIIBHH")
        hist_vals = struct.unpack_from("<27I", blob, pos)
        pos += 27 * 4
    except (struct.error, UnicodeDecodeError) as exc:
        raise ContainerError(f"truncated or corrupt header: {exc}") from exc
    code = blob[pos:pos + code_len]
    if len(code) != code_len or pos + code_len != len(blob):
        raise ContainerError("code length inconsistent with container size")
    if not 1 <= regs <= 128:
        raise ContainerError(f"regs_per_thread={regs} out of range")
    if shared > kasm.MAX_SHARED_BYTES:
        raise ContainerError(f"shared_bytes={shared} exceeds {kasm.MAX_SHARED_BYTES}")
    image = KernelImage(name, code, regs, shared, entry)
    try:
        meta = kasm.analyze(image)
    except GkError as exc:
        raise ContainerError(f"code does not decode cleanly: {exc}") from exc
    stored = {op: hist_vals[op - 1] for op in Opcode}
    if (stored != meta.histogram or bool(uses_mad) != meta.uses_mad
            or ssy_depth != meta.static_ssy_depth
            or max_reg1 != meta.max_reg_used + 1):
        raise ContainerError("metadata block disagrees with the code section")
    return image, meta


def load_kernel(path: str):
    return read_container(Path(path).read_bytes())


# --- argument handling ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: Usage {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_run_flags(p, sweep=False):
    p.add_argument("kernel", help="assembled .gk kernel container")
    p.add_argument("--grid", type=int, required=True, help="number of thread blocks")
    p.add_argument("--block", type=int, required=True, help="threads per block")
    if sweep:
        p.add_argument("--sms", default="1,2", help="comma list of SM counts")
        p.add_argument("--sps", default="8,16,32", help="comma list of SP counts")
        p.add_argument("--report-dir", default=".", help="directory for per-point reports")
    else:
        p.add_argument("--sms", type=int, default=1, help="number of SMs")
        p.add_argument("--sps", type=int, default=8, choices=(8, 16, 32),
                       help="scalar processors per SM")
        p.add_argument("--report", help="write the key=value report here")
        p.add_argument("--json", dest="json_path", help="write a JSON report here")
        p.add_argument("--dump", action="append", default=[],
                       metavar="ADDR:LEN:FILE", help="dump LEN bytes at ADDR to FILE")
    p.add_argument("--stack-depth", type=int, default=32, help="warp stack depth (0..32)")
    p.add_argument("--operands", type=int, default=3, choices=(2, 3),
                   help="read operand units (2 implies --no-mad)")
    p.add_argument("--no-mad", action="store_true",
                   help="remove the multiplier / multiply-add support")
    p.add_argument("--gmem-penalty", type=int, default=10,
                   help="extra cycles for global memory access")
    p.add_argument("--smem-penalty", type=int, default=2,
                   help="extra cycles for shared memory access")
    p.add_argument("--mem-bytes", type=int, default=16 * 1024 * 1024,
                   help="global memory size")
    p.add_argument("--param", action="append", default=[], metavar="WORD",
                   help="append one 32-bit parameter word (0x.. for hex)")
    p.add_argument("--load", action="append", default=[], metavar="FILE@ADDR",
                   help="load raw little-endian words from FILE at ADDR")
    p.add_argument("--weights", help="energy weights file (class=weight lines)")
    p.add_argument("--check-invariants", action="store_true",
                   help="run with divergence-protocol assertions enabled")


def _parse_word(text: str) -> int:
    value = int(text, 0)
    if not -(1 << 31) <= value < (1 << 32):
        raise ValidationError(f"parameter {text} does not fit in 32 bits")
    return value & 0xFFFFFFFF


def _config_from_args(args, num_sms: int, sps: int) -> GpuConfig:
    mad = not args.no_mad
    if args.operands == 2 and mad:
        raise ValidationError("operand_units=2 requires --no-mad")
    return GpuConfig(
        num_sms=num_sms,
        sps_per_sm=sps,
        warp_stack_depth=args.stack_depth,
        operand_units=args.operands,
        mad_enabled=mad,
        global_mem_penalty=args.gmem_penalty,
        shared_mem_penalty=args.smem_penalty,
        global_mem_bytes=args.mem_bytes,
    )


def _prepare_memory(args, config: GpuConfig) -> MemoryImage:
    memory = MemoryImage(config.global_mem_bytes)
    for spec in args.load:
        path, sep, addr_text = spec.rpartition("@")
        if not sep:
            raise ValidationError(f"--load expects FILE@ADDR, got '{spec}'")
        memory.write_bytes(int(addr_text, 0), Path(path).read_bytes())
    return memory


def _run_once(args, image, meta, config):
    memory = _prepare_memory(args, config)
    params = b"".join(
        struct.pack("<I", _parse_word(w)) for w in args.param
    )
    launch = LaunchParams(args.grid, args.block, params)
    result = gpu.launch(image, launch, config, meta=meta, memory=memory,
                        check_invariants=args.check_invariants)
    for line in result.warnings:
        print(f"warning: {line}", file=sys.stderr)
    return result


def _write_outputs(args, result, weights):
    text = metrics.report(result, weights)
    if getattr(args, "report", None):
        Path(args.report).write_text(text)
    if getattr(args, "json_path", None):
        Path(args.json_path).write_text(metrics.report_json(result, weights))
    for spec in getattr(args, "dump", []):
        addr_text, length_text, path = spec.split(":", 2)
        data = result.memory.read_bytes(int(addr_text, 0), int(length_text, 0))
        Path(path).write_bytes(data)


def _load_weights(args):
    if getattr(args, "weights", None):
        return metrics.EnergyWeights.parse(Path(args.weights).read_text())
    return None


# --- subcommands ----------------------------------------------------------------------

def _cmd_asm(args):
    image, meta = kasm.assemble(Path(args.source).read_text())
    Path(args.output).write_bytes(write_container(image, meta))
    return 0

def _cmd_disasm(args):
    image, _ = load_kernel(args.kernel)
    sys.stdout.write(kasm.disassemble_image(image))
    return 0


def _cmd_run(args):
    image, meta = load_kernel(args.kernel)
    weights = _load_weights(args)
    config = _config_from_args(args, args.sms, args.sps)
    result = _run_once(args, image, meta, config)
    _write_outputs(args, result, weights)
    print(f"cycles={result.cycles}")
    return 0


def _cmd_profile(args):
    image, meta = load_kernel(args.kernel)
    weights = _load_weights(args)
    config = _config_from_args(args, args.sms, args.sps)
    result = _run_once(args, image, meta, config)
    _write_outputs(args, result, weights)
    prof = metrics.profile(result)
    for (block, warp) in sorted(prof.warp_depths):
        print(f"warp_depth.b{block}w{warp}={prof.warp_depths[(block, warp)]}")
    print(f"profile.max_stack_depth={prof.max_stack_depth}")
    print(f"profile.divergences={prof.divergences}")
    print(f"profile.idle_lane_fraction={prof.idle_lane_fraction:.6f}")
    return 0


def _cmd_sweep(args):
    image, meta = load_kernel(args.kernel)
    weights = _load_weights(args)
    sms_list = [int(v) for v in args.sms.split(",") if v]
    sps_list = [int(v) for v in args.sps.split(",") if v]
    out_dir = Path(args.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.kernel).stem
    for num_sms in sms_list:
        for sps in sps_list:
            config = _config_from_args(args, num_sms, sps)
            result = _run_once(args, image, meta, config)
            path = out_dir / f"{stem}.sms{num_sms}.sps{sps}.report"
            path.write_text(metrics.report(result, weights))
            print(f"sms={num_sms} sps={sps} cycles={result.cycles} report={path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a .gka source into a .gk container")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_asm)

    p = sub.add_parser("disasm", help="disassemble a .gk container")
    p.add_argument("kernel")
    p.set_defaults(fn=_cmd_disasm)

    p = sub.add_parser("run", help="run a kernel and report counters")
    _add_run_flags(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("profile", help="run a kernel and print its divergence profile")
    _add_run_flags(p)
    p.set_defaults(fn=_cmd_profile)

    p = sub.add_parser("sweep", help="run one kernel over a config grid")
    _add_run_flags(p, sweep=True)
    p.set_defaults(fn=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0
    try:
        return args.fn(args)
    except RuntimeFault as exc:
        print(f"error: {type(exc).__name__} {exc}", file=sys.stderr)
        return 3
    except GkError as exc:
        print(f"error: {type(exc).__name__} {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: Io {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
