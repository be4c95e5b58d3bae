"""Deterministic simulator of a soft SIMT GPGPU overlay.

Functional and cycle-approximate model of a small integer GPGPU: a
27-instruction ISA with assembler and bit-exact binary encoding, warp-stack
branch divergence, multi-SM block scheduling under hard resource limits,
event counters with an energy-proxy model, and a configuration system for
application-class customization (warp-stack depth, operand units,
multiplier removal).
"""

from . import benchkit, errors, isa, kasm, memsys, metrics, scalar, smcore
from .gpu import (
    GpuConfig,
    LaunchParams,
    RunResult,
    launch,
    occupancy,
    schedule_blocks,
    validate_config,
)
from .isa import CondCode, Form, Instruction, Opcode, decode, disassemble, encode
from .kasm import KernelImage, KernelMetadata, analyze, assemble
from .memsys import MemoryImage
from .metrics import Counters, EnergyWeights, energy_estimate, profile, report

__version__ = "0.1.0"

__all__ = [
    "CondCode",
    "Counters",
    "EnergyWeights",
    "Form",
    "GpuConfig",
    "Instruction",
    "KernelImage",
    "KernelMetadata",
    "LaunchParams",
    "MemoryImage",
    "Opcode",
    "RunResult",
    "analyze",
    "assemble",
    "benchkit",
    "decode",
    "disassemble",
    "encode",
    "energy_estimate",
    "errors",
    "isa",
    "kasm",
    "launch",
    "memsys",
    "metrics",
    "occupancy",
    "profile",
    "report",
    "scalar",
    "schedule_blocks",
    "smcore",
    "validate_config",
]
