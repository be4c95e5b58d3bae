"""Whole-device model: configuration, occupancy, block scheduling, launch.

A launch validates the kernel against the configuration, computes how many
blocks fit on an SM concurrently, assigns block i to SM (i mod num_sms),
and advances all SMs in lockstep (the interleaving is ordered by global
cycle, then SM index, so multi-SM runs are deterministic and cycle counts
well defined).  When a block completes, its SM receives the lowest
unassigned block designated for it.

Every thread starts with R0=threadIdx.x, R1=blockIdx.x, R2=blockDim.x,
R3=gridDim.x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import kasm, memsys, metrics, smcore
from .errors import ConfigError, InvalidSpCount, Unlaunchable, UnsupportedInstruction
from .isa import Opcode
from .kasm import KernelImage, KernelMetadata
from .memsys import MemoryImage
from .smcore import (
    BLOCKS_PER_SM,
    REGISTERS_PER_SM,
    WARP_SIZE,
    WARPS_PER_SM,
    SmCore,
)

MAX_BLOCK_THREADS = 256


@dataclass(frozen=True)
class GpuConfig:
    """Device shape plus customization knobs.

    Removing the multiplier (mad_enabled=False) also removes the third
    read-operand unit, so operand_units=2 requires mad_enabled=False.
    """

    num_sms: int = 1
    sps_per_sm: int = 8
    warp_stack_depth: int = 32
    operand_units: int = 3
    mad_enabled: bool = True
    global_mem_penalty: int = 10
    shared_mem_penalty: int = 2
    global_mem_bytes: int = memsys.DEFAULT_GLOBAL_BYTES

    def __post_init__(self):
        if self.num_sms < 1:
            raise ConfigError(f"num_sms={self.num_sms} (need at least 1)")
        if self.sps_per_sm not in (8, 16, 32):
            raise InvalidSpCount(f"sps_per_sm={self.sps_per_sm} (must be 8, 16, or 32)")
        if not 0 <= self.warp_stack_depth <= 32:
            raise ConfigError(
                f"warp_stack_depth={self.warp_stack_depth} (valid range 0..32)"
            )
        if self.operand_units not in (2, 3):
            raise ConfigError(f"operand_units={self.operand_units} (must be 2 or 3)")
        if self.operand_units == 2 and self.mad_enabled:
            raise ConfigError(
                "operand_units=2 removes the multiplier; requires mad_enabled=False"
            )
        if self.global_mem_penalty < 0 or self.shared_mem_penalty < 0:
            raise ConfigError("memory penalties must be nonnegative")
        if self.global_mem_bytes <= 0 or self.global_mem_bytes % 4:
            raise ConfigError("global_mem_bytes must be a positive multiple of 4")


@dataclass
class LaunchParams:
    """1-D grid/block geometry plus the kernel parameter block."""

    grid_dim: int
    block_dim: int
    params: bytes = b""

    def validate(self):
        if self.grid_dim < 1:
            raise Unlaunchable(f"grid_dim={self.grid_dim} (need at least 1 block)")
        if not 1 <= self.block_dim <= MAX_BLOCK_THREADS:
            raise Unlaunchable(
                f"block_dim={self.block_dim} (a thread block holds up to "
                f"{MAX_BLOCK_THREADS} threads)"
            )


@dataclass
class RunResult:
    status: str
    memory: MemoryImage
    counters: metrics.Counters
    config: GpuConfig
    kernel_name: str
    grid_dim: int
    block_dim: int
    warnings: list = field(default_factory=list)
    register_dump: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return self.counters.cycles


def validate_config(meta: KernelMetadata, config: GpuConfig):
    """Reject kernels needing removed hardware; warn on risky stack depth.

    Returns a list of warning strings.  A static SSY depth above the
    configured warp stack depth is only a warning because the runtime
    StackOverflow guard is authoritative (the static figure is a
    flow-insensitive over-approximation).
    """
    if not config.mad_enabled:
        for op in (Opcode.IMAD, Opcode.IMUL):
            if meta.histogram[op] > 0:
                raise UnsupportedInstruction(op.name)
    warnings = []
    if meta.static_ssy_depth > config.warp_stack_depth:
        warnings.append(
            f"static SSY depth {meta.static_ssy_depth} exceeds configured "
            f"warp_stack_depth {config.warp_stack_depth}; run may abort"
        )
    return warnings


def occupancy(block_dim: int, regs_per_thread: int, shared_bytes: int) -> int:
    """Max concurrent blocks per SM under the physical limits.

    min( blocks-per-SM cap,
         warp slots    24 // ceil(block_dim/32),
         registers     8192 // (regs_per_thread * block_dim),
         shared memory 16384 // shared_bytes   (no limit when 0) )
    """
    warps_per_block = -(-block_dim // WARP_SIZE)
    limit = min(
        BLOCKS_PER_SM,
        WARPS_PER_SM // warps_per_block,
        REGISTERS_PER_SM // (regs_per_thread * block_dim),
    )
    if shared_bytes:
        limit = min(limit, memsys.SHARED_BYTES_PER_SM // shared_bytes)
    if limit < 1:
        raise Unlaunchable(
            f"block_dim={block_dim} regs={regs_per_thread} shared={shared_bytes} "
            "exceeds per-SM resources"
        )
    return limit


def schedule_blocks(grid_dim: int, num_sms: int):
    """Static round-robin assignment: block i runs on SM (i mod num_sms).

    Each SM consumes its list in order, holding at most `occupancy` blocks
    at once and refilling with its lowest unassigned block on completion.
    """
    return [list(range(sm, grid_dim, num_sms)) for sm in range(num_sms)]


def launch(image: KernelImage, params: LaunchParams,
           config: GpuConfig = GpuConfig(), *,
           meta: KernelMetadata | None = None,
           memory: MemoryImage | None = None,
           collect_registers: bool = False,
           check_invariants: bool = False,
           trace: list | None = None) -> RunResult:
    """Run one kernel to completion; deterministic for identical inputs.

    Pass `memory` to chain launches over one global memory image (the
    parameter block at address 0 is rewritten each launch).  Runtime
    faults (StackOverflow, OutOfBounds, ...) propagate as exceptions with
    block/warp/pc context.
    """
    params.validate()
    if meta is None:
        meta = kasm.analyze(image)
    warnings = validate_config(meta, config)
    occ = occupancy(params.block_dim, image.regs_per_thread, image.shared_bytes)

    if memory is None:
        memory = MemoryImage(config.global_mem_bytes)
    memsys.init_params(memory, params.params)

    program = smcore.compile_program(
        image.code, image.entry,
        config.global_mem_penalty, config.shared_mem_penalty,
    )
    queues = schedule_blocks(params.grid_dim, config.num_sms)
    sms = []
    for index in range(config.num_sms):
        sm = SmCore(
            index, program, image, config, memory, queues[index],
            params.grid_dim, params.block_dim,
            collect_registers=collect_registers,
            check_invariants=check_invariants,
            trace=trace,
        )
        sm.set_occupancy(occ)
        while sm.can_load_block():
            sm.load_block(0)
        sms.append(sm)

    # lockstep event loop: (cycle, sm index) orders all scheduling decisions
    if len(sms) == 1:
        sms[0].run_single()
    else:
        while True:
            best = None
            for sm in sms:
                ev = sm.next_event()
                if ev is not None and (best is None or ev < best):
                    best = ev
            if best is None:
                break
            for sm in sms:
                if sm.next_event() == best:
                    sm.advance(best)

    for sm in sms:
        sm.assert_live()

    counters = metrics.Counters()
    for sm in sms:
        counters = counters + metrics.Counters.from_sm(sm.ct)
    counters.cycles = max((sm.finish_cycle for sm in sms), default=0)

    register_dump = {}
    if collect_registers:
        for sm in sms:
            register_dump.update(sm.register_dump)

    return RunResult(
        status="success",
        memory=memory,
        counters=counters,
        config=config,
        kernel_name=image.name,
        grid_dim=params.grid_dim,
        block_dim=params.block_dim,
        warnings=warnings,
        register_dump=register_dump,
    )
