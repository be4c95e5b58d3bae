"""Shared test utilities: micro-kernel builders and differential runners."""

from __future__ import annotations

import struct

import numpy as np

from gksim import gpu, kasm, scalar
from gksim.gpu import GpuConfig, LaunchParams
from gksim.memsys import MemoryImage


def words(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *(v & 0xFFFFFFFF for v in values))


def assemble(source: str):
    image, meta = kasm.assemble(source)
    return image, meta


def run_kernel(source: str, grid: int, block: int, params: bytes = b"",
               placements=(), config: GpuConfig | None = None, **kwargs):
    """Assemble and launch one kernel; returns the RunResult."""
    image, meta = kasm.assemble(source)
    config = config or GpuConfig()
    memory = MemoryImage(config.global_mem_bytes)
    for addr, data in placements:
        memory.write_words(addr, np.asarray(data, dtype="<u4"))
    return gpu.launch(image, LaunchParams(grid, block, params), config,
                      meta=meta, memory=memory, **kwargs)


def run_both(source: str, grid: int, block: int, params: bytes = b"",
             placements=(), config: GpuConfig | None = None,
             mem_words: int = 1 << 16):
    """Run the pipeline and the scalar reference on identical inputs.

    Returns (pipeline RunResult, pipeline dump, scalar memory bytes,
    scalar dump).  Memory is sized small so byte compares stay cheap.
    """
    config = config or GpuConfig(global_mem_bytes=mem_words * 4)
    image, meta = kasm.assemble(source)

    memory = MemoryImage(config.global_mem_bytes)
    smem = scalar.ScalarMemory(config.global_mem_bytes)
    for addr, data in placements:
        arr = np.asarray(data, dtype="<u4")
        memory.write_words(addr, arr)
        smem.data[addr:addr + 4 * len(arr)] = arr.tobytes()

    result = gpu.launch(image, LaunchParams(grid, block, params), config,
                        meta=meta, memory=memory, collect_registers=True,
                        check_invariants=True)
    smem, sdump = scalar.run(image, grid, block, params, memory=smem)
    return result, result.register_dump, bytes(smem.data), sdump


def assert_equivalent(source, grid, block, params=b"", placements=(),
                      config=None, mem_words=1 << 16):
    """Assert pipeline and scalar agree on memory and per-thread registers."""
    result, dump, smem_bytes, sdump = run_both(
        source, grid, block, params, placements, config, mem_words)
    assert result.memory.read_bytes(0, result.memory.size) == smem_bytes
    assert dump.keys() == sdump.keys()
    for key in dump:
        assert dump[key] == sdump[key], f"thread {key} diverged"
    return result


def divergence_tree_source(depth: int = 5) -> str:
    """Fully divergent micro-kernel: each lane walks its own nested path.

    A depth-d binary tree of SSY/BRA regions keyed on tid bits; each leaf
    stores its own tid into out[tid] (params: [out_ptr]).  With 2^d lanes
    every leaf is reached and the warp stack peaks at 2*depth entries.
    """
    lines = [
        ".kernel divtree",
        ".regs 8",
        "  MOV R4, R0          # leaf value accumulates nothing; tid path",
    ]
    counter = [0]

    def emit(level, prefix):
        if level == depth:
            value = sum(bit << (depth - 1 - i) for i, bit in enumerate(prefix))
            lines.append(f"  MVI R5, {value}")
            return
        node = counter[0]
        counter[0] += 1
        bit = 1 << (depth - 1 - level)
        lines.append(f"  AND R6, R0, {bit}")
        lines.append(f"  ISETP p0, R6, 0")
        lines.append(f"  SSY join{node}")
        lines.append(f"  @p0.NE BRA right{node}")
        emit(level + 1, prefix + [0])
        lines.append("  SYNC")
        lines.append(f"right{node}:")
        emit(level + 1, prefix + [1])
        lines.append("  SYNC")
        lines.append(f"join{node}:")

    emit(0, [])
    lines += [
        "  SHL R6, R0, 2",
        "  LDG R7, [A0+0]",
        "  IADD R7, R7, R6",
        "  R2A A1, R7",
        "  STG [A1+0], R5",
        "  EXIT",
    ]
    return "\n".join(lines) + "\n"


VECADD_SOURCE = """
.kernel vecadd32
.regs 8
  SHL R4, R1, 5
  IADD R4, R4, R0
  SHL R5, R4, 2
  LDG R6, [A0+0]
  IADD R6, R6, R5
  R2A A1, R6
  LDG R6, [A0+4]
  IADD R6, R6, R5
  R2A A2, R6
  LDG R7, [A1+0]
  LDG R6, [A2+0]
  IADD R7, R7, R6
  LDG R6, [A0+8]
  IADD R6, R6, R5
  R2A A3, R6
  STG [A3+0], R7
  EXIT
"""
