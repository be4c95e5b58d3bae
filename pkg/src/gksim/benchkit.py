"""Benchmark kernels, input generators, and host reference oracles.

Five integer benchmarks: bitonic sort, autocorrelation, matrix
multiplication, parallel reduction, and transpose.  Inputs are
deterministic pseudo-random 32-bit integers derived from (name, size,
seed); matmul and autocorr inputs are bounded to |x| < 2^15 so host
oracles stay simple, although all kernel arithmetic wraps mod 2^32
regardless.  `run_case` drives the simulator end to end (bitonic and
reduction are multi-launch sequences over one memory image) and returns
the output buffer plus summed cycle counts for scaling studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import gpu, kasm
from .gpu import GpuConfig, LaunchParams
from .memsys import PARAM_REGION_BYTES, MemoryImage

BENCH_NAMES = ("autocorr", "bitonic", "matmul", "reduction", "transpose")
SIZES = (32, 64, 128, 256)

DATA_BASE = PARAM_REGION_BYTES  # first byte above the parameter region

_KERNEL_FILES = {
    "autocorr_partial": "autocorr_partial.gka",
    "autocorr_combine": "autocorr_combine.gka",
    "bitonic": "bitonic_step.gka",
    "matmul": "matmul.gka",
    "reduction": "reduce_block.gka",
    "transpose": "transpose.gka",
    "vecadd": "vecadd.gka",
}

_image_cache: dict = {}


@dataclass(frozen=True)
class BenchCase:
    """One benchmark instance; matrices are size x size."""

    name: str
    size: int
    seed: int = 0x5EED_0F_C0FFEE

    def __post_init__(self):
        if self.name not in BENCH_NAMES:
            raise ValueError(f"unknown benchmark '{self.name}'")
        if self.size < 1:
            raise ValueError(f"size {self.size} must be positive")
        if self.name == "bitonic" and self.size & (self.size - 1):
            raise ValueError(f"bitonic size {self.size} is not a power of two")


def kernel_source(name: str) -> str:
    """Text of a shipped `.gka` kernel."""
    return (resources.files(__package__) / "kernels" / _KERNEL_FILES[name]).read_text()


def kernel_image(name: str):
    """Assembled (image, metadata) for a shipped kernel, cached."""
    if name not in _image_cache:
        _image_cache[name] = kasm.assemble(kernel_source(name))
    return _image_cache[name]


# --- deterministic input data ---------------------------------------------------

def _splitmix64(seed: int, count: int) -> np.ndarray:
    """Vectorized splitmix64 stream; stable across platforms."""
    with np.errstate(over="ignore"):
        idx = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def _rand_u32(seed: int, count: int) -> np.ndarray:
    return (_splitmix64(seed, count) & np.uint64(0xFFFFFFFF)).astype(np.uint32)


def _rand_small(seed: int, count: int) -> np.ndarray:
    """Values in (-2^15, 2^15), as their 32-bit two's-complement patterns."""
    v = (_splitmix64(seed, count) % np.uint64(0xFFFF)).astype(np.int64) - 0x7FFF
    return (v & 0xFFFFFFFF).astype(np.uint32)


def _case_seed(case: BenchCase, stream: int) -> int:
    return (case.seed * 1_000_003 + len(case.name) * 257 +
            sum(map(ord, case.name)) * 65537 + case.size * 97 + stream)


def gen_input(case: BenchCase) -> dict:
    """Named input buffers (uint32 bit patterns) for one case."""
    n = case.size
    if case.name == "matmul":
        return {
            "a": _rand_small(_case_seed(case, 0), n * n),
            "b": _rand_small(_case_seed(case, 1), n * n),
        }
    if case.name == "autocorr":
        return {"x": _rand_small(_case_seed(case, 0), n)}
    if case.name == "transpose":
        return {"x": _rand_u32(_case_seed(case, 0), n * n)}
    # bitonic sorts signed values; reduction wraps, any range is fine
    return {"x": _rand_u32(_case_seed(case, 0), n)}


def oracle(case: BenchCase, inputs: dict) -> np.ndarray:
    """Reference output (uint32 bit patterns) computed on the host."""
    n = case.size
    if case.name == "reduction":
        total = int(np.sum(inputs["x"].astype(np.int64))) & 0xFFFFFFFF
        return np.array([total], dtype=np.uint32)
    if case.name == "bitonic":
        return np.sort(inputs["x"].view(np.int32)).view(np.uint32)
    if case.name == "transpose":
        return inputs["x"].reshape(n, n).T.reshape(-1).copy()
    if case.name == "matmul":
        a = inputs["a"].view(np.int32).astype(np.int64).reshape(n, n)
        b = inputs["b"].view(np.int32).astype(np.int64).reshape(n, n)
        return ((a @ b) & 0xFFFFFFFF).astype(np.uint32).reshape(-1)
    # autocorr: r[k] = sum_i x[i] * x[i+k], zero-padded tail
    x = inputs["x"].view(np.int32).astype(np.int64)
    r = np.zeros(n, dtype=np.int64)
    for k in range(n):
        r[k] = np.dot(x[: n - k], x[k:])
    return (r & 0xFFFFFFFF).astype(np.uint32)


# --- end-to-end harness ------------------------------------------------------------

def _params(*words: int) -> bytes:
    return np.array(words, dtype="<u4").tobytes()


@dataclass
class BenchRun:
    """Simulator output for one case under one configuration."""

    case: BenchCase
    output: np.ndarray
    cycles: int
    results: list

    @property
    def max_stack_depth(self) -> int:
        return max(r.counters.max_stack_depth for r in self.results)

    @property
    def thread_instructions(self) -> int:
        return sum(r.counters.thread_instructions for r in self.results)


def launch_plan(case: BenchCase):
    """(launches, output address, output words) for one case.

    Each launch is (kernel name, grid_dim, block_dim, params bytes);
    multi-kernel benchmarks share one memory image across launches.
    """
    n = case.size
    base = DATA_BASE
    if case.name == "autocorr":
        if n % 32:
            raise ValueError("autocorr size must be a multiple of 32")
        partials = base + 4 * n
        out = partials + 16 * n
        return (
            [
                ("autocorr_partial", 4 * n // 32, 32, _params(base, partials, n)),
                ("autocorr_combine", n // 32, 32, _params(partials, out)),
            ],
            out,
            n,
        )
    if case.name == "bitonic":
        if n < 2 or n % 32:
            raise ValueError("bitonic size must be a power of two >= 32")
        launches = []
        k = 2
        while k <= n:
            j = k >> 1
            while j >= 1:
                launches.append(("bitonic", n // 32, 32, _params(base, j, k)))
                j >>= 1
            k <<= 1
        return launches, base, n
    if case.name == "matmul":
        words = n * n
        l2n = n.bit_length() - 1
        if n % 4 or words % 256 or 1 << l2n != n:
            raise ValueError("matmul size must be a power of two >= 16")
        a, b, c = base, base + 4 * words, base + 8 * words
        launch = ("matmul", words // 256, 256, _params(a, b, c, l2n, n - 1, 4 * n))
        return [launch], c, words
    if case.name == "transpose":
        words = n * n
        l2n = n.bit_length() - 1
        if words % 256 or 1 << l2n != n:
            raise ValueError("transpose size must be a power of two >= 16")
        out = base + 4 * words
        launch = ("transpose", words // 256, 256, _params(base, out, l2n, n - 1))
        return [launch], out, words
    # reduction: per-block partials, then one block over the partials
    if n % 32:
        raise ValueError("reduction size must be a multiple of 32")
    blocks = n // 32
    partials = base + 4 * n
    out = partials + 4 * blocks
    return (
        [
            ("reduction", blocks, 32, _params(base, partials)),
            ("reduction", 1, blocks, _params(partials, out)),
        ],
        out,
        1,
    )


def input_placements(case: BenchCase, inputs: dict):
    """(address, uint32 array) pairs to preload before the first launch."""
    if case.name == "matmul":
        words = case.size * case.size
        return [(DATA_BASE, inputs["a"]), (DATA_BASE + 4 * words, inputs["b"])]
    return [(DATA_BASE, inputs["x"])]


def run_case(case: BenchCase, config: GpuConfig = GpuConfig(), *,
             inputs: dict | None = None, collect_registers: bool = False,
             check_invariants: bool = False) -> BenchRun:
    """Generate inputs, run every launch of the case, read the output."""
    if inputs is None:
        inputs = gen_input(case)
    launches, out_addr, out_words = launch_plan(case)

    memory = MemoryImage(config.global_mem_bytes)
    for addr, data in input_placements(case, inputs):
        memory.write_words(addr, data)

    results = []
    for kernel, grid, block, params in launches:
        image, meta = kernel_image(kernel)
        results.append(gpu.launch(
            image, LaunchParams(grid, block, params), config,
            meta=meta, memory=memory,
            collect_registers=collect_registers,
            check_invariants=check_invariants,
        ))

    output = memory.read_words(out_addr, out_words)
    cycles = sum(r.counters.cycles for r in results)
    return BenchRun(case, output, cycles, results)
