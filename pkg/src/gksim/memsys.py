"""Global and shared memory with per-lane masked access.

All kernel-visible accesses are 32-bit words at 4-byte-aligned byte
addresses.  Loads and stores take one address per lane plus an active-lane
mask; lanes outside the mask are never touched and never fault.  When two
active lanes store to the same address in one instruction, the highest
lane index wins (documented tie-break; real hardware leaves it undefined).

Kernel parameters are placed at global address 0; the data region starts
at PARAM_REGION_BYTES and input/output buffers live above it.
"""

from __future__ import annotations

import numpy as np

from .errors import OutOfBounds, ParamsTooLarge, UnalignedAccess

DEFAULT_GLOBAL_BYTES = 16 * 1024 * 1024
SHARED_BYTES_PER_SM = 16384
PARAM_REGION_BYTES = 4096

_U32 = "<u4"


def _check_lanes(addrs: np.ndarray, lanes, limit: int, space: str):
    """Alignment and bounds check; reports the lowest offending lane."""
    misaligned = (addrs & 3) != 0
    if misaligned.any():
        i = int(np.argmax(misaligned))
        lane = i if lanes is None else int(lanes[i])
        raise UnalignedAccess(f"{space} lane={lane} addr={int(addrs[i]):#x}")
    # uint32 compare also catches negative offsets that wrapped around
    oob = addrs > np.uint32(limit - 4)
    if oob.any():
        i = int(np.argmax(oob))
        lane = i if lanes is None else int(lanes[i])
        raise OutOfBounds(f"{space} lane={lane} addr={int(addrs[i]):#x}")


def _masked_load(words, base_words, addrs, mask, limit, space):
    """mask=None means all lanes; otherwise a boolean lane mask."""
    if mask is None:
        _check_lanes(addrs, None, limit, space)
        return words[base_words + (addrs >> 2)]
    out = np.zeros(len(addrs), dtype=np.uint32)
    if mask.any():
        lanes = np.nonzero(mask)[0]
        sel = addrs[lanes]
        _check_lanes(sel, lanes, limit, space)
        out[lanes] = words[base_words + (sel >> 2)]
    return out


def _masked_store(words, base_words, addrs, values, mask, limit, space):
    if mask is None:
        _check_lanes(addrs, None, limit, space)
        words[base_words + (addrs >> 2)] = values
        return
    if mask.any():
        lanes = np.nonzero(mask)[0]
        sel = addrs[lanes]
        _check_lanes(sel, lanes, limit, space)
        # fancy assignment applies in lane order: highest lane wins ties
        words[base_words + (sel >> 2)] = values[lanes]


class MemoryImage:
    """Byte-addressable global memory backed by one little-endian array."""

    def __init__(self, size: int = DEFAULT_GLOBAL_BYTES):
        if size <= 0 or size % 4 != 0:
            raise ValueError(f"global memory size {size} must be a positive multiple of 4")
        self.size = size
        self._bytes = np.zeros(size, dtype=np.uint8)
        self.words = self._bytes.view(_U32)

    def load(self, addrs: np.ndarray, mask=None) -> np.ndarray:
        """Per-lane word loads; mask=None loads every lane."""
        return _masked_load(self.words, 0, addrs, mask, self.size, "global")

    def store(self, addrs: np.ndarray, values: np.ndarray, mask=None):
        """Per-lane word stores; same-address conflicts: highest lane wins."""
        _masked_store(self.words, 0, addrs, values, mask, self.size, "global")

    # Host-side helpers (parameter setup, data files, dumps).

    def write_bytes(self, addr: int, data: bytes):
        if addr < 0 or addr + len(data) > self.size:
            raise OutOfBounds(f"host write addr={addr:#x} len={len(data)}")
        self._bytes[addr:addr + len(data)] = np.frombuffer(data, dtype=np.uint8)

    def read_bytes(self, addr: int, length: int) -> bytes:
        if addr < 0 or addr + length > self.size:
            raise OutOfBounds(f"host read addr={addr:#x} len={length}")
        return self._bytes[addr:addr + length].tobytes()

    def write_words(self, addr: int, values):
        self.write_bytes(addr, np.asarray(values, dtype=_U32).tobytes())

    def read_words(self, addr: int, count: int):
        return np.frombuffer(self.read_bytes(addr, count * 4), dtype=_U32).copy()


def init_params(mem: MemoryImage, params: bytes):
    """Place the kernel parameter block at global address 0."""
    if len(params) > PARAM_REGION_BYTES:
        raise ParamsTooLarge(
            f"{len(params)} parameter bytes exceed the {PARAM_REGION_BYTES}-byte region"
        )
    if params:
        mem.write_bytes(0, params)


class SharedMem:
    """One SM's shared memory, partitioned among resident blocks.

    A partition is addressed block-relative from 0; accesses are bounded
    by the kernel's declared shared_bytes so a block can never observe
    another block's partition.
    """

    def __init__(self, size: int = SHARED_BYTES_PER_SM):
        self.size = size
        self._bytes = np.zeros(size, dtype=np.uint8)
        self.words = self._bytes.view(_U32)

    def partition(self, base_bytes: int, limit_bytes: int) -> "SharedPartition":
        if base_bytes % 4 != 0 or base_bytes + limit_bytes > self.size:
            raise ValueError(
                f"partition base={base_bytes} limit={limit_bytes} does not fit"
            )
        return SharedPartition(self, base_bytes, limit_bytes)

    def fill(self, value: int):
        self.words[:] = np.uint32(value)


class SharedPartition:
    """Block-relative window onto an SM's shared memory."""

    def __init__(self, shared: SharedMem, base_bytes: int, limit_bytes: int):
        self.base_words = base_bytes >> 2
        self.limit = limit_bytes
        self.words = shared.words

    def load(self, addrs: np.ndarray, mask=None) -> np.ndarray:
        return _masked_load(self.words, self.base_words, addrs, mask,
                            self.limit, "shared")

    def store(self, addrs: np.ndarray, values: np.ndarray, mask=None):
        _masked_store(self.words, self.base_words, addrs, values, mask,
                      self.limit, "shared")
