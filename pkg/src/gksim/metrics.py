"""Event counters, energy-proxy estimation, profiling, and reports.

Counters are collected per SM and merged at completion.  Energy is a
transparent linear model: each counter class has a nonnegative weight
(default 1) and the estimate is the weighted sum.  It stands in for
physical power measurements and supports relative customization studies,
not absolute figures.

Reports are stable line-oriented `key=value` text with a fixed field
order, plus an optional JSON rendering; counters parse back from report
text bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .isa import Opcode

# Counter classes, in report order.  `cycles` is the device cycle count;
# the remaining classes are event tallies summed over SMs.
COUNTER_FIELDS = (
    "cycles",
    "warp_instructions_retired",
    "thread_instructions",
    "global_loads",
    "global_stores",
    "shared_loads",
    "shared_stores",
    "register_reads",
    "register_writes",
    "stack_pushes",
    "stack_pops",
    "barriers",
    "divergences",
    "pred_idle_lanes",
)


def _zero_histogram():
    return {op: 0 for op in Opcode}


@dataclass
class Counters:
    cycles: int = 0
    warp_instructions_retired: int = 0
    thread_instructions: int = 0
    global_loads: int = 0
    global_stores: int = 0
    shared_loads: int = 0
    shared_stores: int = 0
    register_reads: int = 0
    register_writes: int = 0
    stack_pushes: int = 0
    stack_pops: int = 0
    barriers: int = 0
    divergences: int = 0
    pred_idle_lanes: int = 0
    histogram: dict = field(default_factory=_zero_histogram)
    warp_depths: dict = field(default_factory=dict)  # (block, warp) -> max depth

    def __add__(self, other: "Counters") -> "Counters":
        out = Counters()
        for name in COUNTER_FIELDS:
            setattr(out, name, getattr(self, name) + getattr(other, name))
        for op in Opcode:
            out.histogram[op] = self.histogram[op] + other.histogram[op]
        out.warp_depths = dict(self.warp_depths)
        for key, depth in other.warp_depths.items():
            if depth > out.warp_depths.get(key, -1):
                out.warp_depths[key] = depth
        return out

    @property
    def max_stack_depth(self) -> int:
        return max(self.warp_depths.values(), default=0)

    @classmethod
    def from_sm(cls, sm_counters) -> "Counters":
        """Lift one SM's raw tallies (cycles stay 0; the device sets them)."""
        out = cls()
        out.warp_instructions_retired = sm_counters.warp_instructions
        out.thread_instructions = sm_counters.thread_instructions
        out.global_loads = sm_counters.global_loads
        out.global_stores = sm_counters.global_stores
        out.shared_loads = sm_counters.shared_loads
        out.shared_stores = sm_counters.shared_stores
        out.register_reads = sm_counters.register_reads
        out.register_writes = sm_counters.register_writes
        out.stack_pushes = sm_counters.stack_pushes
        out.stack_pops = sm_counters.stack_pops
        out.barriers = sm_counters.barriers
        out.divergences = sm_counters.divergences
        out.pred_idle_lanes = sm_counters.pred_idle_lanes
        for op in Opcode:
            out.histogram[op] = sm_counters.histogram[op]
        out.warp_depths = dict(sm_counters.warp_depths)
        return out


@dataclass
class EnergyWeights:
    """One nonnegative cost per counter class, arbitrary energy units."""

    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.weights.items():
            if name not in COUNTER_FIELDS:
                raise ConfigError(f"unknown counter class '{name}'")
            if value < 0:
                raise ConfigError(f"negative weight for '{name}'")

    def get(self, name: str) -> float:
        return self.weights.get(name, 1.0)

    @classmethod
    def parse(cls, text: str) -> "EnergyWeights":
        """Parse `counter_class=weight` lines; '#' starts a comment."""
        weights = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"weights line {lineno}: expected class=weight")
            name, _, value = line.partition("=")
            try:
                weights[name.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"weights line {lineno}: bad weight '{value}'") from None
        return cls(weights)


def energy_estimate(counters: Counters, weights: EnergyWeights | None = None) -> float:
    """Weighted sum over counter classes; linear in both arguments."""
    if weights is None:
        weights = EnergyWeights()
    return float(sum(getattr(counters, name) * weights.get(name)
                     for name in COUNTER_FIELDS))


@dataclass
class ProfileReport:
    """Runtime divergence profile of one run."""

    warp_depths: dict
    max_stack_depth: int
    divergences: int
    idle_lane_fraction: float


def profile(run) -> ProfileReport:
    """Per-warp and global stack-depth maxima plus predication idling.

    The global maximum is the smallest warp_stack_depth configuration
    under which the same run completes; one less deterministically aborts
    with StackOverflow.
    """
    ct = run.counters
    idle = 0.0
    if ct.thread_instructions:
        idle = ct.pred_idle_lanes / ct.thread_instructions
    return ProfileReport(
        warp_depths=dict(ct.warp_depths),
        max_stack_depth=ct.max_stack_depth,
        divergences=ct.divergences,
        idle_lane_fraction=idle,
    )


def _config_items(config):
    return (
        ("num_sms", config.num_sms),
        ("sps_per_sm", config.sps_per_sm),
        ("warp_stack_depth", config.warp_stack_depth),
        ("operand_units", config.operand_units),
        ("mad_enabled", int(config.mad_enabled)),
        ("global_mem_penalty", config.global_mem_penalty),
        ("shared_mem_penalty", config.shared_mem_penalty),
        ("global_mem_bytes", config.global_mem_bytes),
    )


def report(run, weights: EnergyWeights | None = None) -> str:
    """Line-oriented key=value report with a fixed field order."""
    ct = run.counters
    prof = profile(run)
    lines = [
        f"status={run.status}",
        f"kernel={run.kernel_name}",
        f"grid_dim={run.grid_dim}",
        f"block_dim={run.block_dim}",
    ]
    for name, value in _config_items(run.config):
        lines.append(f"config.{name}={value}")
    for name in COUNTER_FIELDS:
        lines.append(f"{name}={getattr(ct, name)}")
    for op in Opcode:
        lines.append(f"histogram.{op.name}={ct.histogram[op]}")
    for (block, warp) in sorted(ct.warp_depths):
        lines.append(f"warp_depth.b{block}w{warp}={ct.warp_depths[(block, warp)]}")
    lines.append(f"profile.max_stack_depth={prof.max_stack_depth}")
    lines.append(f"profile.divergences={prof.divergences}")
    lines.append(f"profile.idle_lane_fraction={prof.idle_lane_fraction:.6f}")
    lines.append(f"energy={energy_estimate(ct, weights):.6f}")
    return "\n".join(lines) + "\n"


def report_json(run, weights: EnergyWeights | None = None) -> str:
    """JSON rendering of the same report content (sorted keys)."""
    ct = run.counters
    prof = profile(run)
    doc = {
        "status": run.status,
        "kernel": run.kernel_name,
        "grid_dim": run.grid_dim,
        "block_dim": run.block_dim,
        "config": {name: value for name, value in _config_items(run.config)},
        "counters": {name: getattr(ct, name) for name in COUNTER_FIELDS},
        "histogram": {op.name: ct.histogram[op] for op in Opcode},
        "warp_depths": {
            f"b{b}w{w}": d for (b, w), d in sorted(ct.warp_depths.items())
        },
        "profile": {
            "max_stack_depth": prof.max_stack_depth,
            "divergences": prof.divergences,
            "idle_lane_fraction": prof.idle_lane_fraction,
        },
        "energy": energy_estimate(ct, weights),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


_DEPTH_KEY_PREFIX = "warp_depth.b"


def parse_counters(text: str) -> Counters:
    """Rebuild Counters from report text (inverse of report())."""
    out = Counters()
    by_name = {op.name: op for op in Opcode}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        if key in COUNTER_FIELDS:
            setattr(out, key, int(value))
        elif key.startswith("histogram."):
            out.histogram[by_name[key[len("histogram."):]]] = int(value)
        elif key.startswith(_DEPTH_KEY_PREFIX):
            block, _, warp = key[len(_DEPTH_KEY_PREFIX):].partition("w")
            out.warp_depths[(int(block), int(warp))] = int(value)
    return out
