"""Architecture description: mesh, clocks, SRAM banks, costs and energies."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

KB = 1024

# (key, display name, capacity in bytes, element kind) per sub-core.
FP_BANKS = (
    ("s_in", "s^{l-1}", 32 * KB, "bit"),
    ("w", "w^l", 576 * KB, "half"),
    ("conv_fp", "Conv_FP^l", 128 * KB, "half"),
    ("u", "u^l", 128 * KB, "half"),
    ("s", "s^l", 32 * KB, "bit"),
    ("spike", "Spike", 32 * KB, "bit"),
    ("others", "Others", 16 * KB, "half"),
)
BP_BANKS = (
    ("du_next", "∇u^{l+1}", 128 * KB, "half"),
    ("w_next", "w^{l+1}", 576 * KB, "half"),
    ("conv_bp", "Conv_BP^l", 128 * KB, "half"),
    ("du", "∇u^l", 128 * KB, "half"),
    ("u", "u^l", 128 * KB, "half"),
    ("s", "s^l", 8 * KB, "bit"),
    ("dw", "∇w^{l+1}", 9 * KB, "half"),
    ("others", "Others", 24 * KB, "half"),
)


def default_banks() -> dict:
    return {
        "fp": {k: {"label": lbl, "bytes": b, "kind": kind} for k, lbl, b, kind in FP_BANKS},
        "bp": {k: {"label": lbl, "bytes": b, "kind": kind} for k, lbl, b, kind in BP_BANKS},
    }


@dataclass
class EnergyTable:
    """Per-event dynamic energies in picojoules.

    Defaults are order-of-magnitude figures for a 28nm-class process: a
    binary16 add around 0.4 pJ and a multiply around 1.1 pJ, SRAM access
    energy per byte rising with macro size, LPDDR-class DRAM traffic near
    20 pJ/bit, and a 32-byte flit hop near 10 pJ. They are configuration,
    not measurements; reports use ratios and counts.
    """

    half_add: float = 0.4
    half_mul: float = 1.1
    compare: float = 0.1
    sram_small_byte: float = 0.3
    sram_large_byte: float = 1.2
    large_bank_bytes: int = 64 * KB
    dram_byte: float = 160.0
    noc_flit_hop: float = 10.0

    def sram_byte(self, capacity: int) -> float:
        return self.sram_large_byte if capacity >= self.large_bank_bytes else self.sram_small_byte


@dataclass
class ArchConfig:
    rows: int = 4
    cols: int = 8
    core_freq_mhz: int = 500
    router_freq_mhz: int = 667
    flit_bytes: int = 32
    queue_depth: int = 4
    array_rows: int = 16
    array_cols: int = 16
    array_fill: int = 5
    lanes: int = 16
    dma_latency: int = 20
    dram_bytes_per_cycle: int = 16
    ni_bytes_per_cycle: int = 32
    host_latency: int = 200
    gating: bool = True
    accumulate: str = "half"
    watchdog_ticks: int = 10**13
    banks: dict = field(default_factory=default_banks)
    energy: EnergyTable = field(default_factory=EnergyTable)

    def __post_init__(self):
        if isinstance(self.energy, dict):
            self.energy = EnergyTable(**self.energy)
        if self.rows < 1 or self.cols < 1:
            raise ValueError("mesh dimensions must be positive")
        if self.core_freq_mhz <= 0 or self.router_freq_mhz <= 0:
            raise ValueError("frequencies must be positive")

    @property
    def cores(self) -> int:
        return self.rows * self.cols

    # time base: one tick = 1 / (core_freq * router_freq) microseconds
    @property
    def core_period(self) -> int:
        return self.router_freq_mhz

    @property
    def router_period(self) -> int:
        return self.core_freq_mhz

    def bank(self, sub: str, key: str) -> dict:
        return self.banks[sub][key]

    def sram_bytes_total(self) -> int:
        return sum(b["bytes"] for sub in self.banks.values() for b in sub.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ArchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
