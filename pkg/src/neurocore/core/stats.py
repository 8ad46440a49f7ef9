"""Gating statistics and the energy ledger.

Array kernels report an int64 vector per call with these slots:

====  ===============================  ===============================  ==========================
slot  FP selector-adder array          BP MAC array                     WG adder array
====  ===============================  ===============================  ==========================
0     dense first-stage adder slots    dense multiplier slots           dense accumulator slots
1     executed first-stage adds        executed multiplies              executed accumulates
2     dense partial-sum updates        dense partial-sum updates        unused
3     executed partial-sum updates     executed partial-sum updates     unused
4     spike vector reads               gradient vector reads            gradient vector reads
5     partial-sum reads                partial-sum reads                unused
6     partial-sum writes               partial-sum writes               unused
7     array steps (cycles)             array steps (cycles)             array steps (cycles)
8     dense adder-tree adds            dense adder-tree adds            unused
9     executed adder-tree adds         executed adder-tree adds         unused
10    weight-tile loads                weight-tile loads                unused
====  ===============================  ===============================  ==========================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

COMPONENTS = ("fp_engine", "bp_engine", "wg_engine", "sram", "dram", "noc")


@dataclass
class GatingStats:
    dense_ops: int = 0
    executed_ops: int = 0
    skipped_adds: int = 0
    skipped_macs: int = 0
    skipped_sram_reads: int = 0
    skipped_psum_updates: int = 0

    def add_fp(self, st):
        self.dense_ops += int(st[0] + st[8] + st[2])
        self.executed_ops += int(st[1] + st[9] + st[3])
        self.skipped_adds += int(st[0] - st[1] + st[8] - st[9])
        self.skipped_psum_updates += int(st[2] - st[3])
        self.skipped_sram_reads += int(st[2] - st[3])

    def add_bp(self, st):
        self.dense_ops += int(st[0] + st[8] + st[2])
        self.executed_ops += int(st[1] + st[9] + st[3])
        self.skipped_macs += int(st[0] - st[1])
        self.skipped_adds += int(st[8] - st[9])
        self.skipped_psum_updates += int(st[2] - st[3])
        self.skipped_sram_reads += int(st[2] - st[3])

    def add_wg(self, st, n_mtiles=1):
        self.dense_ops += int(st[0])
        self.executed_ops += int(st[1])
        self.skipped_adds += int(st[0] - st[1])
        self.skipped_sram_reads += int(st[7] - st[4])

    def merge(self, other: "GatingStats"):
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)

    def to_dict(self):
        return asdict(self)


@dataclass
class EnergyLedger:
    """Per-component dynamic energy in picojoules."""

    components: dict = field(default_factory=lambda: {c: 0.0 for c in COMPONENTS})

    def charge(self, component: str, pj: float):
        if component not in self.components:
            raise KeyError(component)
        if pj < 0:
            raise ValueError("energy charges are non-negative")
        self.components[component] += float(pj)

    def merge(self, other: "EnergyLedger"):
        for k, v in other.components.items():
            self.components[k] += v

    @property
    def total(self) -> float:
        return float(sum(self.components.values()))

    def dynamic(self, include=("fp_engine", "bp_engine", "wg_engine", "sram")) -> float:
        return float(sum(self.components[c] for c in include))

    def to_dict(self):
        d = dict(self.components)
        d["total"] = self.total
        return d
