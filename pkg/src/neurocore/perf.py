"""Batch-level performance model and reports.

Cycle accounting per training batch::

    P = P_fp_first + max(P_bp, P_wg)

where P_fp_first is the time until the first sample has cleared every
forward stage, and P_bp / P_wg are the spans of the backward and
weight-gradient phases after it. Utilisation counts array slots occupied
per cycle against the peak of all cores in the deployment; an FP adder
and a WG adder slot count one op, a BP multiply-accumulate counts two.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .arch import ArchConfig
from .errors import DegenerateBaseline

FP_PHASES = ("cfg", "fp")
BP_PHASES = ("bp",)
WG_PHASES = ("wg", "wb")
ENGINE_OPS = {"fp_array": "fp", "bp_array": "bp", "wg_array": "wg"}


def ops_per_core_cycle(arch: Optional[ArchConfig] = None) -> int:
    """Peak ops of one core per cycle: FP adds + BP MACs (2 ops) + WG adds."""
    arch = arch or ArchConfig()
    slots = arch.array_rows * arch.array_cols
    return slots + 2 * slots + slots


def peak_throughput(arch: Optional[ArchConfig] = None, cores: Optional[int] = None,
                    freq_mhz: Optional[float] = None) -> float:
    """Peak FP16 ops per second."""
    arch = arch or ArchConfig()
    cores = arch.cores if cores is None else cores
    freq = arch.core_freq_mhz if freq_mhz is None else freq_mhz
    return cores * ops_per_core_cycle(arch) * freq * 1e6


def pipeline_cycles(p_fp_first, p_bp, p_wg):
    for v in (p_fp_first, p_bp, p_wg):
        if v < 0:
            raise ValueError("phase cycle counts must be non-negative")
    return p_fp_first + max(p_bp, p_wg)


def sparse_reduction(p_0, p_100, p_snn) -> float:
    """Share of the sparsity-dependent energy removed, in percent."""
    if p_0 == p_100:
        raise DegenerateBaseline("zero- and full-sparsity baselines coincide")
    if p_0 < p_100:
        raise ValueError("the zero-sparsity baseline must not be below the full-sparsity one")
    return (p_0 - p_snn) / (p_0 - p_100) * 100.0


def phase_decompose(records) -> dict:
    """Split a trace into P_fp_first, P_bp and P_wg (core cycles)."""
    if not records:
        return {"P": 0, "P_fp_first": 0, "P_bp": 0, "P_wg": 0, "spans": {"fp": 0, "bp": 0, "wg": 0}}
    t_fp1 = max((r["end"] for r in records if r["phase"] in FP_PHASES and r["n"] <= 0), default=0)
    last = {"bp": None, "wg": None}
    span = {}
    for name, phases in (("fp", FP_PHASES), ("bp", BP_PHASES), ("wg", WG_PHASES)):
        rs = [r for r in records if r["phase"] in phases]
        span[name] = (max(r["end"] for r in rs) - min(r["start"] for r in rs)) if rs else 0
        if name in last and rs:
            last[name] = max(r["end"] for r in rs)
    p_bp = max(0, (last["bp"] or t_fp1) - t_fp1)
    p_wg = max(0, (last["wg"] or t_fp1) - t_fp1)
    P = max(r["end"] for r in records)
    return {"P": P, "P_fp_first": t_fp1, "P_bp": p_bp, "P_wg": p_wg, "spans": span}


def used_ops(records) -> dict:
    out = {"fp": 0, "bp": 0, "wg": 0}
    for r in records:
        k = ENGINE_OPS.get(r.get("engine"))
        if k:
            out[k] += int(r.get("used", 0))
    return out


def utilization(records, P, cores: int, arch: Optional[ArchConfig] = None) -> float:
    """Occupied array slots over the peak slots of ``cores`` for P cycles."""
    if P <= 0:
        return 0.0
    ops = used_ops(records)
    u = (ops["fp"] + ops["bp"] + ops["wg"]) / (P * ops_per_core_cycle(arch) * cores)
    return float(min(max(u, 0.0), 1.0))


def utilization_curve(records, cores: int, bucket: int = 256, arch: Optional[ArchConfig] = None) -> list:
    """Per-bucket utilisation of each engine class and of the whole core set."""
    arch = arch or ArchConfig()
    slots = arch.array_rows * arch.array_cols
    end = max((r["end"] for r in records), default=0)
    nb = max(1, -(-end // bucket))
    acc = {k: np.zeros(nb) for k in ("fp", "bp", "wg")}
    for r in records:
        k = ENGINE_OPS.get(r.get("engine"))
        if not k or r["end"] <= r["start"] or not r.get("used"):
            continue
        rate = r["used"] / (r["end"] - r["start"])
        a, b = r["start"], r["end"]
        for i in range(a // bucket, min(nb, -(-b // bucket))):
            lo, hi = max(a, i * bucket), min(b, (i + 1) * bucket)
            if hi > lo:
                acc[k][i] += rate * (hi - lo)
    peak = {"fp": slots, "bp": 2 * slots, "wg": slots}
    rows = []
    for i in range(nb):
        row = {"cycle": i * bucket}
        for k in acc:
            row[k] = float(acc[k][i] / (bucket * peak[k] * cores))
        row["core"] = float(sum(acc[k][i] for k in acc) / (bucket * ops_per_core_cycle(arch) * cores))
        rows.append(row)
    return rows


def dram_stats(dram_records, preloaded=()) -> tuple:
    """(peak live bytes, total accessed bytes) from DMA records.

    Regions become live when preloaded by the host or first written; the
    per-batch plan never frees them, so the peak is the union at the end.
    """
    total = 0
    spans = [(int(b), int(b) + int(n)) for b, n in preloaded]
    for rec in dram_records:
        _, kind, addr, length = rec
        total += int(length)
        if kind == "wr":
            spans.append((int(addr), int(addr) + int(length)))
    spans.sort()
    live = 0
    cur_lo = cur_hi = None
    for lo, hi in spans:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                live += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        live += cur_hi - cur_lo
    return live, total


@dataclass
class PerfReport:
    P: int
    P_fp_first: int
    P_bp: int
    P_wg: int
    util: float
    op_fp_used: int
    op_bp_used: int
    op_wg_used: int
    op_total_per_cycle: int
    cores: int
    batch: int
    fps: float
    serial_cycles: int
    dram_peak_bytes: int
    dram_bytes_accessed: int
    energy: dict = field(default_factory=dict)
    gating: dict = field(default_factory=dict)
    notes: str = "BP multiply-accumulate counted as 2 ops; utilisation uses occupied array slots"

    @property
    def pipelined(self) -> bool:
        return self.P < self.serial_cycles

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def report_from_records(records, cores, batch, arch=None, energy=None, gating=None, dram_records=(),
                        preloaded=()) -> PerfReport:
    arch = arch or ArchConfig()
    ph = phase_decompose(records)
    ops = used_ops(records)
    util = utilization(records, ph["P"], cores, arch)
    peak, total = dram_stats(dram_records, preloaded)
    fps = batch * arch.core_freq_mhz * 1e6 / ph["P"] if ph["P"] else 0.0
    serial = sum(ph["spans"].values())
    return PerfReport(ph["P"], ph["P_fp_first"], ph["P_bp"], ph["P_wg"], util, ops["fp"], ops["bp"], ops["wg"],
                      ops_per_core_cycle(arch), cores, batch, fps, serial, peak, total, dict(energy or {}),
                      dict(gating or {}))


def preloaded_regions(dram_layout) -> list:
    """Weight and input regions the host stages before a batch."""
    return [(v["base"], v["bytes"]) for k, v in dram_layout.items()
            if isinstance(v, dict) and (k == "input" or (k.startswith("w") and k[1:].isdigit()))]


def perf_report(sim, mapping=None, cores=None, batch=None, arch=None) -> PerfReport:
    """Performance summary of one simulated batch."""
    arch = arch or (mapping.arch if mapping is not None else ArchConfig())
    cores = cores or (len(mapping.cores) if mapping is not None else 1)
    batch = batch or (mapping.batch if mapping is not None else 1)
    pre = preloaded_regions(mapping.dram) if mapping is not None else []
    return report_from_records(sim.records, cores, batch, arch, sim.energy.to_dict(), sim.gating.to_dict(),
                               getattr(sim, "dram_records", []), pre)


def gpu_reference() -> list:
    """Externally reported GPU-comparison percentages (not measured here)."""
    with resources.files("neurocore.data").joinpath("gpu_reference.csv").open() as fh:
        return [dict(r, batch=int(r["batch"]), value_percent=float(r["value_percent"]))
                for r in csv.DictReader(fh)]


def emit_figure_data(report: PerfReport, records, out_dir, bucket: int = 256, arch=None) -> list:
    """Write utilisation curves, a summary and the reference table as CSV."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    curve = utilization_curve(records, report.cores, bucket, arch)
    p = d / "utilization_curve.csv"
    with open(p, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["cycle", "fp", "bp", "wg", "core"])
        w.writeheader()
        w.writerows(curve)
    paths.append(p)
    p = d / "perf_summary.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value", "source"])
        for k in ("P", "P_fp_first", "P_bp", "P_wg", "util", "fps", "dram_peak_bytes", "dram_bytes_accessed",
                  "serial_cycles"):
            w.writerow([k, getattr(report, k), "simulated"])
        for k, v in report.energy.items():
            w.writerow([f"energy_pj_{k}", v, "simulated"])
    paths.append(p)
    p = d / "gpu_reference.csv"
    with open(p, "w", newline="") as fh:
        rows = gpu_reference()
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    paths.append(p)
    return paths


# ---------------------------------------------------------------- sparsity study


RESNET18_PROFILE = {"spike": 0.90, "fire_prime": 0.68, "grad_u": 0.04}


def _study_block(rng, C, M, H, sparsity, arch):
    """Run the FP, BP and WG array work of one 3x3 conv layer on one core."""
    from .core.core import SubCore
    from .isa import GroupContext, Instruction, InstructionStream, Opcode

    n_in, n_out = C * H * H, M * H * H
    conv = {"C": C, "H": H, "W": H, "M": M, "E": H, "F": H, "R": 3, "stride": 1, "pad": 1, "pool": False}
    # the BP side sees this conv as the layer above a C-channel feature map
    below = {"C": C, "H": H, "W": H, "M": C, "E": H, "F": H, "R": 3, "stride": 1, "pad": 1, "pool": False,
             "next": conv}
    mt = max(1, min(M, (arch.banks["bp"]["dw"]["bytes"] // 2) // (C * 9)))
    fp_slot = {"T": 1, "N": 1, "geom": dict(conv, next=None), "neuron": {},
               "vars": {"S_IN": ["s_in", 0, n_in, 1], "W": ["w", 0, M * C * 9, 1],
                        "CONV_FP": ["conv_fp", 0, n_out, 1]}, "routes": {}}
    bp_slot = {"T": 1, "N": 1, "geom": below, "neuron": {"th_l": 0.0, "th_r": 2.0}, "dw_spill": True,
               "vars": {"DU_NEXT": ["du_next", 0, n_out, 1], "W_NEXT": ["w_next", 0, M * C * 9, 1],
                        "U_BP": ["u", 0, n_in, 1], "CONV_BP": ["conv_bp", 0, n_in, 1],
                        "SP_BP": ["s", 0, n_in, 1], "DW": ["dw", 0, mt * C * 9, 1]}, "routes": {}}
    fp = SubCore(arch, 0, "fp")
    bp = SubCore(arch, 0, "bp")
    w = np.round(rng.normal(0, 0.1, M * C * 9) * 1024) / 1024
    spikes = (rng.random(n_in) >= sparsity["spike"]).astype(np.uint8)
    u = np.where(rng.random(n_in) >= sparsity["fire_prime"], 1.0, 3.0)
    du = np.round(rng.normal(0, 0.05, n_out) * 1024) / 1024
    du[rng.random(n_out) < sparsity["grad_u"]] = 0.0
    du = np.where(du == 0, 0.0, du)
    fp.banks["s_in"].data[:n_in] = spikes
    fp.banks["w"].data[: w.size] = w
    bp.banks["du_next"].data[:n_out] = du
    bp.banks["w_next"].data[: w.size] = w
    bp.banks["u"].data[:n_in] = u
    bp.banks["s"].data[:n_in] = spikes
    fp_ins = [Instruction.make(Opcode.FP_CONV, s_h_size=H, s_w_size=H, k_size=3, padding=1, stride=1,
                               psum_acc=int(c0 > 0), c_size=min(16, C - c0), m_size=M, c_offset=c0)
              for c0 in range(0, C, 16)]
    bp_ins = [Instruction.make(Opcode.BP_CONV, du_h_size=H, du_w_size=H, k_size=3, padding=1, insert=0,
                               psum_acc=int(m0 > 0), m_size=min(16, M - m0), c_size=C, m_offset=m0)
              for m0 in range(0, M, 16)]
    bp_ins += [Instruction.make(Opcode.WG_CONV, s_h_size=H, s_w_size=H, du_h_size=H, du_w_size=H, insert=0,
                                dw_acc=0, dw_c_size=C, dw_m_size=min(mt, M - m0), dw_m_offset=m0)
               for m0 in range(0, M, mt)]
    for core, ins, slot in ((fp, fp_ins, fp_slot), (bp, bp_ins, bp_slot)):
        ins = ins + [Instruction.make(Opcode.BARRIER, sub_type=0)]
        core.load(InstructionStream(ins, 0, core.sub, [GroupContext(0, len(ins), 0, 0, 0, "fp")], {0: slot}))
        while not core.done:
            core.execute(core.next_start())
    return fp, bp


def dynamic_energy(profile, C=64, M=64, H=8, blocks=2, seed=0, arch=None, gated=True) -> dict:
    """Modelled compute+SRAM energy of a synthetic residual-block workload."""
    arch = dataclasses.replace(arch or ArchConfig(), gating=bool(gated))
    rng = np.random.default_rng(seed)
    tot = {"fp_engine": 0.0, "bp_engine": 0.0, "wg_engine": 0.0, "sram": 0.0}
    for _ in range(blocks):
        fp, bp = _study_block(rng, C, M, H, profile, arch)
        for core in (fp, bp):
            for k in tot:
                tot[k] += core.energy.components[k]
    tot["total"] = sum(tot.values())
    return tot


def sparsity_study(profile=None, **kw) -> dict:
    """Energy of the workload at 0%, 100% and the given sparsity profile."""
    profile = profile or RESNET18_PROFILE
    zero = {k: 0.0 for k in profile}
    full = {k: 1.0 for k in profile}
    e0 = dynamic_energy(zero, **kw)
    e100 = dynamic_energy(full, **kw)
    es = dynamic_energy(profile, **kw)
    out = {"p_0": e0["total"], "p_100": e100["total"], "p_snn": es["total"],
           "reduction": sparse_reduction(e0["total"], e100["total"], es["total"])}
    for k in ("fp_engine", "bp_engine", "wg_engine"):
        if e0[k] != e100[k]:
            out[f"reduction_{k}"] = sparse_reduction(e0[k], e100[k], es[k])
    return out
