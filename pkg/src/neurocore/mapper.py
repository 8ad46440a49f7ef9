"""Compiler: split a model into per-layer FP/BP sub-graphs, place them on
the mesh and emit one device stream per sub-core.

Every conv/fc block becomes a *slot*; slot 0 is the input stage (a DMA of
host-encoded spikes, or an LIF encoder fed with image currents). The FP
sub-core of slot l computes layer l forward; the BP sub-core of slot l
computes its membrane-potential gradient, the input gradient of layer
l+1 (which needs layer l's fire') and the weight gradient of layer l+1
(which needs layer l's output spikes).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .arch import ArchConfig
from .errors import CapacityError, UnsupportedOp
from .isa import (RECV, Channel, DataType, GroupContext, Instruction, InstructionStream, Opcode, VAR_BANK,
                  read_device_file, validate, write_device_file)
from .snn.layers import BN, CONV, FC, POOL, ModelGraph

TILE = 16
DRAM_ALIGN = 64


def _ceil(a, b):
    return -(-a // b)


def _pad8(n):
    return _ceil(n, 8) * 8


# ---------------------------------------------------------------- sub-graphs


@dataclass
class SubGraph:
    block: int
    phase: str  # "fp" or "bp"
    ops: tuple


def split_graph(model: ModelGraph) -> list:
    """One (FP, BP) sub-graph pair per conv/fc layer, BN and pooling fused."""
    for layer in model.layers:
        if layer.kind not in (CONV, FC, POOL, BN):
            raise UnsupportedOp(f"layer kind {layer.kind!r} has no instruction mapping")
    pairs = []
    for blk in model.blocks():
        fwd = ["conv"] + (["bn"] if blk.bn else []) + ["soma", "fire"] + (["pool"] if blk.pool else [])
        bwd = (["unpool"] if blk.pool else []) + ["grad"] + (["bn_grad"] if blk.bn else []) + ["wg"]
        if blk.index > 0:
            bwd.append("bp_conv")
        pairs.append((SubGraph(blk.index, "fp", tuple(fwd)), SubGraph(blk.index, "bp", tuple(bwd))))
    return pairs


# ---------------------------------------------------------------- partition


def balance_partition(costs, k: int) -> list:
    """Split ``costs`` into at most k contiguous groups minimising the largest
    group sum (exact dynamic programme). Returns lists of item indices."""
    costs = [float(c) for c in costs]
    n = len(costs)
    if k < 1:
        raise ValueError("k must be >= 1")
    if any(c < 0 for c in costs):
        raise ValueError("costs must be non-negative")
    if n == 0:
        return []
    k = min(k, n)
    pre = [0.0]
    for c in costs:
        pre.append(pre[-1] + c)
    inf = float("inf")
    best = [[inf] * (k + 1) for _ in range(n + 1)]
    cut = [[0] * (k + 1) for _ in range(n + 1)]
    best[0][0] = 0.0
    for j in range(1, k + 1):
        for i in range(j, n + 1):
            for p in range(j - 1, i):
                v = max(best[p][j - 1], pre[i] - pre[p])
                if v < best[i][j]:
                    best[i][j] = v
                    cut[i][j] = p
    # fewest groups reaching the optimum would merge layers needlessly; use all k
    groups = []
    i, j = n, k
    while j > 0:
        p = cut[i][j]
        groups.append(list(range(p, i)))
        i, j = p, j - 1
    return groups[::-1]


def partition_cost(costs, groups) -> float:
    return max((sum(costs[i] for i in g) for g in groups), default=0.0)


# ---------------------------------------------------------------- cycle estimates


def estimate_layer_cycles(spec, batch: int, timesteps: int, arch: Optional[ArchConfig] = None,
                          pool: bool = False) -> dict:
    """Closed-form trip counts of one layer's instructions for a whole batch.

    fp: FP array (one instruction per 16-channel input tile); soma: Soma
    lanes; bp: BP array on this layer's weights (producing the previous
    layer's input gradient); wg: WG array; grad: Grad lanes.
    """
    arch = arch or ArchConfig()
    fill = arch.array_fill
    lanes = arch.lanes
    nt = batch * timesteps
    C, M, R, S = spec.C, spec.M, spec.R, spec.S
    E, F, H, W = spec.E, spec.F, spec.H, spec.W
    ct, mt = _ceil(C, TILE), _ceil(M, TILE)
    fp = nt * (mt * ct * R * S * E * F + ct * fill)
    soma = nt * M * _ceil(E * F, lanes)
    bp = nt * (mt * ct * R * S * H * W + mt * fill)
    wg = nt * (mt * ct * R * S * E * F + fill)
    grad = nt * M * _ceil(E * F, lanes)
    return {"fp": fp, "soma": soma, "bp": bp, "wg": wg, "grad": grad,
            "total": fp + soma + bp + wg + grad}


# ---------------------------------------------------------------- mapping


@dataclass
class Mapping:
    model: ModelGraph
    arch: ArchConfig
    batch: int
    input_kind: str
    slots: dict  # slot id -> plan dict
    placement: dict  # slot id -> core id
    streams: dict  # (core, sub) -> InstructionStream
    dram: dict
    est_cycles: dict
    spill: dict
    notes: list = field(default_factory=list)

    @property
    def cores(self) -> list:
        return sorted(set(self.placement.values()))

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    def manifest(self) -> dict:
        return {
            "batch": self.batch,
            "timesteps": self.model.timesteps,
            "input_kind": self.input_kind,
            "layers": [{"slot": s, "name": p["name"], "core": self.placement[s],
                        "est_cycles": self.est_cycles.get(s)} for s, p in sorted(self.slots.items())],
            "cores": self.cores,
            "spill": {str(k): v for k, v in self.spill.items()},
            "dram": self.dram,
            "streams": [{"core": c, "sub": sub, "length": len(st)} for (c, sub), st in sorted(self.streams.items())],
            "notes": self.notes,
        }

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for (c, sub), st in self.streams.items():
            write_device_file(d / f"core{c:02d}_{sub}.bin", st)
        with open(d / "manifest.json", "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
        self.model.save(d / "model.json")
        self.arch.save(d / "arch.json")
        return d

    @classmethod
    def load(cls, directory) -> "Mapping":
        """Rebuild a runnable mapping from a directory written by ``save``."""
        d = Path(directory)
        with open(d / "manifest.json") as fh:
            man = json.load(fh)
        model = ModelGraph.load(d / "model.json")
        arch = ArchConfig.load(d / "arch.json")
        streams = {}
        for e in man["streams"]:
            st = read_device_file(d / f"core{e['core']:02d}_{e['sub']}.bin")
            streams[(st.core_id, st.sub_core)] = st
        placement = {e["slot"]: e["core"] for e in man["layers"]}
        slots = {e["slot"]: {"name": e["name"]} for e in man["layers"]}
        est = {e["slot"]: e["est_cycles"] for e in man["layers"]}
        return cls(model, arch, man["batch"], man["input_kind"], slots, placement, streams, man["dram"], est,
                   {int(k): v for k, v in man["spill"].items()}, list(man.get("notes", [])))

    def validate(self) -> dict:
        return {k: validate(s, self.arch) for k, s in self.streams.items()}


def snake_order(arch: ArchConfig) -> list:
    out = []
    for y in range(arch.rows):
        xs = range(arch.cols) if y % 2 == 0 else range(arch.cols - 1, -1, -1)
        out.extend(y * arch.cols + x for x in xs)
    return out


def _neuron(cfg) -> dict:
    return {"alpha": cfg.alpha, "th_f": cfg.th_f, "th_l": cfg.th_l, "th_r": cfg.th_r}


def _layer_geom(blk) -> dict:
    sp = blk.conv
    if sp.R != sp.S:
        raise UnsupportedOp(f"{sp.name or 'layer'}: only square kernels are encodable")
    if sp.stride not in (1, 2) or sp.R not in (1, 3, 5, 7) or sp.padding >= sp.R:
        raise UnsupportedOp(f"{sp.name or 'layer'}: kernel {sp.R}, stride {sp.stride}, padding {sp.padding}"
                            " is outside the instruction set")
    return {"C": sp.C, "H": sp.H, "W": sp.W, "M": sp.M, "E": sp.E, "F": sp.F, "R": sp.R,
            "stride": sp.stride, "pad": sp.padding, "pool": bool(blk.pool)}


class _Alloc:
    def __init__(self, arch, sub):
        self.arch = arch
        self.sub = sub
        self.next = {}

    def free(self, bank) -> int:
        b = self.arch.bank(self.sub, bank)
        cap = b["bytes"] // 2 if b["kind"] == "half" else b["bytes"] * 8
        return cap - self.next.get(bank, 0)

    def take(self, bank, per, count, what):
        b = self.arch.bank(self.sub, bank)
        align = 8
        base = _ceil(self.next.get(bank, 0), align) * align
        end = base + per * count
        cap = b["bytes"] // 2 if b["kind"] == "half" else b["bytes"] * 8
        if end > cap:
            raise CapacityError(f"{what}: {per}x{count} elements do not fit bank {b['label']} "
                                f"({cap - base} free)")
        self.next[bank] = end
        return base


def map_model(model: ModelGraph, batch: int, arch: Optional[ArchConfig] = None, cores: Optional[int] = None,
              input_kind: Optional[str] = None) -> Mapping:
    """Place the model on the mesh and compile its training streams for one batch."""
    arch = arch or ArchConfig()
    model.validate()
    blocks = model.blocks()
    for blk in blocks:
        if blk.bn:
            raise UnsupportedOp("batch norm is executed by the golden model only")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    T = model.timesteps
    inp = model.input
    if input_kind is None:
        input_kind = "direct" if inp.encoding == "direct" else "spikes"
    if input_kind not in ("direct", "spikes"):
        raise ValueError(f"unknown input kind {input_kind!r}")
    L = len(blocks)
    ncores = arch.cores if cores is None else min(int(cores), arch.cores)

    # ---- per-slot geometry and costs
    slots = {}
    g0 = {"C": inp.C, "H": inp.H, "W": inp.W, "M": inp.C, "E": inp.H, "F": inp.W, "R": 1, "stride": 1,
          "pad": 0, "pool": False}
    slots[0] = {"name": "input", "kind": input_kind, "geom": g0, "neuron": _neuron(inp.neuron)}
    for i, blk in enumerate(blocks):
        slots[i + 1] = {"name": blk.conv.name or f"layer{i + 1}", "kind": "layer", "geom": _layer_geom(blk),
                        "neuron": _neuron(blk.neuron)}
    for s in range(L + 1):
        slots[s]["geom"]["next"] = dict(slots[s + 1]["geom"]) if s < L else None
        if s < L:
            slots[s]["geom"]["next"].pop("next", None)
    est = {}
    layer_est = [estimate_layer_cycles(b.conv, batch, T, arch) for b in blocks]
    for s in range(L + 1):
        fp = layer_est[s - 1]["fp"] + layer_est[s - 1]["soma"] if s else (
            batch * T * inp.C * _ceil(inp.H * inp.W, arch.lanes) if input_kind == "direct" else 0)
        bp = (layer_est[s - 1]["grad"] if s else 0) + (layer_est[s]["bp"] if 0 < s < L else 0)
        wg = layer_est[s]["wg"] if s < L else 0
        est[s] = {"fp": fp, "bp": bp, "wg": wg, "max": max(fp, bp, wg)}
    groups = balance_partition([est[s]["max"] for s in range(L + 1)], ncores)
    order = snake_order(arch)
    placement = {}
    for gi, grp in enumerate(groups):
        for s in grp:
            placement[s] = order[gi]
    notes = []
    if len(groups) < L + 1:
        notes.append(f"{L + 1} slots share {len(groups)} cores (contiguous groups)")

    # ---- SRAM allocation
    allocs = {}
    spill = {}

    def alloc(core, sub):
        return allocs.setdefault((core, sub), _Alloc(arch, sub))

    var_sizes = {}
    for s in range(L + 1):
        g = slots[s]["geom"]
        M, E, F = g["M"], g["E"], g["F"]
        Ep, Fp = (_ceil(E, 2), _ceil(F, 2)) if g["pool"] else (E, F)
        fpv, bpv = {}, {}
        if s == 0:
            if input_kind == "direct":
                fpv.update(CONV_FP=(M * E * F, 2), U=(M * E * F, 2), S=(_pad8(M * E * F), 2))
            fpv["SPIKE"] = (_pad8(M * E * F), 2)
        else:
            fpv.update(S_IN=(_pad8(g["C"] * g["H"] * g["W"]), 2), W=(M * g["C"] * g["R"] ** 2, 1),
                       CONV_FP=(M * E * F, 2), U=(M * E * F, 2), S=(_pad8(M * E * F), 2),
                       SPIKE=(_pad8(M * Ep * Fp), 2))
            if g["pool"]:
                fpv["ARGMAX"] = (M * Ep * Fp, 2)
            bpv.update(U_BP=(M * E * F, 2), S_BP=(_pad8(M * E * F), 2), DU=(M * E * F, 2),
                       CONV_BP=(M * Ep * Fp, 2))
            if g["pool"]:
                bpv["ARG_BP"] = (M * Ep * Fp, 2)
        nx = g["next"]
        if nx is not None:
            bpv.update(DU_NEXT=(nx["M"] * nx["E"] * nx["F"], 2), SP_BP=(_pad8(nx["C"] * nx["H"] * nx["W"]), 2))
            if s > 0:
                bpv["W_NEXT"] = (nx["M"] * nx["C"] * nx["R"] ** 2, 1)
        var_sizes[s] = (fpv, bpv)
    for s in range(L + 1):
        core = placement[s]
        fpv, bpv = var_sizes[s]
        slots[s]["fp_vars"], slots[s]["bp_vars"] = {}, {}
        for sub, vs, out in (("fp", fpv, slots[s]["fp_vars"]), ("bp", bpv, slots[s]["bp_vars"])):
            a = alloc(core, sub)
            for name, (per, count) in vs.items():
                bank = VAR_BANK[DataType[name]][1]
                base = a.take(bank, per, count, f"slot {s} {name}")
                out[name] = [bank, base, per, count]
    for s in range(L):
        nx = slots[s]["geom"]["next"]
        a = alloc(placement[s], "bp")
        row = nx["C"] * nx["R"] ** 2
        total = nx["M"] * row
        free = a.free("dw") - 8
        if total <= free:
            tile, spilled = nx["M"], False
        else:
            tile, spilled = free // row, True
            if tile < 1:
                raise CapacityError(f"slot {s}: one weight-gradient row of {row} elements exceeds bank ∇w")
        base = a.take("dw", tile * row, 1, f"slot {s} DW")
        slots[s]["bp_vars"]["DW"] = ["dw", base, tile * row, 1]
        slots[s]["dw_spill"] = spilled
        slots[s]["dw_tile"] = tile
        if spilled:
            spill[s] = {"var": "DW", "tile_rows": tile, "tiles": _ceil(nx["M"], tile),
                        "bytes_per_tile": tile * row * 2}

    # ---- DRAM layout
    dram = {}
    top = [0]

    def region(name, nbytes):
        base = _ceil(top[0], DRAM_ALIGN) * DRAM_ALIGN
        dram[name] = {"base": base, "bytes": int(nbytes)}
        top[0] = base + nbytes
        return base

    for i, blk in enumerate(blocks):
        nbytes = int(math.prod(blk.conv.weight_shape)) * 2
        region(f"w{i + 1}", nbytes)
        region(f"dw{i + 1}", nbytes)
    n_in = inp.C * inp.H * inp.W
    if input_kind == "spikes":
        st = _pad8(n_in) // 8
        region("input", st * batch * T)
        dram["input"]["stride"] = st
    else:
        st = n_in * 2
        region("input", st * batch)
        dram["input"]["stride"] = st
    gL = slots[L]["geom"]
    k_out = gL["M"] * (_ceil(gL["E"], 2) * _ceil(gL["F"], 2) if gL["pool"] else gL["E"] * gL["F"])
    ost = _pad8(k_out) // 8
    ost += ost % 2
    region("out", ost * batch * T)
    dram["out"]["stride"] = ost
    region("grad", k_out * 2 * batch * T)
    dram["grad"]["stride"] = k_out * 2
    dram["k_out"] = k_out
    dram["size"] = _ceil(top[0], DRAM_ALIGN) * DRAM_ALIGN

    mapping = Mapping(model, arch, batch, input_kind, slots, placement, {}, dram, est, spill, notes)
    mapping.streams = emit_streams(mapping)
    return mapping


# ---------------------------------------------------------------- emission


def _slice_byte(var, ring, kind_half=True):
    bank, base, per, count = var
    elem = base + (ring % count) * per
    return elem * 2 if kind_half else elem // 8


def _is_half(var) -> bool:
    return var[0] not in ("s_in", "s", "spike")


def _ring(var, n, t, T):
    return (n * T + t) % var[3]


class _Group:
    def __init__(self, key, slot, n, t, phase):
        self.key, self.slot, self.n, self.t, self.phase = key, slot, n, t, phase
        self.ins = []
        self._tag = 0

    def tag(self):
        self._tag += 1
        return self._tag

    def noc(self, flow, dt):
        self.ins.append(Instruction.make(Opcode.NOC_DATA, flow_type=int(flow), data_type=int(DataType[dt]),
                                         tag_id=self.tag()))

    def recv(self, flow, dt):
        self.noc(int(flow) | RECV, dt)

    def add(self, op, **kw):
        self.ins.append(Instruction.make(op, **kw))


def _dma(g, op, dt, var, ring, dram_addr, length):
    addr = _slice_byte(var, ring, _is_half(var))
    if op == Opcode.DMA_RD:
        g.add(op, data_type=int(DataType[dt]), src_addr=dram_addr, dst_addr=addr, length=length)
    else:
        g.add(op, data_type=int(DataType[dt]), src_addr=addr, dst_addr=dram_addr, length=length)


def emit_streams(mapping: Mapping) -> dict:
    """Build and validate the per-sub-core instruction streams."""
    m = mapping
    T, N = m.model.timesteps, m.batch
    L = m.num_slots - 1
    dram = m.dram
    fp_groups, bp_groups = {}, {}

    def new(store, core, key, slot, n, t, phase):
        g = _Group(key, slot, n, t, phase)
        store.setdefault(core, []).append(g)
        return g

    for s, plan in m.slots.items():
        core = m.placement[s]
        geo = plan["geom"]
        fv, bv = plan["fp_vars"], plan["bp_vars"]
        nx = geo["next"]
        last = s == L
        # ---------------- FP sub-core
        if s > 0:
            g = new(fp_groups, core, (0, s), s, 0, 0, "cfg")
            _dma(g, Opcode.DMA_RD, "W", fv["W"], 0, dram[f"w{s}"]["base"], dram[f"w{s}"]["bytes"])
            g.add(Opcode.BARRIER, sub_type=0)
        for n in range(N):
            for t in range(T):
                g = new(fp_groups, core, (1, n, t, s), s, n, t, "fp")
                if s == 0:
                    if plan["kind"] == "spikes":
                        src = dram["input"]["base"] + (n * T + t) * dram["input"]["stride"]
                        _dma(g, Opcode.DMA_RD, "SPIKE", fv["SPIKE"], _ring(fv["SPIKE"], n, t, T), src,
                             dram["input"]["stride"])
                    else:
                        src = dram["input"]["base"] + n * dram["input"]["stride"]
                        _dma(g, Opcode.DMA_RD, "CONV_FP", fv["CONV_FP"], _ring(fv["CONV_FP"], n, t, T), src,
                             dram["input"]["stride"])
                        g.add(Opcode.FP_SOMA, h_size=geo["E"], w_size=geo["F"], m_size=geo["M"], m_offset=0,
                              pooling=0, t_acc=int(t > 0))
                else:
                    g.recv(Channel.FP_FP, "S_IN")
                    for ct in range(0, geo["C"], TILE):
                        g.add(Opcode.FP_CONV, s_h_size=geo["H"], s_w_size=geo["W"], k_size=geo["R"],
                              padding=geo["pad"], stride=geo["stride"], psum_acc=int(ct > 0),
                              c_size=min(TILE, geo["C"] - ct), m_size=geo["M"], c_offset=ct, m_offset=0)
                    g.add(Opcode.FP_SOMA, h_size=geo["E"], w_size=geo["F"], m_size=geo["M"], m_offset=0,
                          pooling=int(geo["pool"]), t_acc=int(t > 0))
                    g.noc(Channel.FP_BP, "U")
                    g.noc(Channel.FP_BP, "S")
                    if geo["pool"]:
                        g.noc(Channel.FP_BP, "ARGMAX")
                if not last:
                    g.noc(Channel.FP_FP, "SPIKE")
                    g.noc(Channel.FP_BP, "SPIKE")
                else:
                    dst = dram["out"]["base"] + (n * T + t) * dram["out"]["stride"]
                    _dma(g, Opcode.DMA_WR, "SPIKE", fv["SPIKE"], _ring(fv["SPIKE"], n, t, T), dst,
                         _pad8(dram["k_out"]) // 8)
                g.add(Opcode.BARRIER, sub_type=0)
        # ---------------- BP sub-core
        if s > 0 and not last:
            g = new(bp_groups, core, (0, s), s, 0, 0, "cfg")
            _dma(g, Opcode.DMA_RD, "W_NEXT", bv["W_NEXT"], 0, dram[f"w{s + 1}"]["base"],
                 dram[f"w{s + 1}"]["bytes"])
            g.add(Opcode.BARRIER, sub_type=0)
        first = True
        for n in range(N):
            for t in range(T - 1, -1, -1):
                if s > 0:
                    g = new(bp_groups, core, (1, n, -t, -s, 0), s, n, t, "bp")
                    g.recv(Channel.FP_BP, "U_BP")
                    g.recv(Channel.FP_BP, "S_BP")
                    if geo["pool"]:
                        g.recv(Channel.FP_BP, "ARG_BP")
                    if not last:
                        g.recv(Channel.BP_BP, "DU_NEXT")
                        for mt in range(0, nx["M"], TILE):
                            g.add(Opcode.BP_CONV, du_h_size=nx["E"], du_w_size=nx["F"], k_size=nx["R"],
                                  padding=nx["R"] - 1 - nx["pad"], insert=nx["stride"] - 1, psum_acc=int(mt > 0),
                                  m_size=min(TILE, nx["M"] - mt), c_size=nx["C"], m_offset=mt, c_offset=0)
                    else:
                        src = dram["grad"]["base"] + (n * T + t) * dram["grad"]["stride"]
                        _dma(g, Opcode.DMA_RD, "CONV_BP", bv["CONV_BP"], _ring(bv["CONV_BP"], n, t, T), src,
                             dram["grad"]["stride"])
                    g.add(Opcode.BP_GRAD, h_size=geo["E"], w_size=geo["F"], c_size=geo["M"], c_offset=0,
                          pooling=int(geo["pool"]), t_acc=int(t < T - 1))
                    g.noc(Channel.BP_BP, "DU")
                    g.add(Opcode.BARRIER, sub_type=0)
                if last:
                    continue
                g = new(bp_groups, core, (1, n, -t, -s, 1), s, n, t, "wg")
                g.recv(Channel.FP_BP, "SP_BP")
                if s == 0:
                    g.recv(Channel.BP_BP, "DU_NEXT")
                wkw = dict(s_h_size=nx["H"], s_w_size=nx["W"], du_h_size=nx["E"], du_w_size=nx["F"],
                           insert=nx["stride"] - 1, dw_c_size=nx["C"], dw_c_offset=0)
                if not plan.get("dw_spill"):
                    g.add(Opcode.WG_CONV, dw_acc=int(not first), dw_m_size=nx["M"], dw_m_offset=0, **wkw)
                else:
                    tile = plan["dw_tile"]
                    row = nx["C"] * nx["R"] ** 2
                    for m0 in range(0, nx["M"], tile):
                        rows = min(tile, nx["M"] - m0)
                        addr = dram[f"dw{s + 1}"]["base"] + m0 * row * 2
                        if not first:
                            _dma(g, Opcode.DMA_RD, "DW", bv["DW"], 0, addr, rows * row * 2)
                        g.add(Opcode.WG_CONV, dw_acc=int(not first), dw_m_size=rows, dw_m_offset=m0, **wkw)
                        _dma(g, Opcode.DMA_WR, "DW", bv["DW"], 0, addr, rows * row * 2)
                g.add(Opcode.BARRIER, sub_type=0)
                first = False
        if not last and not plan.get("dw_spill"):
            g = new(bp_groups, core, (2, s), s, N - 1, 0, "wb")
            _dma(g, Opcode.DMA_WR, "DW", bv["DW"], 0, dram[f"dw{s + 1}"]["base"], dram[f"dw{s + 1}"]["bytes"])
            g.add(Opcode.BARRIER, sub_type=0)

    streams = {}
    for sub, store in (("fp", fp_groups), ("bp", bp_groups)):
        for core, groups in store.items():
            groups.sort(key=lambda g: g.key)
            ins, ctx = [], []
            for g in groups:
                ctx.append(GroupContext(len(ins), len(ins) + len(g.ins), g.slot, g.n, g.t, g.phase))
                ins.extend(g.ins)
            slot_tables = {}
            for s in sorted({g.slot for g in groups}):
                slot_tables[s] = _slot_table(m, s, sub)
            streams[(core, sub)] = InstructionStream(ins, core, sub, ctx, slot_tables)
    for key, st in streams.items():
        errs = validate(st, m.arch)
        if errs:
            raise CapacityError(f"emitted stream {key} failed validation: {errs[:5]}")
    return streams


def _slot_table(m: Mapping, s: int, sub: str) -> dict:
    plan = m.slots[s]
    core = m.placement[s]
    L = m.num_slots - 1
    routes = {}
    if sub == "fp":
        if s > 0:
            routes["U"] = [{"core": core, "sub": "bp", "slot": s, "var": "U_BP", "channel": "FP_BP"}]
            routes["S"] = [{"core": core, "sub": "bp", "slot": s, "var": "S_BP", "channel": "FP_BP"}]
            if plan["geom"]["pool"]:
                routes["ARGMAX"] = [{"core": core, "sub": "bp", "slot": s, "var": "ARG_BP", "channel": "FP_BP"}]
        if s < L:
            routes["SPIKE"] = [
                {"core": m.placement[s + 1], "sub": "fp", "slot": s + 1, "var": "S_IN", "channel": "FP_FP"},
                {"core": core, "sub": "bp", "slot": s, "var": "SP_BP", "channel": "FP_BP"},
            ]
    elif s > 0:
        routes["DU"] = [{"core": m.placement[s - 1], "sub": "bp", "slot": s - 1, "var": "DU_NEXT",
                         "channel": "BP_BP"}]
    return {
        "T": m.model.timesteps, "N": m.batch, "kind": plan["kind"], "name": plan["name"],
        "geom": plan["geom"], "neuron": plan["neuron"],
        "vars": plan["fp_vars"] if sub == "fp" else plan["bp_vars"],
        "routes": routes, "dw_spill": bool(plan.get("dw_spill", False)), "dw_tile": plan.get("dw_tile", 0),
    }
