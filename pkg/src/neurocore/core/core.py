"""Instruction interpreter for one FP or BP sub-core.

Each instruction executes atomically at its issue time; timing comes from
a per-engine scoreboard. Instructions are dispatched in program order into
a small window and an entry starts once

* no older unissued entry uses the same engine, touches a variable slice
  it writes, or writes a slice it reads (so each engine runs its queue in
  order and RAW/WAR/WAW order is kept per slice),
* its engine is free and every slice it reads or writes is no longer
  being produced,
* for receives, the message is in the mailbox; for DMA reads, the DRAM
  region has been produced.

Vector ops, DMAs outside any allocated variable and DRAIN barriers act as
fences: they wait for everything before them to finish, and nothing after
them starts until they have finished.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque

import numpy as np

from .. import kernels as K
from ..errors import AddressFault, UnsupportedOp
from ..isa import RECV, Channel, DataType, Opcode, VectorOp, VAR_BANK
from ..numerics import to_half_exact
from ..snn import ops
from .memory import SramBank, bits_bytes, bytes_bits, bytes_half, half_bytes
from .stats import EnergyLedger, GatingStats

ENGINES = {
    "fp": ("fp_array", "soma", "vec", "dma", "ni_tx", "ni_rx"),
    "bp": ("bp_array", "grad", "wg_array", "vec", "dma", "ni_tx", "ni_rx"),
}
OP_ENGINE = {
    Opcode.FP_CONV: "fp_array", Opcode.FP_SOMA: "soma", Opcode.FP_BN: "soma", Opcode.FP_VECTOR: "vec",
    Opcode.BP_CONV: "bp_array", Opcode.BP_GRAD: "grad", Opcode.BP_BN: "grad", Opcode.WG_CONV: "wg_array",
    Opcode.BP_VECTOR: "vec", Opcode.NOC_DATA: "ni_tx", Opcode.NOC_CTRL: "ni_tx", Opcode.DMA_RD: "dma",
    Opcode.DMA_WR: "dma", Opcode.BARRIER: None,
}
CHANNEL_NAME = {int(c): c.name for c in Channel}
MODES = {"half": 0, "wide": 1}


def _ceil(a, b):
    return -(-a // b)


class SubCore:
    """One sub-core: banks, engines, scoreboard, counters and its stream."""

    window = 16

    def __init__(self, arch, core_id: int, sub: str, system=None):
        if sub not in ENGINES:
            raise ValueError(f"unknown sub-core {sub!r}")
        self.arch = arch
        self.core_id = core_id
        self.sub = sub
        self.system = system
        self.banks = {k: SramBank(k, b["label"], b["bytes"], b["kind"]) for k, b in arch.banks[sub].items()}
        self.cp = arch.core_period
        self.mode = MODES[arch.accumulate]
        self.gated = bool(arch.gating)
        self.mailbox = defaultdict(deque)
        self.gating = {e: GatingStats() for e in ENGINES[sub]}
        self.energy = EnergyLedger()
        self.records = []
        self.stream = None
        self.pc = 0
        self._reset_timing()

    def _reset_timing(self):
        self.engine_free = defaultdict(int)
        self.var_ready = {}
        self.floor = 0
        self.all_end = 0
        self.fence_end = 0
        self._next_pc = None
        self._cached = False
        self._cached_t = None

    # ------------------------------------------------------------ loading
    def load(self, stream):
        if stream.sub_core != self.sub:
            raise ValueError(f"{stream.sub_core} stream loaded on a {self.sub} sub-core")
        self.stream = stream
        self.pc = 0
        self.slots = stream.slots
        self.ctx = []
        gi = 0
        groups = stream.groups
        for pc in range(len(stream.instructions)):
            while gi < len(groups) and groups[gi].end <= pc:
                gi += 1
            self.ctx.append(groups[gi] if gi < len(groups) and groups[gi].start <= pc else None)
        self.deps = [self._deps(pc) for pc in range(len(stream.instructions))]
        self.issued = [False] * len(stream.instructions)
        self._reset_timing()

    @property
    def done(self) -> bool:
        return self.stream is None or self.pc >= len(self.stream.instructions)

    # ------------------------------------------------------------ variables
    def _slot(self, g):
        if g is None:
            return None
        return self.slots.get(g.slot)

    def ring(self, slot, name, n, t) -> int:
        count = slot["vars"][name][3]
        return (n * slot["T"] + t) % count

    def has_var(self, g, name) -> bool:
        slot = self._slot(g)
        return slot is not None and name in slot.get("vars", {})

    def view(self, g, name, t=None) -> np.ndarray:
        """Element view of the (n, t) slice of a variable in the group's slot."""
        slot = self._slot(g)
        if slot is None or name not in slot.get("vars", {}):
            raise AddressFault(f"{name} is not allocated for slot {None if g is None else g.slot}")
        bank, base, per, count = slot["vars"][name]
        tt = g.t if t is None else t
        idx = (g.n * slot["T"] + tt) % count
        return self.banks[bank].view(base + idx * per, per)

    def _key(self, g, name, t=None):
        slot = self._slot(g)
        if slot is None or name not in slot.get("vars", {}):
            return None
        tt = g.t if t is None else t
        return (g.slot, name, self.ring(slot, name, g.n, tt))

    def _addr_key(self, dt, byte_addr, length):
        """Map a bank byte range onto the variable slice that contains it."""
        sub, bank = VAR_BANK[DataType(dt)]
        b = self.banks[bank]
        lo = byte_addr / b.elem_bytes
        hi = (byte_addr + length) / b.elem_bytes
        for sid, slot in self.slots.items():
            for name, (bk, base, per, count) in slot.get("vars", {}).items():
                if bk != bank:
                    continue
                if base <= lo and hi <= base + per * count:
                    idx = int((lo - base) // per)
                    if base + (idx + 1) * per >= hi:
                        return (sid, name, idx)
        return None

    def _deps(self, pc):
        ins = self.stream.instructions[pc]
        g = self.ctx[pc]
        op = ins.opcode
        f = ins.fields
        reads, writes, fence = [], [], False
        k = lambda name, t=None: self._key(g, name, t)  # noqa: E731
        if op == Opcode.FP_CONV:
            reads = [k("S_IN"), k("W", 0)] + ([k("CONV_FP")] if f["psum_acc"] else [])
            writes = [k("CONV_FP")]
        elif op == Opcode.FP_SOMA:
            reads = [k("CONV_FP")]
            if f["t_acc"] and g is not None:
                reads += [k("U", g.t - 1), k("S", g.t - 1)]
            writes = [k("U"), k("S"), k("SPIKE"), k("ARGMAX")]
        elif op == Opcode.BP_CONV:
            reads = [k("DU_NEXT"), k("W_NEXT", 0), k("U_BP"), k("ARG_BP")]
            reads += [k("CONV_BP")] if f["psum_acc"] else []
            writes = [k("CONV_BP")]
        elif op == Opcode.BP_GRAD:
            reads = [k("CONV_BP"), k("U_BP"), k("S_BP"), k("ARG_BP")]
            if f["t_acc"] and g is not None:
                reads.append(k("DU", g.t + 1))
            writes = [k("DU")]
        elif op == Opcode.WG_CONV:
            reads = [k("SP_BP"), k("DU_NEXT")] + ([k("DW", 0)] if f["dw_acc"] else [])
            writes = [k("DW", 0)]
        elif op == Opcode.NOC_DATA:
            key = k(DataType(f["data_type"]).name)
            (writes if f["flow_type"] & RECV else reads).append(key)
        elif op == Opcode.DMA_RD:
            key = self._addr_key(f["data_type"], f["dst_addr"], f["length"])
            fence = key is None
            writes = [key]
        elif op == Opcode.DMA_WR:
            key = self._addr_key(f["data_type"], f["src_addr"], f["length"])
            fence = key is None
            reads = [key]
        elif op in (Opcode.FP_VECTOR, Opcode.BP_VECTOR):
            fence = True
        elif op == Opcode.BARRIER:
            fence = f["sub_type"] == 1
        reads = tuple(x for x in reads if x is not None)
        writes = tuple(x for x in writes if x is not None)
        eng = OP_ENGINE[op]
        if op in (Opcode.NOC_DATA, Opcode.NOC_CTRL) and f["flow_type"] & RECV:
            eng = "ni_rx"
        return eng, frozenset(reads), frozenset(writes), fence

    # ------------------------------------------------------------ scheduling
    def _msg_key(self, ins, g):
        f = ins.fields
        if ins.opcode == Opcode.NOC_CTRL:
            return ("CTRL", f["tag_id"])
        return (g.slot, DataType(f["data_type"]).name, g.n, g.t)

    def _ready_tick(self, pc):
        """Earliest tick pc could start given issued work, or None if it waits on input."""
        ins = self.stream.instructions[pc]
        eng, reads, writes, fence = self.deps[pc]
        t = self.floor
        if eng is not None:
            t = max(t, self.engine_free[eng])
        vr = self.var_ready
        for key in reads:
            t = max(t, vr.get(key, 0))
        for key in writes:
            t = max(t, vr.get(key, 0))
        t = max(t, self.fence_end)
        if fence:
            t = max(t, self.all_end)
        op = ins.opcode
        f = ins.fields
        if op in (Opcode.NOC_DATA, Opcode.NOC_CTRL) and f["flow_type"] & RECV:
            g = self.ctx[pc]
            if op == Opcode.NOC_DATA and g is None:
                raise AddressFault(f"receive at pc {pc} has no group context")
            box = self.mailbox.get(self._msg_key(ins, g))
            if not box:
                return None
            t = max(t, box[0][0])
        elif op == Opcode.DMA_RD:
            rt = self.system.dram.ready_tick(f["src_addr"], f["length"])
            if rt is None:
                return None
            t = max(t, rt)
        return _ceil(t, self.cp) * self.cp

    def next_start(self):
        """Earliest tick any issuable instruction in the window can start.

        Instructions are dispatched in order into a window of ``window``
        entries; one may start ahead of older unissued entries only if it
        shares no engine, no variable slice (RAW/WAR/WAW) and no fence with
        any of them.
        """
        if self._cached:
            return self._cached_t
        if self.done:
            return None
        best_t, best_pc = None, None
        engs, rd, wr = set(), set(), set()
        issued = self.issued
        n = len(self.stream.instructions)
        pc, seen = self.pc, 0
        while pc < n and seen < self.window:
            if issued[pc]:
                pc += 1
                continue
            seen += 1
            eng, reads, writes, fence = self.deps[pc]
            if fence:
                free = seen == 1
            else:
                free = not ((eng is not None and eng in engs) or not wr.isdisjoint(reads)
                            or not wr.isdisjoint(writes) or not rd.isdisjoint(writes))
            if free:
                t = self._ready_tick(pc)
                if t is not None and (best_t is None or t < best_t):
                    best_t, best_pc = t, pc
            if fence:
                break
            if eng is not None:
                engs.add(eng)
            rd.update(reads)
            wr.update(writes)
            pc += 1
        self._next_pc = best_pc
        self._cached, self._cached_t = True, best_t
        return best_t

    def invalidate(self):
        self._cached = False

    def deliver(self, key, tick, payload):
        self.mailbox[key].append((tick, payload))
        self._cached = False

    def execute(self, start: int, pc=None):
        if pc is None:
            pc = self._next_pc if self._next_pc is not None else self.pc
        ins = self.stream.instructions[pc]
        g = self.ctx[pc]
        eng, reads, writes, fence = self.deps[pc]
        handler = _HANDLERS[ins.opcode]
        rec = {"core": self.core_id, "sub": self.sub, "pc": pc, "op": ins.opcode.name,
               "slot": -1 if g is None else g.slot, "n": -1 if g is None else g.n,
               "t": -1 if g is None else g.t, "phase": "" if g is None else g.phase, "engine": eng or "",
               "dense": 0, "used": 0, "executed": 0, "w_reads": 0, "dw_writes": 0, "bytes": 0,
               "energy": {}}
        cycles = handler(self, ins, g, start, rec)
        end = start + int(cycles) * self.cp
        if eng is not None:
            self.engine_free[eng] = end
        for key in writes:
            self.var_ready[key] = end
        self.floor = start
        self.all_end = max(self.all_end, end)
        if fence:
            self.fence_end = end
        rec["start"] = start // self.cp
        rec["end"] = end // self.cp
        self.records.append(rec)
        for comp, pj in rec["energy"].items():
            self.energy.charge(comp, pj)
        self.issued[pc] = True
        while self.pc < len(self.issued) and self.issued[self.pc]:
            self.pc += 1
        self._next_pc = None
        self._cached = False
        return rec

    # ------------------------------------------------------------ helpers
    def _charge(self, rec, comp, pj):
        if pj:
            rec["energy"][comp] = rec["energy"].get(comp, 0.0) + pj

    def _sram(self, rec, bank, n_read=0, n_write=0, accesses_r=None, accesses_w=None):
        b = self.banks[bank]
        e = self.arch.energy.sram_byte(b.capacity_bytes)
        if n_read:
            b.count_read(n_read, accesses_r)
        if n_write:
            b.count_write(n_write, accesses_w)
        self._charge(rec, "sram", (n_read + n_write) * b.elem_bytes * e)

    def counters(self) -> list:
        out = []
        for b in self.banks.values():
            row = {"core": self.core_id, "sub": self.sub}
            row.update(b.counters())
            out.append(row)
        return out

    def gating_total(self) -> GatingStats:
        tot = GatingStats()
        for gs in self.gating.values():
            tot.merge(gs)
        return tot


# ---------------------------------------------------------------- handlers


def _geom(core, g):
    slot = core._slot(g)
    if slot is None or "geom" not in slot:
        raise AddressFault("compute instruction without slot geometry")
    return slot["geom"]


def _fp_conv(core, ins, g, start, rec):
    f = ins.fields
    geo = _geom(core, g)
    C, H, W, M, E, F, R = geo["C"], geo["H"], geo["W"], geo["M"], geo["E"], geo["F"], geo["R"]
    s_in = core.view(g, "S_IN")[: C * H * W].reshape(C, H, W)
    w = core.view(g, "W", 0)[: M * C * R * R].reshape(M, C, R, R)
    out = core.view(g, "CONV_FP")[: M * E * F].reshape(M, E, F)
    c0, c1 = f["c_offset"], f["c_offset"] + f["c_size"]
    m0, m1 = f["m_offset"], f["m_offset"] + f["m_size"]
    st = K.new_stats()
    K.fp_conv_slice(s_in, w, out, geo["stride"], geo["pad"], c0, c1, m0, m1, core.gated, core.mode,
                    not f["psum_acc"], st)
    core.gating["fp_array"].add_fp(st)
    en = core.arch.energy
    nw = int(st[10])
    rec.update(dense=int(st[0] + st[8] + st[2]), used=int(st[0]), executed=int(st[1] + st[9] + st[3]),
               w_reads=nw, stats=st.tolist())
    core._charge(rec, "fp_engine", (st[1] + st[9] + st[3]) * en.half_add)
    core._sram(rec, "s_in", n_read=int(st[4]) * K.TILE, accesses_r=int(st[4]))
    core._sram(rec, "w", n_read=nw)
    core._sram(rec, "conv_fp", n_read=int(st[5]), n_write=int(st[6]))
    return int(st[7]) + core.arch.array_fill


def _soma(core, ins, g, start, rec):
    f = ins.fields
    geo = _geom(core, g)
    M, E, F = geo["M"], geo["E"], geo["F"]
    nd = core._slot(g).get("neuron", {})
    alpha, th_f = nd.get("alpha", 0.5), nd.get("th_f", 1.0)
    hw = E * F
    a, b = f["m_offset"] * hw, (f["m_offset"] + f["m_size"]) * hw
    conv = core.view(g, "CONV_FP")[a:b]
    if core.mode:
        conv = to_half_exact(conv)
    u_out = core.view(g, "U")[a:b]
    s_out = core.view(g, "S")[a:b]
    if f["t_acc"]:
        u_prev = core.view(g, "U", g.t - 1)[a:b]
        s_prev = core.view(g, "S", g.t - 1)[a:b]
    else:
        u_prev = np.zeros(b - a)
        s_prev = np.zeros(b - a, dtype=np.uint8)
    K.soma_slice(conv, u_prev, s_prev, alpha, th_f, u_out, s_out)
    n = b - a
    m0, m1 = f["m_offset"], f["m_offset"] + f["m_size"]
    spike = core.view(g, "SPIKE")
    if f["pooling"]:
        Ep, Fp = _ceil(E, 2), _ceil(F, 2)
        pooled, am = ops.max_pool_fp(s_out.reshape(m1 - m0, E, F))
        spike[m0 * Ep * Fp: m1 * Ep * Fp] = pooled.reshape(-1)
        if core.has_var(g, "ARGMAX"):
            core.view(g, "ARGMAX")[m0 * Ep * Fp: m1 * Ep * Fp] = am.reshape(-1)
            core._sram(rec, "others", n_write=pooled.size)
        core._sram(rec, "spike", n_write=pooled.size)
    else:
        spike[a:b] = s_out
        core._sram(rec, "spike", n_write=n)
    if core.system is not None and core.system.probe:
        core.system.snapshot(g.slot, g.n, g.t, u=core.view(g, "U")[: M * hw], s=core.view(g, "S")[: M * hw])
    en = core.arch.energy
    rec.update(executed=n * 3)
    core._charge(rec, "fp_engine", n * (en.half_mul + en.half_add + en.compare))
    core._sram(rec, "conv_fp", n_read=n)
    core._sram(rec, "u", n_read=n if f["t_acc"] else 0, n_write=n)
    core._sram(rec, "s", n_read=n if f["t_acc"] else 0, n_write=n)
    return f["m_size"] * _ceil(hw, core.arch.lanes)


def _fire_mask(core, g, geo):
    """fire' of this layer at the resolution the next layer reads."""
    nd = core.slots[g.slot].get("neuron", {})
    M, E, F = geo["M"], geo["E"], geo["F"]
    u = core.view(g, "U_BP")[: M * E * F].reshape(M, E, F)
    fp = ((u >= nd.get("th_l", 0.0)) & (u <= nd.get("th_r", 2.0))).astype(np.uint8)
    if geo["pool"]:
        Ep, Fp = _ceil(E, 2), _ceil(F, 2)
        am = core.view(g, "ARG_BP")[: M * Ep * Fp].reshape(M, Ep, Fp).astype(np.uint8)
        fp = ops.pool_mask(fp, am)
    return fp


def _bp_conv(core, ins, g, start, rec):
    f = ins.fields
    geo = _geom(core, g)
    nx = geo["next"]
    C2, H2, W2, M2, E2, F2, R2 = nx["C"], nx["H"], nx["W"], nx["M"], nx["E"], nx["F"], nx["R"]
    du = core.view(g, "DU_NEXT")[: M2 * E2 * F2].reshape(M2, E2, F2)
    w = core.view(g, "W_NEXT", 0)[: M2 * C2 * R2 * R2].reshape(M2, C2, R2, R2)
    out = core.view(g, "CONV_BP")[: C2 * H2 * W2].reshape(C2, H2, W2)
    use_fire = core.has_var(g, "U_BP")
    if use_fire:
        fire = np.ascontiguousarray(_fire_mask(core, g, geo).reshape(C2, H2, W2))
    else:
        fire = np.ones((C2, H2, W2), dtype=np.uint8)
    m0, m1 = f["m_offset"], f["m_offset"] + f["m_size"]
    c0, c1 = f["c_offset"], f["c_offset"] + f["c_size"]
    st = K.new_stats()
    K.bp_conv_slice(du, w, fire, use_fire, out, nx["stride"], nx["pad"], m0, m1, c0, c1, core.gated,
                    core.mode, not f["psum_acc"], st)
    core.gating["bp_array"].add_bp(st)
    en = core.arch.energy
    nw = int(st[10])
    rec.update(dense=int(st[0] + st[8] + st[2]), used=2 * int(st[0]), executed=int(st[1] + st[9] + st[3]),
               w_reads=nw, stats=st.tolist())
    core._charge(rec, "bp_engine", st[1] * en.half_mul + (st[9] + st[3]) * en.half_add)
    core._sram(rec, "du_next", n_read=int(st[4]) * K.TILE, accesses_r=int(st[4]))
    core._sram(rec, "w_next", n_read=nw)
    core._sram(rec, "conv_bp", n_read=int(st[5]), n_write=int(st[6]))
    if use_fire:
        core._sram(rec, "u", n_read=f["c_size"] * H2 * W2)
    return int(st[7]) + core.arch.array_fill


def _bp_grad(core, ins, g, start, rec):
    f = ins.fields
    geo = _geom(core, g)
    nd = core.slots[g.slot].get("neuron", {})
    M, E, F = geo["M"], geo["E"], geo["F"]
    hw = E * F
    c0, c1 = f["c_offset"], f["c_offset"] + f["c_size"]
    a, b = c0 * hw, c1 * hw
    if f["pooling"]:
        Ep, Fp = _ceil(E, 2), _ceil(F, 2)
        cb = core.view(g, "CONV_BP")[c0 * Ep * Fp: c1 * Ep * Fp].reshape(c1 - c0, Ep, Fp)
        am = core.view(g, "ARG_BP")[c0 * Ep * Fp: c1 * Ep * Fp].reshape(c1 - c0, Ep, Fp).astype(np.uint8)
        if core.mode:
            cb = to_half_exact(cb)
        conv = ops.max_pool_bp(cb, am, (E, F)).reshape(-1)
        core._sram(rec, "others", n_read=am.size)
    else:
        conv = core.view(g, "CONV_BP")[a:b]
        if core.mode:
            conv = to_half_exact(conv)
    u = core.view(g, "U_BP")[a:b]
    s = core.view(g, "S_BP")[a:b]
    if f["t_acc"]:
        nxt = core.view(g, "DU", g.t + 1)[a:b]
    else:
        nxt = np.zeros(b - a)
    out = core.view(g, "DU")[a:b]
    K.grad_slice(np.ascontiguousarray(conv), u, s, nxt, nd.get("alpha", 0.5), nd.get("th_l", 0.0),
                 nd.get("th_r", 2.0), out)
    if core.system is not None and core.system.probe:
        core.system.snapshot(g.slot, g.n, g.t, du=core.view(g, "DU")[: M * hw])
    n = b - a
    en = core.arch.energy
    rec.update(executed=n * 6)
    core._charge(rec, "bp_engine", n * (2 * en.half_mul + 2 * en.half_add + 2 * en.compare))
    core._sram(rec, "conv_bp", n_read=conv.size)
    core._sram(rec, "u", n_read=n)
    core._sram(rec, "s", n_read=n)
    core._sram(rec, "du", n_read=n if f["t_acc"] else 0, n_write=n)
    return f["c_size"] * _ceil(hw, core.arch.lanes)


def _wg_conv(core, ins, g, start, rec):
    f = ins.fields
    geo = _geom(core, g)
    slot = core._slot(g)
    nx = geo["next"]
    C2, H2, W2, M2, E2, F2, R2 = nx["C"], nx["H"], nx["W"], nx["M"], nx["E"], nx["F"], nx["R"]
    s_in = core.view(g, "SP_BP")[: C2 * H2 * W2].reshape(C2, H2, W2)
    du_all = core.view(g, "DU_NEXT")[: M2 * E2 * F2].reshape(M2, E2, F2)
    m0, m1 = f["dw_m_offset"], f["dw_m_offset"] + f["dw_m_size"]
    c0, c1 = f["dw_c_offset"], f["dw_c_offset"] + f["dw_c_size"]
    per = C2 * R2 * R2
    dwv = core.view(g, "DW", 0)
    if slot.get("dw_spill"):
        acc = dwv[: (m1 - m0) * per].reshape(m1 - m0, C2, R2, R2)
    else:
        acc = dwv[m0 * per: m1 * per].reshape(m1 - m0, C2, R2, R2)
    du = np.ascontiguousarray(du_all[m0:m1])
    st = K.new_stats()
    K.wg_slice(s_in, du, acc, nx["stride"], nx["pad"], c0, c1, 0, m1 - m0, core.gated, core.mode,
               not f["dw_acc"], st)
    core.gating["wg_array"].add_wg(st)
    en = core.arch.energy
    nw = (m1 - m0) * (c1 - c0) * R2 * R2
    rec.update(dense=int(st[0]), used=int(st[0]), executed=int(st[1]), dw_writes=nw, stats=st.tolist())
    core._charge(rec, "wg_engine", st[1] * en.half_add)
    core._sram(rec, "du_next", n_read=int(st[4]) * K.TILE, accesses_r=int(st[4]))
    core._sram(rec, "s", n_read=int(st[7]) * K.TILE, accesses_r=int(st[7]))
    core._sram(rec, "dw", n_read=nw if f["dw_acc"] else 0, n_write=nw)
    return int(st[7]) + core.arch.array_fill


def _vector(core, ins, g, start, rec):
    f = ins.fields
    dt = DataType(f["data_type"])
    _, bank = VAR_BANK[dt]
    hw = f["h_size"] * f["w_size"]
    n = f["m_size"] * hw
    a = f["m_offset"] * hw
    dst = core.banks[bank].view(a, n)
    src = core.banks["others"].view(0, n)
    x = dst.astype(np.float64)
    y = src.astype(np.float64)
    op = VectorOp(f["op_type"])
    en = core.arch.energy
    if op == VectorOp.ADD:
        r = to_half_exact(x + y)
        pj = n * en.half_add
    elif op == VectorOp.MULTIPLY:
        r = to_half_exact(x * y)
        pj = n * en.half_mul
    else:
        r = (x >= y).astype(np.float64)
        pj = n * en.compare
    if core.banks[bank].kind == "bit":
        r = (r != 0).astype(np.uint8)
    dst[:] = r + 0.0 if core.banks[bank].kind == "half" else r
    rec.update(executed=n)
    core._charge(rec, "fp_engine" if core.sub == "fp" else "bp_engine", pj)
    core._sram(rec, bank, n_read=n, n_write=n)
    core._sram(rec, "others", n_read=n)
    return f["m_size"] * _ceil(hw, core.arch.lanes)


def _noc_data(core, ins, g, start, rec):
    f = ins.fields
    name = DataType(f["data_type"]).name
    _, bank = VAR_BANK[DataType(f["data_type"])]
    b = core.banks[bank]
    view = core.view(g, name)
    nbytes = int(math.ceil(view.size * b.elem_bytes))
    rec["bytes"] = nbytes
    if f["flow_type"] & RECV:
        _, payload = core.mailbox[core._msg_key(ins, g)].popleft()
        if payload.size > view.size:
            raise AddressFault(f"received {payload.size} elements into a {view.size}-element slice")
        view[: payload.size] = payload
        core._sram(rec, bank, n_write=payload.size)
        return _ceil(int(math.ceil(payload.size * b.elem_bytes)), core.arch.ni_bytes_per_cycle)
    slot = core._slot(g)
    channel = CHANNEL_NAME[f["flow_type"] & 0x7]
    routes = [rt for rt in slot.get("routes", {}).get(name, []) if rt.get("channel", channel) == channel]
    if not routes:
        raise AddressFault(f"no {channel} route for {name} in slot {g.slot}")
    cycles = max(1, _ceil(nbytes, core.arch.ni_bytes_per_cycle))
    end = start + cycles * core.cp
    for rt in routes:
        key = (rt["slot"], rt["var"], g.n, g.t)
        payload = view.copy()
        pj = core.system.send(core, (rt["core"], rt["sub"]), channel, f["tag_id"], nbytes, payload, key,
                              start, end)
        core._charge(rec, "noc", pj)
    core._sram(rec, bank, n_read=view.size * len(routes))
    return cycles


def _noc_ctrl(core, ins, g, start, rec):
    f = ins.fields
    if f["flow_type"] & RECV:
        core.mailbox[("CTRL", f["tag_id"])].popleft()
        return 1
    slot = core._slot(g)
    routes = [] if slot is None else slot.get("routes", {}).get("CTRL", [])
    if not routes:
        raise AddressFault(f"no control route from slot {None if g is None else g.slot}")
    for rt in routes:
        pj = core.system.send(core, (rt["core"], rt["sub"]), "CTRL", f["tag_id"], 0, f["msg_box"],
                              ("CTRL", f["tag_id"]), start, start + core.cp)
        core._charge(rec, "noc", pj)
    return 1


def _dma_rd(core, ins, g, start, rec):
    f = ins.fields
    dt = DataType(f["data_type"])
    _, bank = VAR_BANK[dt]
    b = core.banks[bank]
    base, n = b.byte_range(f["dst_addr"], f["length"])
    raw = core.system.dram.read(f["src_addr"], f["length"], start // core.cp)
    b.data[base:base + n] = bytes_half(raw) + 0.0 if b.kind == "half" else bytes_bits(raw)
    en = core.arch.energy
    rec["bytes"] = f["length"]
    core._charge(rec, "dram", f["length"] * en.dram_byte)
    core._sram(rec, bank, n_write=n)
    return core.arch.dma_latency + _ceil(f["length"], core.arch.dram_bytes_per_cycle)


def _dma_wr(core, ins, g, start, rec):
    f = ins.fields
    dt = DataType(f["data_type"])
    _, bank = VAR_BANK[dt]
    b = core.banks[bank]
    base, n = b.byte_range(f["src_addr"], f["length"])
    vals = b.data[base:base + n]
    if b.kind == "half":
        raw = half_bytes(to_half_exact(vals) if core.mode else vals)
    else:
        raw = bits_bytes(vals)
    cycles = core.arch.dma_latency + _ceil(f["length"], core.arch.dram_bytes_per_cycle)
    end = start + cycles * core.cp
    core.system.dram.write(f["dst_addr"], raw, start // core.cp)
    core.system.on_dram_write(f["dst_addr"], len(raw), end)
    en = core.arch.energy
    rec["bytes"] = f["length"]
    core._charge(rec, "dram", f["length"] * en.dram_byte)
    core._sram(rec, bank, n_read=n)
    return cycles


def _barrier(core, ins, g, start, rec):
    return 0


def _unsupported(core, ins, g, start, rec):
    raise UnsupportedOp(f"{ins.opcode.name} is not executed by the core model")


_HANDLERS = {
    Opcode.FP_CONV: _fp_conv, Opcode.FP_SOMA: _soma, Opcode.BP_CONV: _bp_conv, Opcode.BP_GRAD: _bp_grad,
    Opcode.WG_CONV: _wg_conv, Opcode.FP_VECTOR: _vector, Opcode.BP_VECTOR: _vector,
    Opcode.NOC_DATA: _noc_data, Opcode.NOC_CTRL: _noc_ctrl, Opcode.DMA_RD: _dma_rd, Opcode.DMA_WR: _dma_wr,
    Opcode.BARRIER: _barrier, Opcode.FP_BN: _unsupported, Opcode.BP_BN: _unsupported,
}
