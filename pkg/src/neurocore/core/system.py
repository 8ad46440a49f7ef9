"""Multi-core simulation: sub-cores, the mesh network, DRAM and the host.

Time is kept in integer ticks; a core cycle lasts ``arch.core_period``
ticks and a router cycle ``arch.router_period`` ticks, which models the
two clock domains with one rational time base. The loop is a
conservative discrete-event simulation: it always advances whichever of
the network or the earliest ready sub-core is next in time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DeadlockDetected
from ..noc import MeshConfig, Network, NocPacket, hop_count
from ..snn.network import rate_loss
from .core import SubCore
from .memory import Dram, bytes_bits, half_bytes
from .stats import EnergyLedger, GatingStats


class LossHost:
    """Host side of the loss: collects output spikes, returns dL/ds.

    ``layout`` gives the DRAM regions (byte addresses) of the output spike
    slices and of the gradient slices, both indexed by (n, t). Either
    ``labels`` (rate-coded cross-entropy) or a fixed ``dlds`` array is used.
    """

    def __init__(self, out_base, out_stride, grad_base, grad_stride, N, T, K_out, latency_ticks,
                 labels=None, dlds=None, scale=8.0, num_classes=None):
        self.out_base, self.out_stride = out_base, out_stride
        self.grad_base, self.grad_stride = grad_base, grad_stride
        self.N, self.T, self.K_out = N, T, K_out
        self.latency = latency_ticks
        self.labels = None if labels is None else np.asarray(labels)
        self.dlds = None if dlds is None else np.asarray(dlds, dtype=np.float64).reshape(N, T, K_out)
        self.scale = scale
        self.num_classes = num_classes
        self.seen = {}
        self.out_spikes = np.zeros((N, T, K_out), dtype=np.uint8)
        self.losses = {}

    def register(self, dram: Dram):
        for n in range(self.N):
            for t in range(self.T):
                dram.mark_pending(self.grad_addr(n, t), self.grad_stride)

    def grad_addr(self, n, t):
        return self.grad_base + (n * self.T + t) * self.grad_stride

    def on_write(self, dram: Dram, addr, length, tick):
        off = addr - self.out_base
        if off < 0 or off >= self.N * self.T * self.out_stride:
            return
        idx = off // self.out_stride
        n, t = divmod(idx, self.T)
        raw = dram.read(addr, self.out_stride, count=False)
        self.out_spikes[n, t] = bytes_bits(raw, self.K_out)
        self.seen.setdefault(n, set()).add(t)
        if len(self.seen[n]) < self.T:
            return
        if self.dlds is not None:
            g = self.dlds[n]
        else:
            loss, g, _ = rate_loss(self.out_spikes[n:n + 1], self.labels[n:n + 1], self.scale, self.num_classes)
            self.losses[n] = loss
            g = g[0]
        for tt in range(self.T):
            dram.produce(self.grad_addr(n, tt), half_bytes(g[tt].reshape(-1)), tick + self.latency)


@dataclass
class SimResult:
    records: list
    cycles: int
    energy: EnergyLedger
    gating: GatingStats
    noc: dict
    dram: dict
    probes: dict = field(default_factory=dict)
    counters: list = field(default_factory=list)
    deliveries: list = field(default_factory=list)
    dram_records: list = field(default_factory=list)

    def trace_json(self, path):
        with open(path, "w") as fh:
            json.dump({"cycles": self.cycles, "energy": self.energy.to_dict(), "gating": self.gating.to_dict(),
                       "noc": self.noc, "dram": self.dram, "records": self.records}, fh)

    def counters_csv(self, path):
        rows = self.counters
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


class System:
    """A mesh of cores executing device streams against shared DRAM."""

    def __init__(self, arch, streams, dram: Optional[Dram] = None, host=None, probe=False):
        self.arch = arch
        self.mesh = MeshConfig.from_arch(arch)
        self.mesh.watchdog_cycles = max(self.mesh.watchdog_cycles, 10_000)
        self.net = Network(self.mesh)
        self.dram = dram if dram is not None else Dram()
        self.host = host
        self.probe = probe
        self.probes = {}
        self.subcores = {}
        self.rp = arch.router_period
        for s in streams:
            key = (s.core_id, s.sub_core)
            if key in self.subcores:
                raise ValueError(f"two streams for core {s.core_id} {s.sub_core}")
            self.mesh.coords(s.core_id)
            sc = SubCore(arch, s.core_id, s.sub_core, self)
            sc.load(s)
            self.subcores[key] = sc
        if host is not None:
            host.register(self.dram)
        self._pkt_keys = {}
        self._local = []  # loopback deliveries: (tick, dst, key, payload)

    # ------------------------------------------------------------ hooks
    def send(self, src: SubCore, dst, channel, tag, nbytes, payload, key, start, end) -> float:
        """Queue a message; returns the NOC energy it costs."""
        if dst not in self.subcores:
            raise DeadlockDetected(f"message to core {dst} which runs no stream")
        if dst == (src.core_id, src.sub):
            self.subcores[dst].deliver(key, end, payload)
            return 0.0
        flits = self.mesh.flits_for(nbytes)
        cyc = -(-start // self.rp)
        pkt = NocPacket((src.core_id, src.sub), dst, channel, tag, flits, cyc, None, nbytes)
        pid = self.net.inject(pkt)
        self._pkt_keys[pid] = (key, payload)
        hops = hop_count(self.mesh.coords(src.core_id), self.mesh.coords(dst[0]))
        return flits * hops * self.arch.energy.noc_flit_hop

    def on_dram_write(self, addr, length, tick):
        if self.host is not None:
            self.host.on_write(self.dram, addr, length, tick)
            for sc in self.subcores.values():
                sc.invalidate()

    def snapshot(self, slot, n, t, **arrays):
        for name, a in arrays.items():
            self.probes[(slot, name, n, t)] = np.array(a)

    # ------------------------------------------------------------ main loop
    def run(self, max_steps: int = 10**8) -> SimResult:
        scs = list(self.subcores.values())
        watchdog = self.arch.watchdog_ticks
        steps = 0
        net = self.net
        while True:
            steps += 1
            if steps > max_steps:
                raise DeadlockDetected("step limit exceeded")
            best, best_t = None, None
            for sc in scs:
                if sc.done:
                    continue
                t = sc.next_start()
                if t is not None and (best_t is None or t < best_t):
                    best, best_t = sc, t
            net_t = None
            if net.busy():
                net_t = net.next_event_cycle() * self.rp
            if best is None and net_t is None:
                if all(sc.done for sc in scs):
                    break
                waiting = [f"core {sc.core_id}/{sc.sub} pc {sc.pc} {sc.stream.instructions[sc.pc].opcode.name}"
                           for sc in scs if not sc.done]
                raise DeadlockDetected("all sub-cores blocked with an empty network: " + "; ".join(waiting[:6]))
            if net_t is not None and (best_t is None or net_t <= best_t):
                for d in net.step():
                    key, payload = self._pkt_keys.pop(d.pid)
                    self.subcores[d.dst].deliver(key, d.deliver_cycle * self.rp, payload)
                continue
            if best_t > watchdog:
                raise DeadlockDetected("simulation watchdog expired")
            best.execute(best_t)
        return self._result()

    def _result(self) -> SimResult:
        records = []
        energy = EnergyLedger()
        gating = GatingStats()
        counters = []
        for sc in self.subcores.values():
            records.extend(sc.records)
            energy.merge(sc.energy)
            gating.merge(sc.gating_total())
            counters.extend(sc.counters())
        records.sort(key=lambda r: (r["start"], r["core"], r["sub"], r["pc"]))
        cycles = max((r["end"] for r in records), default=0)
        noc = {"injected_flits": self.net.injected_flits, "delivered_flits": self.net.delivered_flits,
               "flit_hops": self.net.flit_hops, "packets": len(self.net.deliveries),
               "router_cycles": self.net.cycle}
        dram = {"bytes_read": self.dram.bytes_read, "bytes_written": self.dram.bytes_written,
                "peak_live_bytes": self.dram.peak_live, "size": int(self.dram.mem.size)}
        return SimResult(records, cycles, energy, gating, noc, dram, self.probes, counters,
                         list(self.net.deliveries), list(self.dram.records))
