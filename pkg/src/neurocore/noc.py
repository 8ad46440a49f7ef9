"""2D-mesh network-on-chip with XY routing, wormhole switching and
credit-based input queues."""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import DeadlockDetected

NORTH, SOUTH, EAST, WEST, LOCAL_FP, LOCAL_BP = range(6)
PORT_NAMES = ("N", "S", "E", "W", "FP", "BP")
_LOCAL = {"fp": LOCAL_FP, "bp": LOCAL_BP}
# output port -> (dx, dy, input port at the neighbour)
_LINK = {EAST: (1, 0, WEST), WEST: (-1, 0, EAST), NORTH: (0, 1, SOUTH), SOUTH: (0, -1, NORTH)}

CHANNELS = ("FP_FP", "BP_BP", "FP_BP", "CTRL", "DMA")


@dataclass
class MeshConfig:
    rows: int = 4
    cols: int = 8
    core_freq_mhz: int = 500
    router_freq_mhz: int = 667
    flit_bytes: int = 32
    queue_depth: int = 4
    flit_hop_pj: float = 10.0
    watchdog_cycles: int = 10_000

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("mesh dimensions must be positive")
        if self.core_freq_mhz <= 0 or self.router_freq_mhz <= 0:
            raise ValueError("frequencies must be positive")
        if self.queue_depth < 1 or self.flit_bytes < 1:
            raise ValueError("queue depth and flit size must be positive")

    @property
    def cores(self) -> int:
        return self.rows * self.cols

    def coords(self, core: int) -> tuple:
        if not 0 <= core < self.cores:
            raise ValueError(f"core {core} outside the {self.cols}x{self.rows} mesh")
        return core % self.cols, core // self.cols

    def core_at(self, x: int, y: int) -> int:
        return y * self.cols + x

    def flits_for(self, nbytes) -> int:
        return max(1, math.ceil(nbytes / self.flit_bytes))

    def latency_core_cycles(self, hops: int, flits: int) -> float:
        """Uncontended latency in core cycles: one router cycle per link for the
        head flit, then one per flit to drain through the ejection port."""
        router_cycles = hops + flits
        return router_cycles * self.core_freq_mhz / self.router_freq_mhz

    @classmethod
    def from_arch(cls, arch) -> "MeshConfig":
        return cls(arch.rows, arch.cols, arch.core_freq_mhz, arch.router_freq_mhz, arch.flit_bytes,
                   arch.queue_depth, arch.energy.noc_flit_hop)


def route_next_hop(here, dst, dst_sub="fp") -> str:
    """Dimension-order routing: resolve X completely, then Y."""
    hx, hy = here
    dx, dy = dst
    if dx > hx:
        return "E"
    if dx < hx:
        return "W"
    if dy > hy:
        return "N"
    if dy < hy:
        return "S"
    return PORT_NAMES[_LOCAL[dst_sub]]


def xy_path(src, dst) -> list:
    """Coordinates visited from src to dst (inclusive)."""
    path = [tuple(src)]
    x, y = src
    while (x, y) != tuple(dst):
        p = route_next_hop((x, y), dst)
        x += {"E": 1, "W": -1}.get(p, 0)
        y += {"N": 1, "S": -1}.get(p, 0)
        path.append((x, y))
    return path


def hop_count(src, dst) -> int:
    return abs(src[0] - dst[0]) + abs(src[1] - dst[1])


@dataclass
class NocPacket:
    src: tuple  # (core, sub_core)
    dst: tuple
    channel: str
    tag_id: int = 0
    flits: int = 1
    inject_cycle: int = 0
    payload: Any = None
    nbytes: int = 0
    pid: int = -1

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.src == self.dst:
            raise ValueError("source and destination must differ in core or sub-core")
        if self.flits < 1:
            raise ValueError("a packet has at least one flit")


@dataclass
class Delivery:
    pid: int
    src: tuple
    dst: tuple
    channel: str
    tag_id: int
    flits: int
    hops: int
    inject_cycle: int
    deliver_cycle: int
    packet: Optional[NocPacket] = field(default=None, repr=False)

    @property
    def latency(self) -> int:
        return self.deliver_cycle - self.inject_cycle


class Router:
    __slots__ = ("xy", "inq", "lock", "rr")

    def __init__(self, xy, depth):
        self.xy = xy
        self.inq = [deque() for _ in range(6)]
        self.lock = [None] * 6  # output port -> input port owning it
        self.rr = [0] * 6


class Network:
    """Cycle-stepped mesh; one coordinator drives :meth:`step`."""

    def __init__(self, cfg: Optional[MeshConfig] = None):
        self.cfg = cfg or MeshConfig()
        c = self.cfg
        self.routers = {(x, y): Router((x, y), c.queue_depth) for x in range(c.cols) for y in range(c.rows)}
        self.cycle = 0
        self._pending = []  # heap of (inject_cycle, pid)
        self._ni = {}  # (core, sub) -> deque of [pid, next_flit]
        self.packets = {}
        self.deliveries = []
        self._next_pid = 0
        self.injected_flits = 0
        self.delivered_flits = 0
        self.flit_hops = 0
        self._head_hops = {}  # pid -> links crossed by the head flit
        self._in_flight = 0
        self._idle_cycles = 0

    # ------------------------------------------------------------ interface
    @property
    def energy_pj(self) -> float:
        return self.flit_hops * self.cfg.flit_hop_pj

    def inject(self, pkt: NocPacket) -> int:
        for core, _ in (pkt.src, pkt.dst):
            self.cfg.coords(core)
        if pkt.inject_cycle < self.cycle:
            pkt.inject_cycle = self.cycle
        pkt.pid = self._next_pid
        self._next_pid += 1
        self.packets[pkt.pid] = pkt
        heapq.heappush(self._pending, (pkt.inject_cycle, pkt.pid))
        self.injected_flits += pkt.flits
        self._in_flight += 1
        return pkt.pid

    def busy(self) -> bool:
        return self._in_flight > 0

    def next_event_cycle(self) -> Optional[int]:
        """Earliest cycle at which stepping can change state (None if idle)."""
        if not self._in_flight:
            return None
        if any(self._ni.values()) or any(any(r.inq) for r in self.routers.values()):
            return self.cycle
        return max(self.cycle, self._pending[0][0]) if self._pending else self.cycle

    def step(self) -> list:
        """Advance one router cycle; returns deliveries completed this cycle."""
        c = self.cfg
        nxt = self.next_event_cycle()
        if nxt is not None and nxt > self.cycle:
            self.cycle = nxt
        while self._pending and self._pending[0][0] <= self.cycle:
            _, pid = heapq.heappop(self._pending)
            pkt = self.packets[pid]
            self._ni.setdefault(pkt.src, deque()).append([pid, 0])
        done = []
        moves = []
        depth = c.queue_depth
        occupancy = {}
        for xy, r in self.routers.items():
            if not any(r.inq):
                continue
            # head flit of each input port and its requested output
            req = {}
            for ip in range(6):
                q = r.inq[ip]
                if not q:
                    continue
                pid, idx = q[0]
                pkt = self.packets[pid]
                dcore, dsub = pkt.dst
                op = _port(xy, c.coords(dcore), dsub)
                req.setdefault(op, []).append(ip)
            for op, ips in req.items():
                owner = r.lock[op]
                if owner is not None:
                    if owner not in ips:
                        continue
                    chosen = owner
                else:
                    heads = [ip for ip in ips if r.inq[ip][0][1] == 0]
                    if not heads:
                        continue
                    start = r.rr[op]
                    chosen = min(heads, key=lambda ip: (ip - start) % 6)
                if op in _LINK:
                    dx, dy, nip = _LINK[op]
                    nxy = (xy[0] + dx, xy[1] + dy)
                    key = (nxy, nip)
                    occ = occupancy.get(key)
                    if occ is None:
                        occ = len(self.routers[nxy].inq[nip])
                    if occ >= depth:
                        continue
                    occupancy[key] = occ + 1
                moves.append((r, chosen, op))
        for r, ip, op in moves:
            pid, idx = r.inq[ip].popleft()
            pkt = self.packets[pid]
            tail = idx == pkt.flits - 1
            r.lock[op] = None if tail else ip
            if idx == 0 or tail:
                r.rr[op] = (ip + 1) % 6
            if op in _LINK:
                dx, dy, nip = _LINK[op]
                self.routers[(r.xy[0] + dx, r.xy[1] + dy)].inq[nip].append((pid, idx))
                self.flit_hops += 1
                if idx == 0:
                    self._head_hops[pid] = self._head_hops.get(pid, 0) + 1
            else:
                self.delivered_flits += 1
                if tail:
                    done.append(self._deliver(pkt))
        # NI injection: one flit per cycle per source into its local input queue
        for src, q in self._ni.items():
            if not q:
                continue
            core, sub = src
            r = self.routers[c.coords(core)]
            lq = r.inq[_LOCAL[sub]]
            if len(lq) >= depth:
                continue
            ent = q[0]
            lq.append((ent[0], ent[1]))
            ent[1] += 1
            if ent[1] == self.packets[ent[0]].flits:
                q.popleft()
        moved = bool(moves)
        if self._in_flight and not moved and not done:
            self._idle_cycles += 1
            if self._idle_cycles > c.watchdog_cycles and not self._pending:
                raise DeadlockDetected(f"no flit moved for {self._idle_cycles} cycles")
        else:
            self._idle_cycles = 0
        self.cycle += 1
        return done

    def _deliver(self, pkt: NocPacket) -> Delivery:
        self._in_flight -= 1
        d = Delivery(pkt.pid, pkt.src, pkt.dst, pkt.channel, pkt.tag_id, pkt.flits,
                     self._head_hops.pop(pkt.pid, 0), pkt.inject_cycle, self.cycle, pkt)
        self.deliveries.append(d)
        del self.packets[pkt.pid]
        return d

    def run(self, until: Optional[int] = None, max_cycles: int = 10**8) -> list:
        out = []
        start = self.cycle
        while self.busy():
            if until is not None and self.cycle >= until:
                break
            if self.cycle - start > max_cycles:
                raise DeadlockDetected("simulation watchdog expired")
            out.extend(self.step())
        return out

    def transfer(self, pkt: NocPacket) -> Delivery:
        """Inject one packet and run until it (and all earlier traffic) lands."""
        pid = self.inject(pkt)
        for d in self.run():
            if d.pid == pid:
                return d
        for d in reversed(self.deliveries):
            if d.pid == pid:
                return d
        raise DeadlockDetected("packet was never delivered")

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pid", "src_core", "src_sub", "dst_core", "dst_sub", "channel", "tag_id",
                        "inject_cycle", "deliver_cycle", "flits", "hops"])
            for d in self.deliveries:
                w.writerow([d.pid, d.src[0], d.src[1], d.dst[0], d.dst[1], d.channel, d.tag_id,
                            d.inject_cycle, d.deliver_cycle, d.flits, d.hops])


def _port(here, dst, dst_sub) -> int:
    hx, hy = here
    dx, dy = dst
    if dx > hx:
        return EAST
    if dx < hx:
        return WEST
    if dy > hy:
        return NORTH
    if dy < hy:
        return SOUTH
    return _LOCAL[dst_sub]


def barrier_sync(net: Network, group, root=None, tag_id=0) -> int:
    """Gather a 1-flit control packet from every member at ``root``, then
    release every member; returns the router cycle at which all are released."""
    group = list(group)
    if len(group) < 1:
        raise ValueError("empty barrier group")
    root = group[0] if root is None else root
    members = [c for c in group if c != root]
    arrive = {}
    for c in members:
        net.inject(NocPacket((c, "fp"), (root, "fp"), "CTRL", tag_id, 1, net.cycle))
    for d in net.run():
        if d.channel == "CTRL" and d.tag_id == tag_id:
            arrive[d.src[0]] = d.deliver_cycle
    if set(arrive) != set(members):
        raise DeadlockDetected("barrier gather incomplete")
    released = set()
    for c in members:
        net.inject(NocPacket((root, "fp"), (c, "fp"), "CTRL", tag_id + 1, 1, net.cycle))
    last = net.cycle
    for d in net.run():
        if d.channel == "CTRL" and d.tag_id == tag_id + 1:
            released.add(d.dst[0])
            last = max(last, d.deliver_cycle)
    if released != set(members):
        raise DeadlockDetected("barrier release incomplete")
    return last
