"""SRAM banks and the DRAM model."""

from __future__ import annotations

import numpy as np

from ..errors import AddressFault


class SramBank:
    """One on-chip bank holding binary16 values ("half") or single bits ("bit")."""

    def __init__(self, name: str, label: str, capacity_bytes: int, kind: str):
        if kind not in ("half", "bit"):
            raise ValueError(f"unknown bank kind {kind!r}")
        self.name = name
        self.label = label
        self.capacity_bytes = int(capacity_bytes)
        self.kind = kind
        self.elem_bytes = 2.0 if kind == "half" else 0.125
        n = self.capacity_bytes // 2 if kind == "half" else self.capacity_bytes * 8
        self.data = np.zeros(n, dtype=np.float64 if kind == "half" else np.uint8)
        self.read_count = 0
        self.write_count = 0
        self.bytes_read = 0.0
        self.bytes_written = 0.0

    @property
    def elems(self) -> int:
        return self.data.size

    def check(self, base: int, n: int):
        if base < 0 or n < 0 or base + n > self.data.size:
            raise AddressFault(f"{self.label}: elements [{base}, {base + n}) outside {self.data.size}")

    def view(self, base: int, n: int) -> np.ndarray:
        self.check(base, n)
        return self.data[base:base + n]

    def count_read(self, n_elems, accesses=None):
        self.read_count += int(n_elems if accesses is None else accesses)
        self.bytes_read += n_elems * self.elem_bytes

    def count_write(self, n_elems, accesses=None):
        self.write_count += int(n_elems if accesses is None else accesses)
        self.bytes_written += n_elems * self.elem_bytes

    def byte_range(self, byte_addr: int, length: int) -> tuple:
        """Translate a byte range into an element range (alignment checked)."""
        if self.kind == "half":
            if byte_addr % 2 or length % 2:
                raise AddressFault(f"{self.label}: unaligned half access at byte {byte_addr}")
            base, n = byte_addr // 2, length // 2
        else:
            base, n = byte_addr * 8, length * 8
        self.check(base, n)
        return base, n

    def counters(self) -> dict:
        return {"bank": self.label, "capacity_bytes": self.capacity_bytes, "reads": self.read_count,
                "writes": self.write_count, "bytes_read": self.bytes_read, "bytes_written": self.bytes_written}


class Dram:
    """Byte-addressed off-chip memory with host-produced regions.

    A region registered as pending blocks DMA reads until the host produces
    it; ``ready_tick`` then gives the earliest time it may be read.
    """

    def __init__(self, size: int = 0):
        self.mem = np.zeros(max(int(size), 0), dtype=np.uint8)
        self.pending = {}  # base -> length
        self.ready = {}  # base -> (length, tick)
        self.bytes_read = 0
        self.bytes_written = 0
        self.live = {}  # base -> length of live regions (for occupancy)
        self.peak_live = 0
        self.records = []  # (tick, kind, addr, length)

    def ensure(self, size: int):
        if size > self.mem.size:
            grown = np.zeros(size, dtype=np.uint8)
            grown[: self.mem.size] = self.mem
            self.mem = grown

    def check(self, addr, length):
        if addr < 0 or length < 0 or addr + length > self.mem.size:
            raise AddressFault(f"DRAM access [{addr}, {addr + length}) outside {self.mem.size} bytes")

    def mark_pending(self, base, length):
        self.pending[base] = length

    def produce(self, base, data: bytes, tick):
        self.write(base, data, tick, count=False)
        self.pending.pop(base, None)
        self.ready[base] = (len(data), tick)

    def ready_tick(self, addr, length):
        """Earliest tick a read of [addr, addr+length) may start, None if unproduced."""
        end = addr + length
        for b, ln in self.pending.items():
            if b < end and addr < b + ln:
                return None
        t = 0
        for b, (ln, tk) in self.ready.items():
            if b < end and addr < b + ln:
                t = max(t, tk)
        return t

    def read(self, addr, length, tick=0, count=True) -> bytes:
        self.check(addr, length)
        if count:
            self.bytes_read += length
            self.records.append((tick, "rd", addr, length))
        return self.mem[addr:addr + length].tobytes()

    def write(self, addr, data: bytes, tick=0, count=True):
        self.check(addr, len(data))
        self.mem[addr:addr + len(data)] = np.frombuffer(data, dtype=np.uint8)
        if count:
            self.bytes_written += len(data)
            self.records.append((tick, "wr", addr, len(data)))

    def occupy(self, base, length):
        self.live[base] = length
        self.peak_live = max(self.peak_live, sum(self.live.values()))

    def release(self, base):
        self.live.pop(base, None)


def half_bytes(values) -> bytes:
    return np.asarray(values, dtype=np.float64).astype("<f2").tobytes()


def bytes_half(buf) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f2").astype(np.float64)


def bits_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def bytes_bits(buf, n=None) -> np.ndarray:
    out = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    return out if n is None else out[:n]
