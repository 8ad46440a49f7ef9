"""Instruction set: definitions, 128-bit encoding, text assembly, stream
validation and the device-side file format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .errors import FieldOverflow, InvalidOpcode

WORD_BITS = 128
OPCODE_BITS = 8
PAYLOAD_BITS = WORD_BITS - OPCODE_BITS


class Opcode(IntEnum):
    FP_CONV = 0x01
    BP_CONV = 0x02
    WG_CONV = 0x03
    FP_SOMA = 0x04
    BP_GRAD = 0x05
    FP_BN = 0x06
    BP_BN = 0x07
    FP_VECTOR = 0x08
    BP_VECTOR = 0x09
    NOC_DATA = 0x0A
    NOC_CTRL = 0x0B
    DMA_WR = 0x0C
    DMA_RD = 0x0D
    BARRIER = 0x0E


class DataType(IntEnum):
    """Variables an instruction can name; each lives in one SRAM bank."""

    S_IN = 1
    W = 2
    CONV_FP = 3
    U = 4
    S = 5
    SPIKE = 6
    ARGMAX = 7
    OTHERS_FP = 8
    DU_NEXT = 9
    W_NEXT = 10
    CONV_BP = 11
    DU = 12
    U_BP = 13
    S_BP = 14
    SP_BP = 15
    ARG_BP = 16
    DW = 17
    OTHERS_BP = 18


# variable -> (sub-core, bank key)
VAR_BANK = {
    DataType.S_IN: ("fp", "s_in"),
    DataType.W: ("fp", "w"),
    DataType.CONV_FP: ("fp", "conv_fp"),
    DataType.U: ("fp", "u"),
    DataType.S: ("fp", "s"),
    DataType.SPIKE: ("fp", "spike"),
    DataType.ARGMAX: ("fp", "others"),
    DataType.OTHERS_FP: ("fp", "others"),
    DataType.DU_NEXT: ("bp", "du_next"),
    DataType.W_NEXT: ("bp", "w_next"),
    DataType.CONV_BP: ("bp", "conv_bp"),
    DataType.DU: ("bp", "du"),
    DataType.U_BP: ("bp", "u"),
    DataType.S_BP: ("bp", "s"),
    DataType.SP_BP: ("bp", "s"),
    DataType.ARG_BP: ("bp", "others"),
    DataType.DW: ("bp", "dw"),
    DataType.OTHERS_BP: ("bp", "others"),
}


class Channel(IntEnum):
    FP_FP = 0
    BP_BP = 1
    FP_BP = 2
    CTRL = 3
    DMA = 4


RECV = 0x8  # flow_type bit: blocking receive from the NI mailbox


class VectorOp(IntEnum):
    ADD = 0
    MULTIPLY = 1
    COMPARE = 2


class BarrierType(IntEnum):
    GROUP = 0
    DRAIN = 1


H = 10  # spatial size fields
Z = 16  # channel sizes and offsets
F4 = 4  # flags and small enums

FIELDS = {
    Opcode.FP_CONV: (("s_h_size", H), ("s_w_size", H), ("k_size", F4), ("padding", F4), ("stride", F4),
                     ("psum_acc", F4), ("c_size", Z), ("m_size", Z), ("c_offset", Z), ("m_offset", Z)),
    Opcode.BP_CONV: (("du_h_size", H), ("du_w_size", H), ("k_size", F4), ("padding", F4), ("insert", F4),
                     ("psum_acc", F4), ("m_size", Z), ("c_size", Z), ("m_offset", Z), ("c_offset", Z)),
    Opcode.WG_CONV: (("s_h_size", H), ("s_w_size", H), ("du_h_size", H), ("du_w_size", H), ("insert", F4),
                     ("dw_acc", F4), ("dw_c_size", Z), ("dw_m_size", Z), ("dw_c_offset", Z), ("dw_m_offset", Z)),
    Opcode.FP_SOMA: (("h_size", H), ("w_size", H), ("m_size", Z), ("m_offset", Z), ("pooling", F4), ("t_acc", F4)),
    Opcode.BP_GRAD: (("h_size", H), ("w_size", H), ("c_size", Z), ("c_offset", Z), ("pooling", F4), ("t_acc", F4)),
    Opcode.FP_BN: (("h_size", H), ("w_size", H), ("m_size", Z), ("m_offset", Z), ("acc", F4)),
    Opcode.BP_BN: (("h_size", H), ("w_size", H), ("m_size", Z), ("m_offset", Z), ("acc", F4)),
    Opcode.FP_VECTOR: (("op_type", F4), ("data_type", 8), ("h_size", H), ("w_size", H), ("m_size", Z),
                       ("m_offset", Z)),
    Opcode.BP_VECTOR: (("op_type", F4), ("data_type", 8), ("h_size", H), ("w_size", H), ("m_size", Z),
                       ("m_offset", Z)),
    Opcode.NOC_DATA: (("flow_type", 8), ("data_type", 8), ("tag_id", 16)),
    Opcode.NOC_CTRL: (("flow_type", 8), ("tag_id", 16), ("msg_box", 16)),
    Opcode.DMA_WR: (("data_type", 8), ("src_addr", 32), ("dst_addr", 32), ("length", 32)),
    Opcode.DMA_RD: (("data_type", 8), ("src_addr", 32), ("dst_addr", 32), ("length", 32)),
    Opcode.BARRIER: (("sub_type", 8),),
}
for _op, _f in FIELDS.items():
    assert sum(b for _, b in _f) <= PAYLOAD_BITS, _op

FP_OPS = {Opcode.FP_CONV, Opcode.FP_SOMA, Opcode.FP_BN, Opcode.FP_VECTOR}
BP_OPS = {Opcode.BP_CONV, Opcode.WG_CONV, Opcode.BP_GRAD, Opcode.BP_BN, Opcode.BP_VECTOR}

_FLAGS = ("psum_acc", "t_acc", "pooling", "dw_acc", "acc", "insert")
_SIZES = ("s_h_size", "s_w_size", "du_h_size", "du_w_size", "h_size", "w_size", "c_size", "m_size",
          "dw_c_size", "dw_m_size")
_FLOWS = {int(c) for c in (Channel.FP_FP, Channel.BP_BP, Channel.FP_BP)}
_FLOWS |= {f | RECV for f in _FLOWS}
_CTRL_FLOWS = {int(Channel.CTRL), int(Channel.CTRL) | RECV}


def _semantic_errors(op: Opcode, vals: dict) -> list:
    errs = []
    if "k_size" in vals and vals["k_size"] not in (1, 3, 5, 7):
        errs.append(f"k_size {vals['k_size']} not in {{1,3,5,7}}")
    if "stride" in vals and vals["stride"] not in (1, 2):
        errs.append(f"stride {vals['stride']} not in {{1,2}}")
    if "padding" in vals and "k_size" in vals and vals["padding"] >= max(vals["k_size"], 1):
        errs.append("padding must be smaller than k_size")
    for f in _FLAGS:
        if f in vals and vals[f] not in (0, 1):
            errs.append(f"{f} must be 0 or 1")
    for f in _SIZES:
        if f in vals and vals[f] < 1:
            errs.append(f"{f} must be positive")
    if "op_type" in vals and vals["op_type"] not in set(VectorOp):
        errs.append(f"unknown op_type {vals['op_type']}")
    if "data_type" in vals and vals["data_type"] not in set(DataType):
        errs.append(f"unknown data_type {vals['data_type']}")
    if op == Opcode.NOC_DATA and vals["flow_type"] not in _FLOWS:
        errs.append(f"bad NOC_DATA flow_type {vals['flow_type']}")
    if op == Opcode.NOC_CTRL and vals["flow_type"] not in _CTRL_FLOWS:
        errs.append(f"bad NOC_CTRL flow_type {vals['flow_type']}")
    if op in (Opcode.DMA_RD, Opcode.DMA_WR) and vals["length"] < 1:
        errs.append("DMA length must be positive")
    if op == Opcode.BARRIER and vals["sub_type"] not in set(BarrierType):
        errs.append(f"unknown barrier sub_type {vals['sub_type']}")
    return errs


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction: opcode plus its operand values in field order."""

    opcode: Opcode
    values: tuple

    def __post_init__(self):
        try:
            op = Opcode(self.opcode)
        except ValueError:
            raise InvalidOpcode(f"unknown opcode {self.opcode!r}") from None
        object.__setattr__(self, "opcode", op)
        spec = FIELDS[op]
        if len(self.values) != len(spec):
            raise ValueError(f"{op.name} takes {len(spec)} operands, got {len(self.values)}")
        vals = tuple(int(v) for v in self.values)
        for (name, bits), v in zip(spec, vals):
            if v < 0 or v >= 1 << bits:
                raise FieldOverflow(f"{op.name}.{name}={v} does not fit in {bits} bits")
        object.__setattr__(self, "values", vals)
        errs = _semantic_errors(op, self.fields)
        if errs:
            raise ValueError(f"{op.name}: " + "; ".join(errs))

    @classmethod
    def make(cls, opcode, **kw) -> "Instruction":
        op = Opcode(opcode)
        names = [n for n, _ in FIELDS[op]]
        extra = set(kw) - set(names)
        if extra:
            raise ValueError(f"{op.name} has no operands {sorted(extra)}")
        return cls(op, tuple(int(kw.get(n, 0)) for n in names))

    @property
    def fields(self) -> dict:
        return {n: v for (n, _), v in zip(FIELDS[self.opcode], self.values)}

    def __getattr__(self, name):
        if name in ("opcode", "values"):
            raise AttributeError(name)
        for (n, _), v in zip(FIELDS[self.opcode], self.values):
            if n == name:
                return v
        raise AttributeError(f"{self.opcode.name} has no operand {name!r}")

    def __str__(self):
        return disassemble_one(self)


def encode(ins: Instruction) -> int:
    """Pack into a 128-bit integer: opcode in the top byte, operands below."""
    word = int(ins.opcode) << PAYLOAD_BITS
    pos = PAYLOAD_BITS
    for (_, bits), v in zip(FIELDS[ins.opcode], ins.values):
        pos -= bits
        word |= v << pos
    return word


def decode(word: int) -> Instruction:
    if not 0 <= word < 1 << WORD_BITS:
        raise FieldOverflow("instruction word exceeds 128 bits")
    code = word >> PAYLOAD_BITS
    try:
        op = Opcode(code)
    except ValueError:
        raise InvalidOpcode(f"unknown opcode 0x{code:02x}") from None
    pos = PAYLOAD_BITS
    vals = []
    for _, bits in FIELDS[op]:
        pos -= bits
        vals.append((word >> pos) & ((1 << bits) - 1))
    if word & ((1 << pos) - 1):
        raise InvalidOpcode(f"{op.name}: reserved bits are not zero")
    return Instruction(op, tuple(vals))


def to_bytes(ins: Instruction) -> bytes:
    return encode(ins).to_bytes(16, "little")


def from_bytes(buf: bytes) -> Instruction:
    return decode(int.from_bytes(buf[:16], "little"))


# ---------------------------------------------------------------- text assembly


def disassemble_one(ins: Instruction) -> str:
    return " ".join([ins.opcode.name] + [f"{n}={v}" for n, v in ins.fields.items()])


def disassemble(instructions) -> str:
    if isinstance(instructions, InstructionStream):
        instructions = instructions.instructions
    return "\n".join(disassemble_one(i) for i in instructions) + ("\n" if instructions else "")


def assemble(text: str) -> list:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        try:
            op = Opcode[head.upper()]
        except KeyError:
            raise InvalidOpcode(f"line {lineno}: unknown mnemonic {head!r}") from None
        kw = {}
        for a in args:
            k, _, v = a.partition("=")
            kw[k] = int(v, 0)
        out.append(Instruction.make(op, **kw))
    return out


def sample_instruction(rng, opcode=None) -> Instruction:
    """Draw a random valid instruction (used by fuzzers)."""
    op = Opcode(opcode) if opcode is not None else Opcode(int(rng.choice([int(o) for o in Opcode])))
    kw = {}
    for name, bits in FIELDS[op]:
        hi = (1 << bits) - 1
        if name == "k_size":
            v = int(rng.choice([1, 3, 5, 7]))
        elif name == "stride":
            v = int(rng.choice([1, 2]))
        elif name in _FLAGS:
            v = int(rng.integers(0, 2))
        elif name in _SIZES:
            v = int(rng.integers(1, hi + 1))
        elif name == "op_type":
            v = int(rng.choice(list(VectorOp)))
        elif name == "data_type":
            v = int(rng.choice(list(DataType)))
        elif name == "flow_type":
            v = int(rng.choice(sorted(_FLOWS if op == Opcode.NOC_DATA else _CTRL_FLOWS)))
        elif name == "sub_type":
            v = int(rng.choice(list(BarrierType)))
        elif name == "length":
            v = int(rng.integers(1, hi + 1))
        else:
            v = int(rng.integers(0, hi + 1))
        kw[name] = v
    if "padding" in kw:
        kw["padding"] = int(rng.integers(0, kw["k_size"]))
    return Instruction.make(op, **kw)


# ---------------------------------------------------------------- streams


@dataclass
class GroupContext:
    """Execution context of one BARRIER group: [start, end) instruction range."""

    start: int
    end: int
    slot: int = 0
    n: int = 0
    t: int = 0
    phase: str = "cfg"

    def to_list(self):
        return [self.start, self.end, self.slot, self.n, self.t, self.phase]

    @classmethod
    def from_list(cls, x):
        return cls(*x)


@dataclass
class InstructionStream:
    """One sub-core's program plus the tables it is interpreted against.

    ``slots`` maps a slot id to its layer geometry, variable allocations
    (bank, element base, elements per slice, slice count) and network
    routes, exactly as stored in the device file.
    """

    instructions: list = field(default_factory=list)
    core_id: int = 0
    sub_core: str = "fp"
    groups: list = field(default_factory=list)
    slots: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.instructions)

    def group_of(self, pc: int) -> Optional[GroupContext]:
        for g in self.groups:
            if g.start <= pc < g.end:
                return g
        return None

    def barrier_groups(self) -> list:
        out, cur = [], []
        for ins in self.instructions:
            cur.append(ins)
            if ins.opcode == Opcode.BARRIER:
                out.append(cur)
                cur = []
        if cur:
            out.append(cur)
        return out


SUB_IDS = {"fp": 0, "bp": 1}
_DEV_HEADER = struct.Struct("<III")


def write_device_file(path_or_buf, stream: InstructionStream):
    meta = {
        "groups": [g.to_list() for g in stream.groups],
        "slots": {str(k): v for k, v in stream.slots.items()},
    }
    blob = json.dumps(meta, separators=(",", ":")).encode()
    body = _DEV_HEADER.pack(stream.core_id, SUB_IDS[stream.sub_core], len(stream.instructions))
    body += b"".join(to_bytes(i) for i in stream.instructions)
    body += struct.pack("<I", len(blob)) + blob
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(body)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(body)
    return body


def read_device_file(path_or_bytes) -> InstructionStream:
    if isinstance(path_or_bytes, (bytes, bytearray)):
        raw = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            raw = fh.read()
    core_id, sub, length = _DEV_HEADER.unpack_from(raw)
    off = _DEV_HEADER.size
    ins = [from_bytes(raw[off + 16 * i: off + 16 * (i + 1)]) for i in range(length)]
    off += 16 * length
    (mlen,) = struct.unpack_from("<I", raw, off)
    meta = json.loads(raw[off + 4: off + 4 + mlen])
    sub_name = {v: k for k, v in SUB_IDS.items()}[sub]
    return InstructionStream(
        ins, core_id, sub_name,
        [GroupContext.from_list(g) for g in meta["groups"]],
        {int(k): v for k, v in meta["slots"].items()},
    )


# ---------------------------------------------------------------- validation


def bank_of(dt) -> tuple:
    return VAR_BANK[DataType(dt)]


def _elem_bytes(kind: str) -> float:
    return 2.0 if kind == "half" else 0.125


def _slot_checks(slot: dict, arch, sub: str) -> list:
    out = []
    use = {}
    for name, (bank, base, per, count) in slot.get("vars", {}).items():
        dt = DataType[name]
        vsub, vbank = VAR_BANK[dt]
        if vsub != sub:
            continue
        kind = arch.bank(sub, vbank)["kind"]
        end = (base + per * count) * _elem_bytes(kind)
        use[vbank] = max(use.get(vbank, 0), end)
    for bank, end in use.items():
        b = arch.bank(sub, bank)
        if end > b["bytes"]:
            out.append(f"SramOverflow({b['label']})")
    return out


_GEOM = {
    Opcode.FP_CONV: lambda g, f: (f["s_h_size"] == g["H"] and f["s_w_size"] == g["W"] and f["k_size"] == g["R"]
                                  and f["padding"] == g["pad"] and f["stride"] == g["stride"]
                                  and f["c_offset"] + f["c_size"] <= g["C"]
                                  and f["m_offset"] + f["m_size"] <= g["M"]),
    Opcode.FP_SOMA: lambda g, f: (f["h_size"] == g["E"] and f["w_size"] == g["F"]
                                  and f["m_offset"] + f["m_size"] <= g["M"] and f["pooling"] == int(g["pool"])),
    Opcode.BP_CONV: lambda g, f: (g.get("next") is not None and f["du_h_size"] == g["next"]["E"]
                                  and f["du_w_size"] == g["next"]["F"] and f["k_size"] == g["next"]["R"]
                                  and f["padding"] == g["next"]["R"] - 1 - g["next"]["pad"]
                                  and f["insert"] == g["next"]["stride"] - 1
                                  and f["m_offset"] + f["m_size"] <= g["next"]["M"]
                                  and f["c_offset"] + f["c_size"] <= g["next"]["C"]),
    Opcode.WG_CONV: lambda g, f: (g.get("next") is not None and f["s_h_size"] == g["next"]["H"]
                                  and f["s_w_size"] == g["next"]["W"] and f["du_h_size"] == g["next"]["E"]
                                  and f["du_w_size"] == g["next"]["F"]
                                  and f["insert"] == g["next"]["stride"] - 1
                                  and f["dw_c_offset"] + f["dw_c_size"] <= g["next"]["C"]
                                  and f["dw_m_offset"] + f["dw_m_size"] <= g["next"]["M"]),
    Opcode.BP_GRAD: lambda g, f: (f["h_size"] == g["E"] and f["w_size"] == g["F"]
                                  and f["c_offset"] + f["c_size"] <= g["M"] and f["pooling"] == int(g["pool"])),
}


def validate(stream: InstructionStream, arch) -> list:
    """Return a list of violation strings; empty means the stream is accepted."""
    v = []
    ins = stream.instructions
    sub = stream.sub_core
    if not ins or ins[-1].opcode != Opcode.BARRIER:
        v.append("MissingBarrier(end of stream)")
    for slot_id, slot in stream.slots.items():
        v.extend(_slot_checks(slot, arch, sub))
    # groups must tile the stream and end on a barrier
    if stream.groups:
        pos = 0
        for g in stream.groups:
            if g.start != pos or g.end <= g.start:
                v.append(f"GroupTable(gap at {pos})")
                break
            if ins[g.end - 1].opcode != Opcode.BARRIER:
                v.append(f"GroupTable(group {g.start}..{g.end} does not end on BARRIER)")
            if g.slot not in stream.slots and any(i.opcode not in (Opcode.BARRIER,)
                                                  for i in ins[g.start:g.end]):
                v.append(f"GroupTable(unknown slot {g.slot})")
            pos = g.end
        if pos != len(ins):
            v.append("GroupTable(does not cover the stream)")
    tags = set()
    for pc, i in enumerate(ins):
        op = i.opcode
        f = i.fields
        if (op in FP_OPS and sub != "fp") or (op in BP_OPS and sub != "bp"):
            v.append(f"WrongSubCore({op.name}@{pc})")
        if op in (Opcode.NOC_DATA, Opcode.NOC_CTRL):
            if f["tag_id"] in tags:
                v.append(f"DuplicateTag({f['tag_id']}@{pc})")
            tags.add(f["tag_id"])
        if op == Opcode.BARRIER:
            tags = set()
        if "data_type" in f and op != Opcode.NOC_CTRL:
            vsub, bank = bank_of(f["data_type"])
            if vsub != sub:
                v.append(f"WrongSubCore({DataType(f['data_type']).name}@{pc})")
                continue
            b = arch.bank(sub, bank)
            if op == Opcode.DMA_RD and f["dst_addr"] + f["length"] > b["bytes"]:
                v.append(f"SramOverflow({b['label']})")
            if op == Opcode.DMA_WR and f["src_addr"] + f["length"] > b["bytes"]:
                v.append(f"SramOverflow({b['label']})")
            if op in (Opcode.FP_VECTOR, Opcode.BP_VECTOR):
                n = f["m_size"] * f["h_size"] * f["w_size"]
                words = (f["m_offset"] * f["h_size"] * f["w_size"] + n) * _elem_bytes(b["kind"])
                if words > b["bytes"]:
                    v.append(f"SramOverflow({b['label']})")
                ob = arch.bank(sub, "others")
                if n * 2 > ob["bytes"]:
                    v.append(f"SramOverflow({ob['label']})")
        if op in _GEOM or op == Opcode.NOC_DATA:
            g = stream.group_of(pc) if stream.groups else None
            slot = stream.slots.get(g.slot) if g is not None else None
            if slot is None:
                v.append(f"NoContext({op.name}@{pc})")
                continue
            if op == Opcode.NOC_DATA:
                name = DataType(f["data_type"]).name
                if name not in slot.get("vars", {}):
                    v.append(f"Unallocated({name}@{pc})")
                if not f["flow_type"] & RECV and not slot.get("routes", {}).get(name):
                    v.append(f"NoRoute({name}@{pc})")
                continue
            geom = slot.get("geom")
            if geom is None or not _GEOM[op](geom, f):
                v.append(f"GeometryMismatch({op.name}@{pc})")
    return v
