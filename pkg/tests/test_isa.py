import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocore import isa
from neurocore.arch import ArchConfig
from neurocore.errors import FieldOverflow, InvalidOpcode
from neurocore.isa import (FIELDS, GroupContext, Instruction, InstructionStream, Opcode, assemble, decode,
                           disassemble, encode, read_device_file, validate, write_device_file)
from neurocore.mapper import map_model
from neurocore.snn.layers import InputSpec, ModelGraph, NeuronConfig, conv


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(list(Opcode)))
def test_roundtrip_per_opcode(seed, op):
    ins = isa.sample_instruction(np.random.default_rng(seed), op)
    word = encode(ins)
    assert 0 <= word < 1 << 128
    assert word >> 120 == int(op)
    assert decode(word) == ins
    assert isa.from_bytes(isa.to_bytes(ins)) == ins


def test_field_layout_fits():
    for op, fields in FIELDS.items():
        assert sum(b for _, b in fields) <= isa.PAYLOAD_BITS
        names = [n for n, _ in fields]
        assert len(names) == len(set(names))


def test_bad_words_rejected():
    with pytest.raises(InvalidOpcode):
        decode(0xEE << 120)
    with pytest.raises(FieldOverflow):
        decode(1 << 128)
    ok = encode(Instruction.make(Opcode.BARRIER, sub_type=0))
    with pytest.raises(InvalidOpcode):
        decode(ok | 1)  # reserved low bits set


def test_operand_checks():
    with pytest.raises(FieldOverflow):
        Instruction.make(Opcode.DMA_RD, data_type=0, length=1 << 32)
    with pytest.raises(ValueError):
        Instruction.make(Opcode.FP_CONV, s_h_size=4, s_w_size=4, k_size=2, stride=1, c_size=1, m_size=1)
    with pytest.raises(ValueError):
        Instruction.make(Opcode.FP_CONV, s_h_size=4, s_w_size=4, k_size=3, padding=3, stride=1, c_size=1, m_size=1)
    with pytest.raises(ValueError):
        Instruction.make(Opcode.BARRIER, bogus=1)
    with pytest.raises(InvalidOpcode):
        Instruction(0x7F, ())


def test_assembly_roundtrip():
    rng = np.random.default_rng(1)
    prog = [isa.sample_instruction(rng) for _ in range(200)]
    text = disassemble(prog)
    assert assemble(text) == prog
    assert assemble("# comment only\n\nbarrier sub_type=1  # drain\n") == [
        Instruction.make(Opcode.BARRIER, sub_type=1)]
    with pytest.raises(InvalidOpcode):
        assemble("JUMP x=1")


def _mapping():
    nc = NeuronConfig()
    model = ModelGraph(InputSpec(4, 6, 6, "poisson", nc), [conv(4, 8, 6, 6, neuron=nc), conv(8, 8, 6, 6, neuron=nc)], 2)
    return map_model(model, 2)


def test_device_file_roundtrip(tmp_path):
    m = _mapping()
    for (core, sub), s in m.streams.items():
        p = tmp_path / f"{core}_{sub}.bin"
        write_device_file(p, s)
        back = read_device_file(p)
        assert back.instructions == s.instructions
        assert (back.core_id, back.sub_core) == (core, sub)
        assert back.groups == s.groups
        assert back.slots.keys() == s.slots.keys()
        buf = io.BytesIO()
        write_device_file(buf, s)
        assert read_device_file(buf.getvalue()).instructions == s.instructions


def test_emitted_streams_validate_and_defects_are_caught():
    m = _mapping()
    arch = m.arch
    for key, s in m.streams.items():
        assert validate(s, arch) == [], key
    key = next(k for k, s in m.streams.items() if any(i.opcode == Opcode.FP_CONV for i in s.instructions))
    s = m.streams[key]
    # drop the final barrier
    cut = InstructionStream(s.instructions[:-1], s.core_id, s.sub_core, [], s.slots)
    assert any("MissingBarrier" in v for v in validate(cut, arch))
    # an FP_CONV whose geometry disagrees with its slot
    pc = next(i for i, ins in enumerate(s.instructions) if ins.opcode == Opcode.FP_CONV)
    f = dict(s.instructions[pc].fields)
    f["s_h_size"] += 1
    bad = list(s.instructions)
    bad[pc] = Instruction.make(Opcode.FP_CONV, **f)
    broken = InstructionStream(bad, s.core_id, s.sub_core, s.groups, s.slots)
    assert any("GeometryMismatch" in v for v in validate(broken, arch))
    # a bp-only op placed on the fp sub-core
    wrong = InstructionStream([Instruction.make(Opcode.BP_GRAD, h_size=1, w_size=1, c_size=1),
                               Instruction.make(Opcode.BARRIER)], 0, "fp")
    assert any("WrongSubCore" in v for v in validate(wrong, arch))
    # overflowing DMA into a bank
    big = ArchConfig().bank("fp", "w")["bytes"]
    dma = InstructionStream([Instruction.make(Opcode.DMA_RD, data_type=int(isa.DataType.W), dst_addr=big, length=8),
                             Instruction.make(Opcode.BARRIER)], 0, "fp")
    assert any("SramOverflow" in v for v in validate(dma, arch))


def test_group_lookup():
    s = InstructionStream([Instruction.make(Opcode.BARRIER)] * 3, groups=[GroupContext(0, 1), GroupContext(1, 3, 2)])
    assert s.group_of(2).slot == 2
    assert s.group_of(5) is None
    assert len(s.barrier_groups()) == 3
