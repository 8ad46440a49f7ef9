"""Core interpreter and system: functional equivalence on full models, timing
invariants, replay of saved streams and failure modes."""

from collections import defaultdict

import numpy as np
import pytest

from cases import chip, compare, golden, random_case
from neurocore.arch import ArchConfig
from neurocore.core.memory import Dram, SramBank, bits_bytes, bytes_bits, bytes_half, half_bytes
from neurocore.core.stats import EnergyLedger
from neurocore.core.system import System
from neurocore.deploy import CoreSimRunner
from neurocore.errors import AddressFault, DeadlockDetected
from neurocore.isa import Instruction, InstructionStream, Opcode
from neurocore.mapper import Mapping
from neurocore.numerics import to_half_exact
from neurocore.snn import SpikingNetwork
from neurocore.snn.layers import mnist_convnet
from neurocore.workloads.data import synthetic_digits


@pytest.fixture(scope="module")
def small_mnist():
    ds = synthetic_digits(8, seed=3)
    model = mnist_convnet(3, channels=(4, 8, 8), population=2)
    net = SpikingNetwork(model)
    x = ds.scale(ds.x_train[:2])
    y = ds.y_train[:2]
    loss, gw = net.compute_gradients(net.encode(x), y)
    cur = to_half_exact(np.clip(x, 0, None) * net.input_gain)
    return model, net, cur, y, loss, gw


@pytest.mark.parametrize("cores", [None, 2, 1])
def test_full_model_gradients_bitwise(small_mnist, cores):
    model, net, cur, y, loss, gw = small_mnist
    runner = CoreSimRunner.for_model(model, 2, cores=cores)
    res = runner.run_batch(net.master, cur, labels=y)
    for a, b in zip(res.grads, gw):
        assert np.array_equal(a.view(np.uint64), (b + 0.0).view(np.uint64))
    assert res.loss == pytest.approx(loss)
    if cores:
        assert len(runner.mapping.cores) == cores


def test_engine_records_never_overlap(small_mnist):
    model, net, cur, y, _, _ = small_mnist
    runner = CoreSimRunner.for_model(model, 2)
    res = runner.run_batch(net.master, cur, labels=y)
    busy = defaultdict(list)
    for r in res.sim.records:
        assert 0 <= r["start"] <= r["end"]
        if r["engine"]:
            busy[(r["core"], r["sub"], r["engine"])].append((r["start"], r["end"]))
    for spans in busy.values():
        spans.sort()
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            assert s1 >= e0
    assert res.sim.cycles >= max(r["end"] for r in res.sim.records)


def test_saved_streams_replay_identically(tmp_path, small_mnist):
    model, net, cur, y, _, _ = small_mnist
    runner = CoreSimRunner.for_model(model, 2)
    a = runner.run_batch(net.master, cur, labels=y)
    runner.mapping.save(tmp_path / "streams")
    b = CoreSimRunner(Mapping.load(tmp_path / "streams")).run_batch(net.master, cur, labels=y)
    assert a.sim.cycles == b.sim.cycles
    for ga, gb in zip(a.grads, b.grads):
        np.testing.assert_array_equal(ga, gb)


def test_random_cases_with_probes():
    rng = np.random.default_rng(77)
    for _ in range(15):
        case = random_case(rng)
        _, caches, gw, gu = golden(case)
        _, res = chip(case)
        assert compare(case, caches, gw, gu, res) == []


def test_gating_reduces_energy_not_results():
    case = random_case(np.random.default_rng(5))
    _, on = chip(case, gating=True)
    _, off = chip(case, gating=False)
    for a, b in zip(on.grads, off.grads):
        np.testing.assert_array_equal(a, b)
    assert on.sim.gating.executed_ops < off.sim.gating.executed_ops
    assert on.sim.energy.dynamic() < off.sim.energy.dynamic()


def test_missing_receiver_is_a_deadlock():
    case = random_case(np.random.default_rng(11))
    runner, _ = chip(case)
    streams = [s for k, s in runner.mapping.streams.items() if k[1] == "fp"]
    dram = runner.dram_image(case.weights, case.s0)
    with pytest.raises(DeadlockDetected):
        System(runner.mapping.arch, streams, dram).run()


def test_compute_without_context_faults():
    s = InstructionStream([Instruction.make(Opcode.FP_SOMA, h_size=1, w_size=1, m_size=1),
                           Instruction.make(Opcode.BARRIER)], 0, "fp")
    with pytest.raises(AddressFault):
        System(ArchConfig(), [s]).run()


def test_memory_primitives():
    b = SramBank("w", "W", 64, "half")
    assert b.elems == 32
    with pytest.raises(AddressFault):
        b.view(30, 4)
    d = Dram(64)
    d.write(8, b"\x01\x02")
    assert d.read(8, 2) == b"\x01\x02"
    with pytest.raises(AddressFault):
        d.read(63, 4)
    v = np.array([0.5, -2.0, 65504.0])
    np.testing.assert_array_equal(bytes_half(half_bytes(v)), v)
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 0, 1], dtype=np.uint8)
    np.testing.assert_array_equal(bytes_bits(bits_bytes(bits), 9), bits)
    e = EnergyLedger()
    e.charge("sram", 2.0)
    with pytest.raises(KeyError):
        e.charge("laser", 1.0)
    with pytest.raises(ValueError):
        e.charge("sram", -1.0)
    assert e.total == 2.0
