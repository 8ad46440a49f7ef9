import itertools
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocore.arch import ArchConfig
from neurocore.errors import CapacityError, UnsupportedOp
from neurocore.isa import Opcode
from neurocore.mapper import (balance_partition, estimate_layer_cycles, map_model, partition_cost, snake_order,
                              split_graph)
from neurocore.snn.layers import InputSpec, LayerSpec, ModelGraph, NeuronConfig, bn, conv, mnist_convnet
from cases import three_layer_run

NC = NeuronConfig()


def _brute_force(costs, k):
    n = len(costs)
    best = float("inf")
    for g in range(1, min(k, n) + 1):
        for cuts in itertools.combinations(range(1, n), g - 1):
            bounds = (0,) + cuts + (n,)
            best = min(best, max(sum(costs[a:b]) for a, b in zip(bounds, bounds[1:])))
    return best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=8), st.integers(1, 5))
def test_partition_is_optimal_and_contiguous(costs, k):
    groups = balance_partition(costs, k)
    assert [i for g in groups for i in g] == list(range(len(costs)))
    assert all(g for g in groups) and len(groups) == min(k, len(costs))
    assert partition_cost(costs, groups) == _brute_force(costs, k)


def test_partition_rejects_bad_input():
    with pytest.raises(ValueError):
        balance_partition([1, 2], 0)
    with pytest.raises(ValueError):
        balance_partition([1, -2], 2)
    assert balance_partition([], 3) == []


def test_snake_order_is_a_hamiltonian_path():
    arch = ArchConfig()
    order = snake_order(arch)
    assert sorted(order) == list(range(arch.cores))
    for a, b in zip(order, order[1:]):
        ax, ay = a % arch.cols, a // arch.cols
        bx, by = b % arch.cols, b // arch.cols
        assert abs(ax - bx) + abs(ay - by) == 1


def test_split_graph_fuses_pool():
    pairs = split_graph(mnist_convnet())
    assert len(pairs) == 4
    fp, bp = pairs[0]
    assert fp.ops == ("conv", "soma", "fire", "pool")
    assert bp.ops[0] == "unpool" and "bp_conv" in bp.ops


def test_estimates_match_simulated_array_cycles():
    runner, res = three_layer_run()
    spent = defaultdict(int)
    for r in res.sim.records:
        spent[(r["op"], r["slot"])] += r["end"] - r["start"]
    blocks = runner.mapping.model.blocks()
    for i, blk in enumerate(blocks):
        est = estimate_layer_cycles(blk.conv, 4, 4)
        assert spent[("FP_CONV", i + 1)] == est["fp"]
        assert spent[("FP_SOMA", i + 1)] == est["soma"]
        assert spent[("WG_CONV", i)] == est["wg"]
        assert spent[("BP_GRAD", i + 1)] == est["grad"]
        if i:
            assert spent[("BP_CONV", i)] == est["bp"]


def test_mapping_places_layers_in_order():
    m = map_model(mnist_convnet(), 2)
    order = snake_order(m.arch)
    cores = [m.placement[s] for s in sorted(m.placement)]
    assert [order.index(c) for c in cores] == sorted(order.index(c) for c in cores)
    man = m.manifest()
    assert man["batch"] == 2 and len(man["layers"]) == m.num_slots
    for key, s in m.streams.items():
        assert s.instructions[-1].opcode == Opcode.BARRIER
    assert all(v == [] for v in m.validate().values())


def test_mapper_refusals():
    with pytest.raises(UnsupportedOp):
        map_model(ModelGraph(InputSpec(1, 4, 4, "poisson", NC), [conv(1, 2, 4, 4), bn()]), 1)
    rect = LayerSpec("conv", 1, 2, 4, 4, 3, 1, 1, 0, NC)
    with pytest.raises(UnsupportedOp):
        map_model(ModelGraph(InputSpec(1, 4, 4, "poisson", NC), [rect]), 1)
    with pytest.raises(ValueError):
        map_model(mnist_convnet(), 0)
    huge = ModelGraph(InputSpec(64, 64, 64, "poisson", NC), [conv(64, 64, 64, 64, neuron=NC)], 4)
    with pytest.raises(CapacityError):
        map_model(huge, 8)
