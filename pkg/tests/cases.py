"""Random small training cases run on both the golden model and the chip."""

from dataclasses import dataclass

import numpy as np

from neurocore.deploy import CoreSimRunner
from neurocore.snn import SpikingNetwork
from neurocore.snn.layers import InputSpec, ModelGraph, NeuronConfig, conv


@dataclass
class Case:
    model: ModelGraph
    weights: list
    s0: np.ndarray
    dlds: np.ndarray

    @property
    def N(self):
        return self.s0.shape[0]

    @property
    def T(self):
        return self.s0.shape[1]


def random_case(rng, max_layers=2) -> Case:
    N = int(rng.integers(1, 3))
    T = int(rng.integers(1, 5))
    L = int(rng.integers(1, max_layers + 1))
    C = int(rng.integers(1, 33))
    H = int(rng.integers(1, 9))
    W = int(rng.integers(1, 9))
    if rng.random() < 0.5:
        H, W = H | 1, W | 1
    nc = NeuronConfig()
    layers = []
    c_in, h, w = C, H, W
    for i in range(L):
        k = int(rng.choice([1, 3]))
        # stride 2 needs odd sizes for the output grid to be exact
        stride = int(rng.choice([1, 2])) if h % 2 and w % 2 else 1
        M = int(rng.integers(1, 33))
        spec = conv(c_in, M, h, w, k=k, stride=stride, neuron=nc, name=f"l{i}")
        layers.append(spec)
        c_in, h, w = M, spec.E, spec.F
    model = ModelGraph(InputSpec(C, H, W, "poisson", nc), layers, T)
    weights = []
    for blk in model.blocks():
        M_, C_, R, S = blk.conv.weight_shape
        scale = float(rng.choice([8, 16, 32]))
        weights.append(rng.integers(-24, 25, size=(M_, C_, R, S)) / scale)
    rate = float(rng.uniform(0.05, 0.9))
    s0 = (rng.random((N, T, C, H, W)) < rate).astype(np.uint8)
    K = c_in * h * w
    dlds = np.round(rng.normal(size=(N, T, K)) * 16) / 64
    dlds[rng.random(dlds.shape) < rng.uniform(0, 0.8)] = 0.0
    dlds = dlds + 0.0
    return Case(model, weights, s0, dlds)


def golden(case: Case, gated=True):
    net = SpikingNetwork(case.model, case.weights)
    w = net.device_weights()
    caches, out = net.forward(case.s0, w, gated)
    gw, gu = net.backward(caches, case.dlds, w, gated)
    return net, caches, gw, gu


def chip(case: Case, gating=True, **kw):
    runner = CoreSimRunner.for_model(case.model, case.N, **kw)
    return runner, runner.run_batch(case.weights, case.s0, dlds=case.dlds, probe=True, gating=gating)


def compare(case: Case, caches, gw, gu, res) -> list:
    """Names of the quantities that differ bitwise between golden and chip."""
    bad = []
    P = res.sim.probes
    for i, (c, g) in enumerate(zip(caches, gw)):
        l = i + 1
        if not np.array_equal(res.grads[i].view(np.uint64), (g + 0.0).view(np.uint64)):
            bad.append(f"dw{l}")
        for n in range(case.N):
            for t in range(case.T):
                u = P[(l, "u", n, t)].reshape(c.u[n, t].shape)
                s = P[(l, "s", n, t)].reshape(c.s[n, t].shape)
                du = P[(l, "du", n, t)].reshape(gu[i][n, t].shape)
                if not np.array_equal(u, c.u[n, t]):
                    bad.append(f"u{l}[{n},{t}]")
                if not np.array_equal(s, c.s[n, t]):
                    bad.append(f"s{l}[{n},{t}]")
                if not np.array_equal(du, gu[i][n, t]):
                    bad.append(f"du{l}[{n},{t}]")
    return bad


def three_layer_run(gating=True):
    """Three 16-channel 8x8 conv layers, batch 4, T=4, on the default placement."""
    rng = np.random.default_rng(0)
    nc = NeuronConfig()
    T, N = 4, 4
    model = ModelGraph(InputSpec(16, 8, 8, "poisson", nc), [conv(16, 16, 8, 8, neuron=nc) for _ in range(3)], T)
    w = [rng.integers(-16, 17, size=b.conv.weight_shape) / 64 for b in model.blocks()]
    s0 = (rng.random((N, T, 16, 8, 8)) < 0.3).astype(np.uint8)
    dlds = np.round(rng.normal(size=(N, T, 16 * 64)) * 16) / 256
    runner = CoreSimRunner.for_model(model, N)
    res = runner.run_batch(w, s0, dlds=dlds, gating=gating)
    return runner, res


# ---------------------------------------------------------------- count oracle


def _windows(x, R, S, stride, pad, E, F):
    """x: (C, H, W) -> (C, R, S, E, F) of zero-padded input samples."""
    C, H, W = x.shape
    xp = np.zeros((C, H + 2 * pad + R + stride * E, W + 2 * pad + S + stride * F))
    xp[:, pad:pad + H, pad:pad + W] = x
    out = np.zeros((C, R, S, E, F))
    for r in range(R):
        for s in range(S):
            out[:, r, s] = xp[:, r:r + stride * E:stride, s:s + stride * F:stride][:, :E, :F]
    return out


def executed_ops_oracle(case: Case, caches, gu, gated=True) -> dict:
    """Executed array operations per (slot, op), recounted element by element.

    FP: every active spike costs one selector add and one tree or psum add
    per output channel; WG: one accumulate per (active spike, output
    channel); BP: for each unmasked output, each non-zero gradient costs a
    multiply and an add. Ungated, every slot is counted.
    """
    out = {}
    blocks = case.model.blocks()
    for i, blk in enumerate(blocks):
        spec = blk.conv
        l = i + 1
        C, M, R, S = spec.C, spec.M, spec.R, spec.S
        E, F, H, W = spec.E, spec.F, spec.H, spec.W
        fp = wg = 0
        for n in range(case.N):
            for t in range(case.T):
                x = caches[i].s_in[n, t].reshape(C, H, W).astype(np.float64)
                win = _windows(x, R, S, spec.stride, spec.padding, E, F)
                active = int(win.sum())
                fp += 2 * M * active if gated else 2 * M * C * R * S * E * F
                wg += M * active if gated else M * C * R * S * E * F
        out[(l, "FP_CONV")] = fp
        out[(l - 1, "WG_CONV")] = wg
        if i == 0:
            continue
        prev = blocks[i - 1]
        bp = 0
        for n in range(case.N):
            for t in range(case.T):
                du = gu[i][n, t].reshape(M, E, F)
                if not gated:
                    bp += 2 * M * C * R * S * H * W
                    continue
                nzc = np.zeros((H, W))
                nz = (du != 0).astype(np.float64)
                # scatter each non-zero gradient over the inputs its kernel covers
                for m in range(M):
                    for e in range(E):
                        for f in range(F):
                            if not nz[m, e, f]:
                                continue
                            for r in range(R):
                                for s in range(S):
                                    h = e * spec.stride + r - spec.padding
                                    x_ = f * spec.stride + s - spec.padding
                                    if 0 <= h < H and 0 <= x_ < W:
                                        nzc[h, x_] += 1
                fire = ((caches[i - 1].u[n, t] >= prev.neuron.th_l) &
                        (caches[i - 1].u[n, t] <= prev.neuron.th_r)).reshape(C, H, W)
                bp += 2 * int((fire * nzc[None]).sum())
        out[(l - 1, "BP_CONV")] = bp
    return out


def executed_ops_chip(res) -> dict:
    out = {}
    for r in res.sim.records:
        if r["op"] in ("FP_CONV", "BP_CONV", "WG_CONV"):
            key = (r["slot"], r["op"])
            out[key] = out.get(key, 0) + int(r["executed"])
    return out
