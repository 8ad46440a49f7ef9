"""Run compiled training batches on the simulated chip.

The host stages weights and inputs in DRAM, the chip runs one batch of
FP/BP/WG, and the host reads back the batch-summed weight gradients.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core.memory import Dram, bits_bytes, bytes_half, half_bytes
from .core.system import LossHost, SimResult, System
from .mapper import Mapping, map_model
from .snn import ops


@dataclass
class BatchResult:
    grads: list
    out_spikes: np.ndarray
    loss: Optional[float]
    sim: SimResult


class CoreSimRunner:
    """Executes one mapping (fixed batch size) batch after batch."""

    def __init__(self, mapping: Mapping, logit_scale=8.0):
        self.mapping = mapping
        self.logit_scale = logit_scale

    @classmethod
    def for_model(cls, model, batch, arch=None, cores=None, input_kind=None, **kw):
        return cls(map_model(model, batch, arch, cores, input_kind), **kw)

    def dram_image(self, weights, inputs) -> Dram:
        m = self.mapping
        d = m.dram
        dram = Dram(d["size"])
        for i, w in enumerate(weights):
            reg = d[f"w{i + 1}"]
            dram.write(reg["base"], half_bytes(ops.device_weights(w).reshape(-1)), count=False)
            dram.occupy(reg["base"], reg["bytes"])
        x = np.asarray(inputs)
        N, T = m.batch, m.model.timesteps
        base, stride = d["input"]["base"], d["input"]["stride"]
        if m.input_kind == "spikes":
            x = ops.as_spikes(x).reshape(N, T, -1)
            for n in range(N):
                for t in range(T):
                    dram.write(base + (n * T + t) * stride, bits_bytes(x[n, t]).ljust(stride, b"\0"), count=False)
        else:
            x = np.asarray(x, dtype=np.float64).reshape(N, -1)
            for n in range(N):
                dram.write(base + n * stride, half_bytes(x[n]), count=False)
        dram.occupy(base, d["input"]["bytes"])
        return dram

    def run_batch(self, weights, inputs, labels=None, dlds=None, probe=False, gating=None) -> BatchResult:
        m = self.mapping
        arch = m.arch if gating is None else dataclasses.replace(m.arch, gating=bool(gating))
        d = m.dram
        N, T = m.batch, m.model.timesteps
        dram = self.dram_image(weights, inputs)
        host = LossHost(d["out"]["base"], d["out"]["stride"], d["grad"]["base"], d["grad"]["stride"], N, T,
                        d["k_out"], arch.host_latency * arch.core_period, labels=labels, dlds=dlds,
                        scale=self.logit_scale, num_classes=m.model.num_classes)
        streams = m.streams.values()
        sysm = System(arch, streams, dram, host, probe)
        res = sysm.run()
        grads = []
        for i, blk in enumerate(m.model.blocks()):
            reg = d[f"dw{i + 1}"]
            raw = dram.read(reg["base"], reg["bytes"], count=False)
            grads.append(bytes_half(raw).reshape(blk.conv.weight_shape) + 0.0)
        loss = float(np.mean(list(host.losses.values()))) if host.losses else None
        return BatchResult(grads, host.out_spikes.copy(), loss, res)
