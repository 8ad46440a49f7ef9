"""Golden training path: forward over T, rate-decoded loss, BPTT and SGD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DimMismatch
from ..numerics import HALF_MODE, to_half_exact
from . import ops
from .layers import Block, ModelGraph

DEFAULT_LOGIT_SCALE = 8.0


def encode_images(images, timesteps: int, encoding="direct", neuron=None, rng=None, gain=1.0):
    """Turn (N, C, H, W) intensities in [0, 1] into (N, T, C, H, W) spikes.

    Direct coding feeds the image as the input current of an LIF encoder at
    every step; rate coding draws Bernoulli spikes with the pixel value as
    probability.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise DimMismatch(f"expected (N, C, H, W) images, got {x.shape}")
    if encoding == "direct":
        cur = to_half_exact(np.clip(x, 0.0, None) * gain)
        conv = np.repeat(cur[:, None], timesteps, axis=1)
        _, s = ops.lif_forward(conv, neuron)
        return s
    if encoding == "poisson":
        rng = np.random.default_rng(0) if rng is None else rng
        p = np.clip(x, 0.0, 1.0)
        return (rng.random((x.shape[0], timesteps) + x.shape[1:]) < p[:, None]).astype(np.uint8)
    raise ValueError(f"unknown encoding {encoding!r}")


def rate_logits(out_spikes, num_classes=None, scale=DEFAULT_LOGIT_SCALE):
    """Spike-count logits; each class owns a contiguous group of output neurons."""
    s = np.asarray(out_spikes, dtype=np.float64)
    N, T = s.shape[:2]
    counts = s.reshape(N, T, -1).sum(axis=1)
    K = counts.shape[1] if num_classes is None else int(num_classes)
    if counts.shape[1] % K:
        raise DimMismatch(f"{counts.shape[1]} output neurons cannot be split into {K} classes")
    P = counts.shape[1] // K
    return scale * counts.reshape(N, K, P).sum(axis=2) / (T * P)


def rate_loss(out_spikes, labels, scale=DEFAULT_LOGIT_SCALE, num_classes=None):
    """Softmax cross-entropy on spike-count logits.

    out_spikes: (N, T, K*P, 1, 1) or (N, T, K*P) with P neurons per class.
    Returns (mean loss, dL/ds per sample and step rounded to binary16,
    logits). The gradient is not divided by N; the host scales the
    batch-summed weight gradients.
    """
    s = np.asarray(out_spikes, dtype=np.float64)
    N, T = s.shape[:2]
    labels = np.asarray(labels, dtype=np.int64)
    logits = rate_logits(s, num_classes, scale)
    K = logits.shape[1]
    P = s.reshape(N, T, -1).shape[2] // K
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    loss = float(-np.log(np.clip(p[np.arange(N), labels], 1e-30, None)).mean())
    y = np.zeros_like(p)
    y[np.arange(N), labels] = 1.0
    g = to_half_exact(np.repeat(scale / (T * P) * (p - y), P, axis=1)) + 0.0
    dlds = np.repeat(g[:, None, :], T, axis=1)
    return loss, dlds, logits


@dataclass
class BlockCache:
    s_in: np.ndarray
    conv: np.ndarray
    u: np.ndarray
    s: np.ndarray
    s_out: np.ndarray
    argmax: Optional[np.ndarray] = None
    bn_cache: Optional[tuple] = None


@dataclass
class SGD:
    """Host-side SGD with optional momentum on float32 master weights."""

    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    _vel: dict = field(default_factory=dict, repr=False)

    def step(self, params: list, grads: list):
        for i, (p, g) in enumerate(zip(params, grads)):
            g = np.asarray(g, dtype=np.float32)
            if self.weight_decay:
                g = g + np.float32(self.weight_decay) * p
            if self.momentum:
                v = self._vel.get(i)
                v = g if v is None else np.float32(self.momentum) * v + g
                self._vel[i] = v
                g = v
            p -= np.float32(self.lr) * g


def init_weights(model: ModelGraph, rng=None, gain=1.5) -> list:
    rng = np.random.default_rng(model.seed) if rng is None else rng
    out = []
    for blk in model.blocks():
        M, C, R, S = blk.conv.weight_shape
        bound = gain * np.sqrt(3.0 / (C * R * S))
        out.append(rng.uniform(-bound, bound, size=(M, C, R, S)).astype(np.float32))
    return out


class SpikingNetwork:
    """Golden model: float32 master weights, binary16 device arithmetic."""

    def __init__(self, model: ModelGraph, weights=None, mode=HALF_MODE, logit_scale=DEFAULT_LOGIT_SCALE,
                 input_gain=2.0):
        self.model = model
        self.blocks: list[Block] = model.blocks()
        self.mode = mode
        self.logit_scale = float(logit_scale)
        self.input_gain = float(input_gain)
        if weights is None:
            weights = init_weights(model)
        if len(weights) != len(self.blocks):
            raise DimMismatch("one weight tensor per conv/fc block is required")
        self.master = [np.array(w, dtype=np.float32) for w in weights]
        for w, blk in zip(self.master, self.blocks):
            if w.shape != blk.conv.weight_shape:
                raise DimMismatch(f"weight {w.shape} vs {blk.conv.weight_shape}")
        self.bn_params = {
            i: [np.ones(b.conv.M, np.float32), np.zeros(b.conv.M, np.float32)]
            for i, b in enumerate(self.blocks) if b.bn
        }

    # ------------------------------------------------------------ forward
    def device_weights(self) -> list:
        return [ops.device_weights(w) for w in self.master]

    def encode(self, images, rng=None):
        inp = self.model.input
        return encode_images(images, self.model.timesteps, inp.encoding, inp.neuron, rng, self.input_gain)

    def forward(self, s0, weights=None, gated=True):
        """Run every block over all T; s0 is (N, T, C, H, W) input spikes."""
        weights = self.device_weights() if weights is None else weights
        x = ops.as_spikes(s0)
        caches = []
        for i, (blk, w) in enumerate(zip(self.blocks, weights)):
            spec = blk.conv
            x_in = ops._spec_view(x, spec.in_shape, "block input")
            conv = ops.conv_fp(x_in, w, spec, self.mode, gated)
            bn_cache = None
            if blk.bn:
                g, b = self.bn_params[i]
                conv_pre = conv
                conv, bn_cache = ops.batch_norm_fp(conv_pre, g, b, blk.bn_eps)
                bn_cache = bn_cache + (conv_pre,)
            u, s = ops.lif_forward(conv, blk.neuron)
            argmax = None
            s_out = s
            if blk.pool:
                s_out, argmax = ops.max_pool_fp(s)
            caches.append(BlockCache(x_in, conv, u, s, s_out, argmax, bn_cache))
            x = s_out
        return caches, x

    def predict_logits(self, s0, weights=None):
        _, out = self.forward(s0, weights)
        return rate_logits(out, self.model.num_classes, self.logit_scale)

    # ------------------------------------------------------------ backward
    def backward(self, caches, dlds, weights=None, gated=True):
        """BPTT over all blocks. Returns (grad_w list, grad_u list).

        grad_w entries are batch sums in binary16 (float64 storage); grad_u
        entries are the gradients at each block's conv output.
        """
        weights = self.device_weights() if weights is None else weights
        L = len(self.blocks)
        grad_w = [None] * L
        grad_out = [None] * L
        self.bn_grads = {}
        upstream = np.asarray(dlds, dtype=np.float64)
        for i in range(L - 1, -1, -1):
            blk, c = self.blocks[i], caches[i]
            spec = blk.conv
            up = upstream.reshape(c.s_out.shape)
            if blk.pool:
                up = ops.max_pool_bp(up, c.argmax, spec.out_shape[1:])
            du = ops.lif_backward(up, c.u, c.s, blk.neuron)
            if blk.bn:
                xhat, g, inv, _ = c.bn_cache
                du, dg, db = ops.batch_norm_bp(du, (xhat, g, inv))
                self.bn_grads[i] = (dg, db)
            grad_out[i] = du
            grad_w[i] = ops.weight_grad(du, c.s_in, spec, self.mode, gated)
            if i > 0:
                prev = self.blocks[i - 1]
                pc = caches[i - 1]
                fp = ops.fire_prime_map(pc.u, prev.neuron)
                if prev.pool:
                    fp = ops.pool_mask(fp, pc.argmax)
                mask = fp.reshape((fp.shape[0], fp.shape[1]) + spec.in_shape)
                if prev.bn:
                    mask = None
                cb = ops.conv_bp(du, weights[i], spec, mask, self.mode, gated)
                upstream = cb.reshape(pc.s_out.shape)
        return grad_w, grad_out

    # ------------------------------------------------------------ training
    def loss_grad(self, out_spikes, labels):
        return rate_loss(out_spikes, labels, self.logit_scale, self.model.num_classes)

    def compute_gradients(self, s0, labels, gated=True):
        w = self.device_weights()
        caches, out = self.forward(s0, w, gated)
        loss, dlds, _ = self.loss_grad(out, labels)
        grad_w, _ = self.backward(caches, dlds, w, gated)
        return loss, grad_w

    def apply_gradients(self, grad_w, batch_size: int, opt: SGD):
        scale = np.float32(1.0 / batch_size)
        grads = [np.asarray(g, dtype=np.float32) * scale for g in grad_w]
        params = list(self.master)
        if self.bn_params and getattr(self, "bn_grads", None):
            for i, (dg, db) in self.bn_grads.items():
                params += self.bn_params[i]
                grads += [np.float32(dg) * scale, np.float32(db) * scale]
        opt.step(params, grads)

    def train_step(self, s0, labels, opt: SGD):
        """One batch: FP, loss, BP/WG, host update. Returns the batch loss."""
        loss, grad_w = self.compute_gradients(s0, labels)
        self.apply_gradients(grad_w, len(labels), opt)
        return loss

    def predict(self, s0, batch=256):
        s0 = np.asarray(s0)
        preds = []
        for i in range(0, s0.shape[0], batch):
            preds.append(self.predict_logits(s0[i:i + batch]).argmax(axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
