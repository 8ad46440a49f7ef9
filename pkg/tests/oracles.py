"""Independent reference implementations used only by the tests."""

from fractions import Fraction

import numpy as np

# ---------------------------------------------------------------- binary16 softfloat

_EMIN = -14
_MANT = 10


def _round_fraction_to_half(q: Fraction) -> float:
    """Round an exact rational to binary16 (ties to even) without floats."""
    if q == 0:
        return 0.0
    sign = -1 if q < 0 else 1
    a = abs(q)
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    e = max(e, _EMIN)
    ulp = Fraction(2) ** (e - _MANT)
    k, rem = divmod(a, ulp)
    k = int(k)
    if rem * 2 > ulp or (rem * 2 == ulp and k % 2 == 1):
        k += 1
    val = k * ulp
    if val >= Fraction(65520):
        return sign * float("inf")
    return sign * float(val)


def soft_half_bits(x: float) -> int:
    return int(np.array(x, dtype=np.float16).view(np.uint16))


def softfloat_add(a_bits: int, b_bits: int) -> int:
    return _softfloat_op(a_bits, b_bits, "add")


def softfloat_mul(a_bits: int, b_bits: int) -> int:
    return _softfloat_op(a_bits, b_bits, "mul")


def _decode(bits: int):
    s = (bits >> 15) & 1
    e = (bits >> 10) & 0x1F
    m = bits & 0x3FF
    if e == 0x1F:
        return ("nan" if m else "inf", s)
    if e == 0:
        v = Fraction(m, 1 << 24)
    else:
        v = Fraction((1 << 10) | m, 1 << 10) * Fraction(2) ** (e - 15)
    return (v, s)


def _encode(x: float, sign_hint: int) -> int:
    if x == 0:
        return sign_hint << 15
    return soft_half_bits(x)


def _softfloat_op(a_bits, b_bits, op):
    va, sa = _decode(a_bits)
    vb, sb = _decode(b_bits)
    if isinstance(va, str) or isinstance(vb, str):
        fa = float(np.uint16(a_bits).view(np.float16))
        fb = float(np.uint16(b_bits).view(np.float16))
        r = fa + fb if op == "add" else fa * fb
        return soft_half_bits(r) if not np.isnan(r) else 0x7E00
    qa = -va if sa else va
    qb = -vb if sb else vb
    if op == "add":
        q = qa + qb
        zsign = sa & sb
    else:
        q = qa * qb
        zsign = sa ^ sb
    r = _round_fraction_to_half(q)
    if r == 0:
        neg = q < 0 if q != 0 else zsign
        return (1 << 15) if neg else 0
    return _encode(r, 0)


# ---------------------------------------------------------------- dense convolution

def dense_conv(x, w, stride, pad):
    """Exact float64 dense convolution; x (C,H,W), w (M,C,R,S)."""
    C, H, W = x.shape
    M, _, R, S = w.shape
    E = (H + 2 * pad - R) // stride + 1
    F = (W + 2 * pad - S) // stride + 1
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((M, E, F))
    for m in range(M):
        for e in range(E):
            for f in range(F):
                patch = xp[:, e * stride:e * stride + R, f * stride:f * stride + S]
                out[m, e, f] = float(np.sum(patch * w[m]))
    return out


def dense_conv_input_grad(g, w, in_shape, stride, pad):
    """Gradient of sum(g * conv(x)) w.r.t. x by brute-force scattering."""
    C, H, W = in_shape
    M, _, R, S = w.shape
    out = np.zeros((C, H + 2 * pad, W + 2 * pad))
    E, F = g.shape[1:]
    for m in range(M):
        for e in range(E):
            for f in range(F):
                out[:, e * stride:e * stride + R, f * stride:f * stride + S] += g[m, e, f] * w[m]
    return out[:, pad:pad + H, pad:pad + W]


def dense_weight_grad(g, x, R, S, stride, pad):
    M, E, F = g.shape
    C = x.shape[0]
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((M, C, R, S))
    for m in range(M):
        for e in range(E):
            for f in range(F):
                out[m] += g[m, e, f] * xp[:, e * stride:e * stride + R, f * stride:f * stride + S]
    return out


# ---------------------------------------------------------------- torch surrogate SNN

def torch_snn_grads(blocks, weights, s0, dlds, relax=False):
    """Autograd reference of the LIF chain in float64.

    ``relax=True`` replaces the spike function by the clipped-linear ramp
    whose derivative is the rectangular surrogate.
    """
    import torch

    class Fire(torch.autograd.Function):
        @staticmethod
        def forward(ctx, u, th_f, th_l, th_r):
            ctx.save_for_backward(u)
            ctx.win = (th_l, th_r)
            return (u >= th_f).to(u.dtype)

        @staticmethod
        def backward(ctx, g):
            (u,) = ctx.saved_tensors
            lo, hi = ctx.win
            return g * ((u >= lo) & (u <= hi)).to(g.dtype), None, None, None

    ws = [torch.tensor(np.asarray(w, dtype=np.float64), requires_grad=True) for w in weights]
    x = torch.tensor(np.asarray(s0, dtype=np.float64))
    N, T = x.shape[:2]
    outs = []
    for blk, w in zip(blocks, ws):
        spec, nc = blk.conv, blk.neuron
        xin = x.reshape(N, T, *spec.in_shape)
        u_prev = None
        s_prev = None
        ss = []
        for t in range(T):
            conv = torch.nn.functional.conv2d(xin[:, t], w, stride=spec.stride, padding=spec.padding)
            if t == 0:
                u = conv
            else:
                u = nc.alpha * u_prev * (1 - s_prev) + conv
            if relax:
                s = torch.clamp(u - nc.th_l, 0.0, nc.th_r - nc.th_l) / (nc.th_r - nc.th_l)
            else:
                s = Fire.apply(u, nc.th_f, nc.th_l, nc.th_r)
            u_prev, s_prev = u, s
            ss.append(s)
        s_all = torch.stack(ss, 1)
        if blk.pool:
            s_all = torch.nn.functional.max_pool2d(s_all.reshape(N * T, *s_all.shape[2:]), 2, 2, ceil_mode=True)
            s_all = s_all.reshape(N, T, *s_all.shape[1:])
        outs.append(s_all)
        x = s_all
    g = torch.tensor(np.asarray(dlds, dtype=np.float64)).reshape(x.shape)
    (x * g).sum().backward()
    return [w.grad.numpy() for w in ws], [o.detach().numpy() for o in outs]
