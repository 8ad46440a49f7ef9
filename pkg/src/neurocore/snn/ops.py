"""Golden LIF training math: scalar reference ops and the tensor ops built on
the shared array kernels."""

from __future__ import annotations

import numpy as np

from .. import kernels as K
from ..errors import DimMismatch, ShapeMismatch, ZeroVariance
from ..numerics import HALF_MODE, WIDE_MODE, Half, check_binary, round_half, to_half_exact
from .layers import LayerSpec, NeuronConfig

_MODES = {HALF_MODE: 0, WIDE_MODE: 1}


def _f(x) -> float:
    if isinstance(x, Half):
        return float(x)
    return float(np.float16(x))


def _h(x: float) -> Half:
    return Half.from_float(x)


# ---------------------------------------------------------------- scalar ops


def soma_update(u_prev, s_prev, conv_fp, cfg: NeuronConfig) -> Half:
    """Leaky integration with hard reset: alpha*u_prev*(1-s_prev) + conv_fp."""
    if _f(s_prev) not in (0.0, 1.0):
        raise ValueError("s_prev must be 0 or 1")
    if _f(s_prev) == 1.0:
        return _h(_f(conv_fp))
    return _h(round_half(round_half(cfg.alpha * _f(u_prev)) + _f(conv_fp)))


def fire(u, cfg: NeuronConfig) -> int:
    return int(_f(u) >= cfg.th_f)


def fire_prime(u, cfg: NeuronConfig) -> int:
    return int(cfg.th_l <= _f(u) <= cfg.th_r)


def grad_s(grad_u_next_t, u_t, conv_bp, cfg: NeuronConfig) -> Half:
    """Spike gradient: conv_bp - alpha*grad_u_next*u_t."""
    t1 = round_half(cfg.alpha * _f(grad_u_next_t))
    t2 = round_half(t1 * _f(u_t))
    return _h(round_half(_f(conv_bp) - t2))


def grad_u(grad_u_next_t, s_t, grad_s_t, fire_prime_t, cfg: NeuronConfig) -> Half:
    """Membrane gradient: alpha*grad_u_next*(1-s_t) + grad_s*fire'."""
    a = 0.0 if _f(s_t) != 0.0 else round_half(cfg.alpha * _f(grad_u_next_t))
    b = _f(grad_s_t) if _f(fire_prime_t) != 0.0 else 0.0
    return _h(round_half(a + b))


# ---------------------------------------------------------------- helpers


def _mode(mode) -> int:
    try:
        return _MODES[mode]
    except KeyError:
        raise ValueError(f"unknown accumulation mode {mode!r}") from None


def as_spikes(s) -> np.ndarray:
    """Validate a spike array and return it as contiguous uint8."""
    arr = np.asarray(s)
    if arr.dtype != np.uint8 and arr.dtype != np.bool_:
        check_binary(arr)
    elif arr.dtype == np.uint8 and arr.size and arr.max() > 1:
        check_binary(arr.astype(np.float16))
    return np.ascontiguousarray(arr, dtype=np.uint8)


def device_weights(w) -> np.ndarray:
    """Round to binary16 and canonicalize -0 to +0 (the on-device form)."""
    return to_half_exact(w) + 0.0


def _lead(x, tail: int):
    x = np.asarray(x)
    return x.shape[: x.ndim - tail], x.reshape((-1,) + x.shape[x.ndim - tail:])


def _check_w(w, spec: LayerSpec):
    if tuple(np.shape(w)) != spec.weight_shape:
        raise DimMismatch(f"weights {np.shape(w)} do not match {spec.weight_shape}")


def _spec_view(x, spec_shape, what):
    """Accept (..., C, H, W) or a matching flat view for FC layers."""
    x = np.asarray(x)
    if x.shape[-3:] == tuple(spec_shape):
        return x
    n = int(np.prod(spec_shape))
    if x.ndim >= 3 and int(np.prod(x.shape[-3:])) == n and spec_shape[1:] == (1, 1):
        return x.reshape(x.shape[:-3] + tuple(spec_shape))
    raise DimMismatch(f"{what} {x.shape} does not match {tuple(spec_shape)}")


# ---------------------------------------------------------------- tensor ops


def conv_fp(s_prev, w, spec: LayerSpec, mode=HALF_MODE, gated=True, stats=None) -> np.ndarray:
    """Spike-driven convolution for every leading (n, t) slice.

    s_prev: (..., C, H, W) binary; returns float64 (..., M, E, F) holding
    binary16 values.
    """
    s_prev = _spec_view(as_spikes(s_prev), spec.in_shape, "input spikes")
    _check_w(w, spec)
    w = np.ascontiguousarray(w, dtype=np.float64)
    lead, flat = _lead(s_prev, 3)
    out = np.zeros((flat.shape[0],) + spec.out_shape)
    st = K.new_stats() if stats is None else stats
    md = _mode(mode)
    for i in range(flat.shape[0]):
        K.fp_conv_slice(flat[i], w, out[i], spec.stride, spec.padding, 0, spec.C, 0, spec.M,
                        gated, md, True, st)
        if md:
            K.finalize_wide(out[i])
    return out.reshape(lead + spec.out_shape)


def conv_bp(grad_u_next, w, spec: LayerSpec, fire_mask=None, mode=HALF_MODE, gated=True,
            stats=None) -> np.ndarray:
    """Transposed convolution of the next layer's gradient with its weights.

    spec/w describe layer l+1; grad_u_next is (..., M, E, F); the result is
    (..., C, H, W). ``fire_mask`` (same shape as the result) lets rows with
    fire' == 0 be skipped; they are left at zero.
    """
    g = np.asarray(grad_u_next, dtype=np.float64)
    if g.shape[-3:] != spec.out_shape:
        raise DimMismatch(f"gradient {g.shape} does not match {spec.out_shape}")
    _check_w(w, spec)
    w = np.ascontiguousarray(w, dtype=np.float64)
    lead, flat = _lead(np.ascontiguousarray(g), 3)
    out = np.zeros((flat.shape[0],) + spec.in_shape)
    if fire_mask is None:
        mask = np.ones((flat.shape[0],) + spec.in_shape, dtype=np.uint8)
        use = False
    else:
        mask = _spec_view(as_spikes(fire_mask), spec.in_shape, "fire mask").reshape(out.shape)
        use = True
    st = K.new_stats() if stats is None else stats
    md = _mode(mode)
    for i in range(flat.shape[0]):
        K.bp_conv_slice(flat[i], w, mask[i], use, out[i], spec.stride, spec.padding, 0, spec.M,
                        0, spec.C, gated, md, True, st)
        if md:
            K.finalize_wide(out[i])
    return out.reshape(lead + spec.in_shape)


def weight_grad(grad_u, s_prev, spec: LayerSpec, mode=HALF_MODE, gated=True, stats=None):
    """Weight gradient summed over the batch and time.

    grad_u: (N, T, M, E, F); s_prev: (N, T, C, H, W). Accumulation order per
    weight: n ascending, t descending, then output positions row-major.
    """
    g = np.ascontiguousarray(grad_u, dtype=np.float64)
    s = _spec_view(as_spikes(s_prev), spec.in_shape, "input spikes")
    if g.ndim != 5 or s.ndim != 5 or g.shape[:2] != s.shape[:2]:
        raise DimMismatch("weight_grad expects (N, T, ...) gradient and spike tensors")
    if g.shape[2:] != spec.out_shape:
        raise DimMismatch(f"gradient {g.shape} does not match {spec.out_shape}")
    acc = np.zeros(spec.weight_shape)
    st = K.new_stats() if stats is None else stats
    md = _mode(mode)
    N, T = g.shape[:2]
    first = True
    for n in range(N):
        for t in range(T - 1, -1, -1):
            K.wg_slice(s[n, t], g[n, t], acc, spec.stride, spec.padding, 0, spec.C, 0, spec.M,
                       gated, md, first, st)
            first = False
    if md:
        K.finalize_wide(acc)
    return acc


def lif_forward(conv, cfg: NeuronConfig):
    """Run Soma + Fire over T for conv of shape (N, T, ...)."""
    conv = np.ascontiguousarray(conv, dtype=np.float64)
    N, T = conv.shape[:2]
    u = np.zeros_like(conv)
    s = np.zeros(conv.shape, dtype=np.uint8)
    zu = np.zeros(conv.shape[2:]).reshape(-1)
    zs = np.zeros(zu.size, dtype=np.uint8)
    for n in range(N):
        for t in range(T):
            up = u[n, t - 1].reshape(-1) if t else zu
            sp = s[n, t - 1].reshape(-1) if t else zs
            K.soma_slice(conv[n, t].reshape(-1), up, sp, cfg.alpha, cfg.th_f,
                         u[n, t].reshape(-1), s[n, t].reshape(-1))
    return u, s


def lif_backward(conv_bp_all, u, s, cfg: NeuronConfig):
    """BPTT through the LIF dynamics, t descending; returns grad_u."""
    conv_bp_all = np.ascontiguousarray(conv_bp_all, dtype=np.float64)
    N, T = u.shape[:2]
    du = np.zeros_like(u)
    z = np.zeros(u.shape[2:]).reshape(-1)
    for n in range(N):
        for t in range(T - 1, -1, -1):
            nxt = du[n, t + 1].reshape(-1) if t < T - 1 else z
            K.grad_slice(conv_bp_all[n, t].reshape(-1), u[n, t].reshape(-1), s[n, t].reshape(-1),
                         nxt, cfg.alpha, cfg.th_l, cfg.th_r, du[n, t].reshape(-1))
    return du


def fire_prime_map(u, cfg: NeuronConfig) -> np.ndarray:
    u = np.asarray(u)
    return ((u >= cfg.th_l) & (u <= cfg.th_r)).astype(np.uint8)


def max_pool_fp(s):
    """2x2/2 max pooling on binary spikes; odd sizes are zero padded.

    Returns (pooled, argmax) where argmax holds the window position 0..3 of
    the first 1 in row-major order (0 if the window is empty).
    """
    s = as_spikes(s)
    H, W = s.shape[-2:]
    Hp, Wp = (H + 1) // 2, (W + 1) // 2
    pad = [(0, 0)] * (s.ndim - 2) + [(0, 2 * Hp - H), (0, 2 * Wp - W)]
    x = np.pad(s, pad)
    win = np.stack([x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]], axis=-1)
    pooled = win.max(axis=-1).astype(np.uint8)
    argmax = win.argmax(axis=-1).astype(np.uint8)
    return pooled, argmax


def max_pool_bp(grad, argmax, full_hw=None) -> np.ndarray:
    """Scatter pooled gradients back to their argmax positions."""
    grad = np.asarray(grad, dtype=np.float64)
    argmax = np.asarray(argmax)
    if grad.shape != argmax.shape:
        raise ShapeMismatch(f"gradient {grad.shape} vs argmax {argmax.shape}")
    if argmax.size and argmax.max() > 3:
        raise ShapeMismatch("argmax entries must be window positions 0..3")
    Hp, Wp = grad.shape[-2:]
    H, W = full_hw if full_hw is not None else (2 * Hp, 2 * Wp)
    if (H + 1) // 2 != Hp or (W + 1) // 2 != Wp:
        raise ShapeMismatch(f"pooled {Hp}x{Wp} cannot come from {H}x{W}")
    out = np.zeros(grad.shape[:-2] + (2 * Hp, 2 * Wp))
    for k, (dy, dx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        out[..., dy::2, dx::2] = np.where(argmax == k, grad, 0.0)
    return np.ascontiguousarray(out[..., :H, :W])


def pool_mask(mask_full, argmax) -> np.ndarray:
    """Pick the full-resolution mask entries at each window's argmax."""
    mask_full = np.asarray(mask_full)
    Hp, Wp = argmax.shape[-2:]
    H, W = mask_full.shape[-2:]
    pad = [(0, 0)] * (mask_full.ndim - 2) + [(0, 2 * Hp - H), (0, 2 * Wp - W)]
    x = np.pad(mask_full, pad)
    win = np.stack([x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]], axis=-1)
    return np.take_along_axis(win, argmax[..., None].astype(np.intp), axis=-1)[..., 0].astype(np.uint8)


# ---------------------------------------------------------------- batch norm


def batch_norm_fp(x, gamma, beta, eps=1e-5):
    """Per-channel normalization over (N, T, E, F) for x of shape (N, T, C, E, F).

    Statistics are computed in float64; the output is rounded to binary16.
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x.ndim != 5 or gamma.shape != (x.shape[2],) or beta.shape != (x.shape[2],):
        raise DimMismatch("batch norm channel dimension does not match its parameters")
    axes = (0, 1, 3, 4)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    if eps <= 0 and np.any(var == 0):
        raise ZeroVariance("zero-variance channel with no epsilon floor")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, None, :, None, None]) * inv[None, None, :, None, None]
    y = gamma[None, None, :, None, None] * xhat + beta[None, None, :, None, None]
    return to_half_exact(y), (xhat, gamma, inv)


def batch_norm_bp(dy, cache):
    """Returns (dx, dgamma, dbeta) for the batch-statistics normalization."""
    xhat, gamma, inv = cache
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != xhat.shape:
        raise ShapeMismatch(f"gradient {dy.shape} vs activations {xhat.shape}")
    axes = (0, 1, 3, 4)
    m = xhat.size // xhat.shape[2]
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    b = lambda v: v[None, None, :, None, None]  # noqa: E731
    dx = b(gamma * inv / m) * (m * dy - b(dbeta) - xhat * b(dgamma))
    return to_half_exact(dx), dgamma, dbeta
