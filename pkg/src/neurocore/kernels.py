"""Array kernels shared by the golden model and the core interpreter.

All kernels work on float64 buffers holding binary16-exact values and
uint8 spike maps. Summation order is fixed so the two callers agree bit
for bit:

* FP array: per output, ``psum += tree16(selected w)`` over c-tiles, then
  kernel rows, then kernel columns. The tree pairs leaves (0,1), (2,3), ...
* BP array: per output, ``psum += tree16(du * w')`` over m-tiles, then the
  rotated kernel rows and columns, on the zero-inserted gradient map.
* WG array: each accumulator adds its selected gradients position by
  position; successive calls continue the same running sum.

With ``gated=True`` zero inputs are skipped; skipped leaves pass the other
operand through unchanged. With ``gated=False`` every slot computes (zero
spikes select +0, zero gradients still multiply). Both produce the same
non-zero values and psum registers never hold -0, so results are bitwise
identical.

``stats`` is an int64[NSTATS] accumulator; slot meanings per engine are
listed in :mod:`neurocore.core.stats`.
"""

import numba
import numpy as np

from .numerics import round_half, round_single

TILE = 16
NSTATS = 11


@numba.njit(inline="always", cache=True)
def _rnd(x, mode):
    if mode == 0:
        return round_half(x)
    return round_single(x)


@numba.njit(inline="always", cache=True)
def _pow2(n):
    w = 1
    while w < n:
        w *= 2
    return w


@numba.njit(cache=True)
def tree_reduce(vals, valid, mode, width=TILE):
    """Pairwise reduction of ``width`` leaves; invalid leaves are pass-through.

    Any power-of-two width covering the valid leaves gives the same result
    as the full 16-leaf tree.
    """
    while width > 1:
        half = width // 2
        for i in range(half):
            a = 2 * i
            b = a + 1
            if valid[a] and valid[b]:
                vals[i] = _rnd(vals[a] + vals[b], mode)
                valid[i] = True
            elif valid[a]:
                vals[i] = vals[a]
                valid[i] = True
            elif valid[b]:
                vals[i] = vals[b]
                valid[i] = True
            else:
                valid[i] = False
        width = half
    return vals[0], valid[0]


@numba.njit(cache=True)
def fp_conv_slice(s_in, w, out, stride, pad, c0, c1, m0, m1, gated, mode, init, stats):
    """FP selector-adder array over one (n, t) input map.

    s_in: uint8[C, H, W]; w: float64[M, C, R, S]; out: float64[M, E, F].
    """
    C, H, W = s_in.shape
    R = w.shape[2]
    S = w.shape[3]
    E = out.shape[1]
    F = out.shape[2]
    mrows = m1 - m0
    n_mtiles = (mrows + TILE - 1) // TILE
    if init:
        for m in range(m0, m1):
            for e in range(E):
                for f in range(F):
                    out[m, e, f] = 0.0
        stats[6] += mrows * E * F
    vals = np.zeros(TILE)
    valid = np.zeros(TILE, dtype=np.bool_)
    active = np.zeros(TILE, dtype=np.bool_)
    for ct in range(c0, c1, TILE):
        ccols = min(TILE, c1 - ct)
        for r in range(R):
            for s in range(S):
                # the (m, c) weight tile stays in the array for the whole map
                stats[10] += mrows * ccols
                for e in range(E):
                    h = e * stride + r - pad
                    for f in range(F):
                        x = f * stride + s - pad
                        stats[7] += n_mtiles
                        real = 0 <= h < H and 0 <= x < W
                        nact = 0
                        for j in range(TILE):
                            active[j] = False
                        if real:
                            stats[4] += n_mtiles
                            for j in range(ccols):
                                if s_in[ct + j, h, x] != 0:
                                    active[j] = True
                                    nact += 1
                        stats[0] += mrows * ccols
                        stats[2] += mrows
                        stats[8] += mrows * (ccols - 1)
                        if gated and nact == 0:
                            continue
                        nval = nact if gated else ccols
                        stats[1] += mrows * nval
                        stats[3] += mrows
                        stats[5] += mrows
                        stats[6] += mrows
                        stats[9] += mrows * (nval - 1)
                        if gated and nact == 1:
                            j1 = 0
                            while not active[j1]:
                                j1 += 1
                            for m in range(m0, m1):
                                out[m, e, f] = _rnd(out[m, e, f] + w[m, ct + j1, r, s], mode)
                            continue
                        width = _pow2(ccols)
                        for m in range(m0, m1):
                            for j in range(width):
                                if j < ccols and (active[j] or not gated):
                                    vals[j] = w[m, ct + j, r, s] if active[j] else 0.0
                                    valid[j] = True
                                else:
                                    valid[j] = False
                            tv, ok = tree_reduce(vals, valid, mode, width)
                            if ok:
                                out[m, e, f] = _rnd(out[m, e, f] + tv, mode)


@numba.njit(cache=True)
def bp_conv_slice(du, w, fire, use_fire, out, stride, pad, m0, m1, c0, c1, gated, mode, init, stats):
    """BP MAC array: transposed convolution of one (n, t) gradient map.

    du: float64[M, E, F] (gradient of the next layer); w: float64[M, C, R, S]
    (the next layer's weights, read 180-degree rotated); fire: uint8[C, H, W]
    surrogate mask of this layer; out: float64[C, H, W].
    """
    M, E, F = du.shape
    R = w.shape[2]
    S = w.shape[3]
    H = out.shape[1]
    W = out.shape[2]
    crows = c1 - c0
    n_ctiles = (crows + TILE - 1) // TILE
    pr = R - 1 - pad
    ps = S - 1 - pad
    if init:
        for c in range(c0, c1):
            for h in range(H):
                for x in range(W):
                    out[c, h, x] = 0.0
        stats[6] += crows * H * W
    vals = np.zeros(TILE)
    valid = np.zeros(TILE, dtype=np.bool_)
    duv = np.zeros(TILE)
    nz = np.zeros(TILE, dtype=np.bool_)
    for mt in range(m0, m1, TILE):
        mcols = min(TILE, m1 - mt)
        width = _pow2(mcols)
        for rr in range(R):
            kr = R - 1 - rr
            for ss in range(S):
                ks = S - 1 - ss
                stats[10] += mcols * crows
                for h in range(H):
                    enum = h + rr - pr
                    for x in range(W):
                        fnum = x + ss - ps
                        stats[7] += n_ctiles
                        real = (
                            enum >= 0 and fnum >= 0 and enum % stride == 0 and fnum % stride == 0
                            and enum // stride < E and fnum // stride < F
                        )
                        nnz = 0
                        for j in range(TILE):
                            duv[j] = 0.0
                            nz[j] = False
                        if real:
                            e = enum // stride
                            f = fnum // stride
                            for j in range(mcols):
                                v = du[mt + j, e, f]
                                duv[j] = v
                                if v != 0.0:
                                    nz[j] = True
                                    nnz += 1
                        nrows = 0
                        for c in range(c0, c1):
                            if (not gated) or (not use_fire) or fire[c, h, x] != 0:
                                nrows += 1
                        stats[0] += crows * mcols
                        stats[2] += crows
                        stats[8] += crows * (mcols - 1)
                        if real and (nrows > 0 or not gated):
                            stats[4] += n_ctiles
                        for c in range(c0, c1):
                            row_on = (not gated) or (not use_fire) or fire[c, h, x] != 0
                            if not row_on:
                                continue
                            if gated and nnz == 0:
                                continue
                            nval = nnz if gated else mcols
                            stats[1] += nval
                            stats[3] += 1
                            stats[5] += 1
                            stats[6] += 1
                            stats[9] += nval - 1
                            for j in range(width):
                                if j < mcols and (nz[j] or not gated):
                                    vals[j] = _rnd(duv[j] * w[mt + j, c, kr, ks], mode)
                                    valid[j] = True
                                else:
                                    valid[j] = False
                            tv, ok = tree_reduce(vals, valid, mode, width)
                            if ok:
                                out[c, h, x] = _rnd(out[c, h, x] + tv, mode)


@numba.njit(cache=True)
def wg_slice(s_in, du, acc, stride, pad, c0, c1, m0, m1, gated, mode, init, stats):
    """WG adder array: accumulate one (n, t) contribution into ``acc``.

    s_in: uint8[C, H, W] input spikes of the layer; du: float64[M, E, F]
    its membrane-potential gradient; acc: float64[M, C, R, S].
    """
    C, H, W = s_in.shape
    M, E, F = du.shape
    R = acc.shape[2]
    S = acc.shape[3]
    mrows = m1 - m0
    n_mtiles = (mrows + TILE - 1) // TILE
    if init:
        for m in range(m0, m1):
            for c in range(c0, c1):
                for r in range(R):
                    for s in range(S):
                        acc[m, c, r, s] = 0.0
    active = np.zeros(TILE, dtype=np.bool_)
    for ct in range(c0, c1, TILE):
        ccols = min(TILE, c1 - ct)
        for r in range(R):
            for s in range(S):
                for e in range(E):
                    h = e * stride + r - pad
                    for f in range(F):
                        x = f * stride + s - pad
                        stats[7] += n_mtiles
                        real = 0 <= h < H and 0 <= x < W
                        nact = 0
                        for j in range(TILE):
                            active[j] = False
                        if real:
                            for j in range(ccols):
                                if s_in[ct + j, h, x] != 0:
                                    active[j] = True
                                    nact += 1
                        stats[0] += mrows * ccols
                        if gated and nact == 0:
                            continue
                        stats[4] += n_mtiles
                        stats[1] += mrows * (nact if gated else ccols)
                        for j in range(ccols):
                            if gated and not active[j]:
                                continue
                            c = ct + j
                            for m in range(m0, m1):
                                v = du[m, e, f] if active[j] else 0.0
                                acc[m, c, r, s] = _rnd(acc[m, c, r, s] + v, mode)


@numba.njit(cache=True)
def finalize_wide(x):
    flat = x.ravel()
    for i in range(flat.size):
        flat[i] = round_half(flat[i])


@numba.njit(cache=True)
def soma_slice(conv, u_prev, s_prev, alpha, th_f, u_out, s_out):
    """LIF update for one time step (flat arrays)."""
    for i in range(conv.size):
        if s_prev[i] != 0:
            u = conv[i]
        else:
            u = round_half(round_half(alpha * u_prev[i]) + conv[i])
        u_out[i] = u
        s_out[i] = 1 if u >= th_f else 0


@numba.njit(cache=True)
def grad_slice(conv_bp, u, s, du_next, alpha, th_l, th_r, du_out):
    """Surrogate-gradient BPTT step for one time step (flat arrays)."""
    for i in range(conv_bp.size):
        t1 = round_half(alpha * du_next[i])
        t2 = round_half(t1 * u[i])
        ds = round_half(conv_bp[i] - t2)
        a = 0.0 if s[i] != 0 else t1
        b = ds if (th_l <= u[i] <= th_r) else 0.0
        du_out[i] = round_half(a + b)


def new_stats() -> np.ndarray:
    return np.zeros(NSTATS, dtype=np.int64)
