"""Numba-compiled hot kernels.

Same contracts as ``_kernels_numpy``; compiled without fastmath so results
are reproducible run to run. ``cache=True`` keeps compilation cost to the
first invocation on a machine.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def forward_single(vals, I, W, R, E, H, O, K, head, x):
    o_b = W * I
    h = np.empty(W)
    for i in range(W):
        acc = vals[o_b + i]
        base = i * I
        for j in range(I):
            acc += vals[base + j] * x[j]
        h[i] = acc if acc > 0.0 else 0.0
    blk = o_b + W
    bsz = 2 * W * W + 2 * W
    m = np.empty(W)
    for r in range(R):
        o_w1 = blk + r * bsz
        o_b1 = o_w1 + W * W
        o_w2 = o_b1 + W
        o_b2 = o_w2 + W * W
        for i in range(W):
            acc = vals[o_b1 + i]
            base = o_w1 + i * W
            for j in range(W):
                acc += vals[base + j] * h[j]
            m[i] = acc if acc > 0.0 else 0.0
        for i in range(W):
            acc = vals[o_b2 + i]
            base = o_w2 + i * W
            for j in range(W):
                acc += vals[base + j] * m[j]
            h[i] = h[i] + acc
    o_ew = blk + R * bsz
    o_eb = o_ew + E * W
    e = np.empty(E)
    for i in range(E):
        acc = vals[o_eb + i]
        base = o_ew + i * W
        for j in range(W):
            acc += vals[base + j] * h[j]
        e[i] = acc if acc > 0.0 else 0.0
    hsz = H * E + H + O * H + O
    hk = o_eb + E + head * hsz
    o_hb = hk + H * E
    u = np.empty(H)
    for i in range(H):
        acc = vals[o_hb + i]
        base = hk + i * E
        for j in range(E):
            acc += vals[base + j] * e[j]
        u[i] = acc if acc > 0.0 else 0.0
    o_ow = o_hb + H
    o_ob = o_ow + O * H
    y = np.empty(O)
    for i in range(O):
        acc = vals[o_ob + i]
        base = o_ow + i * H
        for j in range(H):
            acc += vals[base + j] * u[j]
        y[i] = acc
    return y


@njit(cache=True)
def project_batch(probs, shifts, scales, v_min, v_max):
    B, A = probs.shape
    dz = (v_max - v_min) / (A - 1)
    out = np.zeros((B, A))
    for i in range(A):
        zi = v_min + dz * i
        for s in range(B):
            p = probs[s, i]
            z = shifts[s] + scales[s] * zi
            if z < v_min:
                z = v_min
            elif z > v_max:
                z = v_max
            b = (z - v_min) / dz
            lo = int(np.floor(b))
            if lo > A - 1:
                lo = A - 1
            if lo < 0:
                lo = 0
            if lo + 1 > A - 1:
                out[s, lo] += p
            else:
                frac = b - lo
                out[s, lo] += p * (1.0 - frac)
                out[s, lo + 1] += p * frac
    return out
