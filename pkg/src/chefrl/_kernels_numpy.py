"""Pure-numpy reference implementations of the hot kernels.

These are the fallback twins of the numba kernels in ``_kernels_numba``;
both loop over source atoms in ascending order so the two backends place
projection mass with identical float ordering.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def forward_single(vals, I, W, R, E, H, O, K, head, x):
    """One observation through torso + one head. All float64, no cache."""
    o_b = W * I
    w_in = vals[:o_b].reshape(W, I)
    h = np.maximum(w_in @ x + vals[o_b:o_b + W], 0.0)
    blk = o_b + W
    bsz = 2 * W * W + 2 * W
    for r in range(R):
        o_w1 = blk + r * bsz
        o_b1 = o_w1 + W * W
        o_w2 = o_b1 + W
        o_b2 = o_w2 + W * W
        m = np.maximum(vals[o_w1:o_b1].reshape(W, W) @ h + vals[o_b1:o_w2], 0.0)
        h = h + vals[o_w2:o_b2].reshape(W, W) @ m + vals[o_b2:o_b2 + W]
    o_ew = blk + R * bsz
    o_eb = o_ew + E * W
    e = np.maximum(vals[o_ew:o_eb].reshape(E, W) @ h + vals[o_eb:o_eb + E], 0.0)
    hsz = H * E + H + O * H + O
    hk = o_eb + E + head * hsz
    u = np.maximum(vals[hk:hk + H * E].reshape(H, E) @ e
                   + vals[hk + H * E:hk + H * E + H], 0.0)
    o_ow = hk + H * E + H
    o_ob = o_ow + O * H
    return vals[o_ow:o_ob].reshape(O, H) @ u + vals[o_ob:o_ob + O]


def project_batch(probs, shifts, scales, v_min, v_max):
    """Categorical projection of shifted/scaled atoms onto the fixed support.

    probs: float64 [B, A]; shifts/scales: float64 [B]. Mass of each source
    atom is split linearly between the two nearest support atoms.
    """
    B, A = probs.shape
    dz = (v_max - v_min) / (A - 1)
    out = np.zeros((B, A))
    rows = np.arange(B)
    for i in range(A):
        p = probs[:, i]
        z = np.clip(shifts + scales * (v_min + dz * i), v_min, v_max)
        b = (z - v_min) / dz
        lo = np.clip(np.floor(b).astype(np.int64), 0, A - 1)
        hi = lo + 1
        frac = b - lo
        at_top = hi > A - 1
        out[rows, lo] += np.where(at_top, p, p * (1.0 - frac))
        out[rows, np.minimum(hi, A - 1)] += np.where(at_top, 0.0, p * frac)
    return out
