"""Pure-numpy fallback for the per-step channel exchange.

Same signatures and array layouts as the compiled module (see
``_kernels.pyx``). Edges only interact through the agent states, which
are read-only during an exchange, so the work is vectorized across
edges. Within one edge the end that reads a delayed wave goes first and
the other end may then consume the fresh wave when its line has zero
delay.
"""

from __future__ import annotations

import numpy as np


def _bmv(M: np.ndarray, V: np.ndarray) -> np.ndarray:
    # (m,2,2) x (m,2,N) -> (m,2,N)
    return np.einsum("mab,mbn->man", M, V)


def _accumulate(e, end, node, r, v, coupling, port_r, port_v, acc_vr, acc_v, acc_r, h):
    np.add.at(coupling, node, v)
    port_r[e, end] = r
    port_v[e, end] = v
    np.add.at(acc_v, (e, end), h * v)
    np.add.at(acc_r, (e, end), h * r)
    np.add.at(acc_vr, (e, end), h * np.einsum("man,man->m", v, r))


def _ports(k, e, end, X, lo, hi, blk, minv, eta, d_lh, d_hl, pool, off_lh, off_hl,
           coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign):
    if e.size == 0:
        return
    at_lo = end == 0
    node = np.where(at_lo, lo[e], hi[e])
    sigma = np.where(at_lo, 1.0, -1.0)[:, None, None]
    et = eta[e][:, None, None]
    d_in = np.where(at_lo, d_hl[e], d_lh[e])
    d_out = np.where(at_lo, d_lh[e], d_hl[e])
    in_slot = np.where(at_lo, off_hl[e], off_lh[e]) + (k + 1) % (d_in + 1)
    out_slot = np.where(at_lo, off_lh[e], off_hl[e]) + k % (d_out + 1)

    Xi = X[node]
    B = blk[e]
    q = _bmv(B, Xi) / et + sigma * decode_sign * np.sqrt(2.0 / et) * pool[in_slot]
    r = _bmv(minv[e], q)
    v = _bmv(B, r - Xi)
    pool[out_slot] = sigma * (v - et * r) / np.sqrt(2.0 * et)
    _accumulate(e, end, node, r, v, coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)


def scatter_exchange(k, X, lo, hi, blk, minv, eta, d_lh, d_hl, pool, off_lh, off_hl,
                     coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign=1.0):
    coupling[...] = 0.0
    lo_first = np.flatnonzero(d_hl >= 1)
    hi_first = np.flatnonzero((d_hl < 1) & (d_lh >= 1))
    both0 = np.flatnonzero((d_hl < 1) & (d_lh < 1))
    args = (X, lo, hi, blk, minv, eta, d_lh, d_hl, pool, off_lh, off_hl,
            coupling, port_r, port_v, acc_vr, acc_v, acc_r, h, decode_sign)

    e1 = np.concatenate([lo_first, hi_first])
    ends1 = np.concatenate([np.zeros(lo_first.size, int), np.ones(hi_first.size, int)])
    _ports(k, e1, ends1, *args)
    _ports(k, e1, 1 - ends1, *args)

    if both0.size:
        e = both0
        mid = 0.5 * (X[lo[e]] + X[hi[e]])
        et = eta[e][:, None, None]
        for end, node, sigma, off, d in ((0, lo[e], 1.0, off_lh, d_lh), (1, hi[e], -1.0, off_hl, d_hl)):
            v = _bmv(blk[e], mid - X[node])
            pool[off[e] + k % (d[e] + 1)] = sigma * (v - et * mid) / np.sqrt(2.0 * et)
            _accumulate(e, np.full(e.size, end), node, mid, v,
                        coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)


def naive_exchange(k, X, lo, hi, blk, d_lh, d_hl, pool, off_lh, off_hl,
                   coupling, port_r, port_v, acc_vr, acc_v, acc_r, h):
    """Raw state transport: each agent receives its neighbor's delayed state."""
    coupling[...] = 0.0
    E = lo.size
    if E == 0:
        return
    e = np.arange(E)
    pool[off_lh + k % (d_lh + 1)] = X[lo]
    pool[off_hl + k % (d_hl + 1)] = X[hi]
    for end, node, off, d in ((0, lo, off_hl, d_hl), (1, hi, off_lh, d_lh)):
        r = pool[off + (k + 1) % (d + 1)]
        v = _bmv(blk, r - X[node])
        _accumulate(e, np.full(E, end), node, r, v, coupling, port_r, port_v, acc_vr, acc_v, acc_r, h)
