"""Pure-numpy kernels for the hot inner loops.

Summation-order contract (shared with the compiled backend in `_fast.pyx`):

* ``matmul``: out[i, j] accumulates a[i, k] * b[k, j] sequentially over
  ascending k, starting from 0.0.
* ``conv1d_fwd``: out[b, o, t] accumulates w[o, c, k] * xp[b, c, t + k]
  sequentially over ascending (c, k), starting from 0.0.  ``xp`` is the
  already zero-padded input, so the output length equals
  ``xp.shape[-1] - K + 1``.

These two orders are what the direct sliding-window oracle uses, which makes
forward results bit-identical across backends.  ``conv1d_grad_w`` reduces
over (batch, time) with numpy's pairwise summation and is only guaranteed to
match the compiled backend to ~1e-12 relative.
"""

import numpy as np


def matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(k):
        out += a[:, i : i + 1] * b[i : i + 1, :]
    return out


def conv1d_fwd(xp, w):
    nb, cin, tp = xp.shape
    cout, cin2, kk = w.shape
    t = tp - kk + 1
    out = np.zeros((nb, cout, t), dtype=np.float64)
    for c in range(cin):
        xc = xp[:, c, :]
        wc = w[:, c, :]
        for k in range(kk):
            out += wc[None, :, k, None] * xc[:, None, k : k + t]
    return out


def conv1d_grad_w(g, xp, kk):
    nb, cout, t = g.shape
    cin = xp.shape[1]
    gw = np.empty((cout, cin, kk), dtype=np.float64)
    gm = g.transpose(1, 0, 2).reshape(cout, nb * t)
    for k in range(kk):
        xk = xp[:, :, k : k + t].transpose(1, 0, 2).reshape(cin, nb * t)
        gw[:, :, k] = gm @ xk.T
    return gw
