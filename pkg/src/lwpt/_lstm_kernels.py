"""Inner LSTM recurrences for one or more directions sharing an input.

Layout (batch-major, input time order throughout):

* ``XW``  [nd, B, T, 4H]  input projections ``x @ w_ih + b`` per direction
* ``M``   [B, T]          1.0 for real positions, 0.0 for padding
* ``W``   [nd, H, 4H]     recurrent weights
* ``rev`` [nd]            1 where the direction runs from t = T-1 down to 0

Forward returns the gate activations ``A`` (sigmoid for i, f, o and tanh for
the cell candidate, gate order i, f, g, o), the carried hidden and cell
states ``HS``/``CS`` and ``TC = tanh(c_new)``. Where the mask is 0 the
states are carried through unchanged.

The transcendental functions run through numpy's vectorised ``tanh``; the
elementwise cell update and the whole backward recurrence are numba
kernels. When numba is unavailable, numpy fallbacks with identical
arithmetic are used (they are also the test reference).
"""
from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def _time_index(s: int, T: int, rev) -> list[int]:
    return [T - 1 - s if r else s for r in rev]


def _cell_update_py(A, HS, CS, h, c, M, ts):
    """Finish the gates at step ``ts`` and write the carried cell state."""
    nd = A.shape[0]
    H = h.shape[-1]
    for d in range(nd):
        t = ts[d]
        a = A[d, :, t]
        a[:, :2 * H] = 0.5 * a[:, :2 * H] + 0.5
        a[:, 3 * H:] = 0.5 * a[:, 3 * H:] + 0.5
        m = M[:, t, None]
        cn = a[:, H:2 * H] * c[d] + a[:, :H] * a[:, 2 * H:3 * H]
        CS[d, :, t] = m * cn + (1.0 - m) * c[d]


def _hidden_update_py(A, HS, CS, TC, h, c, M, ts):
    nd = A.shape[0]
    H = h.shape[-1]
    for d in range(nd):
        t = ts[d]
        m = M[:, t, None]
        HS[d, :, t] = m * (A[d, :, t, 3 * H:] * TC[d, :, t]) + (1.0 - m) * h[d]
        h[d] = HS[d, :, t]
        c[d] = CS[d, :, t]


def _backward_py(G, A, HS, CS, TC, M, W, rev):
    nd, B, T, H = G.shape
    DZ = np.empty((nd, B, T, 4 * H))
    for d in range(nd):
        WT = W[d].T
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        order = range(T) if rev[d] else range(T - 1, -1, -1)
        for t in order:
            tp = t + 1 if rev[d] else t - 1
            a = A[d, :, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = TC[d, :, t]
            c_prev = CS[d, :, tp] if 0 <= tp < T else 0.0
            m = M[:, t, None]
            dht = dh + G[d, :, t]
            dhn = m * dht
            dcn = m * dc + dhn * o * (1.0 - tc * tc)
            dz = DZ[d, :, t]
            dz[:, :H] = dcn * g * i * (1.0 - i)
            dz[:, H:2 * H] = dcn * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dcn * i * (1.0 - g * g)
            dz[:, 3 * H:] = dhn * tc * o * (1.0 - o)
            dh = (1.0 - m) * dht + dz @ WT
            dc = (1.0 - m) * dc + dcn * f
    return DZ


def _cell_update_nb(A, HS, CS, h, c, M, ts):
    nd, B, T, H4 = A.shape
    H = H4 // 4
    for d in range(nd):
        t = ts[d]
        for b in range(B):
            m = M[b, t]
            for j in range(H):
                ig = 0.5 * A[d, b, t, j] + 0.5
                fg = 0.5 * A[d, b, t, H + j] + 0.5
                A[d, b, t, j] = ig
                A[d, b, t, H + j] = fg
                A[d, b, t, 3 * H + j] = 0.5 * A[d, b, t, 3 * H + j] + 0.5
                cn = fg * c[d, b, j] + ig * A[d, b, t, 2 * H + j]
                CS[d, b, t, j] = m * cn + (1.0 - m) * c[d, b, j]


def _hidden_update_nb(A, HS, CS, TC, h, c, M, ts):
    nd, B, T, H4 = A.shape
    H = H4 // 4
    for d in range(nd):
        t = ts[d]
        for b in range(B):
            m = M[b, t]
            for j in range(H):
                hn = A[d, b, t, 3 * H + j] * TC[d, b, t, j]
                hv = m * hn + (1.0 - m) * h[d, b, j]
                HS[d, b, t, j] = hv
                h[d, b, j] = hv
                c[d, b, j] = CS[d, b, t, j]


def _backward_nb(G, A, HS, CS, TC, M, W, rev):
    nd, B, T, H = G.shape
    DZ = np.empty((nd, B, T, 4 * H))
    for d in range(nd):
        WT = np.ascontiguousarray(W[d].T)
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        dz = np.empty((B, 4 * H))
        for s in range(T):
            t = s if rev[d] else T - 1 - s
            tp = t + 1 if rev[d] else t - 1
            for b in range(B):
                m = M[b, t]
                for j in range(H):
                    ig = A[d, b, t, j]
                    fg = A[d, b, t, H + j]
                    gg = A[d, b, t, 2 * H + j]
                    og = A[d, b, t, 3 * H + j]
                    tc = TC[d, b, t, j]
                    cp = CS[d, b, tp, j] if 0 <= tp < T else 0.0
                    dht = dh[b, j] + G[d, b, t, j]
                    dhn = m * dht
                    dcn = m * dc[b, j] + dhn * og * (1.0 - tc * tc)
                    dz[b, j] = dcn * gg * ig * (1.0 - ig)
                    dz[b, H + j] = dcn * cp * fg * (1.0 - fg)
                    dz[b, 2 * H + j] = dcn * ig * (1.0 - gg * gg)
                    dz[b, 3 * H + j] = dhn * tc * og * (1.0 - og)
                    dh[b, j] = (1.0 - m) * dht
                    dc[b, j] = (1.0 - m) * dc[b, j] + dcn * fg
            dh += dz @ WT
            DZ[d, :, t] = dz
    return DZ


if numba is not None:
    _cell_update = numba.njit(cache=True)(_cell_update_nb)
    _hidden_update = numba.njit(cache=True)(_hidden_update_nb)
    _backward = numba.njit(cache=True)(_backward_nb)
    COMPILED = True
else:  # pragma: no cover
    _cell_update, _hidden_update, _backward = _cell_update_py, _hidden_update_py, _backward_py
    COMPILED = False


def forward(XW, M, W, rev, compiled: bool = COMPILED):
    nd, B, T, H4 = XW.shape
    H = H4 // 4
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so one vectorised tanh covers all four gates
    scale = np.full(H4, 0.5)
    scale[2 * H:3 * H] = 1.0
    cell, hidden = (_cell_update, _hidden_update) if compiled else (_cell_update_py, _hidden_update_py)
    A = np.empty((nd, B, T, H4))
    HS = np.empty((nd, B, T, H))
    CS = np.empty((nd, B, T, H))
    TC = np.empty((nd, B, T, H))
    h = np.zeros((nd, B, H))
    c = np.zeros((nd, B, H))
    z = np.empty((B, H4))
    for s in range(T):
        ts = np.array(_time_index(s, T, rev), dtype=np.int64)
        for d in range(nd):
            np.matmul(h[d], W[d], out=z)
            z += XW[d, :, ts[d]]
            z *= scale
            A[d, :, ts[d]] = np.tanh(z)
        cell(A, HS, CS, h, c, M, ts)
        for d in range(nd):
            TC[d, :, ts[d]] = np.tanh(CS[d, :, ts[d]])
        hidden(A, HS, CS, TC, h, c, M, ts)
    return A, HS, CS, TC


def backward(G, A, HS, CS, TC, M, W, rev, compiled: bool = COMPILED):
    fn = _backward if compiled else _backward_py
    return fn(G, A, HS, CS, TC, M, W, np.asarray(rev, dtype=np.int64))
