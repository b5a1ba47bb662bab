"""Neural-network ops on top of :mod:`lwpt.tensor`, each with a hand-written backward."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import _lstm_kernels as _kernels
from .errors import MaskError, ParameterError, ShapeError
from .tensor import Tensor, as_tensor, record

LN_EPS = 1e-5


def _mask_array(mask, shape) -> np.ndarray:
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(bool)
    try:
        return np.broadcast_to(m, shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {m.shape} does not broadcast to {shape}") from exc


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is false come out exactly 0."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        m = _mask_array(mask, z.shape)
        if not m.any(axis=axis).all():
            raise MaskError("softmax mask has a row with no unmasked entry")
        z = np.where(m, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return record(
        "log_softmax", out, (x,),
        lambda g: (g - p * g.sum(axis=axis, keepdims=True),),
    )


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean, unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def back(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out, (x, gain, bias), back)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when not training or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a seeded rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def _lstm_core(x: Tensor, weights, mask, reverse_flags, op: str) -> Tensor:
    """Shared forward/backward for one or more LSTM directions over the same input.

    ``weights`` holds one ``(w_ih, w_hh, b)`` triple per direction. All
    directions advance in the same loop (a reversed direction reads position
    ``T - 1 - s`` at step ``s``); outputs are concatenated on the feature
    axis in input time order.
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm expects x of shape [B, T, D], got {x.shape}")
    B, T, D = x.shape
    H = weights[0][1].shape[0]
    for w_ih, w_hh, b in weights:
        if w_ih.shape != (D, 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
            raise ShapeError(
                f"lstm: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape}"
            )
    if mask is None:
        m = np.ones((B, T))
    else:
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
        if m.shape != (B, T):
            raise ShapeError(f"lstm: mask shape {m.shape} does not match x {x.shape}")
    nd = len(weights)
    rev = tuple(bool(r) for r in reverse_flags)
    x2 = x.data.reshape(B * T, D)
    W_ih = np.concatenate([w[0].data for w in weights], axis=1)   # [D, nd*4H]
    bias = np.concatenate([w[2].data for w in weights])
    W_hh = np.stack([w[1].data for w in weights])                 # [nd, H, 4H]
    XW = (x2 @ W_ih + bias).reshape(B, T, nd, 4 * H).transpose(2, 0, 1, 3)
    M = np.ascontiguousarray(m)
    A, HS, CS, TC = _kernels.forward(XW, M, W_hh, rev)
    out = HS.transpose(1, 2, 0, 3).reshape(B, T, nd * H)

    def back(gout):
        G = np.ascontiguousarray(gout.reshape(B, T, nd, H).transpose(2, 0, 1, 3))
        DZ = _kernels.backward(G, A, HS, CS, TC, M, W_hh, rev)
        flat = DZ.transpose(1, 2, 0, 3).reshape(B * T, nd * 4 * H)
        dx = (flat @ W_ih.T).reshape(B, T, D)
        dW_ih = x2.T @ flat
        db = flat.sum(axis=0)
        grads = []
        for d in range(nd):
            # state each step started from, in recurrence order (zeros at the start)
            HP = np.zeros((B, T, H))
            if rev[d]:
                HP[:, :-1] = HS[d, :, 1:]
            else:
                HP[:, 1:] = HS[d, :, :-1]
            dw_hh = HP.reshape(B * T, H).T @ DZ[d].reshape(B * T, 4 * H)
            cols = slice(d * 4 * H, (d + 1) * 4 * H)
            grads += [dW_ih[:, cols], dw_hh, db[cols]]
        return (dx, *grads)

    inputs = (x,) + tuple(t for w in weights for t in w)
    return record(op, out, inputs, back)


def lstm(x, w_ih, w_hh, b, mask=None, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over a batch of sequences.

    x: [B, T, D_in]; w_ih: [D_in, 4H]; w_hh: [H, 4H]; b: [4H], gate order
    (input, forget, cell, output). Zero initial state. Where ``mask`` is 0
    the state is carried through unchanged, so padding never leaks into the
    states of real positions in either direction. Returns hidden states
    [B, T, H] in input order.
    """
    weights = [tuple(as_tensor(t) for t in (w_ih, w_hh, b))]
    return _lstm_core(as_tensor(x), weights, mask, (reverse,), "lstm")


def bilstm_layer(x, fwd, bwd, mask=None) -> Tensor:
    """Forward and backward LSTM over ``x`` -> [B, T, 2H] (forward half first).

    ``fwd`` and ``bwd`` are ``(w_ih, w_hh, b)`` triples; same masking rule
    as :func:`lstm`.
    """
    weights = [tuple(as_tensor(t) for t in fwd), tuple(as_tensor(t) for t in bwd)]
    return _lstm_core(as_tensor(x), weights, mask, (False, True), "bilstm")


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One LSTM step written with primitive ops only.

    Used as an independent reference for the fused :func:`lstm`.
    Returns ``(h_new, c_new)``.
    """
    from .tensor import tanh

    H = as_tensor(h).shape[-1]
    z = x @ w_ih + h @ w_hh + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    return o * tanh(c_new), c_new
