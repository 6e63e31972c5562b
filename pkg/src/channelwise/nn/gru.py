"""GRU and bidirectional GRU with backpropagation through time.

Gate layout along the last axis of the weight matrices is ``[z | r | n]``::

    z  = sigmoid(x Wx_z + h Wh_z + b_z)          update gate
    r  = sigmoid(x Wx_r + h Wh_r + b_r)          reset gate
    n  = tanh(x Wx_n + (r * h) Wh_n + b_n)       candidate
    h' = z * h + (1 - z) * n

Masked (padding) steps copy the previous state.  The batched routines run
``S`` independent GRUs at once: every array carries a leading stream axis,
which is how the channel-wise model evaluates all channels and both
directions in a single time loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import sigmoid


def gru_scan(Wx, Wh, b, X, mask, h0=None):
    """Run ``S`` stacked GRUs.

    Wx: (S, I, 3P), Wh: (S, P, 3P), b: (S, 3P), X: (S, B, T, I), mask: (S, B, T).
    Returns hidden states ``(S, B, T, P)`` and a cache for :func:`gru_scan_backward`.
    """
    S, B, T, I = X.shape
    P = Wh.shape[1]
    if Wx.shape != (S, I, 3 * P) or Wh.shape != (S, P, 3 * P) or b.shape != (S, 3 * P):
        raise ValueError(
            f"gru: shape mismatch Wx={Wx.shape} Wh={Wh.shape} b={b.shape} for inputs {X.shape}")
    m = np.asarray(mask, dtype=float)
    XW = np.matmul(X.reshape(S, B * T, I), Wx).reshape(S, B, T, 3 * P) + b[:, None, None, :]
    Wh_zr = Wh[:, :, : 2 * P]
    Wh_n = Wh[:, :, 2 * P:]
    h = np.zeros((S, B, P)) if h0 is None else h0
    H = np.empty((S, B, T, P))
    Hprev = np.empty((S, B, T, P))
    Z = np.empty((S, B, T, P))
    R = np.empty((S, B, T, P))
    N = np.empty((S, B, T, P))
    for t in range(T):
        gx = XW[:, :, t]
        zr = sigmoid(gx[..., : 2 * P] + np.matmul(h, Wh_zr))
        z = zr[..., :P]
        r = zr[..., P:]
        n = np.tanh(gx[..., 2 * P:] + np.matmul(r * h, Wh_n))
        Hprev[:, :, t] = h
        Z[:, :, t] = z
        R[:, :, t] = r
        N[:, :, t] = n
        mt = m[:, :, t, None]
        h = h + mt * ((n + z * (h - n)) - h)
        H[:, :, t] = h
    cache = (Wx, Wh, X, m, Hprev, Z, R, N)
    return H, cache


def gru_scan_backward(dH, cache):
    """Gradients ``(dX, dWx, dWh, db)`` of :func:`gru_scan` given ``dH`` on every output."""
    Wx, Wh, X, m, Hprev, Z, R, N = cache
    S, B, T, I = X.shape
    P = Wh.shape[1]
    Wh_zr_T = np.swapaxes(Wh[:, :, : 2 * P], 1, 2)
    Wh_n_T = np.swapaxes(Wh[:, :, 2 * P:], 1, 2)
    dA = np.empty((S, B, T, 3 * P))
    dh = np.zeros((S, B, P))
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, :, t]
        mt = m[:, :, t, None]
        dhn = dh * mt
        z = Z[:, :, t]
        r = R[:, :, t]
        n = N[:, :, t]
        hp = Hprev[:, :, t]
        dn = dhn * (1.0 - z)
        dz = dhn * (hp - n)
        dan = dn * (1.0 - n * n)
        drh = np.matmul(dan, Wh_n_T)
        daz = dz * z * (1.0 - z)
        dar = drh * hp * r * (1.0 - r)
        dA[:, :, t, :P] = daz
        dA[:, :, t, P: 2 * P] = dar
        dA[:, :, t, 2 * P:] = dan
        dh = dh * (1.0 - mt) + dhn * z + drh * r + np.matmul(dA[:, :, t, : 2 * P], Wh_zr_T)
    dA2 = dA.reshape(S, B * T, 3 * P)
    dWx = np.matmul(np.swapaxes(X.reshape(S, B * T, I), 1, 2), dA2)
    dWh = np.empty_like(Wh)
    hp2 = Hprev.reshape(S, B * T, P)
    dWh[:, :, : 2 * P] = np.matmul(np.swapaxes(hp2, 1, 2), dA2[..., : 2 * P])
    rh2 = (R * Hprev).reshape(S, B * T, P)
    dWh[:, :, 2 * P:] = np.matmul(np.swapaxes(rh2, 1, 2), dA2[..., 2 * P:])
    db = dA2.sum(axis=1)
    dX = np.matmul(dA2, np.swapaxes(Wx, 1, 2)).reshape(S, B, T, I)
    return dX, dWx, dWh, db


def reverse_index(lengths, T):
    """Per-sequence index that reverses the first ``L`` steps and leaves padding in place.

    The mapping is an involution, so the same gather undoes it.
    """
    lengths = np.asarray(lengths)
    j = np.arange(T)
    L = lengths[..., None]
    return np.where(j < L, L - 1 - j, j)


def _gather_time(A, idx):
    return np.take_along_axis(A, idx[..., None], axis=-2)


def bigru_forward(Wx, Wh, b, X, mask, lengths):
    """Bidirectional GRU over ``C`` channels.

    Weights are stacked ``[forward channels..., backward channels...]`` along
    axis 0 (length ``2C``).  X: (C, B, T, I).  Returns ``(C, B, T, 2P)`` with
    ``[h_forward; h_backward]`` at each step, and a cache.
    """
    C = X.shape[0]
    T = X.shape[2]
    idx = reverse_index(lengths, T)
    Xs = np.concatenate([X, _gather_time(X, idx)], axis=0)
    ms = np.concatenate([mask, mask], axis=0)
    H, cache = gru_scan(Wx, Wh, b, Xs, ms)
    out = np.concatenate([H[:C], _gather_time(H[C:], idx)], axis=-1)
    return out, (cache, idx, C)


def bigru_backward(dOut, bcache):
    cache, idx, C = bcache
    P = dOut.shape[-1] // 2
    dH = np.concatenate([dOut[..., :P], _gather_time(dOut[..., P:], idx)], axis=0)
    dXs, dWx, dWh, db = gru_scan_backward(dH, cache)
    dX = dXs[:C] + _gather_time(dXs[C:], idx)
    return dX, dWx, dWh, db


@dataclass
class GruLayerParams:
    """Weights of one GRU layer; ``backward`` holds the mirrored set when bidirectional."""

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    backward: GruLayerParams | None = None

    @property
    def input_dim(self):
        return self.Wx.shape[0]

    @property
    def hidden_dim(self):
        return self.Wh.shape[0]

    @property
    def bidirectional(self):
        return self.backward is not None

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, bidirectional=True):
        def one():
            return cls(
                Wx=xavier(rng, (input_dim, 3 * hidden_dim), input_dim, hidden_dim),
                Wh=xavier(rng, (hidden_dim, 3 * hidden_dim), hidden_dim, hidden_dim),
                b=np.zeros(3 * hidden_dim),
            )
        fwd = one()
        if bidirectional:
            fwd.backward = one()
        return fwd

    def n_parameters(self):
        own = self.Wx.size + self.Wh.size + self.b.size
        return own + (self.backward.n_parameters() if self.backward else 0)


def xavier(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def gru_forward(params: GruLayerParams, inputs, mask=None):
    """Hidden states of one (possibly bidirectional) GRU layer for one sequence.

    ``inputs`` has shape (T, input_dim).  Returns (T, P), or (T, 2P) holding
    ``[h_forward; h_backward]`` when ``params`` is bidirectional.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError(f"gru_forward expects a nonempty (T, input_dim) array, got shape {X.shape}")
    if X.shape[1] != params.input_dim:
        raise ValueError(f"gru_forward: input width {X.shape[1]} but Wx has shape {params.Wx.shape}")
    T = len(X)
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (T,):
        raise ValueError(f"gru_forward: mask shape {mask.shape} does not match sequence length {T}")
    if not params.bidirectional:
        H, _ = gru_scan(params.Wx[None], params.Wh[None], params.b[None], X[None, None], mask[None, None])
        return H[0, 0]
    bw = params.backward
    Wx = np.stack([params.Wx, bw.Wx])
    Wh = np.stack([params.Wh, bw.Wh])
    b = np.stack([params.b, bw.b])
    length = int(mask.sum())
    if not mask[:length].all():
        raise ValueError("bidirectional gru_forward expects padding only at the end of the sequence")
    out, _ = bigru_forward(Wx, Wh, b, X[None, None], mask[None, None], np.array([[length]]))
    return out[0, 0]
