"""Concatenation-based (additive) attention over a sequence of hidden states.

For the attended step ``t`` and each earlier step ``i < t``::

    score_i = v . tanh(Wa [h_t; h_i])
    alpha   = softmax(score)            over i = 1..t-1
    c_t     = sum_i alpha_i h_i
    out     = tanh(Wc [c_t; h_t])

With no earlier step (``t == 1``) the context falls back to the state
itself: ``alpha = [1]`` on ``h_t`` and ``out = tanh(Wc [h_t; h_t])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gru import xavier
from .layers import masked_softmax, softmax_backward


@dataclass
class AttentionParams:
    """``Wa`` is (q, 2D), ``v`` is (q,), ``Wc`` is (r, 2D) for hidden width ``D`` (= 2p)."""

    Wa: np.ndarray
    v: np.ndarray
    Wc: np.ndarray

    def __post_init__(self):
        q, two_d = self.Wa.shape
        if self.v.shape != (q,) or self.Wc.shape[1] != two_d or two_d % 2:
            raise ValueError(
                f"attention: inconsistent shapes Wa={self.Wa.shape} v={self.v.shape} Wc={self.Wc.shape}")

    @classmethod
    def init(cls, hidden_width, q, r, rng):
        return cls(
            Wa=xavier(rng, (q, 2 * hidden_width), 2 * hidden_width, q),
            v=xavier(rng, (q,), q, 1),
            Wc=xavier(rng, (r, 2 * hidden_width), 2 * hidden_width, r),
        )

    def n_parameters(self):
        return self.Wa.size + self.v.size + self.Wc.size


def prior_mask(lengths, T):
    """Positions attended from the last valid step: ``i < L-1``, or the step itself when ``L == 1``."""
    lengths = np.asarray(lengths)
    j = np.arange(T)
    L = lengths[..., None]
    return (j < L - 1) | ((L == 1) & (j == 0))


def attention_forward(Wa, v, Wc, H, lengths):
    """Batched attention at the last valid step of every sequence.

    Wa: (C, q, 2D), v: (C, q), Wc: (C, r, 2D), H: (C, B, T, D), lengths: (C, B).
    Returns ``(out, alpha, cache)`` with out (C, B, r) and alpha (C, B, T).
    """
    C, B, T, D = H.shape
    if Wa.shape[0] != C or Wa.shape[2] != 2 * D or Wc.shape[2] != 2 * D:
        raise ValueError(f"attention: Wa={Wa.shape} Wc={Wc.shape} incompatible with hidden states {H.shape}")
    last = (np.asarray(lengths) - 1)[..., None, None]
    ht = np.take_along_axis(H, last, axis=2)[:, :, 0]
    Wa_t, Wa_i = Wa[:, :, :D], Wa[:, :, D:]
    Wc_c, Wc_h = Wc[:, :, :D], Wc[:, :, D:]
    U = np.matmul(H.reshape(C, B * T, D), np.swapaxes(Wa_i, 1, 2)).reshape(C, B, T, -1)
    g = np.matmul(ht, np.swapaxes(Wa_t, 1, 2))
    A = np.tanh(U + g[:, :, None, :])
    scores = np.einsum("cbtq,cq->cbt", A, v)
    valid = prior_mask(lengths, T)
    alpha = masked_softmax(scores, valid)
    ctx = np.einsum("cbt,cbtd->cbd", alpha, H)
    pre = np.matmul(ctx, np.swapaxes(Wc_c, 1, 2)) + np.matmul(ht, np.swapaxes(Wc_h, 1, 2))
    out = np.tanh(pre)
    cache = (Wa, v, Wc, H, last, ht, A, alpha, ctx, out)
    return out, alpha, cache


def attention_backward(dout, cache):
    """Returns ``(dH, dWa, dv, dWc)``."""
    Wa, v, Wc, H, last, ht, A, alpha, ctx, out = cache
    C, B, T, D = H.shape
    Wa_t, Wa_i = Wa[:, :, :D], Wa[:, :, D:]
    Wc_c, Wc_h = Wc[:, :, :D], Wc[:, :, D:]
    dpre = dout * (1.0 - out * out)
    dWc = np.concatenate([
        np.matmul(np.swapaxes(dpre, 1, 2), ctx),
        np.matmul(np.swapaxes(dpre, 1, 2), ht),
    ], axis=2)
    dctx = np.matmul(dpre, Wc_c)
    dht = np.matmul(dpre, Wc_h)
    dalpha = np.einsum("cbd,cbtd->cbt", dctx, H)
    dH = alpha[..., None] * dctx[:, :, None, :]
    dscores = softmax_backward(alpha, dalpha)
    dv = np.einsum("cbtq,cbt->cq", A, dscores)
    dpreA = dscores[..., None] * v[:, None, None, :] * (1.0 - A * A)
    dpreA2 = dpreA.reshape(C, B * T, -1)
    dWa_i = np.matmul(np.swapaxes(dpreA2, 1, 2), H.reshape(C, B * T, D))
    dH += np.matmul(dpreA2, Wa_i).reshape(C, B, T, D)
    dg = dpreA.sum(axis=2)
    dWa_t = np.matmul(np.swapaxes(dg, 1, 2), ht)
    dht += np.matmul(dg, Wa_t)
    dWa = np.concatenate([dWa_t, dWa_i], axis=2)
    scatter_last(dH, last, dht)
    return dH, dWa, dv, dWc


def scatter_last(dH, last, dht):
    """Add ``dht`` (C, B, D) into ``dH`` at each sequence's last valid step, in place."""
    C, B = dht.shape[:2]
    ci, bi = np.meshgrid(np.arange(C), np.arange(B), indexing="ij")
    dH[ci, bi, last[:, :, 0, 0]] += dht


def attention_fuse(params: AttentionParams, hiddens, t=None):
    """Attend from step ``t`` (1-based, default last) over earlier steps of one sequence.

    Returns ``(alpha, context, attended)``; ``alpha`` has length ``t - 1``
    (length 1 on the state itself when ``t == 1``).
    """
    Hs = np.asarray(hiddens, dtype=float)
    T = len(Hs) if t is None else int(t)
    if T < 1 or T > len(Hs):
        raise ValueError(f"attention step {t} outside 1..{len(Hs)}")
    Hs = Hs[:T]
    out, alpha, cache = attention_forward(
        params.Wa[None], params.v[None], params.Wc[None], Hs[None, None], np.array([[T]]))
    ctx = cache[8][0, 0]
    k = max(T - 1, 1)
    return alpha[0, 0, :k], ctx, out[0, 0]
