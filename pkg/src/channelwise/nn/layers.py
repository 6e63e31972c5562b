"""Elementwise activations, masked softmax and the dense layer."""

import numpy as np
from scipy.special import expit


def sigmoid(x):
    return expit(x)


def masked_softmax(scores, mask, axis=-1):
    """Softmax over ``axis`` restricted to positions where ``mask`` is true.

    Masked positions get weight exactly 0.  Uses max subtraction.
    """
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, scores, -np.inf)
    top = np.max(neg, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    ex = np.where(mask, np.exp(np.where(mask, scores - top, 0.0)), 0.0)
    total = ex.sum(axis=axis, keepdims=True)
    return ex / np.where(total > 0, total, 1.0)


def softmax_backward(weights, d_weights, axis=-1):
    """Gradient of the scores given the gradient of softmax weights."""
    inner = np.sum(weights * d_weights, axis=axis, keepdims=True)
    return weights * (d_weights - inner)


def dense(W, b, x):
    """Affine map ``W @ x + b`` for a vector or a batch of row vectors."""
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weight shape {W.shape}")
    if np.shape(b) != (W.shape[0],):
        raise ValueError(f"dense: bias shape {np.shape(b)} does not match weight shape {W.shape}")
    return x @ W.T + b


def dense_backward(W, x, dy):
    """Returns ``(dx, dW, db)`` for :func:`dense` given upstream gradient ``dy``."""
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ W
    return dx, dW, db
