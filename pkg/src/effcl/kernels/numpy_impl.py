"""Pure-numpy implementations of the hot kernels.

These are the fallback path and the reference semantics for the numba
twins in ``numba_impl``.  All kernels work in float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

NEG_INF = -1e30
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm over the last axis of a (rows, dim) array.

    Returns (y, mean, rstd); mean/rstd are cached for the backward pass.
    """
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gain[None, :] + bias[None, :]
    return y, mean, rstd


def layer_norm_bwd(dy, x, gain, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain[None, :]
    m1 = dxhat.mean(axis=1)
    m2 = (dxhat * xhat).mean(axis=1)
    dx = (dxhat - m1[:, None] - xhat * m2[:, None]) * rstd[:, None]
    return dx, dgain, dbias


def gelu_fwd(x):
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (cdf + x * pdf)


def attn_softmax_fwd(scores, key_mask):
    """Softmax over the last axis of (B, H, L, L) scores.

    Padded key positions (key_mask False) receive zero probability.
    """
    masked = np.where(key_mask[:, None, None, :], scores, NEG_INF)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attn_softmax_bwd(probs, dprobs):
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def softmax_xent_fwd(logits, targets):
    """Summed cross-entropy over rows of (rows, vocab) logits.

    Returns (loss_sum, probs); probs are cached for the backward pass.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    probs = e / denom[:, None]
    rows = np.arange(logits.shape[0])
    loss_sum = float((np.log(denom) - shifted[rows, targets]).sum())
    return loss_sum, probs


def softmax_xent_bwd(probs, targets, scale):
    dlogits = probs * scale
    rows = np.arange(probs.shape[0])
    dlogits[rows, targets] -= scale
    return dlogits


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on 1-D views."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps)) + lr * weight_decay * p
