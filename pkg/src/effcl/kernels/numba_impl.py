"""Numba-jitted implementations of the hot kernels.

Loops are written explicitly so numba fuses the elementwise work that the
numpy fallback spreads over temporaries.  fastmath stays off: each backend
must be bit-deterministic run to run.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -1e30
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    rows, dim = x.shape
    y = np.empty_like(x)
    mean = np.empty(rows)
    rstd = np.empty(rows)
    for r in range(rows):
        s = 0.0
        for j in range(dim):
            s += x[r, j]
        mu = s / dim
        sq = 0.0
        for j in range(dim):
            d = x[r, j] - mu
            sq += d * d
        rs = 1.0 / math.sqrt(sq / dim + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(dim):
            y[r, j] = (x[r, j] - mu) * rs * gain[j] + bias[j]
    return y, mean, rstd


@njit(cache=True)
def layer_norm_bwd(dy, x, gain, mean, rstd):
    rows, dim = x.shape
    dx = np.empty_like(x)
    dgain = np.zeros(dim)
    dbias = np.zeros(dim)
    for r in range(rows):
        mu = mean[r]
        rs = rstd[r]
        m1 = 0.0
        m2 = 0.0
        for j in range(dim):
            xhat = (x[r, j] - mu) * rs
            dxh = dy[r, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat
            dgain[j] += dy[r, j] * xhat
            dbias[j] += dy[r, j]
        m1 /= dim
        m2 /= dim
        for j in range(dim):
            xhat = (x[r, j] - mu) * rs
            dxh = dy[r, j] * gain[j]
            dx[r, j] = (dxh - m1 - xhat * m2) * rs
    return dx, dgain, dbias


@njit(cache=True)
def gelu_fwd(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.shape[0]):
        v = flat_in[i]
        flat_out[i] = v * 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
    return out


@njit(cache=True)
def gelu_bwd(x, dy):
    dx = np.empty_like(x)
    flat_x = x.ravel()
    flat_dy = dy.ravel()
    flat_dx = dx.ravel()
    for i in range(flat_x.shape[0]):
        v = flat_x[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = math.exp(-0.5 * v * v) * _INV_SQRT2PI
        flat_dx[i] = flat_dy[i] * (cdf + v * pdf)
    return dx


@njit(cache=True)
def attn_softmax_fwd(scores, key_mask):
    b, h, lq, lk = scores.shape
    probs = np.empty_like(scores)
    for bi in range(b):
        for hi in range(h):
            for qi in range(lq):
                mx = NEG_INF
                for ki in range(lk):
                    v = scores[bi, hi, qi, ki] if key_mask[bi, ki] else NEG_INF
                    if v > mx:
                        mx = v
                total = 0.0
                for ki in range(lk):
                    v = scores[bi, hi, qi, ki] if key_mask[bi, ki] else NEG_INF
                    e = math.exp(v - mx)
                    probs[bi, hi, qi, ki] = e
                    total += e
                for ki in range(lk):
                    probs[bi, hi, qi, ki] /= total
    return probs


@njit(cache=True)
def attn_softmax_bwd(probs, dprobs):
    b, h, lq, lk = probs.shape
    dscores = np.empty_like(probs)
    for bi in range(b):
        for hi in range(h):
            for qi in range(lq):
                inner = 0.0
                for ki in range(lk):
                    inner += dprobs[bi, hi, qi, ki] * probs[bi, hi, qi, ki]
                for ki in range(lk):
                    dscores[bi, hi, qi, ki] = probs[bi, hi, qi, ki] * (
                        dprobs[bi, hi, qi, ki] - inner
                    )
    return dscores


@njit(cache=True)
def softmax_xent_fwd(logits, targets):
    rows, vocab = logits.shape
    probs = np.empty_like(logits)
    loss_sum = 0.0
    for r in range(rows):
        mx = logits[r, 0]
        for j in range(1, vocab):
            if logits[r, j] > mx:
                mx = logits[r, j]
        total = 0.0
        for j in range(vocab):
            e = math.exp(logits[r, j] - mx)
            probs[r, j] = e
            total += e
        for j in range(vocab):
            probs[r, j] /= total
        loss_sum += math.log(total) - (logits[r, targets[r]] - mx)
    return loss_sum, probs


@njit(cache=True)
def softmax_xent_bwd(probs, targets, scale):
    rows, vocab = probs.shape
    dlogits = np.empty_like(probs)
    for r in range(rows):
        for j in range(vocab):
            dlogits[r, j] = probs[r, j] * scale
        dlogits[r, targets[r]] -= scale
    return dlogits


@njit(cache=True)
def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] = p[i] - lr * (mhat / (math.sqrt(vhat) + eps)) - lr * weight_decay * p[i]
    return p
