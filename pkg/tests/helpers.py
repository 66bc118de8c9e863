"""Independent reference computations used as oracles.

Everything here is deliberately written from the basic formulas with
plain numpy (and explicit loops where that is clearer), separate from
the package's forward/backward code paths.
"""

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


def ref_layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def ref_gelu(x):
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def ref_encoder_forward(params, config, tokens, hook_layer=None, hook_fn=None):
    """Plain-numpy transformer forward; returns (pooled, final).

    `hook_fn`, when given, maps the (B, L, d) array after layer
    `hook_layer` (1-based) to a same-shape array.
    """
    tokens = np.asarray(tokens)
    b, l = tokens.shape
    d = config.hidden_dim
    heads = config.num_heads
    dh = d // heads
    x = params["tok_emb"][tokens] + params["pos_emb"][:l][None]
    h = ref_layer_norm(x, params["emb_ln_g"], params["emb_ln_b"])
    for i in range(config.num_layers):
        pre = f"l{i}."
        q = h @ params[pre + "wq"] + params[pre + "bq"]
        k = h @ params[pre + "wk"] + params[pre + "bk"]
        v = h @ params[pre + "wv"] + params[pre + "bv"]

        def heads_of(m):
            return m.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)

        qh, kh, vh = heads_of(q), heads_of(k), heads_of(v)
        scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(dh)
        scores = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        ctx = (probs @ vh).transpose(0, 2, 1, 3).reshape(b, l, d)
        attn = ctx @ params[pre + "wo"] + params[pre + "bo"]
        y1 = ref_layer_norm(h + attn, params[pre + "ln1_g"], params[pre + "ln1_b"])
        f = ref_gelu(y1 @ params[pre + "w1"] + params[pre + "b1"]) @ params[pre + "w2"] + params[pre + "b2"]
        h = ref_layer_norm(y1 + f, params[pre + "ln2_g"], params[pre + "ln2_b"])
        if hook_fn is not None and (i + 1) == hook_layer:
            h = hook_fn(h)
    pooled = h.mean(axis=1)
    return pooled, h


def ref_mlm_loss(params, final, pos_mask, targets_grid):
    sel = final[pos_mask]
    targets = targets_grid[pos_mask]
    logits = sel @ params["mlm_w"] + params["mlm_b"]
    total = 0.0
    for row in range(logits.shape[0]):
        z = logits[row]
        m = z.max()
        total += m + math.log(np.exp(z - m).sum()) - z[targets[row]]
    return total / logits.shape[0]


def ref_nt_xent(z, tau):
    """Explicit double-loop contrastive loss over adjacent pairs."""
    z = np.asarray(z, dtype=np.float64)
    n2 = z.shape[0]

    def sim(i, j):
        return float(z[i] @ z[j] / (np.linalg.norm(z[i]) * np.linalg.norm(z[j])))

    total = 0.0
    for i in range(n2):
        j = i + 1 if i % 2 == 0 else i - 1
        denom = 0.0
        for k in range(n2):
            if k != i:
                denom += math.exp(sim(i, k) / tau)
        total += -math.log(math.exp(sim(i, j) / tau) / denom)
    return total


def fd_gradient(loss_fn, param, h=1e-5):
    """Central finite differences of a scalar loss over one array."""
    fd = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + h
        lp = loss_fn()
        param[idx] = old - h
        lm = loss_fn()
        param[idx] = old
        fd[idx] = (lp - lm) / (2.0 * h)
    return fd


def tensor_rel_err(analytic, numeric, floor=1e-12):
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / denom)
