"""A small transformer encoder with an inner-layer hook point.

The encoder runs a plain post-norm transformer stack over token ids,
exposes the hidden states of one chosen layer to a caller-supplied hook
(where augmentation is injected during training), mean-pools final
hidden states into a sequence embedding, and scores tokens for the MLM
objective through a linear vocabulary head.

Forward and backward passes are written by hand in float64 numpy; the
fused elementwise pieces route through :mod:`effcl.kernels`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
INIT_STD = 0.02

_CONFIG_FIELDS = (
    "num_layers",
    "hidden_dim",
    "num_heads",
    "ffn_dim",
    "vocab_size",
    "max_len",
    "hook_layer_choices",
    "dropout",
)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden_dim: int
    num_heads: int
    ffn_dim: int
    vocab_size: int
    max_len: int
    hook_layer_choices: tuple[int, ...]
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"encoder.{name} must be a positive integer, got {v!r}")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim={self.hidden_dim} not divisible by num_heads={self.num_heads}"
            )
        choices = tuple(sorted(set(int(c) for c in self.hook_layer_choices)))
        if any(c < 1 or c > self.num_layers for c in choices):
            raise ConfigError(
                f"hook_layer_choices {choices} outside 1..{self.num_layers}"
            )
        object.__setattr__(self, "hook_layer_choices", choices)
        if not isinstance(self.dropout, (int, float)) or not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"encoder.dropout must be in [0, 1), got {self.dropout!r}")
        object.__setattr__(self, "dropout", float(self.dropout))

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "hook_layer_choices": list(self.hook_layer_choices),
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"encoder config must be an object, got {type(d).__name__}")
        unknown = set(d) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        missing = set(_CONFIG_FIELDS) - {"dropout"} - set(d)
        if missing:
            raise ConfigError(f"missing encoder config keys: {sorted(missing)}")
        choices = d["hook_layer_choices"]
        if not isinstance(choices, (list, tuple)):
            raise ConfigError("encoder.hook_layer_choices must be a list")
        return cls(
            num_layers=d["num_layers"],
            hidden_dim=d["hidden_dim"],
            num_heads=d["num_heads"],
            ffn_dim=d["ffn_dim"],
            vocab_size=d["vocab_size"],
            max_len=d["max_len"],
            hook_layer_choices=tuple(choices),
            dropout=d.get("dropout", 0.0),
        )


@dataclass
class HiddenStates:
    """Batch of per-token hidden vectors at one layer, plus padding mask."""

    values: np.ndarray  # (batch, length, dim)
    padding_mask: np.ndarray  # (batch, length) bool, True = real token

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.padding_mask = np.asarray(self.padding_mask, dtype=bool)
        if self.values.ndim != 3:
            raise ValueError(f"values must be (batch, length, dim), got {self.values.shape}")
        if self.padding_mask.shape != self.values.shape[:2]:
            raise ValueError(
                f"padding_mask shape {self.padding_mask.shape} does not match "
                f"values {self.values.shape[:2]}"
            )

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def real_lengths(self) -> np.ndarray:
        return self.padding_mask.sum(axis=1)


@dataclass(frozen=True)
class SequenceEmbedding:
    """Per-sequence embedding, (batch, dim)."""

    values: np.ndarray


def mean_pool(states: HiddenStates) -> SequenceEmbedding:
    """Arithmetic mean of hidden vectors over non-padding positions."""
    lengths = states.real_lengths()
    if np.any(lengths == 0):
        raise ValueError("cannot pool a fully padded sequence")
    summed = (states.values * states.padding_mask[:, :, None]).sum(axis=1)
    return SequenceEmbedding(values=summed / lengths[:, None])


def _mean_pool_bwd(d_pooled, padding_mask):
    lengths = padding_mask.sum(axis=1).astype(np.float64)
    return (d_pooled[:, None, :] / lengths[:, None, None]) * padding_mask[:, :, None]


def _full_mask(tokens):
    return np.ones(tokens.shape, dtype=bool)


class TransformerEncoder:
    """Post-norm transformer stack with learned positions and an MLM head.

    Parameters live in ``self.params`` as a name -> float64 array dict in
    fixed construction order; that order is also the checkpoint layout.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is not None:
            self.params = params
            return
        if rng is None:
            rng = np.random.default_rng(0)
        c = config
        p: dict[str, np.ndarray] = {}

        def mat(name, shape):
            p[name] = rng.normal(0.0, INIT_STD, size=shape)

        def vec(name, size, value=0.0):
            p[name] = np.full(size, value, dtype=np.float64)

        mat("tok_emb", (c.vocab_size, c.hidden_dim))
        mat("pos_emb", (c.max_len, c.hidden_dim))
        vec("emb_ln_g", c.hidden_dim, 1.0)
        vec("emb_ln_b", c.hidden_dim)
        for i in range(c.num_layers):
            pre = f"l{i}."
            for w in ("wq", "wk", "wv", "wo"):
                mat(pre + w, (c.hidden_dim, c.hidden_dim))
            for b in ("bq", "bk", "bv", "bo"):
                vec(pre + b, c.hidden_dim)
            vec(pre + "ln1_g", c.hidden_dim, 1.0)
            vec(pre + "ln1_b", c.hidden_dim)
            mat(pre + "w1", (c.hidden_dim, c.ffn_dim))
            vec(pre + "b1", c.ffn_dim)
            mat(pre + "w2", (c.ffn_dim, c.hidden_dim))
            vec(pre + "b2", c.hidden_dim)
            vec(pre + "ln2_g", c.hidden_dim, 1.0)
            vec(pre + "ln2_b", c.hidden_dim)
        mat("mlm_w", (c.hidden_dim, c.vocab_size))
        vec("mlm_b", c.vocab_size)
        self.params = p

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def _split_heads(self, x):
        b, l, d = x.shape
        h = self.config.num_heads
        return x.reshape(b, l, h, d // h).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, h, l, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)

    def _dropout_mask(self, shape, rng):
        keep = 1.0 - self.config.dropout
        return (rng.random(shape) < keep).astype(np.float64) / keep

    def forward(self, tokens, padding_mask=None, hook_layer=None, hook=None,
                dropout_rng=None):
        """Run the stack; returns (pooled (B,d), final (B,L,d), cache).

        `hook`, when given, transforms the hidden states produced by layer
        `hook_layer` (1-based) before the remaining layers run.  The hook
        must preserve the tensor shape.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be (batch, length), got shape {tokens.shape}")
        b, l = tokens.shape
        c = self.config
        if l > c.max_len:
            raise ValueError(f"sequence length {l} exceeds max_len {c.max_len}")
        if np.any(tokens < 0) or np.any(tokens >= c.vocab_size):
            raise ValueError("token id outside vocabulary")
        mask = _full_mask(tokens) if padding_mask is None else np.asarray(padding_mask, dtype=bool)
        if hook is not None:
            if hook_layer is None:
                raise ValueError("hook given without hook_layer")
            if hook_layer not in c.hook_layer_choices:
                raise ValueError(
                    f"hook_layer {hook_layer} not in configured choices {c.hook_layer_choices}"
                )
        p = self.params
        use_dropout = c.dropout > 0.0 and dropout_rng is not None

        x = p["tok_emb"][tokens] + p["pos_emb"][:l][None, :, :]
        y_2d, emb_mu, emb_rstd = kernels.layer_norm_fwd(
            x.reshape(-1, c.hidden_dim), p["emb_ln_g"], p["emb_ln_b"], LN_EPS
        )
        h = y_2d.reshape(b, l, c.hidden_dim)
        emb_drop = None
        if use_dropout:
            emb_drop = self._dropout_mask(h.shape, dropout_rng)
            h = h * emb_drop

        cache = {
            "tokens": tokens,
            "mask": mask,
            "emb_x": x,
            "emb_mu": emb_mu,
            "emb_rstd": emb_rstd,
            "emb_drop": emb_drop,
            "hook_layer": hook_layer if hook is not None else None,
            "layers": [],
        }
        for i in range(c.num_layers):
            h_out, layer_cache = self._layer_forward(i, h, mask, dropout_rng if use_dropout else None)
            if hook is not None and (i + 1) == hook_layer:
                hooked = hook(HiddenStates(values=h_out, padding_mask=mask))
                if not isinstance(hooked, HiddenStates) or hooked.values.shape != h_out.shape:
                    raise ValueError("hook must return HiddenStates of unchanged shape")
                h_out = hooked.values
            cache["layers"].append(layer_cache)
            h = h_out
        cache["final"] = h
        pooled = mean_pool(HiddenStates(values=h, padding_mask=mask)).values
        return pooled, h, cache

    def _layer_forward(self, i, x, mask, dropout_rng):
        p = self.params
        pre = f"l{i}."
        b, l, d = x.shape
        dh = d // self.config.num_heads
        inv_sqrt_dh = 1.0 / np.sqrt(dh)

        q = self._split_heads(x @ p[pre + "wq"] + p[pre + "bq"])
        k = self._split_heads(x @ p[pre + "wk"] + p[pre + "bk"])
        v = self._split_heads(x @ p[pre + "wv"] + p[pre + "bv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * inv_sqrt_dh
        probs = kernels.attn_softmax_fwd(scores, mask)
        ctx = self._merge_heads(probs @ v)
        attn = ctx @ p[pre + "wo"] + p[pre + "bo"]
        attn_drop = None
        if dropout_rng is not None:
            attn_drop = self._dropout_mask(attn.shape, dropout_rng)
            attn = attn * attn_drop
        res1 = x + attn
        y1_2d, mu1, rstd1 = kernels.layer_norm_fwd(
            res1.reshape(-1, d), p[pre + "ln1_g"], p[pre + "ln1_b"], LN_EPS
        )
        y1 = y1_2d.reshape(b, l, d)
        a = y1 @ p[pre + "w1"] + p[pre + "b1"]
        g = kernels.gelu_fwd(a)
        f = g @ p[pre + "w2"] + p[pre + "b2"]
        ffn_drop = None
        if dropout_rng is not None:
            ffn_drop = self._dropout_mask(f.shape, dropout_rng)
            f = f * ffn_drop
        res2 = y1 + f
        y2_2d, mu2, rstd2 = kernels.layer_norm_fwd(
            res2.reshape(-1, d), p[pre + "ln2_g"], p[pre + "ln2_b"], LN_EPS
        )
        y2 = y2_2d.reshape(b, l, d)
        layer_cache = {
            "x": x, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx,
            "attn_drop": attn_drop, "res1": res1, "mu1": mu1, "rstd1": rstd1,
            "y1": y1, "a": a, "g": g, "ffn_drop": ffn_drop,
            "res2": res2, "mu2": mu2, "rstd2": rstd2,
        }
        return y2, layer_cache

    def backward(self, cache, d_pooled=None, d_final=None, hook_vjp=None):
        """Accumulate parameter gradients for one cached forward pass.

        `d_pooled` is the gradient at the pooled embedding, `d_final` at the
        final hidden states; either or both may be given.  `hook_vjp`, when
        the pass was hooked, maps the gradient across the hook (the hook
        output grad in, its input grad out).
        """
        c = self.config
        p = self.params
        mask = cache["mask"]
        grads: dict[str, np.ndarray] = {}

        def acc(name, val):
            if name in grads:
                grads[name] += val
            else:
                grads[name] = val

        dh = np.zeros_like(cache["final"])
        if d_final is not None:
            dh = dh + d_final
        if d_pooled is not None:
            dh = dh + _mean_pool_bwd(d_pooled, mask)

        hook_layer = cache["hook_layer"]
        for i in reversed(range(c.num_layers)):
            if hook_layer is not None and (i + 1) == hook_layer:
                if hook_vjp is None:
                    raise ValueError("forward pass was hooked but no hook_vjp given")
                dh = hook_vjp(dh)
            dh = self._layer_backward(i, cache["layers"][i], dh, acc)

        if cache["emb_drop"] is not None:
            dh = dh * cache["emb_drop"]
        b, l, d = dh.shape
        dx_2d, dg, db = kernels.layer_norm_bwd(
            dh.reshape(-1, d), cache["emb_x"].reshape(-1, d),
            p["emb_ln_g"], cache["emb_mu"], cache["emb_rstd"]
        )
        acc("emb_ln_g", dg)
        acc("emb_ln_b", db)
        dx = dx_2d.reshape(b, l, d)
        dtok = np.zeros_like(p["tok_emb"])
        np.add.at(dtok, cache["tokens"], dx)
        acc("tok_emb", dtok)
        dpos = np.zeros_like(p["pos_emb"])
        dpos[:l] = dx.sum(axis=0)
        acc("pos_emb", dpos)
        return grads

    def _layer_backward(self, i, lc, dy2, acc):
        p = self.params
        pre = f"l{i}."
        b, l, d = lc["x"].shape
        dh_dim = d // self.config.num_heads
        inv_sqrt_dh = 1.0 / np.sqrt(dh_dim)

        dres2_2d, dg2, db2 = kernels.layer_norm_bwd(
            dy2.reshape(-1, d), lc["res2"].reshape(-1, d),
            p[pre + "ln2_g"], lc["mu2"], lc["rstd2"]
        )
        acc(pre + "ln2_g", dg2)
        acc(pre + "ln2_b", db2)
        dres2 = dres2_2d.reshape(b, l, d)

        df = dres2
        if lc["ffn_drop"] is not None:
            df = df * lc["ffn_drop"]
        g_2d = lc["g"].reshape(-1, self.config.ffn_dim)
        df_2d = df.reshape(-1, d)
        acc(pre + "w2", g_2d.T @ df_2d)
        acc(pre + "b2", df_2d.sum(axis=0))
        dgmat = df @ p[pre + "w2"].T
        da = kernels.gelu_bwd(lc["a"], dgmat)
        y1_2d = lc["y1"].reshape(-1, d)
        da_2d = da.reshape(-1, self.config.ffn_dim)
        acc(pre + "w1", y1_2d.T @ da_2d)
        acc(pre + "b1", da_2d.sum(axis=0))
        dy1 = dres2 + da @ p[pre + "w1"].T

        dres1_2d, dg1, db1 = kernels.layer_norm_bwd(
            dy1.reshape(-1, d), lc["res1"].reshape(-1, d),
            p[pre + "ln1_g"], lc["mu1"], lc["rstd1"]
        )
        acc(pre + "ln1_g", dg1)
        acc(pre + "ln1_b", db1)
        dres1 = dres1_2d.reshape(b, l, d)

        dattn = dres1
        if lc["attn_drop"] is not None:
            dattn = dattn * lc["attn_drop"]
        ctx_2d = lc["ctx"].reshape(-1, d)
        dattn_2d = dattn.reshape(-1, d)
        acc(pre + "wo", ctx_2d.T @ dattn_2d)
        acc(pre + "bo", dattn_2d.sum(axis=0))
        dctx = self._split_heads(dattn @ p[pre + "wo"].T)
        dprobs = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["probs"].transpose(0, 1, 3, 2) @ dctx
        dscores = kernels.attn_softmax_bwd(lc["probs"], dprobs) * inv_sqrt_dh
        dq = self._merge_heads(dscores @ lc["k"])
        dk = self._merge_heads(dscores.transpose(0, 1, 3, 2) @ lc["q"])
        dv = self._merge_heads(dv)

        x_2d = lc["x"].reshape(-1, d)
        dx = dres1.copy()
        for name, dmat in (("q", dq), ("k", dk), ("v", dv)):
            d_2d = dmat.reshape(-1, d)
            acc(pre + "w" + name, x_2d.T @ d_2d)
            acc(pre + "b" + name, d_2d.sum(axis=0))
            dx += dmat @ p[pre + "w" + name].T
        return dx

    # ------------------------------------------------------------------
    # public ops
    # ------------------------------------------------------------------

    def encode_with_hook(self, tokens, hook_layer=None, hook=None, padding_mask=None):
        """Forward pass with an optional inner-layer hook.

        Returns (SequenceEmbedding, final HiddenStates).  With no hook the
        result is identical to a plain forward pass.
        """
        pooled, final, _ = self.forward(
            tokens, padding_mask=padding_mask, hook_layer=hook_layer, hook=hook
        )
        mask = _full_mask(np.asarray(tokens)) if padding_mask is None else np.asarray(padding_mask, dtype=bool)
        return SequenceEmbedding(values=pooled), HiddenStates(values=final, padding_mask=mask)

    def mlm_loss(self, states: HiddenStates, masked_batch) -> float:
        """Mean cross-entropy over masked positions via the vocabulary head.

        `masked_batch` is a sequence of MaskedSequence aligned with the
        batch.  Zero masked positions across the batch yields 0.0.
        """
        pos_mask = np.zeros(states.values.shape[:2], dtype=bool)
        targets_grid = np.zeros(states.values.shape[:2], dtype=np.int64)
        for row, ms in enumerate(masked_batch):
            pos_mask[row, ms.masked_positions] = True
            targets_grid[row, ms.masked_positions] = ms.target_tokens[ms.masked_positions]
        loss, _, _ = self._mlm_loss_grad(states.values, pos_mask, targets_grid, need_grad=False)
        return loss

    def _mlm_loss_grad(self, final_values, pos_mask, targets_grid, need_grad=True):
        """Returns (loss, d_final, head_grads); the latter two None-ish when
        `need_grad` is false or there is nothing masked."""
        p = self.params
        n_masked = int(pos_mask.sum())
        if n_masked == 0:
            logger.warning("MLM loss computed with zero masked positions; defining it as 0")
            if need_grad:
                return 0.0, np.zeros_like(final_values), {
                    "mlm_w": np.zeros_like(p["mlm_w"]),
                    "mlm_b": np.zeros_like(p["mlm_b"]),
                }
            return 0.0, None, None
        sel = final_values[pos_mask]
        targets = targets_grid[pos_mask]
        logits = sel @ p["mlm_w"] + p["mlm_b"]
        loss_sum, probs = kernels.softmax_xent_fwd(logits, targets)
        loss = loss_sum / n_masked
        if not need_grad:
            return loss, None, None
        dlogits = kernels.softmax_xent_bwd(probs, targets, 1.0 / n_masked)
        d_final = np.zeros_like(final_values)
        d_final[pos_mask] = dlogits @ p["mlm_w"].T
        head_grads = {"mlm_w": sel.T @ dlogits, "mlm_b": dlogits.sum(axis=0)}
        return loss, d_final, head_grads


# ----------------------------------------------------------------------
# checkpoint format: one JSON header line, then little-endian float32
# tensor payloads in header order
# ----------------------------------------------------------------------

CHECKPOINT_FORMAT = "effcl-encoder"
CHECKPOINT_VERSION = 1


def save_checkpoint(encoder: TransformerEncoder, path) -> None:
    names = list(encoder.params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": encoder.config.to_dict(),
        "tensors": [
            {"name": n, "shape": list(encoder.params[n].shape)} for n in names
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(encoder.params[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> TransformerEncoder:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise NumericalError(f"corrupt checkpoint header in {path}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise NumericalError(f"{path} is not an encoder checkpoint")
        config = EncoderConfig.from_dict(header["config"])
        params = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 4)
            if len(buf) != count * 4:
                raise NumericalError(f"truncated checkpoint {path}")
            params[entry["name"]] = (
                np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
            )
    return TransformerEncoder(config, params=params)
