"""The continual-pretraining loop.

Per optimizer step: sample one anchor per document, run a clean forward
pass and an augmented forward pass (cutoff + jitter injected at a
randomly drawn inner layer), project both pooled embeddings for the
contrastive loss, run a separately masked copy for the MLM loss, then
backpropagate the summed objective, clip gradients, and take one AdamW
step under a slanted-triangular schedule.

Every random draw comes from a named child stream of the config seed, so
a (config, seed) pair maps to a byte-identical trace and checkpoint.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .augment import AugmentationLevel, AugmentHook, sample_hook_layer
from .contrastive import (
    ProjectionHead,
    combined_loss,
    nt_xent_loss_and_grad,
    project_backward,
)
from .corpus import Vocabulary, apply_mlm_mask, load_corpus, sample_anchor
from .curriculum import VALID_MODES, CurriculumPolicy, level_at
from .encoder import EncoderConfig, TransformerEncoder, save_checkpoint
from .errors import ConfigError, CorpusError, NumericalError

logger = logging.getLogger(__name__)

TRACE_HEADER = "step,mlm_loss,contrastive_loss,total_loss,augmentation_level,hook_layer,learning_rate_now"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_TRAIN_FIELDS = (
    "corpus_path",
    "output_dir",
    "encoder",
    "curriculum",
    "seed",
    "batch_size",
    "temperature",
    "learning_rate",
    "weight_decay",
    "max_grad_norm",
    "epochs",
    "anchor_len",
    "warmup_frac",
    "mask_prob",
    "augmentation_level_override",
)
_REQUIRED_FIELDS = ("corpus_path", "output_dir", "encoder", "curriculum", "seed")


@dataclass(frozen=True, kw_only=True)
class TrainConfig:
    corpus_path: str
    output_dir: str
    encoder: EncoderConfig
    curriculum: CurriculumPolicy
    seed: int
    batch_size: int = 4
    temperature: float = 0.05
    learning_rate: float = 5e-5
    weight_decay: float = 0.1
    max_grad_norm: float = 1.0
    epochs: int = 1
    anchor_len: int = 512
    warmup_frac: float = 0.1
    mask_prob: float = 0.15
    augmentation_level_override: float | None = None

    def __post_init__(self):
        for name in ("batch_size", "epochs", "anchor_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        for name in ("temperature", "learning_rate", "max_grad_norm"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not isinstance(self.weight_decay, (int, float)) or self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay!r}")
        if not isinstance(self.warmup_frac, (int, float)) or not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must be in (0, 1), got {self.warmup_frac!r}")
        if not isinstance(self.mask_prob, (int, float)) or not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must be in [0, 1], got {self.mask_prob!r}")
        if self.augmentation_level_override is not None:
            v = self.augmentation_level_override
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(
                    f"augmentation_level_override must be in [0, 1] or null, got {v!r}"
                )
        if self.anchor_len > self.encoder.max_len:
            raise ConfigError(
                f"anchor_len {self.anchor_len} exceeds encoder max_len {self.encoder.max_len}"
            )

    def to_dict(self) -> dict:
        return {
            "corpus_path": self.corpus_path,
            "output_dir": self.output_dir,
            "encoder": self.encoder.to_dict(),
            "curriculum": self.curriculum.mode,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "temperature": self.temperature,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "max_grad_norm": self.max_grad_norm,
            "epochs": self.epochs,
            "anchor_len": self.anchor_len,
            "warmup_frac": self.warmup_frac,
            "mask_prob": self.mask_prob,
            "augmentation_level_override": self.augmentation_level_override,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"config must be a JSON object, got {type(d).__name__}")
        unknown = set(d) - set(_TRAIN_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = set(_REQUIRED_FIELDS) - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        for name in ("corpus_path", "output_dir"):
            if not isinstance(d[name], str):
                raise ConfigError(f"{name} must be a string, got {d[name]!r}")
        mode = d["curriculum"]
        if mode not in VALID_MODES:
            raise ConfigError(
                f"curriculum must be one of {VALID_MODES}, got {mode!r}"
            )
        kwargs = {k: d[k] for k in _TRAIN_FIELDS if k in d}
        kwargs["encoder"] = EncoderConfig.from_dict(d["encoder"])
        kwargs["curriculum"] = CurriculumPolicy(mode=mode)
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class LossTraceRow:
    step: int
    mlm_loss: float
    contrastive_loss: float
    total_loss: float
    augmentation_level: float
    hook_layer: int
    learning_rate_now: float

    def as_csv(self) -> str:
        return (
            f"{self.step},{self.mlm_loss!r},{self.contrastive_loss!r},"
            f"{self.total_loss!r},{self.augmentation_level!r},"
            f"{self.hook_layer},{self.learning_rate_now!r}"
        )


def slanted_triangular_lr(step: int, total_steps: int, peak_lr: float,
                          warmup_frac: float) -> float:
    """Linear 0 -> peak over floor(warmup_frac * total) steps, then linear
    decay toward 0 at total_steps."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = max(1, int(warmup_frac * total_steps))
    if step < warmup:
        return peak_lr * step / warmup
    return peak_lr * (1.0 - (step - warmup) / (total_steps - warmup))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Mutates in place; returns the pre-clip norm."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    sumsq = 0.0
    for name in sorted(grads):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
        sumsq += float((g * g).sum())
    norm = math.sqrt(sumsq)
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over a name -> array parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float,
                 betas=(ADAM_BETA1, ADAM_BETA2), eps: float = ADAM_EPS):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {n: np.zeros_like(a) for n, a in params.items()}
        self.v = {n: np.zeros_like(a) for n, a in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            kernels.adamw_update(
                p.reshape(-1),
                np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                self.m[name].reshape(-1),
                self.v[name].reshape(-1),
                self.t,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )


def _merge_grads(into: dict, new: dict) -> None:
    for name, g in new.items():
        if name in into:
            into[name] += g
        else:
            into[name] = g


class Trainer:
    """Owns model, optimizer, corpus, and the named rng streams."""

    def __init__(self, config: TrainConfig, debug_dump_path=None):
        self.config = config
        self.debug_dump_path = debug_dump_path
        self.vocab = Vocabulary.from_corpus(
            config.corpus_path, max_size=config.encoder.vocab_size
        )
        self.docs = load_corpus(
            config.corpus_path, min_tokens=config.anchor_len + 1, vocab=self.vocab
        )
        if not self.docs:
            raise CorpusError(
                f"no documents with more than {config.anchor_len} tokens in "
                f"{config.corpus_path}"
            )
        root = np.random.SeedSequence(config.seed)
        (init_ss, shuffle_ss, anchor_ss, mask_ss, augment_ss,
         curric_ss, dropout_ss) = root.spawn(7)
        init_rng = np.random.default_rng(init_ss)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.anchor_rng = np.random.default_rng(anchor_ss)
        self.mask_rng = np.random.default_rng(mask_ss)
        self.augment_rng = np.random.default_rng(augment_ss)
        self.curriculum_rng = np.random.default_rng(curric_ss)
        self.dropout_rng = (
            np.random.default_rng(dropout_ss) if config.encoder.dropout > 0 else None
        )
        self.encoder = TransformerEncoder(config.encoder, rng=init_rng)
        self.head = ProjectionHead.create(config.encoder.hidden_dim, rng=init_rng)
        all_params = {f"enc.{n}": a for n, a in self.encoder.params.items()}
        all_params["proj.w1"] = self.head.w1
        all_params["proj.w2"] = self.head.w2
        self.optimizer = AdamW(
            all_params, lr=config.learning_rate, weight_decay=config.weight_decay
        )
        self.steps_per_epoch = math.ceil(len(self.docs) / config.batch_size)
        self.total_steps = self.steps_per_epoch * config.epochs

    def _level_for_step(self, step: int) -> AugmentationLevel:
        cfg = self.config
        if cfg.augmentation_level_override is not None:
            return AugmentationLevel(cfg.augmentation_level_override, override=True)
        return level_at(cfg.curriculum, step, self.total_steps, self.curriculum_rng)

    def train_step(self, docs_batch, step: int, total_steps: int,
                   dump_fh=None) -> LossTraceRow:
        cfg = self.config
        anchors = [sample_anchor(d, cfg.anchor_len, self.anchor_rng) for d in docs_batch]
        tokens = np.stack([a.tokens for a in anchors])
        level = self._level_for_step(step)
        hook_layer = sample_hook_layer(cfg.encoder, self.augment_rng)
        masked = [
            apply_mlm_mask(a, cfg.mask_prob, self.mask_rng, len(self.vocab))
            for a in anchors
        ]
        masked_tokens = np.stack([m.input_tokens for m in masked])
        pos_mask = np.zeros(tokens.shape, dtype=bool)
        targets_grid = np.zeros(tokens.shape, dtype=np.int64)
        for row, ms in enumerate(masked):
            pos_mask[row, ms.masked_positions] = True
            targets_grid[row, ms.masked_positions] = ms.target_tokens[ms.masked_positions]

        pooled_a, _, cache_a = self.encoder.forward(tokens, dropout_rng=self.dropout_rng)
        hook = AugmentHook(level.level, self.augment_rng)
        pooled_p, _, cache_p = self.encoder.forward(
            tokens, hook_layer=hook_layer, hook=hook, dropout_rng=self.dropout_rng
        )
        _, final_m, cache_m = self.encoder.forward(
            masked_tokens, dropout_rng=self.dropout_rng
        )
        mlm, d_final_m, mlm_head_grads = self.encoder._mlm_loss_grad(
            final_m, pos_mask, targets_grid
        )
        za = self.head(pooled_a)
        zp = self.head(pooled_p)
        z = np.empty((2 * len(docs_batch), za.shape[1]))
        z[0::2] = za
        z[1::2] = zp
        c_loss, dz = nt_xent_loss_and_grad(z, cfg.temperature)
        report = combined_loss(mlm, c_loss)

        de_a, dw1_a, dw2_a = project_backward(pooled_a, self.head, dz[0::2])
        de_p, dw1_p, dw2_p = project_backward(pooled_p, self.head, dz[1::2])
        enc_grads: dict[str, np.ndarray] = {}
        _merge_grads(enc_grads, self.encoder.backward(cache_a, d_pooled=de_a))
        _merge_grads(enc_grads, self.encoder.backward(cache_p, d_pooled=de_p, hook_vjp=hook.vjp))
        _merge_grads(enc_grads, self.encoder.backward(cache_m, d_final=d_final_m))
        _merge_grads(enc_grads, mlm_head_grads)
        grads = {f"enc.{n}": g for n, g in enc_grads.items()}
        grads["proj.w1"] = dw1_a + dw1_p
        grads["proj.w2"] = dw2_a + dw2_p

        clip_gradients(grads, cfg.max_grad_norm)
        lr_now = slanted_triangular_lr(step, total_steps, cfg.learning_rate, cfg.warmup_frac)
        self.optimizer.step(grads, lr_now)

        row = LossTraceRow(
            step=step,
            mlm_loss=float(mlm),
            contrastive_loss=float(c_loss),
            total_loss=report.total,
            augmentation_level=level.level,
            hook_layer=hook_layer,
            learning_rate_now=lr_now,
        )
        if dump_fh is not None:
            dump_fh.write(json.dumps({
                "step": step,
                "hook_layer": hook_layer,
                "level": level.level,
                "span_start": hook.span_starts.tolist(),
                "span_len": hook.span_lens.tolist(),
                "alpha": hook.alphas.tolist(),
                "delta": hook.deltas.tolist(),
                "anchor_offsets": [a.offset for a in anchors],
                "anchor_tokens": tokens.tolist(),
                "masked_input_tokens": masked_tokens.tolist(),
                "target_tokens": targets_grid.tolist(),
                "masked_positions": [ms.masked_positions.tolist() for ms in masked],
            }) + "\n")
        return row

    def run(self) -> dict[str, Path]:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            return self._run()
        # the per-step matrices are small; multithreaded BLAS only thrashes
        with threadpool_limits(limits=1):
            return self._run()

    def _run(self) -> dict[str, Path]:
        cfg = self.config
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_path = out_dir / "trace.csv"
        ckpt_path = out_dir / "checkpoint.bin"
        vocab_path = out_dir / "vocab.txt"
        dump_fh = None
        if self.debug_dump_path is not None:
            dump_fh = open(self.debug_dump_path, "w", encoding="utf-8")
        step = 0
        try:
            with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(TRACE_HEADER + "\n")
                for _ in range(cfg.epochs):
                    order = self.shuffle_rng.permutation(len(self.docs))
                    for start in range(0, len(order), cfg.batch_size):
                        chunk = order[start : start + cfg.batch_size]
                        batch = [self.docs[int(i)] for i in chunk]
                        try:
                            row = self.train_step(batch, step, self.total_steps, dump_fh)
                        except NumericalError:
                            self._dump_abort(out_dir, step)
                            raise
                        fh.write(row.as_csv() + "\n")
                        step += 1
        finally:
            if dump_fh is not None:
                dump_fh.close()
        save_checkpoint(self.encoder, ckpt_path)
        self.vocab.save(vocab_path)
        return {"trace": trace_path, "checkpoint": ckpt_path, "vocab": vocab_path}

    def _dump_abort(self, out_dir: Path, step: int) -> None:
        info = {
            "step": step,
            "total_steps": self.total_steps,
            "adamw_t": self.optimizer.t,
            "param_norms": {
                n: float(np.linalg.norm(a)) for n, a in self.optimizer.params.items()
            },
        }
        with open(out_dir / f"abort_step{step}.json", "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=2)
        logger.error("non-finite loss at step %d; diagnostics dumped", step)


def run_pretraining(config: TrainConfig, debug_dump_path=None) -> dict[str, Path]:
    """Train per config; writes trace.csv, checkpoint.bin, vocab.txt."""
    return Trainer(config, debug_dump_path=debug_dump_path).run()


def _read_trace_totals(trace_path) -> np.ndarray:
    with open(trace_path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return np.array([float(r["total_loss"]) for r in reader])


def compare_curricula(config: TrainConfig, modes, seeds, first_k: int = 300,
                      window: int = 50, output_dir=None) -> dict:
    """Run the loop per (mode, seed) and summarize the loss traces.

    Writes summary.csv (one row per run: mean total loss over the first
    `first_k` steps) and windows.csv (per-mode mean total loss over step
    windows, averaged across seeds).
    """
    modes = list(modes)
    seeds = list(seeds)
    if len(modes) < 2:
        raise ConfigError("compare needs at least 2 curriculum modes")
    if len(seeds) < 3:
        raise ConfigError("compare needs at least 3 seeds")
    for mode in modes:
        if mode not in VALID_MODES:
            raise ConfigError(f"unknown curriculum mode {mode!r}")
    base = Path(output_dir) if output_dir is not None else Path(config.output_dir) / "compare"
    base.mkdir(parents=True, exist_ok=True)
    summary = []
    traces: dict[str, list[np.ndarray]] = {m: [] for m in modes}
    for mode in modes:
        for seed in seeds:
            run_dir = base / f"{mode}_seed{seed}"
            cfg = dataclasses.replace(
                config,
                curriculum=CurriculumPolicy(mode=mode),
                seed=seed,
                output_dir=str(run_dir),
            )
            paths = run_pretraining(cfg)
            totals = _read_trace_totals(paths["trace"])
            traces[mode].append(totals)
            summary.append({
                "mode": mode,
                "seed": seed,
                "mean_total_loss_first_k": float(totals[: first_k].mean()),
            })
            logger.info(
                "compare run mode=%s seed=%d mean_first_%d=%.6f",
                mode, seed, first_k, summary[-1]["mean_total_loss_first_k"],
            )
    summary_path = base / "summary.csv"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode,seed,mean_total_loss_first_k\n")
        for row in summary:
            fh.write(
                f"{row['mode']},{row['seed']},{row['mean_total_loss_first_k']!r}\n"
            )
    windows_path = base / "windows.csv"
    with open(windows_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode,window_start,window_end,mean_total_loss\n")
        for mode in modes:
            stacked = np.stack(traces[mode])
            n = stacked.shape[1]
            for ws in range(0, n, window):
                we = min(ws + window, n)
                mean = float(stacked[:, ws:we].mean())
                fh.write(f"{mode},{ws},{we},{mean!r}\n")
    return {"summary": summary, "summary_path": summary_path, "windows_path": windows_path}
