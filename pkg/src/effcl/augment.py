"""Hidden-state augmentation: span cutoff followed by PCA jittering.

The pipeline zeroes one contiguous span of token vectors per sequence
(cutoff), computes the eigendecomposition of the token covariance of the
resulting batch, and then shifts every token vector of each sequence by
one random multiple of the principal components (jittering).  A single
scalar level drives both stages: it is the cutoff ratio and the jitter
standard deviation at the same time.

Eigenvectors follow a fixed convention so results are reproducible
across eigensolvers: descending eigenvalue order, and each eigenvector's
largest-magnitude component made positive (first such index on ties).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, HiddenStates
from .errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

CURRICULUM_LEVEL_MIN = 0.01
CURRICULUM_LEVEL_MAX = 0.1


@dataclass(frozen=True)
class AugmentationLevel:
    """Noise level used as both cutoff ratio and jitter sigma.

    Curriculum schedules stay within [0.01, 0.1]; anything wider must be
    constructed with ``override=True`` (e.g. level 0 to disable
    augmentation entirely).
    """

    level: float
    override: bool = False

    def __post_init__(self):
        if not np.isfinite(self.level):
            raise ValueError(f"augmentation level must be finite, got {self.level}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"augmentation level must be in [0, 1], got {self.level}")
        if not self.override and not (
            CURRICULUM_LEVEL_MIN - 1e-12 <= self.level <= CURRICULUM_LEVEL_MAX + 1e-12
        ):
            raise ValueError(
                f"level {self.level} outside curriculum range "
                f"[{CURRICULUM_LEVEL_MIN}, {CURRICULUM_LEVEL_MAX}] (use override=True)"
            )


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvectors (columns, orthonormal) and eigenvalues of a token
    covariance matrix, in descending eigenvalue order."""

    eigenvectors: np.ndarray  # (dim, dim)
    eigenvalues: np.ndarray  # (dim,), nonnegative

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class JitterDraw:
    """One jitter realization: the scalar draw and the resulting shift."""

    alpha: float
    delta: np.ndarray  # (dim,)


def _cutoff_spans(values, padding_mask, ratio, rng):
    """Zero one span per sequence; returns (new_values, starts, lengths).

    Span length is floor(ratio * real_length); a zero length leaves the
    sequence untouched and records start -1.  The start is drawn uniformly
    over positions where the whole span lies on non-padding tokens.
    """
    out = values.copy()
    b, l, _ = values.shape
    starts = np.full(b, -1, dtype=np.int64)
    lens = np.zeros(b, dtype=np.int64)
    for row in range(b):
        real = int(padding_mask[row].sum())
        span = int(ratio * real)
        if span == 0:
            continue
        window_ok = np.lib.stride_tricks.sliding_window_view(
            padding_mask[row], span
        ).all(axis=1)
        valid = np.flatnonzero(window_ok)
        if valid.size == 0:
            continue
        start = int(valid[rng.integers(valid.size)])
        out[row, start : start + span, :] = 0.0
        starts[row] = start
        lens[row] = span
    return out, starts, lens


def span_cutoff(states: HiddenStates, ratio: float, rng: np.random.Generator) -> HiddenStates:
    """Zero a contiguous span of token vectors in each sequence."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"cutoff ratio must be in [0, 1], got {ratio}")
    out, _, _ = _cutoff_spans(states.values, states.padding_mask, ratio, rng)
    return HiddenStates(values=out, padding_mask=states.padding_mask)


def compute_eigenbasis(states: HiddenStates) -> EigenBasis:
    """Eigendecomposition of the covariance of all non-padding token vectors."""
    vectors = states.values[states.padding_mask]
    m = vectors.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 non-padding token vectors, got {m}")
    centered = vectors - vectors.mean(axis=0)
    cov = (centered.T @ centered) / (m - 1)
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition failed on a {cov.shape[0]}x{cov.shape[0]} covariance "
            f"(batch of {m} vectors): {exc}"
        ) from exc
    # eigh returns ascending order
    eigvals = eigvals[::-1].copy()
    eigvecs = eigvecs[:, ::-1].copy()
    floor = -1e-10 * max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if eigvals.min(initial=0.0) < floor:
        raise NumericalError(
            f"covariance eigenvalue {eigvals.min()} below round-off tolerance"
        )
    np.maximum(eigvals, 0.0, out=eigvals)
    for j in range(eigvecs.shape[1]):
        lead = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[lead, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return EigenBasis(eigenvectors=eigvecs, eigenvalues=eigvals)


def draw_jitter(basis: EigenBasis, sigma: float, rng: np.random.Generator) -> JitterDraw:
    """Draw alpha ~ N(0, sigma^2) and build the shift P @ (alpha * lambda)."""
    alpha = float(rng.normal(0.0, sigma))
    delta = basis.eigenvectors @ (alpha * basis.eigenvalues)
    return JitterDraw(alpha=alpha, delta=delta)


def pca_jitter(states: HiddenStates, basis: EigenBasis, sigma: float,
               rng: np.random.Generator) -> HiddenStates:
    """Shift every non-padding token vector of each sequence by one draw.

    One alpha per sequence; the shift is constant within a sequence, so
    pairwise differences between its token vectors are preserved."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if basis.dim != states.dim:
        raise ValueError(
            f"basis dimension {basis.dim} does not match states dimension {states.dim}"
        )
    out = states.values.copy()
    for row in range(states.batch_size):
        draw = draw_jitter(basis, sigma, rng)
        out[row, states.padding_mask[row], :] += draw.delta
    return HiddenStates(values=out, padding_mask=states.padding_mask)


def sample_hook_layer(config: EncoderConfig, rng: np.random.Generator) -> int:
    """Uniform draw from the configured hook-layer choices."""
    choices = config.hook_layer_choices
    if not choices:
        raise ConfigError("hook_layer_choices is empty")
    return int(choices[rng.integers(len(choices))])


def augment(states: HiddenStates, level: AugmentationLevel | float,
            rng: np.random.Generator) -> HiddenStates:
    """Full pipeline: cutoff, then eigenbasis of the result, then jitter."""
    lv = level.level if isinstance(level, AugmentationLevel) else float(level)
    cut = span_cutoff(states, lv, rng)
    basis = compute_eigenbasis(cut)
    return pca_jitter(cut, basis, lv, rng)


class AugmentHook:
    """Trainer-facing hook: applies the pipeline and records the draws.

    The recorded spans, alphas, deltas and basis feed the debug dump and
    replay checks.  ``vjp`` maps gradients back across the hook: zeroed
    span positions block gradient, the jitter shift is treated as a
    constant (no gradient through the eigendecomposition).
    """

    def __init__(self, level: float, rng: np.random.Generator):
        self.level = float(level)
        self.rng = rng
        self.span_starts = None
        self.span_lens = None
        self.alphas = None
        self.deltas = None
        self.basis = None
        self._grad_keep = None

    def __call__(self, states: HiddenStates) -> HiddenStates:
        values, starts, lens = _cutoff_spans(
            states.values, states.padding_mask, self.level, self.rng
        )
        cut = HiddenStates(values=values, padding_mask=states.padding_mask)
        basis = compute_eigenbasis(cut)
        b = states.batch_size
        alphas = np.empty(b)
        deltas = np.empty((b, states.dim))
        out = values.copy()
        for row in range(b):
            draw = draw_jitter(basis, self.level, self.rng)
            alphas[row] = draw.alpha
            deltas[row] = draw.delta
            out[row, states.padding_mask[row], :] += draw.delta
        self.span_starts = starts
        self.span_lens = lens
        self.alphas = alphas
        self.deltas = deltas
        self.basis = basis
        keep = np.ones(states.values.shape[:2], dtype=bool)
        for row in range(b):
            if lens[row] > 0:
                keep[row, starts[row] : starts[row] + lens[row]] = False
        self._grad_keep = keep
        return HiddenStates(values=out, padding_mask=states.padding_mask)

    def vjp(self, grad: np.ndarray) -> np.ndarray:
        if self._grad_keep is None:
            raise RuntimeError("vjp called before the hook ran")
        return grad * self._grad_keep[:, :, None]


class FixedAugmentHook:
    """Augmentation with frozen spans and shifts.

    Applies the given cutoff spans and adds the given per-sequence deltas
    as constants.  Used by replay and finite-difference harnesses, where
    the random draws must not change between evaluations.
    """

    def __init__(self, span_starts, span_lens, deltas):
        self.span_starts = np.asarray(span_starts, dtype=np.int64)
        self.span_lens = np.asarray(span_lens, dtype=np.int64)
        self.deltas = np.asarray(deltas, dtype=np.float64)

    def __call__(self, states: HiddenStates) -> HiddenStates:
        out = states.values.copy()
        for row in range(states.batch_size):
            if self.span_lens[row] > 0:
                s = self.span_starts[row]
                out[row, s : s + self.span_lens[row], :] = 0.0
            out[row, states.padding_mask[row], :] += self.deltas[row]
        return HiddenStates(values=out, padding_mask=states.padding_mask)

    def vjp(self, grad: np.ndarray) -> np.ndarray:
        out = grad.copy()
        for row in range(grad.shape[0]):
            if self.span_lens[row] > 0:
                s = self.span_starts[row]
                out[row, s : s + self.span_lens[row], :] = 0.0
        return out
