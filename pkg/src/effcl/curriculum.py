"""Curriculum schedules mapping the global training step to a noise level.

Three policies:

* ``discrete``   - ten stages of equal width; the level steps through the
                   grid 0.01, 0.02, ..., 0.10
* ``continuous`` - linear ramp from 0.01 to 0.10 over all steps
* ``none``       - an independent uniform draw from the same ten-value
                   grid at every step

Levels are computed as convex combinations so both endpoints are exact.
``discrete`` and ``none`` share the identical value grid by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentationLevel
from .errors import ConfigError

VALID_MODES = ("discrete", "continuous", "none")


@dataclass(frozen=True)
class CurriculumPolicy:
    mode: str
    min_level: float = 0.01
    max_level: float = 0.1
    num_stages: int = 10

    def __post_init__(self):
        if self.mode not in VALID_MODES:
            raise ConfigError(f"curriculum mode must be one of {VALID_MODES}, got {self.mode!r}")
        if not self.min_level < self.max_level:
            raise ConfigError(
                f"min_level {self.min_level} must be below max_level {self.max_level}"
            )
        if self.num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {self.num_stages}")


def level_menu(policy: CurriculumPolicy) -> np.ndarray:
    """The num_stages-point level grid shared by discrete and none modes."""
    if policy.num_stages == 1:
        return np.array([policy.min_level])
    t = np.arange(policy.num_stages) / (policy.num_stages - 1)
    return (1.0 - t) * policy.min_level + t * policy.max_level


def level_at(policy: CurriculumPolicy, step: int, total_steps: int,
             rng: np.random.Generator | None = None) -> AugmentationLevel:
    """Noise level for one training step.

    ``discrete`` and ``continuous`` ignore the rng entirely (and consume
    no draws); ``none`` requires it.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if policy.mode == "discrete":
        if total_steps < policy.num_stages:
            raise ValueError(
                f"discrete curriculum needs total_steps >= {policy.num_stages}, got {total_steps}"
            )
        stage = step * policy.num_stages // total_steps
        level = float(level_menu(policy)[stage])
    elif policy.mode == "continuous":
        t = step / (total_steps - 1) if total_steps > 1 else 0.0
        level = float((1.0 - t) * policy.min_level + t * policy.max_level)
    else:
        if rng is None:
            raise ValueError("mode 'none' requires an rng")
        menu = level_menu(policy)
        level = float(menu[rng.integers(policy.num_stages)])
    return AugmentationLevel(level=level, override=_needs_override(policy))


def _needs_override(policy: CurriculumPolicy) -> bool:
    from .augment import CURRICULUM_LEVEL_MAX, CURRICULUM_LEVEL_MIN

    return (
        policy.min_level < CURRICULUM_LEVEL_MIN - 1e-12
        or policy.max_level > CURRICULUM_LEVEL_MAX + 1e-12
    )
