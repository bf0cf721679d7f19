"""Time-indexed schedules for temperature, radii, momentum, and jitter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Schedule", "flat", "cosine", "inverse_sqrt", "linear", "sample_jitter"]

SCHEDULE_KINDS = ("flat", "cosine", "inverse_sqrt", "linear")


@dataclass(frozen=True)
class Schedule:
    """A deterministic scalar schedule evaluated at integer steps.

    Kinds
    -----
    flat
        value(t) = start.
    inverse_sqrt
        value(t) = start / sqrt(t + 1).
    cosine
        Half-period cosine from start at t=0 to target at t=horizon,
        clamped at target beyond the horizon.
    linear
        Affine interpolation from start to target over the horizon,
        clamped at target beyond it.
    """

    kind: str
    start: float
    target: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind in ("cosine", "linear") and self.horizon < 1:
            raise ValueError("cosine/linear schedules need horizon >= 1")

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError(f"schedule time must be >= 0, got {t}")
        if self.kind == "flat":
            return self.start
        if self.kind == "inverse_sqrt":
            return self.start / np.sqrt(t + 1.0)
        frac = min(t, self.horizon) / self.horizon
        if self.kind == "cosine":
            return self.target + (self.start - self.target) * (
                1.0 + np.cos(np.pi * frac)
            ) / 2.0
        return self.start + (self.target - self.start) * frac


def flat(value: float) -> Schedule:
    return Schedule("flat", start=value)


def cosine(start: float, target: float, horizon: int) -> Schedule:
    return Schedule("cosine", start=start, target=target, horizon=horizon)


def inverse_sqrt(start: float) -> Schedule:
    return Schedule("inverse_sqrt", start=start)


def linear(start: float, target: float, horizon: int) -> Schedule:
    return Schedule("linear", start=start, target=target, horizon=horizon)


def sample_jitter(eta_max: float, rng: np.random.Generator) -> float:
    """Uniform radius jitter on [-eta_max, +eta_max]; zero stays exactly zero."""
    if not 0.0 <= eta_max < 1.0:
        raise ValueError(f"eta_max must lie in [0, 1), got {eta_max}")
    if eta_max == 0.0:
        return 0.0
    return float(rng.uniform(-eta_max, eta_max))
