"""Signed linear weight schedules and their zero crossing."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class ScheduleMode(enum.Enum):
    COUPLED = "coupled"
    SELECTIVE = "selective"


class Phase(enum.Enum):
    ATTRACTIVE = "attractive"
    TRANSITION = "transition"
    REPULSIVE = "repulsive"


@dataclass(frozen=True)
class ScheduleSpec:
    """Linear ramp from ``initial`` at t=0 to ``initial * min_ratio`` at t=total_epochs."""

    initial: float
    total_epochs: float
    min_ratio: float
    mode: ScheduleMode = ScheduleMode.COUPLED

    def __post_init__(self):
        if not (math.isfinite(self.total_epochs) and self.total_epochs > 0):
            raise ValueError(f"total_epochs must be positive, got {self.total_epochs}")
        if not math.isfinite(self.initial):
            raise ValueError("initial weight must be finite")
        if not math.isfinite(self.min_ratio):
            raise ValueError("min_ratio must be finite")


def weight_at(spec: ScheduleSpec, t: float) -> float:
    if not 0.0 <= t <= spec.total_epochs:
        raise ValueError(f"t={t} outside [0, {spec.total_epochs}]")
    if t == spec.total_epochs:
        return spec.initial * spec.min_ratio
    return spec.initial * (1.0 - (t / spec.total_epochs) * (1.0 - spec.min_ratio))


def zero_crossing(spec: ScheduleSpec) -> float | None:
    """Epoch at which the weight changes sign, or None if it never does."""
    if spec.initial == 0 or spec.min_ratio >= 0:
        return None
    return spec.total_epochs / (1.0 - spec.min_ratio)


def default_transition_delta(spec: ScheduleSpec) -> float:
    return 0.02 * abs(spec.initial)


def phase_of_weight(weight: float, delta: float) -> Phase:
    if delta < 0:
        raise ValueError("transition delta must be non-negative")
    if weight > delta:
        return Phase.ATTRACTIVE
    if weight < -delta:
        return Phase.REPULSIVE
    return Phase.TRANSITION


def phase_at(spec: ScheduleSpec, t: float, transition_delta: float | None = None) -> Phase:
    if transition_delta is None:
        transition_delta = default_transition_delta(spec)
    if transition_delta < 0:
        raise ValueError("transition delta must be non-negative")
    return phase_of_weight(weight_at(spec, t), transition_delta)
