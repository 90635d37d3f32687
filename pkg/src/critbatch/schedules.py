"""Learning-rate rules: constant, and step decay ``alpha / (floor(k/T) + 1)^a``.

The decay exponent is stored as a :class:`fractions.Fraction` so the three
decay regimes (``a < 1/2``, ``a = 1/2``, ``a > 1/2``) are decided exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

CONSTANT = "constant"
DECAY1 = "decay1"
DECAY2 = "decay2"
DECAY3 = "decay3"
REGIMES = (CONSTANT, DECAY1, DECAY2, DECAY3)

HALF = Fraction(1, 2)


class ScheduleError(ValueError):
    pass


def as_fraction(a) -> Fraction:
    """Exact exponent from a Fraction, int, ``(num, den)`` pair or ``"3/4"``.

    Floats are converted with a bounded denominator so ``0.5`` maps to 1/2.
    """
    if isinstance(a, Fraction):
        return a
    if isinstance(a, (tuple, list)):
        num, den = a
        return Fraction(int(num), int(den))
    if isinstance(a, float):
        return Fraction(a).limit_denominator(10**6)
    return Fraction(a)


@dataclass(frozen=True)
class ScheduleSpec:
    variant: str
    alpha: float
    a: Fraction | None = None
    T: int = 1

    def __post_init__(self):
        if self.variant not in ("constant", "decay"):
            raise ScheduleError(f"unknown schedule variant {self.variant!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ScheduleError(f"alpha must be positive, got {self.alpha}")
        if self.variant == "decay":
            if self.a is None:
                raise ScheduleError("decay schedule needs an exponent a")
            object.__setattr__(self, "a", as_fraction(self.a))
            if not 0 < self.a < 1:
                raise ScheduleError(f"decay exponent must lie in (0, 1), got {self.a}")
            if int(self.T) != self.T or self.T < 1:
                raise ScheduleError(f"decay period T must be a positive integer, got {self.T}")
            object.__setattr__(self, "T", int(self.T))
        else:
            object.__setattr__(self, "a", None)
            object.__setattr__(self, "T", 1)

    @property
    def regime(self) -> str:
        if self.variant == "constant":
            return CONSTANT
        if self.a < HALF:
            return DECAY1
        if self.a == HALF:
            return DECAY2
        return DECAY3

    @property
    def a_float(self) -> float:
        return float(self.a) if self.a is not None else 0.0

    def label(self) -> str:
        if self.variant == "constant":
            return f"constant(alpha={self.alpha:g})"
        return f"{self.regime}(alpha={self.alpha:g},a={self.a},T={self.T})"

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "alpha": self.alpha}
        if self.variant == "decay":
            out.update(a=str(self.a), T=self.T)
        return out


def constant(alpha: float) -> ScheduleSpec:
    return ScheduleSpec("constant", alpha)


def decay(alpha: float, a, T: int = 1) -> ScheduleSpec:
    return ScheduleSpec("decay", alpha, as_fraction(a), T)


def _block_rate(schedule: ScheduleSpec, block: int) -> float:
    # scalar libm pow; numpy's vectorised power can differ in the last bit
    return schedule.alpha / float(block) ** schedule.a_float


def learning_rate(schedule: ScheduleSpec, k):
    """``alpha_k``; ``k`` may be an int or an integer array."""
    if schedule.variant == "constant":
        if np.ndim(k):
            return np.full(np.shape(k), schedule.alpha)
        return schedule.alpha
    if np.ndim(k):
        block = np.floor_divide(np.asarray(k), schedule.T) + 1
        table = {j: _block_rate(schedule, j) for j in np.unique(block).tolist()}
        return np.vectorize(table.__getitem__, otypes=[np.float64])(block)
    return _block_rate(schedule, k // schedule.T + 1)


def rates(schedule: ScheduleSpec, K: int) -> np.ndarray:
    if schedule.variant == "constant":
        return np.full(K, schedule.alpha)
    blocks = -(-K // schedule.T)
    per_block = np.array([_block_rate(schedule, j) for j in range(1, blocks + 1)])
    return np.repeat(per_block, schedule.T)[:K]


@dataclass(frozen=True)
class Violation:
    alpha: float
    L: float
    cap: float

    def __str__(self):
        return f"alpha={self.alpha:g} violates alpha < 2/L = {self.cap:g} (L={self.L:g})"


def validate_schedule(schedule: ScheduleSpec, L: float) -> Violation | None:
    """``None`` when ``alpha < 2/L``, otherwise a :class:`Violation`.

    Decay schedules are checked on their base rate, which caps every
    ``alpha_k``.
    """
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    cap = 2.0 / L
    if schedule.alpha < cap:
        return None
    return Violation(schedule.alpha, L, cap)


def sum_squared_rates(schedule: ScheduleSpec, K: int) -> float:
    """Exact ``sum_{k<K} alpha_k^2``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if schedule.variant == "constant":
        return K * schedule.alpha**2
    # Each block of T equal rates contributes T * rate^2; the last may be partial.
    full, rem = divmod(K, schedule.T)
    blocks = np.arange(1, full + 1, dtype=np.float64)
    total = schedule.T * float(np.sum(schedule.alpha**2 / blocks ** (2 * schedule.a_float)))
    if rem:
        total += rem * (schedule.alpha / (full + 1) ** schedule.a_float) ** 2
    return total


def cumulative_squared_rates(schedule: ScheduleSpec, K: int) -> np.ndarray:
    """``[sum_{k<1}, ..., sum_{k<K}]`` of ``alpha_k^2``."""
    return np.cumsum(rates(schedule, K) ** 2)


def sum_squared_rates_bound(schedule: ScheduleSpec, K) -> float:
    """Closed-form upper bound on ``sum_{k<K} alpha_k^2`` for decay schedules."""
    if schedule.variant != "decay":
        raise ScheduleError("the closed-form bound is only defined for decay schedules")
    a, T, alpha = schedule.a_float, schedule.T, schedule.alpha
    regime = schedule.regime
    if regime == DECAY1:
        return T * alpha**2 * np.power(K, 1 - 2 * a) / (1 - 2 * a)
    if regime == DECAY2:
        return T * alpha**2 * (1 + np.log(K))
    value = 2 * a * T * alpha**2 / (2 * a - 1)
    return np.full(np.shape(K), value) if np.ndim(K) else value
