"""Transfer a measured critical batch size between decay exponents.

Under decay1/decay3 the critical batch size is ``m(a) * D2/D1`` with a
multiplier that depends only on the exponent.  A measurement under one
exponent therefore pins ``D2/D1``, which predicts ``b*`` under another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .schedules import DECAY1, DECAY3, HALF, as_fraction


class EstimatorError(ValueError):
    pass


def multiplier(a, regime: str) -> float:
    """``b* / (D2/D1)`` for exponent ``a`` in ``regime``."""
    a = as_fraction(a)
    if regime == DECAY1:
        if not 0 < a < HALF:
            raise EstimatorError(f"decay1 needs a in (0, 1/2), got {a}")
        return float((1 - a) / (a * (1 - 2 * a)))
    if regime == DECAY3:
        if not HALF < a < 1:
            raise EstimatorError(f"decay3 needs a in (1/2, 1), got {a}")
        return float(2 * a * a / ((1 - a) * (2 * a - 1)))
    raise EstimatorError(
        f"regime {regime!r} has no exponent-only critical batch size; "
        "only decay1 and decay3 measurements can be transferred")


@dataclass(frozen=True)
class RatioEstimate:
    regime: str
    a: Fraction
    b_star: float
    ratio: float


def infer_ratio(a, regime: str, b_star_measured: float) -> RatioEstimate:
    if not b_star_measured > 0:
        raise EstimatorError("measured critical batch size must be positive")
    a = as_fraction(a)
    return RatioEstimate(regime, a, float(b_star_measured), b_star_measured / multiplier(a, regime))


@dataclass(frozen=True)
class Prediction:
    ratio: float
    regime: str
    a: Fraction
    b_star: float
    bracket: tuple[int, int]


def power_of_two_bracket(x: float) -> tuple[int, int]:
    """Nearest powers of two with ``lo <= x < hi`` (``lo == x`` when exact)."""
    e = math.floor(math.log2(x))
    lo = 2.0**e
    if lo * 2 <= x:
        e += 1
    return (2**e if e >= 0 else 2.0**e, 2 ** (e + 1) if e + 1 >= 0 else 2.0 ** (e + 1))


def predict_bstar(ratio, a_target, regime_target: str) -> Prediction:
    r = ratio.ratio if isinstance(ratio, RatioEstimate) else float(ratio)
    if not r > 0:
        raise EstimatorError("ratio D2/D1 must be positive")
    a = as_fraction(a_target)
    b = multiplier(a, regime_target) * r
    return Prediction(r, regime_target, a, b, power_of_two_bracket(b))


def transfer(source_a, source_regime: str, measured, target_a, target_regime: str) -> list[Prediction]:
    """One prediction per measured source value (measurements are never averaged)."""
    values = measured if isinstance(measured, (list, tuple)) else [measured]
    return [predict_bstar(infer_ratio(source_a, source_regime, m), target_a, target_regime)
            for m in values]


# Measured decay1 critical batch sizes (a = 1/4) per task, transferred to decay3 (a = 3/4).
REFERENCE_SOURCES = {
    ("ResNet-18", "CIFAR-10"): [16],
    ("ResNet-18", "CIFAR-100"): [16],
    ("Wide-ResNet-28", "CIFAR-10"): [4],
    ("Wide-ResNet-28", "CIFAR-100"): [8, 16],
}
REFERENCE_ESTIMATES = {
    ("ResNet-18", "CIFAR-10"): [24],
    ("ResNet-18", "CIFAR-100"): [24],
    ("Wide-ResNet-28", "CIFAR-10"): [6],
    ("Wide-ResNet-28", "CIFAR-100"): [12, 24],
}


def reference_transfers() -> dict[tuple[str, str], list[float]]:
    return {task: [p.b_star for p in transfer(Fraction(1, 4), DECAY1, src, Fraction(3, 4), DECAY3)]
            for task, src in REFERENCE_SOURCES.items()}
