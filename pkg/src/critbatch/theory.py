"""Closed-form iteration and SFO complexity of mini-batch SGD.

For a (problem, schedule) pair the expected squared gradient norm after ``K``
steps with batch size ``b`` is bounded by a bias term shrinking in ``K`` and a
variance term shrinking in ``b``.  Setting the bound equal to ``eps^2`` and
solving for ``K`` gives the iteration count ``K(b)``; the SFO complexity is
``N(b) = K(b) * b`` and the critical batch size minimises it.

All ``b``-functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .problems import OracleMode, ProblemSpec
from .schedules import CONSTANT, DECAY1, DECAY2, DECAY3, ScheduleSpec, validate_schedule


class DomainError(ValueError):
    """``b`` (or ``eps``) lies outside the domain of ``K``/``N``.

    ``pole`` is the exclusive lower bound on ``b`` when one exists.
    """

    def __init__(self, message: str, pole: float | None = None):
        super().__init__(message)
        self.pole = pole


@dataclass(frozen=True)
class TheoryConstants:
    C1: float
    C2: float
    D1: float
    D2: float
    delta: float = float("nan")
    L: float = float("nan")
    sigma2: float = float("nan")
    alpha: float = float("nan")
    T: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def constants_from(delta: float, L: float, sigma2: float, alpha: float, T: int = 1) -> TheoryConstants:
    if not 0 < alpha < 2.0 / L:
        raise ValueError(f"alpha={alpha:g} must lie in (0, 2/L) = (0, {2.0 / L:g})")
    denom = 2.0 - L * alpha
    C1 = 2.0 * delta / (denom * alpha)
    C2 = L * sigma2 * alpha / denom
    D1 = 2.0 * delta / (alpha * denom)
    D2 = T * alpha**2 * L * sigma2 / denom
    return TheoryConstants(C1, C2, D1, D2, delta, L, sigma2, alpha, T)


def constants(problem: ProblemSpec, schedule: ScheduleSpec,
              oracle: OracleMode | None = None) -> TheoryConstants:
    """Bound constants using ``f(theta0) - f*`` as the initial gap.

    The variance is the oracle's (additive-noise overrides) or the problem's.
    """
    violation = validate_schedule(schedule, problem.L)
    if violation is not None:
        raise ValueError(str(violation))
    sigma2 = oracle.variance(problem) if oracle is not None else problem.sigma2
    return constants_from(problem.delta0, problem.L, sigma2, schedule.alpha, schedule.T)


def _a(schedule: ScheduleSpec) -> float:
    return schedule.a_float


def gradient_bound(c: TheoryConstants, schedule: ScheduleSpec, K, b):
    """Upper bound on ``min_{k<K} E|grad f(theta_k)|^2``."""
    K = np.asarray(K, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    regime, a = schedule.regime, _a(schedule)
    if regime == CONSTANT:
        out = c.C1 / K + c.C2 / b
    elif regime == DECAY1:
        out = c.D1 / K**a + c.D2 / ((1 - 2 * a) * K**a * b)
    elif regime == DECAY2:
        out = c.D1 / np.sqrt(K) + (1 / np.sqrt(K) + 1) * c.D2 / b
    else:
        out = c.D1 / K ** (1 - a) + 2 * a * c.D2 / ((2 * a - 1) * K ** (1 - a) * b)
    return out[()]


def domain_pole(c: TheoryConstants, schedule: ScheduleSpec, eps: float) -> float:
    """Exclusive lower bound on ``b`` for ``K(b)`` (0 when ``b > 0`` suffices)."""
    if schedule.regime == CONSTANT:
        return c.C2 / eps**2
    if schedule.regime == DECAY2:
        return c.D2 / eps**2
    return 0.0


def _check_domain(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b) -> np.ndarray:
    if not eps > 0:
        raise DomainError(f"epsilon must be positive, got {eps}")
    b = np.asarray(b, dtype=np.float64)
    if schedule.regime == DECAY2 and not c.D1 > eps**2:
        raise DomainError(f"decay2 requires D1 > eps^2 (D1={c.D1:g}, eps^2={eps**2:g})")
    pole = domain_pole(c, schedule, eps)
    if np.any(~(b > pole)):
        name = {CONSTANT: "C2/eps^2", DECAY2: "D2/eps^2"}.get(schedule.regime, "0")
        raise DomainError(f"b must exceed {name} = {pole!r}", pole)
    return b


def _power_parts(c: TheoryConstants, schedule: ScheduleSpec):
    """``(p, coef)`` with ``K = ((D1 + coef/b) / eps^2) ** p`` for decay1/decay3."""
    a = _a(schedule)
    if schedule.regime == DECAY1:
        return 1.0 / a, c.D2 / (1 - 2 * a)
    return 1.0 / (1 - a), 2 * a * c.D2 / (2 * a - 1)


def iterations_needed(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b):
    """Real-valued ``K(b)``; callers take the ceiling for an iteration count."""
    b = _check_domain(c, schedule, eps, b)
    e2 = eps**2
    regime = schedule.regime
    if regime == CONSTANT:
        out = c.C1 * b / (e2 * b - c.C2)
    elif regime == DECAY2:
        out = ((c.D1 * b + c.D2) / (e2 * b - c.D2)) ** 2
    else:
        p, coef = _power_parts(c, schedule)
        out = ((c.D1 + coef / b) / e2) ** p
    return out[()]


def log_iterations_needed(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b):
    """``log K(b)``, finite where ``K`` itself overflows (decay exponents near 1)."""
    b = _check_domain(c, schedule, eps, b)
    e2 = eps**2
    regime = schedule.regime
    if regime == CONSTANT:
        out = np.log(c.C1 * b / (e2 * b - c.C2))
    elif regime == DECAY2:
        out = 2 * np.log((c.D1 * b + c.D2) / (e2 * b - c.D2))
    else:
        p, coef = _power_parts(c, schedule)
        out = p * np.log((c.D1 + coef / b) / e2)
    return out[()]


def sfo_needed(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b):
    """``N(b) = K(b) * b``."""
    return (iterations_needed(c, schedule, eps, b) * np.asarray(b, dtype=np.float64))[()]


def k_derivatives(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b):
    """``(K'(b), K''(b))``."""
    b = _check_domain(c, schedule, eps, b)
    e2 = eps**2
    regime = schedule.regime
    if regime == CONSTANT:
        u = e2 * b - c.C2
        d1 = -c.C1 * c.C2 / u**2
        d2 = 2 * e2 * c.C1 * c.C2 / u**3
    elif regime == DECAY2:
        u = e2 * b - c.D2
        w = c.D1 * b + c.D2
        g = c.D2 * (c.D1 + e2)
        d1 = -2 * g * w / u**3
        d2 = 2 * g * (c.D1 * c.D2 + 2 * c.D1 * e2 * b + 3 * c.D2 * e2) / u**4
    else:
        p, coef = _power_parts(c, schedule)
        v = (c.D1 + coef / b) / e2
        v1 = -coef / (e2 * b**2)
        v2 = 2 * coef / (e2 * b**3)
        d1 = p * v ** (p - 1) * v1
        d2 = p * (p - 1) * v ** (p - 2) * v1**2 + p * v ** (p - 1) * v2
    return d1[()], d2[()]


def n_derivatives(c: TheoryConstants, schedule: ScheduleSpec, eps: float, b):
    """``(N'(b), N''(b))`` in factored form (no cancellation near ``b*``)."""
    b = _check_domain(c, schedule, eps, b)
    e2 = eps**2
    regime = schedule.regime
    if regime == CONSTANT:
        u = e2 * b - c.C2
        d1 = c.C1 * b * (e2 * b - 2 * c.C2) / u**2
        d2 = 2 * c.C1 * c.C2**2 / u**3
    elif regime == DECAY2:
        u = e2 * b - c.D2
        w = c.D1 * b + c.D2
        q = c.D1 * e2 * b**2 - (3 * c.D1 + e2) * c.D2 * b - c.D2**2
        d1 = w * q / u**3
        d2 = 2 * c.D2**2 * (c.D1 + e2) * (3 * c.D1 * b + 2 * c.D2 + e2 * b) / u**4
    else:
        p, coef = _power_parts(c, schedule)
        v = (c.D1 + coef / b) / e2
        d1 = v ** (p - 1) * (c.D1 - (p - 1) * coef / b) / e2
        d2 = p * (p - 1) * v ** (p - 2) * coef**2 / (e2**2 * b**3)
    return d1[()], d2[()]


@dataclass(frozen=True)
class CriticalBatch:
    """Critical batch size for one regime.

    ``flavor`` is ``stationary-point`` (``N'(b*) = 0``),
    ``boundary-approximation`` (decay2: ``b* = D2/eps^2``, the domain pole) or
    ``none`` (zero variance: ``N`` is increasing, no interior optimum).
    For decay2, ``sfo_minimizer`` holds the actual zero of ``N'``.
    """

    regime: str
    b_star: float | None
    flavor: str
    sfo_minimizer: float | None = None
    note: str = ""


def decay2_sfo_minimizer(c: TheoryConstants, eps: float) -> float:
    """Positive root of ``N'`` for decay2, which lies above ``D2/eps^2``."""
    e2 = eps**2
    s = 3 * c.D1 + e2
    return c.D2 * (s + math.sqrt(s * s + 4 * c.D1 * e2)) / (2 * c.D1 * e2)


def critical_batch(c: TheoryConstants, schedule: ScheduleSpec, eps: float) -> CriticalBatch:
    regime, a = schedule.regime, _a(schedule)
    variance = c.C2 if regime == CONSTANT else c.D2
    if not variance > 0:
        return CriticalBatch(regime, None, "none",
                             note="zero variance: N(b) is increasing, the smallest batch is optimal")
    if regime == CONSTANT:
        return CriticalBatch(regime, 2 * c.C2 / eps**2, "stationary-point")
    if regime == DECAY1:
        return CriticalBatch(regime, (1 - a) * c.D2 / (a * (1 - 2 * a) * c.D1), "stationary-point")
    if regime == DECAY3:
        return CriticalBatch(regime, 2 * a**2 * c.D2 / ((1 - a) * (2 * a - 1) * c.D1),
                             "stationary-point")
    return CriticalBatch(regime, c.D2 / eps**2, "boundary-approximation",
                         sfo_minimizer=decay2_sfo_minimizer(c, eps),
                         note="D2/eps^2 is the domain pole; N' vanishes at sfo_minimizer")


def complexity_batch(c: TheoryConstants, schedule: ScheduleSpec, eps: float) -> float:
    """Batch size used for the complexity scaling; decay2 uses ``(D2 + 1)/eps^2``."""
    if schedule.regime == DECAY2:
        return (c.D2 + 1) / eps**2
    cb = critical_batch(c, schedule, eps)
    if cb.b_star is None:
        raise DomainError("no critical batch size without gradient noise")
    return cb.b_star


@dataclass(frozen=True)
class ExponentFit:
    regime: str
    k_slope: float
    n_slope: float
    expected_k: float
    expected_n: float
    epsilons: tuple
    batches: tuple
    K: tuple
    N: tuple


def expected_exponents(schedule: ScheduleSpec) -> tuple[float, float]:
    a = _a(schedule)
    return {
        CONSTANT: (2.0, 4.0),
        DECAY1: (2 / a if a else 0.0, 2 / a if a else 0.0),
        DECAY2: (4.0, 6.0),
        DECAY3: (2 / (1 - a), 2 / (1 - a)),
    }[schedule.regime]


def complexity_exponents(c: TheoryConstants, schedule: ScheduleSpec, epsilon_grid) -> ExponentFit:
    """Least-squares slopes of ``log K(b*(eps))`` and ``log N(b*(eps))`` on ``log(1/eps)``."""
    eps = np.asarray(sorted(epsilon_grid, reverse=True), dtype=np.float64)
    if eps.size < 3 or len(set(eps.tolist())) < 3:
        raise ValueError("epsilon grid needs at least 3 distinct values")
    bs = np.array([complexity_batch(c, schedule, e) for e in eps])
    logK = np.array([log_iterations_needed(c, schedule, e, bb) for e, bb in zip(eps, bs)])
    Ks = np.exp(logK)
    Ns = Ks * bs
    x = np.log(1 / eps)
    k_slope = float(np.polyfit(x, logK, 1)[0])
    n_slope = float(np.polyfit(x, logK + np.log(bs), 1)[0])
    ek, en = expected_exponents(schedule)
    return ExponentFit(schedule.regime, k_slope, n_slope, ek, en,
                       tuple(eps.tolist()), tuple(bs.tolist()), tuple(Ks.tolist()), tuple(Ns.tolist()))
