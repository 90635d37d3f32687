"""Mini-batch SGD with full-gradient instrumentation.

Trials of one configuration advance in lockstep as rows of an ``(S, d)``
array.  Each trial draws its randomness from the counter-based stream
``(seed, trial, k)`` (see :mod:`critbatch.rng`), so a trial's trajectory is
the same whether it runs alone or alongside others.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .problems import OracleMode, ProblemSpec, batch_gradient, value_grad_batch
from .schedules import ScheduleSpec, rates, validate_schedule


@dataclass(eq=False)
class RunRecord:
    """Trace of one SGD trajectory.

    Entry ``k`` of each array describes ``theta_k``: squared full-gradient
    norm, objective value, the rate used for the step out of it, and the
    SFO count ``b * (k + 1)`` once its mini-batch gradient is drawn.  A
    diverged run is truncated at the first nonfinite iterate
    (``diverged_at``).
    """

    seed: int
    trial: int
    schedule: ScheduleSpec
    b: int
    grad_norm2: np.ndarray
    loss: np.ndarray
    lr: np.ndarray
    sfo: np.ndarray
    diverged_at: int | None = None
    theta_final: np.ndarray | None = None

    def __len__(self):
        return len(self.grad_norm2)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def steps(self):
        return list(zip(range(len(self)), self.grad_norm2.tolist(), self.loss.tolist(),
                        self.lr.tolist(), self.sfo.tolist()))


@dataclass
class Lockstep:
    """Raw output of :func:`run_lockstep`; rows are trials."""

    trials: np.ndarray
    grad_norm2: np.ndarray
    loss: np.ndarray
    lr: np.ndarray
    diverged_at: np.ndarray  # -1 when finite throughout
    thetas: np.ndarray

    @property
    def length(self) -> int:
        return self.grad_norm2.shape[1]


def _check_run(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int, K_max: int):
    violation = validate_schedule(schedule, problem.L)
    if violation is not None:
        raise ValueError(str(violation))
    oracle.check_batch(problem, b)
    if K_max < 1:
        raise ValueError("K_max must be >= 1")


def run_lockstep(
    problem: ProblemSpec,
    oracle: OracleMode,
    schedule: ScheduleSpec,
    b: int,
    K_max: int,
    seed: int,
    trials: Sequence[int],
    until: Callable[[int, np.ndarray], bool] | None = None,
) -> Lockstep:
    """Run every trial for up to ``K_max`` steps.

    ``until(k, column)`` is called after instrumenting ``theta_k`` with the
    squared gradient norms of all trials (``inf`` for diverged ones); a true
    return ends the run after ``k + 1`` entries.
    """
    _check_run(problem, oracle, schedule, b, K_max)
    trials = np.asarray(trials, dtype=np.uint64)
    S = len(trials)
    thetas = np.tile(problem.theta0, (S, 1))
    lr = rates(schedule, K_max)
    gn2 = np.empty((S, K_max))
    loss = np.empty((S, K_max))
    diverged_at = np.full(S, -1, dtype=np.int64)
    length = K_max
    with np.errstate(all="ignore"):
        for k in range(K_max):
            vals, grads = value_grad_batch(problem, thetas)
            norms = np.sum(grads * grads, axis=1)
            bad = ~(np.isfinite(vals) & np.isfinite(norms)) & (diverged_at < 0)
            diverged_at[bad] = k
            dead = diverged_at >= 0
            norms[dead] = np.inf
            vals = np.where(dead, np.inf, vals)
            gn2[:, k] = norms
            loss[:, k] = vals
            keys = _rng.stream_keys(seed, trials, k)
            thetas = thetas - lr[k] * batch_gradient(problem, oracle, thetas, b, keys, grads)
            if until is not None and until(k, norms):
                length = k + 1
                break
        bad = ~np.all(np.isfinite(thetas), axis=1) & (diverged_at < 0)
        diverged_at[bad] = length
    return Lockstep(trials, gn2[:, :length], loss[:, :length], lr[:length], diverged_at, thetas)


def _record(out: Lockstep, row: int, seed: int, schedule: ScheduleSpec, b: int,
            keep_theta: bool) -> RunRecord:
    stop = out.diverged_at[row] if out.diverged_at[row] >= 0 else out.length
    stop = min(stop, out.length)
    return RunRecord(
        seed=seed,
        trial=int(out.trials[row]),
        schedule=schedule,
        b=b,
        grad_norm2=out.grad_norm2[row, :stop].copy(),
        loss=out.loss[row, :stop].copy(),
        lr=out.lr[:stop].copy(),
        sfo=b * np.arange(1, stop + 1, dtype=np.int64),
        diverged_at=int(out.diverged_at[row]) if out.diverged_at[row] >= 0 else None,
        theta_final=out.thetas[row].copy() if keep_theta else None,
    )


def run_sgd(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int, K_max: int,
            seed: int, trial: int = 0, keep_theta: bool = False) -> RunRecord:
    """``theta_{k+1} = theta_k - alpha_k * grad f_{B_k}(theta_k)`` for ``k < K_max``."""
    out = run_lockstep(problem, oracle, schedule, b, K_max, seed, [trial])
    return _record(out, 0, seed, schedule, b, keep_theta)


def run_trials(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int, K_max: int,
               seed: int, trials: Sequence[int], keep_theta: bool = False) -> list[RunRecord]:
    out = run_lockstep(problem, oracle, schedule, b, K_max, seed, trials)
    return [_record(out, i, seed, schedule, b, keep_theta) for i in range(len(trials))]


@dataclass
class AggregateCurve:
    mean: np.ndarray
    se: np.ndarray
    running_min: np.ndarray
    n_trials: int
    divergences: int = 0

    def __len__(self):
        return len(self.mean)


def aggregate_traces(traces: np.ndarray, divergences: int = 0) -> AggregateCurve:
    """Curve from an ``(S, K)`` array of squared gradient norms."""
    traces = np.asarray(traces, dtype=np.float64)
    S = traces.shape[0]
    with np.errstate(invalid="ignore"):
        mean = traces.mean(axis=0)
        if S > 1:
            se = traces.std(axis=0, ddof=1) / np.sqrt(S)
        else:
            se = np.zeros(traces.shape[1])
    se = np.where(np.isfinite(mean), se, np.inf)
    return AggregateCurve(mean, se, np.minimum.accumulate(mean), S, divergences)


def aggregate_min_curve(records: Sequence[RunRecord]) -> AggregateCurve:
    """Cross-trial mean of ``|grad f(theta_k)|^2`` and its running minimum.

    Diverged records count as ``+inf`` from their divergence step on.
    """
    if not records:
        raise ValueError("no records to aggregate")
    first = records[0]
    for r in records[1:]:
        if r.b != first.b or r.schedule != first.schedule:
            raise ValueError("records come from different configurations")
    lengths = {len(r) for r in records if not r.diverged}
    if len(lengths) > 1:
        raise ValueError(f"records have unequal lengths {sorted(lengths)}")
    K = lengths.pop() if lengths else max(len(r) for r in records)
    traces = np.full((len(records), K), np.inf)
    for i, r in enumerate(records):
        m = min(len(r), K)
        traces[i, :m] = r.grad_norm2[:m]
    return aggregate_traces(traces, sum(r.diverged for r in records))


def iterations_to_epsilon(curve: AggregateCurve, epsilon: float) -> int | None:
    """Smallest ``K`` with ``min_{k<K}`` of the mean curve ``<= eps^2``; ``None`` if never."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    hit = np.flatnonzero(curve.running_min <= epsilon**2)
    return int(hit[0]) + 1 if hit.size else None
