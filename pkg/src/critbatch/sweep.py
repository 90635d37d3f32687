"""Batch-size sweeps and Monte-Carlo checks of the convergence bounds.

A sweep cell is one ``(schedule, b)`` pair.  Its ``S`` trials run in lockstep
and stop once the cross-trial mean of ``|grad f(theta_k)|^2`` first drops to
``eps^2``; that first crossing is the measured iteration count ``K`` and
``N = K * b``.  Cells share trial streams across ``b`` and schedules (common
random numbers), which keeps measured curves smooth in ``b``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import rankdata

from .engine import aggregate_traces, run_lockstep
from .problems import OracleMode, ProblemSpec
from .schedules import ScheduleSpec, cumulative_squared_rates, as_fraction
from . import theory

CSV_COLUMNS = ("schedule", "variant_a", "T", "alpha", "b", "epsilon", "seeds", "K_measured",
               "N_measured", "K_theory", "N_theory", "divergences", "se_K")
DEFAULT_GRID = tuple(2**i for i in range(11))


class SweepError(RuntimeError):
    pass


@dataclass
class SweepConfig:
    problem: ProblemSpec
    oracle: OracleMode
    schedules: Sequence[ScheduleSpec]
    epsilon: float
    batch_grid: Sequence[int] = DEFAULT_GRID
    seeds: int = 32
    K_max: int = 100_000
    master_seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        grid = list(self.batch_grid)
        if not grid or any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
            raise ValueError("batch grid must be nonempty and strictly increasing")
        for b in grid:
            self.oracle.check_batch(self.problem, b)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.seeds < 1 or self.K_max < 1:
            raise ValueError("seeds and K_max must be positive")

    def canonical(self) -> dict[str, Any]:
        """Everything that determines the result (parallelism excluded)."""
        return {
            "problem": self.problem.record(),
            "theta0": [float(x) for x in self.problem.theta0],
            "oracle": {"mode": self.oracle.kind, "sigma2": self.oracle.variance(self.problem)},
            "schedules": [s.to_dict() for s in self.schedules],
            "epsilon": float(self.epsilon),
            "batch_grid": [int(b) for b in self.batch_grid],
            "seeds": int(self.seeds),
            "K_max": int(self.K_max),
            "master_seed": int(self.master_seed),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


@dataclass
class CellResult:
    schedule: ScheduleSpec
    b: int
    epsilon: float
    seeds: int
    K: int | None
    N: int | None
    K_theory: float | None
    N_theory: float | None
    divergences: int = 0
    se_K: float | None = None

    @property
    def reached(self) -> bool:
        return self.K is not None


@dataclass
class SweepResult:
    config_hash: str
    master_seed: int
    cells: list[CellResult]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not any(c.reached for c in self.cells)

    def cells_for(self, schedule: ScheduleSpec) -> list[CellResult]:
        return [c for c in self.cells if c.schedule == schedule]


class _CrossingWatch:
    """Stops a lockstep run once the mean curve and every leave-one-out
    mean curve have crossed ``eps^2`` (or the extension budget is spent)."""

    def __init__(self, eps2: float, S: int, K_max: int):
        self.eps2, self.S, self.K_max = eps2, S, K_max
        self.K: int | None = None
        self.loo_K = np.full(S, -1, dtype=np.int64)

    def __call__(self, k: int, col: np.ndarray) -> bool:
        inf = ~np.isfinite(col)
        n_inf = int(inf.sum())
        finite_sum = float(col[~inf].sum())
        mean = math.inf if n_inf else finite_sum / self.S
        if self.K is None and mean <= self.eps2:
            self.K = k + 1
        if self.S > 1:
            with np.errstate(invalid="ignore"):
                loo = (finite_sum - np.where(inf, 0.0, col)) / (self.S - 1)
            loo[(n_inf - inf.astype(int)) > 0] = np.inf
            fresh = (self.loo_K < 0) & (loo <= self.eps2)
            self.loo_K[fresh] = k + 1
        if self.K is None:
            return False
        if self.S == 1 or np.all(self.loo_K > 0):
            return True
        return k + 1 >= min(self.K_max, 2 * self.K)

    def se(self) -> float | None:
        if self.K is None or self.S < 2 or np.any(self.loo_K < 0):
            return None
        ks = self.loo_K.astype(np.float64)
        return float(math.sqrt((self.S - 1) / self.S * np.sum((ks - ks.mean()) ** 2)))


def _theory_cell(c: theory.TheoryConstants | None, schedule: ScheduleSpec, eps: float, b: int):
    if c is None:
        return None, None
    try:
        k = math.ceil(float(theory.iterations_needed(c, schedule, eps, b)))
    except (theory.DomainError, OverflowError, ValueError):
        return None, None
    return float(k), float(k * b)


def _safe_constants(problem: ProblemSpec, schedule: ScheduleSpec, oracle: OracleMode):
    try:
        return theory.constants(problem, schedule, oracle)
    except ValueError:
        return None


def _run_cell(args) -> CellResult:
    problem, oracle, schedule, b, eps, S, K_max, seed = args
    watch = _CrossingWatch(eps**2, S, K_max)
    out = run_lockstep(problem, oracle, schedule, b, K_max, seed, range(S), until=watch)
    divergences = int(np.sum(out.diverged_at >= 0))
    c = _safe_constants(problem, schedule, oracle)
    kt, nt = _theory_cell(c, schedule, eps, b)
    K = watch.K
    return CellResult(schedule, b, float(eps), S, K, K * b if K is not None else None, kt, nt,
                      divergences, watch.se())


def _run_parallel(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def theory_metadata(problem: ProblemSpec, oracle: OracleMode, schedules, eps: float) -> dict:
    out = {}
    for s in schedules:
        c = _safe_constants(problem, s, oracle)
        if c is None:
            out[s.label()] = {"error": "alpha violates the 2/L cap"}
            continue
        cb = theory.critical_batch(c, s, eps)
        out[s.label()] = {
            "constants": c.to_dict(),
            "b_star": cb.b_star,
            "flavor": cb.flavor,
            "sfo_minimizer": cb.sfo_minimizer,
            "pole": theory.domain_pole(c, s, eps),
        }
    return out


def run_sweep(config: SweepConfig) -> SweepResult:
    tasks = [(config.problem, config.oracle, s, int(b), config.epsilon, config.seeds, config.K_max,
              config.master_seed)
             for s in config.schedules for b in config.batch_grid]
    cells = _run_parallel(_run_cell, tasks, config.jobs)
    meta = {
        "problem": config.problem.record(),
        "oracle": {"mode": config.oracle.kind, "sigma2": config.oracle.variance(config.problem)},
        "trials": f"0..{config.seeds - 1}",
        "theory": theory_metadata(config.problem, config.oracle, config.schedules, config.epsilon),
    }
    result = SweepResult(config.config_hash(), config.master_seed, cells, meta)
    if result.empty:
        result.metadata["warning"] = ("no cell reached eps^2 within K_max; raise K_max or epsilon")
    return result


def empirical_critical_batch(result: SweepResult | Sequence[CellResult],
                             schedule: ScheduleSpec | None = None) -> int:
    """Batch size with the smallest measured ``N`` (ties go to the smaller ``b``)."""
    cells = result.cells_for(schedule) if isinstance(result, SweepResult) else list(result)
    reached = [c for c in cells if c.reached]
    if not reached:
        raise SweepError("no reached cells for this schedule")
    return min(reached, key=lambda c: (c.N, c.b)).b


def k_rank_correlation(cells: Sequence[CellResult]) -> float:
    """Spearman correlation of measured ``K`` with ``b``.

    Not-reached cells are right-censored (``K > K_max``) and rank as ties
    above every reached cell.
    """
    cells = sorted(cells, key=lambda c: c.b)
    ks = np.array([c.K if c.reached else np.inf for c in cells], dtype=np.float64)
    rk = rankdata(ks)
    rb = rankdata([c.b for c in cells])
    if np.all(rk == rk[0]):
        return float("nan")
    return float(np.corrcoef(rb, rk)[0, 1])


# --------------------------------------------------------------------------
# Monte-Carlo validation


@dataclass
class BoundCheck:
    schedule: ScheduleSpec
    b: int
    K: int
    seeds: int
    empirical: float
    se: float
    bound: float
    passed: bool
    divergences: int = 0
    valid: bool = True
    kind: str = "bound"


@dataclass
class LemmaCheck:
    schedule: ScheduleSpec
    b: int
    K: int
    seeds: int
    lhs: float
    se: float
    rhs: float
    passed: bool
    divergences: int = 0
    valid: bool = True
    kind: str = "lemma1"


def _checks_for_cell(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int,
                     Ks: Sequence[int], S: int, seed: int, slack: float = 3.0):
    out = run_lockstep(problem, oracle, schedule, b, max(Ks), seed, range(S))
    divergences = int(np.sum(out.diverged_at >= 0))
    valid = divergences <= S // 2
    traces = out.grad_norm2
    curve = aggregate_traces(traces, divergences)
    sigma2 = oracle.variance(problem)
    c = theory.constants(problem, schedule, oracle)
    weights = out.lr * (1 - problem.L * out.lr / 2)
    cum_sq = cumulative_squared_rates(schedule, max(Ks))
    checks: list = []
    for K in Ks:
        j = int(np.argmin(curve.mean[:K]))
        emp, se = float(curve.mean[j]), float(curve.se[j])
        bound = float(theory.gradient_bound(c, schedule, K, b))
        checks.append(BoundCheck(schedule, b, K, S, emp, se, bound,
                                 valid and emp <= bound + slack * se, divergences, valid))
        with np.errstate(invalid="ignore"):
            per_trial = traces[:, :K] @ weights[:K]
        lhs = float(per_trial.mean())
        lse = float(per_trial.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
        if not math.isfinite(lhs):
            lse = math.inf
        rhs = problem.delta0 + problem.L * sigma2 / (2 * b) * float(cum_sq[K - 1])
        checks.append(LemmaCheck(schedule, b, K, S, lhs, lse, rhs,
                                 valid and lhs <= rhs + slack * lse, divergences, valid))
    return checks


def _checks_task(args):
    return _checks_for_cell(*args)


def validate_bound(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int, K: int,
                   S: int, seed: int = 0) -> BoundCheck:
    """Empirical ``min_{k<K}`` mean squared gradient norm against the bound (3-SE slack)."""
    return _checks_for_cell(problem, oracle, schedule, b, [K], S, seed)[0]


def validate_lemma1(problem: ProblemSpec, oracle: OracleMode, schedule: ScheduleSpec, b: int, K: int,
                    S: int, seed: int = 0) -> LemmaCheck:
    """Weighted sum of mean squared gradient norms against the telescoped descent budget."""
    return _checks_for_cell(problem, oracle, schedule, b, [K], S, seed)[1]


def validate_suite(problem: ProblemSpec, oracle: OracleMode, schedules: Sequence[ScheduleSpec],
                   batch_sizes: Sequence[int], Ks: Sequence[int], S: int, seed: int = 0,
                   jobs: int = 1) -> list:
    """Bound and lemma checks for every schedule, batch size and horizon.

    Each ``(schedule, b)`` runs once to ``max(Ks)``; shorter horizons are
    prefixes of the same trajectories.
    """
    tasks = [(problem, oracle, s, int(b), list(Ks), S, seed) for s in schedules for b in batch_sizes]
    return [chk for cell in _run_parallel(_checks_task, tasks, jobs) for chk in cell]


# --------------------------------------------------------------------------
# export / import


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _cell_row(c: CellResult) -> list[str]:
    s = c.schedule
    return [s.regime, "" if s.a is None else str(s.a), str(s.T), repr(float(s.alpha)), str(c.b),
            repr(c.epsilon), str(c.seeds), _fmt(c.K), _fmt(c.N), _fmt(c.K_theory),
            _fmt(c.N_theory), str(c.divergences), _fmt(c.se_K)]


def results_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in result.cells:
        w.writerow(_cell_row(c))
    return buf.getvalue()


def _cell_dict(c: CellResult) -> dict:
    d = asdict(c)
    d["schedule"] = c.schedule.to_dict()
    return d


def results_json(result: SweepResult) -> str:
    doc = {
        "config_hash": result.config_hash,
        "master_seed": result.master_seed,
        "columns": list(CSV_COLUMNS),
        "cells": [_cell_dict(c) for c in result.cells],
        "metadata": result.metadata,
    }
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def export_results(result: SweepResult, path, fmt: str = "csv") -> Path:
    if fmt == "csv":
        return write_text(path, results_csv(result))
    if fmt == "json":
        return write_text(path, results_json(result))
    raise ValueError(f"unknown format {fmt!r}")


def _schedule_from_dict(d: dict) -> ScheduleSpec:
    if d["variant"] == "constant":
        return ScheduleSpec("constant", float(d["alpha"]))
    return ScheduleSpec("decay", float(d["alpha"]), as_fraction(d["a"]), int(d["T"]))


def _opt(v, cast):
    return None if v in ("", None) else cast(v)


def import_results(path, fmt: str | None = None) -> SweepResult:
    """Inverse of :func:`export_results`.

    CSV carries only the cell table, so ``config_hash`` is empty and
    ``metadata`` is ``{}`` after a CSV round trip.
    """
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    text = path.read_text(encoding="ascii")
    if fmt == "json":
        doc = json.loads(text)
        cells = []
        for d in doc["cells"]:
            d = dict(d)
            d["schedule"] = _schedule_from_dict(d["schedule"])
            cells.append(CellResult(**d))
        return SweepResult(doc["config_hash"], doc["master_seed"], cells, doc["metadata"])
    rows = list(csv.DictReader(io.StringIO(text)))
    cells = []
    for r in rows:
        if r["schedule"] == "constant":
            s = ScheduleSpec("constant", float(r["alpha"]))
        else:
            s = ScheduleSpec("decay", float(r["alpha"]), as_fraction(r["variant_a"]), int(r["T"]))
        cells.append(CellResult(s, int(r["b"]), float(r["epsilon"]), int(r["seeds"]),
                                _opt(r["K_measured"], int), _opt(r["N_measured"], int),
                                _opt(r["K_theory"], float), _opt(r["N_theory"], float),
                                int(r["divergences"]), _opt(r["se_K"], float)))
    return SweepResult("", 0, cells, {})
