"""TOML run configuration with a strict schema.

Every section is optional except ``[problem]``.  Unknown keys, wrong types
and rates at or above the ``2/L`` cap are rejected with a message naming the
offending key.  See ``README.md`` for the full schema.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .problems import OracleMode, ProblemSpec, make_logistic, make_quadratic_sine
from .schedules import DECAY1, DECAY3, HALF, ScheduleError, ScheduleSpec, as_fraction, validate_schedule
from .sweep import DEFAULT_GRID


class ConfigError(ValueError):
    pass


_NUM = (int, float)

PROBLEM_KEYS = {
    "quadratic-sine": {
        "kind": str, "seed": int, "n": int, "d": int, "spectrum": list, "spectrum_min": _NUM,
        "spectrum_max": _NUM, "eps_nc": _NUM, "center_scale": _NUM, "theta0_scale": _NUM,
    },
    "logistic": {
        "kind": str, "seed": int, "n": int, "d": int, "lam": _NUM, "n_probes": int, "safety": _NUM,
        "solver_seed": int,
    },
}
ORACLE_KEYS = {"mode": str, "sigma2": _NUM}
SCHEDULE_KEYS = {"variant": str, "alpha": _NUM, "a": (str, int, float), "T": int}
TARGET_KEYS = {"epsilon": _NUM}
SWEEP_KEYS = {"batch_grid": list, "seeds": int, "K_max": int, "jobs": int}
VALIDATE_KEYS = {"batch_sizes": list, "horizons": list, "seeds": int, "jobs": int}
THEORY_KEYS = {"batch_grid": list, "epsilon_grid": list}
ESTIMATE_KEYS = {"source_a": (str, int, float), "source_regime": str, "measured": (list, int, float),
                 "target_a": (str, int, float), "target_regime": str}
TOP_KEYS = {"seed": int, "problem": dict, "oracle": dict, "schedules": list, "target": dict,
            "sweep": dict, "validate": dict, "theory": dict, "estimate": dict}

DEFAULT_EPSILON = 0.5
DEFAULT_DECAY_EXPONENTS = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4))


def _type_name(t) -> str:
    if isinstance(t, tuple):
        return " or ".join(x.__name__ for x in t)
    return t.__name__


def _check_keys(table: dict, schema: dict, where: str) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r} (allowed: {', '.join(sorted(schema))})")
        want = schema[key]
        # bool is an int subclass; never accept it for numeric keys
        if isinstance(value, bool) or not isinstance(value, want):
            raise ConfigError(f"{where}.{key}: expected {_type_name(want)}, got {type(value).__name__}")
    return table


def _int_list(value, where: str, positive: bool = True) -> list[int]:
    if not value or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{where}: expected a nonempty list of integers")
    if positive and min(value) < 1:
        raise ConfigError(f"{where}: entries must be >= 1")
    return [int(v) for v in value]


def _float_list(value, where: str) -> list[float]:
    if not value or not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{where}: expected a nonempty list of numbers")
    return [float(v) for v in value]


@dataclass
class SweepSettings:
    batch_grid: list[int] = field(default_factory=lambda: list(DEFAULT_GRID))
    seeds: int = 32
    K_max: int = 100_000
    jobs: int = 1


@dataclass
class ValidateSettings:
    batch_sizes: list[int] = field(default_factory=lambda: [1, 16, 256])
    horizons: list[int] = field(default_factory=lambda: [100, 1000])
    seeds: int = 1000
    jobs: int = 1


@dataclass
class TheorySettings:
    batch_grid: list[int] = field(default_factory=lambda: list(DEFAULT_GRID))
    epsilon_grid: list[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])


@dataclass
class EstimateSettings:
    source_a: Fraction
    source_regime: str
    measured: list[float]
    target_a: Fraction
    target_regime: str


@dataclass
class RunConfig:
    problem: ProblemSpec
    oracle: OracleMode
    schedules: list[ScheduleSpec]
    epsilon: float
    seed: int = 0
    sweep: SweepSettings = field(default_factory=SweepSettings)
    validate: ValidateSettings = field(default_factory=ValidateSettings)
    theory: TheorySettings = field(default_factory=TheorySettings)
    estimate: EstimateSettings | None = None
    source: str = ""

    def derived(self) -> dict[str, Any]:
        """Values computed from the configuration, echoed for auditing."""
        return {
            "L": self.problem.L,
            "sigma2": self.oracle.variance(self.problem),
            "alpha_cap": 2.0 / self.problem.L,
            "delta0": self.problem.delta0,
            "f_star": self.problem.f_star,
            "oracle": self.oracle.kind,
        }


def _build_problem(table: dict) -> ProblemSpec:
    kind = table.get("kind")
    if kind is None:
        raise ConfigError("problem.kind is required (quadratic-sine or logistic)")
    if kind not in PROBLEM_KEYS:
        raise ConfigError(f"problem.kind: expected 'quadratic-sine' or 'logistic', got {kind!r}")
    _check_keys(table, PROBLEM_KEYS[kind], "problem")
    seed, n, d = table.get("seed", 0), table.get("n", 1000), table.get("d", 20)
    try:
        if kind == "quadratic-sine":
            if "spectrum" in table:
                if any(k in table for k in ("spectrum_min", "spectrum_max")):
                    raise ConfigError("problem: give either spectrum or spectrum_min/max, not both")
                spectrum = _float_list(table["spectrum"], "problem.spectrum")
            else:
                spectrum = np.linspace(table.get("spectrum_min", 0.5), table.get("spectrum_max", 1.0), d)
            return make_quadratic_sine(seed, n, d, spectrum, table.get("eps_nc", 0.0),
                                       center_scale=table.get("center_scale", 1.0),
                                       theta0_scale=table.get("theta0_scale", 3.0))
        return make_logistic(seed, n, d, table.get("lam", 1e-3), n_probes=table.get("n_probes", 256),
                             safety=table.get("safety", 1.5), solver_seed=table.get("solver_seed", 0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"problem: {exc}") from exc


def _build_oracle(table: dict) -> OracleMode:
    _check_keys(table, ORACLE_KEYS, "oracle")
    mode = table.get("mode", "additive-noise")
    if mode not in ("additive-noise", "finite-sum"):
        raise ConfigError(f"oracle.mode: expected 'additive-noise' or 'finite-sum', got {mode!r}")
    try:
        return OracleMode(mode, table.get("sigma2"))
    except ValueError as exc:
        raise ConfigError(f"oracle: {exc}") from exc


def _parse_a(value, where: str) -> Fraction:
    try:
        return as_fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: cannot read exponent {value!r}") from exc


def _build_schedules(entries, L: float) -> list[ScheduleSpec]:
    if entries is None:
        alpha = 1.0 / L
        return [ScheduleSpec("constant", alpha)] + [ScheduleSpec("decay", alpha, a)
                                                    for a in DEFAULT_DECAY_EXPONENTS]
    if not entries:
        raise ConfigError("schedules: at least one schedule is required")
    out = []
    for i, entry in enumerate(entries):
        where = f"schedules[{i}]"
        _check_keys(entry, SCHEDULE_KEYS, where)
        variant = entry.get("variant", "constant")
        if variant == "constant" and ("a" in entry or "T" in entry):
            raise ConfigError(f"{where}: a and T only apply to decay schedules")
        alpha = float(entry.get("alpha", 1.0 / L))
        try:
            if variant == "decay":
                if "a" not in entry:
                    raise ConfigError(f"{where}.a: required for decay schedules")
                spec = ScheduleSpec("decay", alpha, _parse_a(entry["a"], f"{where}.a"), entry.get("T", 1))
            else:
                spec = ScheduleSpec(variant, alpha)
        except ScheduleError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        violation = validate_schedule(spec, L)
        if violation is not None:
            raise ConfigError(f"{where}.alpha: {violation}; the step size must stay below the 2/L cap")
        out.append(spec)
    return out


def _regime_for(a: Fraction, given: str | None, where: str) -> str:
    if given is None:
        if a < HALF:
            return DECAY1
        if a > HALF:
            return DECAY3
        raise ConfigError(f"{where}: a = 1/2 has no exponent-only critical batch size")
    if given not in (DECAY1, DECAY3):
        raise ConfigError(f"{where}: regime must be 'decay1' or 'decay3', got {given!r}")
    return given


def build_estimate(table: dict, where: str = "estimate") -> EstimateSettings:
    _check_keys(table, ESTIMATE_KEYS, where)
    for key in ("source_a", "measured", "target_a"):
        if key not in table:
            raise ConfigError(f"{where}.{key}: required")
    source_a = _parse_a(table["source_a"], f"{where}.source_a")
    target_a = _parse_a(table["target_a"], f"{where}.target_a")
    measured = table["measured"]
    measured = _float_list(measured if isinstance(measured, list) else [measured], f"{where}.measured")
    return EstimateSettings(source_a, _regime_for(source_a, table.get("source_regime"), f"{where}.source_regime"),
                            measured, target_a,
                            _regime_for(target_a, table.get("target_regime"), f"{where}.target_regime"))


def config_from_dict(doc: dict, source: str = "") -> RunConfig:
    _check_keys(doc, TOP_KEYS, "config")
    if "problem" not in doc:
        raise ConfigError("config: missing required [problem] section")
    problem = _build_problem(doc["problem"])
    oracle = _build_oracle(doc.get("oracle", {}))
    schedules = _build_schedules(doc.get("schedules"), problem.L)

    target = _check_keys(doc.get("target", {}), TARGET_KEYS, "target")
    epsilon = float(target.get("epsilon", DEFAULT_EPSILON))
    if not epsilon > 0:
        raise ConfigError("target.epsilon: must be positive")

    sw = _check_keys(doc.get("sweep", {}), SWEEP_KEYS, "sweep")
    sweep = SweepSettings(
        _int_list(sw["batch_grid"], "sweep.batch_grid") if "batch_grid" in sw else list(DEFAULT_GRID),
        sw.get("seeds", 32), sw.get("K_max", 100_000), sw.get("jobs", 1))
    if any(b2 <= b1 for b1, b2 in zip(sweep.batch_grid, sweep.batch_grid[1:])):
        raise ConfigError("sweep.batch_grid: must be strictly increasing")
    if sweep.seeds < 1 or sweep.K_max < 1 or sweep.jobs < 1:
        raise ConfigError("sweep: seeds, K_max and jobs must be >= 1")
    if oracle.kind == "finite-sum" and max(sweep.batch_grid) > problem.n:
        raise ConfigError(f"sweep.batch_grid: b={max(sweep.batch_grid)} exceeds n={problem.n} "
                          "in finite-sum mode")

    va = _check_keys(doc.get("validate", {}), VALIDATE_KEYS, "validate")
    validate = ValidateSettings(
        _int_list(va["batch_sizes"], "validate.batch_sizes") if "batch_sizes" in va else [1, 16, 256],
        _int_list(va["horizons"], "validate.horizons") if "horizons" in va else [100, 1000],
        va.get("seeds", 1000), va.get("jobs", 1))
    if validate.seeds < 2 or validate.jobs < 1:
        raise ConfigError("validate: seeds must be >= 2 and jobs >= 1")

    th = _check_keys(doc.get("theory", {}), THEORY_KEYS, "theory")
    theory = TheorySettings(
        _int_list(th["batch_grid"], "theory.batch_grid") if "batch_grid" in th else list(DEFAULT_GRID),
        _float_list(th["epsilon_grid"], "theory.epsilon_grid") if "epsilon_grid" in th
        else [1e-2, 1e-3, 1e-4])

    estimate = build_estimate(doc["estimate"]) if "estimate" in doc else None
    seed = doc.get("seed", 0)
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")
    return RunConfig(problem, oracle, schedules, epsilon, seed, sweep, validate, theory, estimate, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_dict(doc, str(path))
