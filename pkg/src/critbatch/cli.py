"""``critbatch`` command line: theory tables, sweeps, validation and estimation.

Exit codes: 0 success, 1 usage or configuration error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import theory
from .config import ConfigError, RunConfig, build_estimate, parse_config
from .estimator import EstimatorError, transfer
from .sweep import (SweepConfig, export_results, results_csv, results_json, run_sweep, validate_suite,
                    write_text)

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2

CURVE_COLUMNS = ("schedule", "b", "K", "N", "dK", "d2K", "dN", "d2N")
CRITICAL_COLUMNS = ("schedule", "regime", "epsilon", "flavor", "b_star", "K_at_b_star", "N_at_b_star",
                    "sfo_minimizer", "pole", "note")
EXPONENT_COLUMNS = ("schedule", "regime", "k_slope", "n_slope", "expected_k", "expected_n", "note")
CHECK_COLUMNS = ("check", "schedule", "b", "K", "seeds", "value", "se", "bound", "passed",
                 "divergences", "valid")
ESTIMATE_COLUMNS = ("source_regime", "source_a", "measured", "ratio", "target_regime", "target_a",
                    "b_star", "bracket_lo", "bracket_hi")


class CliError(Exception):
    pass


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def _finite(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        write_text(out, text)


def _echo(cfg: RunConfig) -> dict:
    return {
        "seed": cfg.seed,
        "problem": cfg.problem.record(),
        "derived": cfg.derived(),
        "schedules": [s.to_dict() for s in cfg.schedules],
        "epsilon": cfg.epsilon,
    }


def _log_derived(cfg: RunConfig) -> None:
    d = cfg.derived()
    print(f"L={d['L']!r} sigma2={d['sigma2']!r} 2/L={d['alpha_cap']!r} delta0={d['delta0']!r}",
          file=sys.stderr)


# --------------------------------------------------------------------------
# theory


def theory_tables(cfg: RunConfig) -> dict[str, list[dict]]:
    curves, critical, exponents, consts = [], [], [], []
    eps = cfg.epsilon
    for s in cfg.schedules:
        label = s.label()
        c = theory.constants(cfg.problem, s, cfg.oracle)
        consts.append({"schedule": label, **c.to_dict()})
        pole = theory.domain_pole(c, s, eps)
        grid = np.array([b for b in cfg.theory.batch_grid if b > pole], dtype=np.float64)
        if grid.size == 0:
            raise CliError(f"{label}: no batch size in the grid exceeds the domain pole "
                           f"b > {pole!r}; raise epsilon or extend the grid")
        try:
            K = theory.iterations_needed(c, s, eps, grid)
        except theory.DomainError as exc:
            raise CliError(f"{label}: {exc}") from exc
        dK, d2K = theory.k_derivatives(c, s, eps, grid)
        dN, d2N = theory.n_derivatives(c, s, eps, grid)
        for i, b in enumerate(grid):
            curves.append({"schedule": label, "b": int(b), "K": float(K[i]), "N": float(K[i] * b),
                           "dK": float(dK[i]), "d2K": float(d2K[i]), "dN": float(dN[i]),
                           "d2N": float(d2N[i])})

        cb = theory.critical_batch(c, s, eps)
        row = {"schedule": label, "regime": s.regime, "epsilon": eps, "flavor": cb.flavor,
               "b_star": cb.b_star, "sfo_minimizer": cb.sfo_minimizer, "pole": pole, "note": cb.note}
        at = cb.b_star if cb.flavor == "stationary-point" else cb.sfo_minimizer
        if at is not None:
            k_star = float(theory.iterations_needed(c, s, eps, at))
            row.update(K_at_b_star=k_star, N_at_b_star=k_star * at)
        critical.append(row)

        erow = {"schedule": label, "regime": s.regime}
        try:
            fit = theory.complexity_exponents(c, s, cfg.theory.epsilon_grid)
            erow.update(k_slope=fit.k_slope, n_slope=fit.n_slope, expected_k=fit.expected_k,
                        expected_n=fit.expected_n)
            if s.regime == "decay2":
                erow["note"] = "b = (D2+1)/eps^2 taken as stated; the +1 is unexplained"
        except (theory.DomainError, ValueError) as exc:
            erow["note"] = str(exc)
        exponents.append(erow)
    return {"curves": curves, "critical": critical, "exponents": exponents, "constants": consts}


def cmd_theory(cfg: RunConfig, out: str | None, fmt: str) -> int:
    tables = theory_tables(cfg)
    if out is None:
        sys.stdout.write(_json({"config": _echo(cfg), **tables}) if fmt == "json"
                         else _csv(CRITICAL_COLUMNS, tables["critical"]))
        return EXIT_OK
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {root}: {exc.strerror or exc}") from exc
    if fmt == "json":
        write_text(root / "theory.json", _json({"config": _echo(cfg), **tables}))
    else:
        write_text(root / "curves.csv", _csv(CURVE_COLUMNS, tables["curves"]))
        write_text(root / "critical.csv", _csv(CRITICAL_COLUMNS, tables["critical"]))
        write_text(root / "exponents.csv", _csv(EXPONENT_COLUMNS, tables["exponents"]))
        keys = ("schedule",) + tuple(k for k in tables["constants"][0] if k != "schedule")
        write_text(root / "constants.csv", _csv(keys, tables["constants"]))
        write_text(root / "config.json", _json(_echo(cfg)))
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep / validate


def cmd_sweep(cfg: RunConfig, out: str | None, fmt: str) -> int:
    sc = SweepConfig(cfg.problem, cfg.oracle, cfg.schedules, cfg.epsilon, cfg.sweep.batch_grid,
                     cfg.sweep.seeds, cfg.sweep.K_max, cfg.seed, cfg.sweep.jobs)
    if out is not None:
        # fail before spending compute on an unwritable destination
        write_text(out, "")
    result = run_sweep(sc)
    result.metadata["config"] = _echo(cfg)
    if out is None:
        sys.stdout.write(results_json(result) if fmt == "json" else results_csv(result))
    else:
        export_results(result, out, fmt)
    if result.empty:
        print(f"warning: {result.metadata['warning']}", file=sys.stderr)
    return EXIT_OK


def _check_row(chk) -> dict:
    value = chk.empirical if chk.kind == "bound" else chk.lhs
    bound = chk.bound if chk.kind == "bound" else chk.rhs
    return {"check": chk.kind, "schedule": chk.schedule.label(), "b": chk.b, "K": chk.K,
            "seeds": chk.seeds, "value": _finite(value), "se": _finite(chk.se), "bound": bound,
            "passed": chk.passed, "divergences": chk.divergences, "valid": chk.valid}


def cmd_validate(cfg: RunConfig, out: str | None, fmt: str) -> int:
    if out is not None:
        write_text(out, "")
    v = cfg.validate
    checks = validate_suite(cfg.problem, cfg.oracle, cfg.schedules, v.batch_sizes, v.horizons,
                            v.seeds, cfg.seed, v.jobs)
    rows = [_check_row(c) for c in checks]
    failed = sum(not r["passed"] for r in rows)
    text = (_json({"config": _echo(cfg), "checks": rows, "failed": failed}) if fmt == "json"
            else _csv(CHECK_COLUMNS, rows))
    _emit(text, out)
    print(f"{len(rows) - failed}/{len(rows)} checks passed", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


# --------------------------------------------------------------------------
# estimate


def cmd_estimate(settings, out: str | None, fmt: str) -> int:
    try:
        preds = transfer(settings.source_a, settings.source_regime, settings.measured,
                         settings.target_a, settings.target_regime)
    except EstimatorError as exc:
        raise CliError(str(exc)) from exc
    rows = [{"source_regime": settings.source_regime, "source_a": str(settings.source_a),
             "measured": m, "ratio": p.ratio, "target_regime": p.regime, "target_a": str(p.a),
             "b_star": p.b_star, "bracket_lo": p.bracket[0], "bracket_hi": p.bracket[1]}
            for m, p in zip(settings.measured, preds)]
    text = _json({"estimates": rows}) if fmt == "json" else _csv(ESTIMATE_COLUMNS, rows)
    if out is not None:
        write_text(out, text)
    for r in rows:
        print(f"b* = {r['b_star']:.12g}  in ({_cell(r['bracket_lo'])}, {_cell(r['bracket_hi'])})"
              f"  D2/D1 = {r['ratio']:.12g}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="critbatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML configuration file")
        p.add_argument("--out", help="output path (a directory for theory); stdout when omitted")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--jobs", type=int, help="worker processes (overrides the config)")

    common(sub.add_parser("theory", help="closed-form K(b), N(b), b* and exponent tables"))
    common(sub.add_parser("sweep", help="measured K(b) and N(b) over a batch grid"))
    common(sub.add_parser("validate", help="Monte-Carlo checks of the bound and descent lemma"))
    est = sub.add_parser("estimate", help="transfer a measured b* between decay exponents")
    common(est, config_required=False)
    est.add_argument("--source-a", help="decay exponent of the measurement, e.g. 1/4")
    est.add_argument("--source-regime", choices=("decay1", "decay3"))
    est.add_argument("--measured", type=float, action="append", help="measured b* (repeatable)")
    est.add_argument("--target-a", help="decay exponent to predict for, e.g. 3/4")
    est.add_argument("--target-regime", choices=("decay1", "decay3"))
    return parser


def _estimate_settings(args):
    table = {}
    if args.config:
        est = parse_config(args.config).estimate
        if est is not None:
            table = {"source_a": str(est.source_a), "source_regime": est.source_regime,
                     "measured": est.measured, "target_a": str(est.target_a),
                     "target_regime": est.target_regime}
    for side in ("source", "target"):
        a = getattr(args, f"{side}_a")
        if a is not None:
            # a new exponent re-derives the regime unless one is given too
            table[f"{side}_a"] = a
            table.pop(f"{side}_regime", None)
        regime = getattr(args, f"{side}_regime")
        if regime is not None:
            table[f"{side}_regime"] = regime
    if args.measured is not None:
        table["measured"] = args.measured
    return build_estimate(table, "estimate")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        if args.jobs is not None and args.jobs < 1:
            raise CliError("--jobs must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise CliError("--seed must be nonnegative")
        if args.command == "estimate":
            return cmd_estimate(_estimate_settings(args), args.out, args.format)
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            cfg.sweep.jobs = cfg.validate.jobs = args.jobs
        _log_derived(cfg)
        handler = {"theory": cmd_theory, "sweep": cmd_sweep, "validate": cmd_validate}[args.command]
        return handler(cfg, args.out, args.format)
    except (ConfigError, CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
