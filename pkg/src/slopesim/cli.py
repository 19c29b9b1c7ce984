"""Command line interface.

Two subcommands: ``simulate`` runs a preset or custom scenario grid and
writes the metrics CSV; ``fit`` applies one estimation method to a long
format observation CSV. Exit codes: 0 success, 2 configuration error
(flags, config file, unknown preset, unwritable output), 3 data error
(malformed input CSV, method failure on the given data).
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datatypes import Design, LmmFit, LongitudinalDataset, Method, Spacing
from .exceptions import ParameterError, SchemaError, SlopesimError
from .io import (
    build_config,
    parse_config,
    read_long_csv,
    write_fixed_effects_csv,
    write_manifest,
    write_metrics_csv,
    write_slopes_csv,
)
from .lmm import fit_lmm
from .simkit import METHOD_ORDER, PRESETS, run_cells, run_preset
from .twostage import (
    bias_corrected_slopes,
    blup_slopes,
    inflated_slopes,
    ols_slopes,
    second_stage_regress,
    simple_slopes,
)

_CONFIG_EXIT = 2
_DATA_EXIT = 3


def _version() -> str:
    from . import __version__

    return __version__


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario overrides (default: baseline scenario)")
    g.add_argument("--n_subjects", type=int)
    g.add_argument("--nominal_times", type=str, metavar="T0,T1,...")
    g.add_argument("--spacing", choices=[s.value for s in Spacing])
    g.add_argument("--mcar_rate", type=float)
    for name in ("beta0", "beta1", "beta2", "beta3", "mu_m", "sigma_m",
                 "omega0", "omega1", "rho", "sigma_err"):
        g.add_argument(f"--{name}", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slopesim",
        description="Slope estimation methods for longitudinal data and the "
                    "Monte Carlo harness comparing them.",
    )
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate",
        help="run a simulation preset or custom scenario and write metrics",
    )
    sim.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    sim.add_argument("--config", help="flat key=value config file")
    sim.add_argument("--reps", type=int, help="replications per scenario cell")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                     help="worker processes (default: available cores)")
    sim.add_argument("--out", default=".", help="output directory")
    sim.add_argument("--method", help="comma-separated method filter "
                                      f"(default all: {','.join(m.value for m in METHOD_ORDER)})")
    _add_override_flags(sim)

    fit = sub.add_parser("fit", help="apply one method to a long-format CSV")
    fit.add_argument("input_csv", help="CSV with header subject_id,time_years,response,predictor")
    fit.add_argument("--method", required=True,
                     choices=[m.value for m in METHOD_ORDER])
    fit.add_argument("--out", default=".", help="output directory")
    return parser


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if args.config:
        overrides.update(parse_config(args.config))
    for name in ("n_subjects", "mcar_rate", "beta0", "beta1", "beta2", "beta3",
                 "mu_m", "sigma_m", "omega0", "omega1", "rho", "sigma_err"):
        v = getattr(args, name)
        if v is not None:
            overrides[name] = v
    if args.nominal_times is not None:
        overrides["nominal_times"] = tuple(float(t) for t in args.nominal_times.split(","))
    if args.spacing is not None:
        overrides["spacing"] = Spacing(args.spacing)
    if args.reps is not None:
        overrides["n_reps"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    return overrides


def _parse_methods(spec: str | None) -> tuple[Method, ...]:
    if not spec:
        return METHOD_ORDER
    wanted = []
    for token in spec.split(","):
        token = token.strip()
        try:
            wanted.append(Method(token))
        except ValueError:
            valid = ", ".join(m.value for m in METHOD_ORDER)
            raise ParameterError(f"unknown method {token!r}; valid: {valid}") from None
    return tuple(wanted)


def _prepare_outdir(out: str) -> Path:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    probe = outdir / ".write_probe"
    probe.touch()
    probe.unlink()
    return outdir


def cmd_simulate(args: argparse.Namespace) -> int:
    started = datetime.now(timezone.utc)
    if args.preset is not None and args.preset not in PRESETS:
        valid = ", ".join(sorted(PRESETS))
        print(f"error: unknown preset {args.preset!r}; valid presets: {valid}",
              file=sys.stderr)
        return _CONFIG_EXIT
    try:
        overrides = _collect_overrides(args)
        cfg = build_config(overrides)
        methods = _parse_methods(args.method)
        outdir = _prepare_outdir(args.out)
    except SchemaError as e:
        where = f"line {e.line}: " if e.line is not None else ""
        print(f"error: {args.config}: {where}{e}", file=sys.stderr)
        return _CONFIG_EXIT
    except (ParameterError, ValueError, TypeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _CONFIG_EXIT

    workers = max(1, args.threads)
    if args.preset is not None:
        rows = run_preset(args.preset, cfg, methods, workers)
    else:
        rows = run_cells(cfg, ((cfg.spacing, cfg.mcar_rate),), "custom", methods, workers)

    csv_path = outdir / "metrics.csv"
    write_metrics_csv(rows, csv_path)
    write_manifest(outdir / "manifest.json", list(sys.argv), cfg, _version(),
                   started, [csv_path])
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


def _stage_one(ds: LongitudinalDataset) -> LmmFit:
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    if not fit.converged:
        raise SlopesimError("stage-one mixed model did not converge")
    return fit


def cmd_fit(args: argparse.Namespace) -> int:
    started = datetime.now(timezone.utc)
    try:
        outdir = _prepare_outdir(args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return _CONFIG_EXIT
    try:
        ds = read_long_csv(args.input_csv)
    except SchemaError as e:
        where = f"line {e.line}: " if e.line is not None else ""
        print(f"error: {args.input_csv}: {where}{e}", file=sys.stderr)
        return _DATA_EXIT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return _DATA_EXIT

    method = Method(args.method)
    outputs: list[Path] = []
    try:
        if method is Method.LMM:
            fit = fit_lmm(ds, Design.FULL)
            if not fit.converged:
                raise SlopesimError("mixed model did not converge")
            path = outdir / "fixed_effects.csv"
            write_fixed_effects_csv(fit.coef_names, fit.coef, fit.coef_se, path)
            outputs.append(path)
            j = fit.coef_names.index("predictor_time")
            print(f"association estimate {fit.coef[j]:.6g} (se {fit.coef_se[j]:.6g}), "
                  f"sigma {fit.sigma_hat:.6g}")
        else:
            if method is Method.SIMPLE:
                slopes = simple_slopes(ds)
            elif method is Method.OLS:
                slopes = ols_slopes(ds)
            elif method is Method.BLUP:
                slopes = blup_slopes(_stage_one(ds))
            elif method is Method.INFLATED:
                slopes, _ = inflated_slopes(_stage_one(ds))
            else:
                slopes, state = bias_corrected_slopes(ds, _stage_one(ds))
                if slopes is None:
                    raise SlopesimError(
                        "shrinkage correction infeasible on these data "
                        f"(condition number {state.condition_estimate:.3g})"
                    )
            path = outdir / "slopes.csv"
            write_slopes_csv([slopes], path)
            outputs.append(path)
            ss = second_stage_regress(slopes, ds)
            print(f"alpha0 {ss.alpha0:.6g}, alpha1 {ss.alpha1:.6g} "
                  f"(se {ss.se_alpha1:.6g}), n_used {ss.n_used}")
    except (SlopesimError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _DATA_EXIT

    write_manifest(outdir / "manifest.json", list(sys.argv), None, _version(),
                   started, outputs)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args)
    return cmd_fit(args)


if __name__ == "__main__":
    sys.exit(main())
