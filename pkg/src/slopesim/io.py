"""CSV and config file I/O with bit-exact, platform-independent output.

All floats are serialized with 17 significant digits (round-trip exact for
IEEE doubles), ``.`` decimal separator, and ``\\n`` line endings, so a fixed
seed and config reproduce byte-identical files anywhere with IEEE-754
doubles. Readers report schema problems with 1-based line numbers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .datatypes import (
    LongitudinalDataset,
    Provenance,
    ScenarioConfig,
    SlopeSet,
    Spacing,
    SubjectRecord,
)
from .exceptions import SchemaError
from .simkit import MetricsRow

LONG_HEADER = ("subject_id", "time_years", "response", "predictor")
METRICS_HEADER = (
    "scenario_id", "spacing", "mcar_rate", "param_name", "param_value",
    "method", "bias", "rel_bias_pct", "sd", "se", "root_mse",
    "n_reps_used", "n_reps_failed",
)
SLOPES_HEADER = ("subject_id", "method", "slope", "eligible")


def fmt(x: float) -> str:
    """Serialize one float: 17 significant digits, nan/inf spelled out."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _write_lines(path: str | Path, lines: list[str]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Long-format observation CSV (one row per visit).
# ---------------------------------------------------------------------------


def write_long_csv(ds: LongitudinalDataset, path: str | Path) -> None:
    """Write a dataset in long format. Subjects without visits leave no rows."""
    lines = [",".join(LONG_HEADER)]
    for s in ds.subjects:
        for t, y in zip(s.times, s.responses):
            lines.append(f"{s.subject_id},{fmt(t)},{fmt(y)},{fmt(s.predictor)}")
    _write_lines(path, lines)


def read_long_csv(path: str | Path) -> LongitudinalDataset:
    """Parse a long-format CSV into a dataset.

    Enforces the schema strictly: exact header, integer subject ids, finite
    numeric fields, no duplicated (subject_id, time) pair, and a predictor
    that is constant within each subject. Violations raise SchemaError
    carrying the offending 1-based line number. Rows may arrive in any
    order; each subject's series is assembled sorted by time.
    """
    subjects: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("file is empty, expected a header row", line=1) from None
        if tuple(h.strip() for h in header) != LONG_HEADER:
            raise SchemaError(
                f"bad header {header!r}, expected {','.join(LONG_HEADER)}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                sid = int(row[0])
            except ValueError:
                raise SchemaError(f"subject_id {row[0]!r} is not an integer",
                                  line=lineno) from None
            try:
                t, y, m = (float(v) for v in row[1:])
            except ValueError:
                raise SchemaError(f"non-numeric field in {row!r}", line=lineno) from None
            if not all(math.isfinite(v) for v in (t, y, m)):
                raise SchemaError("time, response and predictor must be finite",
                                  line=lineno)
            rec = subjects.setdefault(sid, {"m": m, "m_line": lineno, "obs": {}})
            if m != rec["m"]:
                raise SchemaError(
                    f"predictor changes within subject {sid} "
                    f"({rec['m']!r} on line {rec['m_line']}, {m!r} here)",
                    line=lineno,
                )
            if t in rec["obs"]:
                raise SchemaError(
                    f"duplicate (subject_id, time) = ({sid}, {row[1]})", line=lineno
                )
            rec["obs"][t] = y
    if not subjects:
        raise SchemaError("no observation rows", line=1)
    out = []
    for sid, rec in subjects.items():
        times = tuple(sorted(rec["obs"]))
        out.append(
            SubjectRecord(
                subject_id=sid,
                predictor=rec["m"],
                times=times,
                responses=tuple(rec["obs"][t] for t in times),
            )
        )
    return LongitudinalDataset(subjects=tuple(out), provenance=Provenance.INGESTED)


# ---------------------------------------------------------------------------
# Metrics and slopes CSVs.
# ---------------------------------------------------------------------------


def write_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    lines = [",".join(METRICS_HEADER)]
    for r in rows:
        s = r.summary
        lines.append(",".join([
            r.scenario_id,
            r.spacing.value,
            fmt(r.mcar_rate),
            r.param_name,
            fmt(r.param_value) if r.param_value is not None else "",
            s.method.value,
            fmt(s.bias),
            fmt(s.rel_bias_pct),
            fmt(s.sd),
            fmt(s.se),
            fmt(s.root_mse),
            str(s.n_reps_used),
            str(s.n_reps_failed),
        ]))
    _write_lines(path, lines)


def read_metrics_csv(path: str | Path) -> list[dict]:
    """Read a metrics CSV back into dicts with typed numeric fields."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise SchemaError(
                f"bad header {header!r}, expected {','.join(METRICS_HEADER)}", line=1
            )
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(METRICS_HEADER):
                raise SchemaError(
                    f"expected {len(METRICS_HEADER)} fields, got {len(row)}", line=lineno
                )
            d = dict(zip(METRICS_HEADER, row))
            for key in ("mcar_rate", "bias", "rel_bias_pct", "sd", "se", "root_mse"):
                d[key] = float(d[key])
            d["param_value"] = float(d["param_value"]) if d["param_value"] else None
            d["n_reps_used"] = int(d["n_reps_used"])
            d["n_reps_failed"] = int(d["n_reps_failed"])
            out.append(d)
    return out


def write_slopes_csv(slope_sets: list[SlopeSet], path: str | Path) -> None:
    """One row per (subject, method), subjects in ascending id order."""
    lines = [",".join(SLOPES_HEADER)]
    for ss in slope_sets:
        for sid in sorted(ss.entries):
            e = ss.entries[sid]
            lines.append(
                f"{sid},{ss.method.value},{fmt(e.slope)},{'true' if e.eligible else 'false'}"
            )
    _write_lines(path, lines)


def write_fixed_effects_csv(names, estimates, ses, path: str | Path) -> None:
    lines = ["term,estimate,se"]
    for name, est, se in zip(names, estimates, ses):
        lines.append(f"{name},{fmt(float(est))},{fmt(float(se))}")
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# Flat key=value configuration files.
# ---------------------------------------------------------------------------

_INT_FIELDS = {"n_subjects", "n_reps", "master_seed"}
_FLOAT_FIELDS = {
    "mcar_rate", "beta0", "beta1", "beta2", "beta3",
    "mu_m", "sigma_m", "omega0", "omega1", "rho", "sigma_err",
}


def parse_config(path: str | Path) -> dict:
    """Parse a flat key=value config file into ScenarioConfig overrides.

    Keys are ScenarioConfig field names; ``#`` starts a comment;
    ``nominal_times`` is a comma-separated list; ``spacing`` is
    ``regular`` or ``irregular``. Unknown keys and unparsable values
    raise SchemaError with the line number.
    """
    overrides: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"expected key=value, got {line!r}", line=lineno)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                if key in _INT_FIELDS:
                    overrides[key] = int(value)
                elif key in _FLOAT_FIELDS:
                    overrides[key] = float(value)
                elif key == "spacing":
                    overrides[key] = Spacing(value)
                elif key == "nominal_times":
                    overrides[key] = tuple(float(v) for v in value.split(","))
                else:
                    raise SchemaError(f"unknown config key {key!r}", line=lineno)
            except (ValueError, KeyError):
                raise SchemaError(
                    f"cannot parse value {value!r} for key {key!r}", line=lineno
                ) from None
    return overrides


def build_config(overrides: dict) -> ScenarioConfig:
    return ScenarioConfig(**overrides)


# ---------------------------------------------------------------------------
# Run manifests.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run's outputs byte for byte."""

    command: list[str]
    config: dict
    master_seed: int
    version: str
    started_at: str
    finished_at: str
    outputs: dict[str, str]  # filename -> sha256


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_snapshot(cfg: ScenarioConfig) -> dict:
    return {
        "n_subjects": cfg.n_subjects,
        "nominal_times": list(cfg.nominal_times),
        "spacing": cfg.spacing.value,
        "mcar_rate": cfg.mcar_rate,
        "beta0": cfg.beta0,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "beta3": cfg.beta3,
        "mu_m": cfg.mu_m,
        "sigma_m": cfg.sigma_m,
        "omega0": cfg.omega0,
        "omega1": cfg.omega1,
        "rho": cfg.rho,
        "sigma_err": cfg.sigma_err,
        "n_reps": cfg.n_reps,
        "master_seed": cfg.master_seed,
    }


def write_manifest(
    path: str | Path,
    command: list[str],
    cfg: ScenarioConfig | None,
    version: str,
    started_at: datetime,
    outputs: list[str | Path],
) -> RunManifest:
    manifest = RunManifest(
        command=list(command),
        config=config_snapshot(cfg) if cfg is not None else {},
        master_seed=cfg.master_seed if cfg is not None else 0,
        version=version,
        started_at=started_at.astimezone(timezone.utc).isoformat(),
        finished_at=datetime.now(timezone.utc).isoformat(),
        outputs={Path(p).name: sha256_file(p) for p in outputs},
    )
    with open(path, "w", newline="\n") as fh:
        json.dump(manifest.__dict__, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
