"""Deterministic text records: outcome JSON and CSV tables with header blocks.

Every file starts with provenance (tool version, config hash, seed). JSON
records hold it under ``"header"``; CSV files carry it as leading ``#``
comment lines. No timestamps are written, so identical inputs give
identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .control import RangeScenario, eval_field
from .errors import ValidationError
from .models import FermionModelParams, ThreeComponentParams, TwoQubitParams
from .optimizer import OptimizationOutcome, Scenario

TOOL = "rampopt"


def config_hash(config):
    """SHA-256 of the canonical JSON form of a config mapping."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.sha256(text.encode()).hexdigest()


def make_header(config, seed):
    return {"tool": TOOL, "version": __version__, "config_hash": config_hash(config),
            "seed": int(seed)}


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_json(header, payload):
    return json.dumps({"header": header, **payload}, sort_keys=True, indent=2,
                      default=_plain) + "\n"


def loads_json(text, source="<record>"):
    """Parse a JSON record; syntax errors become ValidationError with line/column."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: top level must be an object")
    return data


def csv_text(header, columns, rows):
    """CSV with ``# key: value`` header lines followed by the column row."""
    buf = io.StringIO()
    for key in sorted(header):
        buf.write(f"# {key}: {header[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def read_csv(text):
    """Header mapping and data rows (as strings) of a file written by :func:`csv_text`."""
    header, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            header[key.strip()] = value.strip()
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ValidationError("CSV has no column row")
    return header, rows[0], rows[1:]


def write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="")


# scenario records

def params_to_record(params):
    if isinstance(params, TwoQubitParams):
        return {"family": "two_qubit", "delta": params.delta}
    if isinstance(params, FermionModelParams):
        return {"family": "two_component", "mass_ratio": params.mass_ratio,
                "cutoff_c": params.cutoff_c}
    if isinstance(params, ThreeComponentParams):
        return {"family": "three_component", "mass_ratio": params.base.mass_ratio,
                "cutoff_c": params.base.cutoff_c, "cutoff_k": params.cutoff_k,
                "g_spectator": params.g_spectator}
    raise ValidationError(f"unsupported parameters {type(params).__name__}")


def params_from_record(rec):
    rec = dict(rec)
    family = rec.pop("family", None)
    try:
        if family == "two_qubit":
            return TwoQubitParams(float(rec.get("delta", 1.0)))
        base = FermionModelParams(float(rec.get("mass_ratio", 40.0 / 6.0)),
                                  _int(rec.get("cutoff_c", 14), "cutoff_c"))
        if family == "two_component":
            return base
        if family == "three_component":
            return ThreeComponentParams(base, _int(rec.get("cutoff_k", 2), "cutoff_k"),
                                        float(rec.get("g_spectator", 0.0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad model parameter: {exc}") from None
    raise ValidationError(f"unknown model family {family!r}")


def _int(value, name):
    if isinstance(value, bool) or int(value) != value:
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    return int(value)


def scenario_to_record(s):
    return {
        "model": params_to_record(s.params),
        "g1": float(s.g1),
        "g2": float(s.g2),
        "range": [float(s.range.g_min), float(s.range.g_max)],
        "fidelity_mode": s.fidelity_mode,
        "threshold": float(s.threshold),
        "g_offset": float(s.g_offset),
        "name": s.name,
    }


def scenario_from_record(rec):
    try:
        g_min, g_max = rec["range"]
        return Scenario(
            params=params_from_record(rec["model"]),
            g1=float(rec["g1"]),
            g2=float(rec["g2"]),
            range=RangeScenario(float(g_min), float(g_max)),
            fidelity_mode=rec.get("fidelity_mode", "auto"),
            threshold=float(rec.get("threshold", 0.99)),
            g_offset=float(rec.get("g_offset", 0.0)),
            name=str(rec.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed scenario record: {exc!r}") from None


# outcomes

def outcome_to_record(outcome):
    return {
        "scenario": scenario_to_record(outcome.scenario),
        "T": float(outcome.duration),
        "M": int(outcome.m_points),
        "best_fidelity": float(outcome.best_fidelity),
        "knots": [float(v) for v in outcome.knots],
        "seed": int(outcome.seed),
        "iterations": int(outcome.iterations),
        "gradient_norm": float(outcome.gradient_norm),
        "restarts_used": int(outcome.restarts_used),
        "status": outcome.status,
    }


def outcome_from_record(rec):
    """Rebuild an outcome (without trajectory) from a parsed record."""
    try:
        scenario = scenario_from_record(rec["scenario"])
        knots = np.asarray(rec["knots"], dtype=float)
        m = _int(rec["M"], "M")
        if knots.size != m:
            raise ValidationError(f"record lists {knots.size} knots but M={m}")
        if not scenario.range.contains(knots):
            raise ValidationError("record knots leave the scenario range")
        return OptimizationOutcome(
            best_fidelity=float(rec["best_fidelity"]),
            knots=knots,
            duration=float(rec["T"]),
            m_points=m,
            restarts_used=_int(rec.get("restarts_used", 0), "restarts_used"),
            iterations=_int(rec["iterations"], "iterations"),
            gradient_norm=float(rec["gradient_norm"]),
            trajectory=None,
            range=scenario.range,
            seed=_int(rec["seed"], "seed"),
            scenario=scenario,
            status=str(rec.get("status", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed outcome record: missing or bad field {exc!r}") from None


def load_outcome(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"outcome record {path} does not exist")
    return outcome_from_record(loads_json(path.read_text(encoding="utf-8"), str(path)))


# tables

def trajectory_rows(tr):
    return zip(tr.times, tr.fields, tr.fidelities)


def field_rows(protocol, n_samples=201):
    t = np.linspace(0.0, protocol.duration, int(n_samples))
    return zip(t, np.atleast_1d(eval_field(protocol, t)))


def scan_rows(scan):
    return ((t, int(m), f) for t, f, m in scan)
