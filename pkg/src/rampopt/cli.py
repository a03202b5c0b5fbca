"""Config-driven command-line front end.

A run is described by one YAML (or JSON) mapping with flat keys; ``--set
key=value`` overrides file keys, values parsed as YAML scalars. The whole
config is validated before any expensive work starts. Exit codes: 0
success, 2 validation, 3 numerical failure, 4 bracketing failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import records as rec
from .control import RangeScenario
from .core import spectrum
from .errors import BracketError, NumericalError, ValidationError
from .models import FermionModelParams, ThreeComponentParams, build_model
from .optimizer import (DEFAULT_M_SCHEDULE, Scenario, escalate_m, estimate_qsl, prepare,
                        reevaluate_protocol)
from .propagator import ATOL, RTOL
from .robustness import noise_sweep

log = logging.getLogger("rampopt")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_BRACKET = 0, 2, 3, 4

DEFAULTS = {
    "model": "two_qubit",
    "delta": 1.0,
    "mass_ratio": 40.0 / 6.0,
    "cutoff_c": 14,
    "cutoff_k": 2,
    "g_spectator": 0.0,
    "g1": 0.0,
    "g2": 4.0,
    "range": [-2.0, 2.0],
    "ranges": None,
    "widen": None,
    "fidelity_mode": "auto",
    "T": None,
    "t_bracket": [0.1, 10.0],
    "m_schedule": list(DEFAULT_M_SCHEDULE),
    "eps_m": 1e-4,
    "resolution": 0.01,
    "restarts": 10,
    "threshold": 0.99,
    "rtol": RTOL,
    "atol": ATOL,
    "seed": 0,
    "n_samples": 201,
    "outcome": None,
    "sigmas": [0.0, 0.02, 0.04, 0.06, 0.08, 0.1],
    "n_realizations": 100,
    "clamp_noisy": False,
    "cutoffs": None,
    "flag_delta": 1e-2,
    "g_grid": [0.0, 4.0, 41],
    "n_levels": 4,
    "output": "run",
}
# keys that do not influence results and stay out of the config hash
_UNHASHED = ("output",)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def hash_source(self):
        return {k: v for k, v in self.values.items() if k not in _UNHASHED}

    def header(self):
        return rec.make_header(self.hash_source, self.values["seed"])


def load_config(path=None, overrides=(), explicit=None):
    """Merge defaults, the config file, ``key=value`` overrides and `explicit` values."""
    values = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"{p}: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{p}: config must be a mapping")
        _merge(values, data, str(p))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ValidationError(f"override {item!r}: {exc}") from None
        _merge(values, {key.strip(): value}, "--set")
    _merge(values, explicit or {}, "command line")
    return RunConfig(values)


def _merge(values, data, source):
    for key, value in data.items():
        if key not in DEFAULTS:
            raise ValidationError(f"{source}: unknown config key {key!r}")
        values[key] = value


# validation helpers

def _float(cfg, key, positive=False):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ValidationError(f"{key} must be a finite number, got {v!r}")
    if positive and not v > 0:
        raise ValidationError(f"{key} must be positive, got {v!r}")
    return float(v)


def _int(cfg, key, minimum=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ValidationError(f"{key} must be >= {minimum}, got {v!r}")
    return v


def _pair(value, key):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValidationError(f"{key} must be a pair [lo, hi], got {value!r}")
    lo, hi = value
    for v in (lo, hi):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"{key} entries must be numbers, got {value!r}")
    return float(lo), float(hi)


def _range(value, key="range"):
    return RangeScenario(*_pair(value, key))


def _number_list(cfg, key, kind=float):
    v = cfg[key]
    if not isinstance(v, (list, tuple)) or not v:
        raise ValidationError(f"{key} must be a non-empty list, got {v!r}")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or (kind is int and int(x) != x):
            raise ValidationError(f"{key} entries must be {kind.__name__}s, got {x!r}")
        out.append(kind(x))
    return out


def build_params(cfg):
    family = cfg["model"]
    record = {"family": family, "delta": _float(cfg, "delta", positive=True)}
    if family != "two_qubit":
        record.update(mass_ratio=_float(cfg, "mass_ratio", positive=True),
                      cutoff_c=_int(cfg, "cutoff_c", 2), cutoff_k=_int(cfg, "cutoff_k", 1),
                      g_spectator=_float(cfg, "g_spectator"))
    return rec.params_from_record(record)


def build_scenario(cfg, bounds=None):
    return Scenario(
        params=build_params(cfg),
        g1=_float(cfg, "g1"),
        g2=_float(cfg, "g2"),
        range=bounds or _range(cfg["range"]),
        fidelity_mode=cfg["fidelity_mode"],
        threshold=_float(cfg, "threshold"),
    )


def _schedule_options(cfg):
    schedule = _number_list(cfg, "m_schedule", int)
    if any(m < 1 for m in schedule) or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError(f"m_schedule must be ascending positive integers, got {schedule}")
    eps_m = _float(cfg, "eps_m")
    if eps_m < 0:
        raise ValidationError("eps_m must be >= 0")
    return {
        "m_schedule": schedule,
        "eps_m": eps_m,
        "n_restarts": _int(cfg, "restarts", 0),
        "seed": _int(cfg, "seed", 0),
        "rtol": _float(cfg, "rtol", positive=True),
        "atol": _float(cfg, "atol", positive=True),
    }


def _output_dir(cfg):
    out = cfg["output"]
    if not isinstance(out, str) or not out:
        raise ValidationError("output must be a directory path")
    return Path(out)


# commands

def cmd_optimize(cfg):
    scenario = build_scenario(cfg)
    duration = _float(cfg, "T", positive=True) if cfg["T"] is not None else None
    if duration is None:
        raise ValidationError("optimize needs a fixed duration T")
    opts = _schedule_options(cfg)
    n_samples = _int(cfg, "n_samples", 2)
    out = _output_dir(cfg)

    esc = escalate_m(scenario, duration, opts.pop("m_schedule"), n_samples=n_samples, **opts)
    outcome = esc.outcome
    header = cfg.header()
    payload = rec.outcome_to_record(outcome)
    payload["m_history"] = [[m, f, best] for m, f, best in esc.history]
    out.mkdir(parents=True, exist_ok=True)
    rec.write_text(out / "outcome.json", rec.dumps_json(header, payload))
    rec.write_text(out / "trajectory.csv",
                   rec.csv_text(header, ["t", "g", "F"], rec.trajectory_rows(outcome.trajectory)))
    rec.write_text(out / "field.csv",
                   rec.csv_text(header, ["t", "g"], rec.field_rows(outcome.protocol(), n_samples)))
    print(f"T={duration:g} M={outcome.m_points} F={outcome.best_fidelity:.10f}")
    return EXIT_OK


def _qsl_ranges(cfg):
    if cfg["widen"] is not None:
        bounds = _number_list(cfg, "widen")
        if any(b <= 0 for b in bounds):
            raise ValidationError("widen entries must be positive bounds g_B")
        return [RangeScenario(-b, b) for b in bounds]
    if cfg["ranges"] is not None:
        if not isinstance(cfg["ranges"], (list, tuple)) or not cfg["ranges"]:
            raise ValidationError("ranges must be a non-empty list of [g_min, g_max] pairs")
        return [_range(r, "ranges") for r in cfg["ranges"]]
    return [_range(cfg["range"])]


def cmd_qsl(cfg):
    scenarios = [build_scenario(cfg, bounds) for bounds in _qsl_ranges(cfg)]
    bracket = _pair(cfg["t_bracket"], "t_bracket")
    if not 0 < bracket[0] < bracket[1]:
        raise ValidationError(f"t_bracket must satisfy 0 < lo < hi, got {list(bracket)}")
    resolution = _float(cfg, "resolution", positive=True)
    opts = _schedule_options(cfg)
    out = _output_dir(cfg)

    header = cfg.header()
    results = []
    for s in scenarios:
        try:
            est = estimate_qsl(s, t_bracket=bracket, resolution=resolution, **opts)
        except BracketError as exc:
            raise BracketError(f"range [{s.range.g_min:g}, {s.range.g_max:g}]: {exc}") from None
        if est.at_floor:
            print(f"warning: threshold {s.threshold} already met at T={est.t_qsl:g} "
                  f"for range [{s.range.g_min:g}, {s.range.g_max:g}]; estimate is degenerate",
                  file=sys.stderr)
        results.append((s, est))

    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for s, est in results:
        label = f"range_{s.range.g_min:g}_{s.range.g_max:g}"
        sub = out / label if len(results) > 1 else out
        sub.mkdir(parents=True, exist_ok=True)
        rec.write_text(sub / "scan.csv",
                       rec.csv_text(header, ["T", "M_used", "F_max"], rec.scan_rows(est.scan)))
        summary.append({
            "range": [s.range.g_min, s.range.g_max],
            "t_qsl": est.t_qsl,
            "threshold": est.threshold,
            "resolution": est.resolution,
            "at_floor": est.at_floor,
            "scan": [[t, f, m] for t, f, m in est.scan],
        })
        print(f"range [{s.range.g_min:g}, {s.range.g_max:g}]: T_QSL={est.t_qsl:.4f}")
    rec.write_text(out / "qsl.json", rec.dumps_json(header, {"estimates": summary}))
    rows = [(e["range"][0], e["range"][1], e["t_qsl"], int(e["at_floor"])) for e in summary]
    rec.write_text(out / "qsl.csv",
                   rec.csv_text(header, ["g_min", "g_max", "T_qsl", "at_floor"], rows))
    return EXIT_OK


def _load_outcome(cfg):
    if not isinstance(cfg["outcome"], str):
        raise ValidationError("an outcome record path is required (key 'outcome')")
    return rec.load_outcome(cfg["outcome"])


def cmd_noise(cfg):
    outcome = _load_outcome(cfg)
    sigmas = _number_list(cfg, "sigmas")
    if any(s < 0 for s in sigmas):
        raise ValidationError("sigmas must be >= 0")
    n = _int(cfg, "n_realizations", 1)
    seed = _int(cfg, "seed", 0)
    clamp = cfg["clamp_noisy"]
    if not isinstance(clamp, bool):
        raise ValidationError("clamp_noisy must be true or false")
    rtol, atol = _float(cfg, "rtol", positive=True), _float(cfg, "atol", positive=True)
    out = _output_dir(cfg)

    prepare(outcome.scenario)
    reports = noise_sweep(outcome, sigmas, n_realizations=n, seed=seed, clamp_noisy=clamp,
                          rtol=rtol, atol=atol)
    header = cfg.header()
    out.mkdir(parents=True, exist_ok=True)
    rows = [(r.sigma, r.mean_f, r.std_f, r.sem_f) for r in reports]
    rec.write_text(out / "noise.csv",
                   rec.csv_text(header, ["sigma", "mean_f", "std_f", "sem_f"], rows))
    rec.write_text(out / "noise.json",
                   rec.dumps_json(header, {"optimized_fidelity": outcome.best_fidelity,
                                           "reports": [r.to_record() for r in reports]}))
    for r in reports:
        flag = "" if r.valid else "  (invalid: too many failed realizations)"
        print(f"sigma={r.sigma:g} mean={r.mean_f:.6f} sem={r.sem_f:.2e}{flag}")
    return EXIT_OK if all(r.valid for r in reports) else EXIT_NUMERICAL


def _alternative_params(params, cutoff):
    if isinstance(params, FermionModelParams):
        return FermionModelParams(params.mass_ratio, cutoff), "C"
    if isinstance(params, ThreeComponentParams):
        return ThreeComponentParams(params.base, cutoff, params.g_spectator), "K"
    raise ValidationError("cutoff convergence needs a fermion model")


def cmd_converge(cfg):
    outcome = _load_outcome(cfg)
    params = outcome.scenario.params
    cutoffs = _number_list(cfg, "cutoffs", int)
    alternatives = [_alternative_params(params, c) for c in cutoffs]
    original = params.cutoff_c if isinstance(params, FermionModelParams) else params.cutoff_k
    if any(c < original for c in cutoffs):
        raise ValidationError(f"cutoffs {cutoffs} include values below the original {original}")
    flag = _float(cfg, "flag_delta", positive=True)
    n_samples = _int(cfg, "n_samples", 2)
    out = _output_dir(cfg)

    reference = reevaluate_protocol(outcome, params, n_samples=n_samples)
    header = cfg.header()
    rows, files = [], {}
    for (alt, letter), c in zip(alternatives, cutoffs):
        tr = reference if c == original else reevaluate_protocol(outcome, alt, n_samples=n_samples)
        delta = tr.final_fidelity - reference.final_fidelity
        max_dev = float(np.max(np.abs(tr.fidelities - reference.fidelities)))
        rows.append((c, tr.final_fidelity, delta, max_dev, int(max_dev > flag)))
        files[f"trajectory_{letter}{c}.csv"] = rec.csv_text(
            header, ["t", "g", "F"], rec.trajectory_rows(tr))
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        rec.write_text(out / name, text)
    rec.write_text(out / "converge.csv", rec.csv_text(
        header, ["cutoff", "F_final", "delta", "max_deviation", "flagged"], rows))
    for c, f, d, dev, flagged in rows:
        print(f"cutoff {c}: F={f:.8f} delta={d:+.2e} max|dF(t)|={dev:.2e}"
              + ("  FLAGGED" if flagged else ""))
    return EXIT_OK


def cmd_spectrum(cfg):
    params = build_params(cfg)
    lo, hi, n = cfg["g_grid"] if isinstance(cfg["g_grid"], (list, tuple)) and \
        len(cfg["g_grid"]) == 3 else (None, None, None)
    if n is None or isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ValidationError("g_grid must be [g_start, g_stop, n_points]")
    lo, hi = _pair([lo, hi], "g_grid")
    n_levels = _int(cfg, "n_levels", 1)
    out = _output_dir(cfg)

    model = build_model(params)
    n_levels = min(n_levels, model.dim)
    rows = []
    for g in np.linspace(lo, hi, n):
        rows.append((g, *spectrum(model.hamiltonian(g), n_levels).energies))
    out.mkdir(parents=True, exist_ok=True)
    rec.write_text(out / "spectrum.csv", rec.csv_text(
        cfg.header(), ["g"] + [f"E{i}" for i in range(n_levels)], rows))
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "qsl": cmd_qsl,
    "noise": cmd_noise,
    "converge": cmd_converge,
    "spectrum": cmd_spectrum,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rampopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="YAML or JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("-o", "--output", help="output directory")
        p.add_argument("--seed", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    explicit = {}
    if args.output is not None:
        explicit["output"] = args.output
    if args.seed is not None:
        explicit["seed"] = args.seed
    try:
        cfg = load_config(args.config, args.overrides, explicit)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BracketError as exc:
        print(f"error: {exc}\nadvice: widen t_bracket or lower the threshold", file=sys.stderr)
        return EXIT_BRACKET
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
