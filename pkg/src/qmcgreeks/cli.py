"""Configuration-driven command line runner.

Every subcommand reads one JSON config (see ``CONFIG_SCHEMA``) and writes
CSV and/or JSON reports.  Each output embeds the config hash, the generator
descriptors and the package versions; no timestamps are written, so equal
configs give byte-identical files.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import sklearn

from . import __version__
from .analysis import (
    fit_power_law,
    method_label,
    rmse_curve,
    speedup,
    stability_trace,
    write_convergence_csv,
    write_fits_csv,
    write_speedup_csv,
    write_stability_csv,
)
from .engine import GeneratorSpec, SimulationRun, Target, aad_greeks, canonical_hash, estimate, fd_greeks
from .exceptions import ConfigurationError, QMCGreeksError
from .gsa import gsa_on_pricer, write_gsa_csv
from .oracle import FIXTURE_PATHS, FIXTURE_SEEDS, build_fixture, cliquet_fixture, load_fixture, save_fixture
from .paths import MarketModel, SchemeSpec, TimeGrid
from .payoffs import Cliquet, payoff_from_dict

__all__ = ["CONFIG_SCHEMA", "load_config", "build_runs", "main"]

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_posvec = {"type": "array", "items": _pos, "minItems": 1}
_target = {"type": "string", "pattern": "^(PRICE|(DELTA|GAMMA|VEGA)_[0-9]+)$"}


def _payoff_schema(kind, props, required):
    return {
        "type": "object",
        "properties": {"kind": {"const": kind}, **props},
        "required": ["kind", *required],
        "additionalProperties": False,
    }


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "S0": _posvec,
                "sigma": _posvec,
                "rho": {"type": "number", "minimum": -1, "maximum": 1},
                "R": {"type": "array", "items": _vec},
                "r": _num,
                "T": _pos,
            },
            "required": ["S0", "sigma"],
            "not": {"required": ["rho", "R"]},
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {
                "n_steps": {"type": "integer", "minimum": 1},
                "times": _posvec,
            },
            "oneOf": [{"required": ["n_steps"]}, {"required": ["times"]}],
            "additionalProperties": False,
        },
        "payoff": {
            "oneOf": [
                _payoff_schema("ASIAN", {"K": _pos}, ["K"]),
                _payoff_schema("GEOMETRIC_ASIAN", {"K": _pos}, ["K"]),
                _payoff_schema("DOUBLE_KO", {"K": _pos, "B_l": _num, "B_u": _num}, ["K", "B_l", "B_u"]),
                _payoff_schema("CLIQUET", {"C_cap": _num, "F_floor": _num}, ["C_cap", "F_floor"]),
                _payoff_schema("EURO_BASKET", {"K": _pos, "w": _vec}, ["K", "w"]),
                _payoff_schema("ASIAN_BASKET", {"K": _pos, "w": _vec}, ["K", "w"]),
            ]
        },
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "generator": {"enum": ["SOBOL", "PSEUDO"]},
                    "seed": {"type": "integer", "minimum": 0},
                    "section_index": {"type": "integer", "minimum": 0},
                    "time_scheme": {"enum": ["SD", "BBD", "PCA_TIME"]},
                    "factorization": {"enum": ["CHOL", "PCA_FACTOR"]},
                },
                "required": ["generator"],
                "additionalProperties": False,
            },
        },
        "N": {"type": "integer", "minimum": 1},
        "N_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4},
        "L": {"type": "integer", "minimum": 2},
        "shift": _pos,
        "greeks_method": {"enum": ["FD", "AAD", "BOTH"]},
        "gsa_samples": {"type": "integer", "minimum": 2},
        "targets": {"type": "array", "items": _target, "minItems": 1},
        "accuracies": _posvec,
        "stability": {
            "type": "object",
            "properties": {
                "N_start": {"type": "integer", "minimum": 1},
                "N_stop": {"type": "integer", "minimum": 1},
                "N_step": {"type": "integer", "minimum": 1},
                "windows": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "fixture": {
            "type": "object",
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "seeds": {"type": "integer", "minimum": 1},
                "directory": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["model", "grid", "payoff"],
    "additionalProperties": False,
}

DEFAULTS = {
    "methods": [{"generator": "SOBOL"}],
    "N": 2**12,
    "N_list": [2**p for p in range(9, 16)],
    "L": 50,
    "shift": 1e-3,
    "greeks_method": "FD",
    "gsa_samples": 2**13,
    "targets": ["PRICE"],
    "accuracies": [0.01, 0.001],
    "stability": {"N_start": 100, "N_stop": 10000, "N_step": 100, "windows": 10},
    "fixture": {"N": FIXTURE_PATHS, "seeds": FIXTURE_SEEDS},
}
METHOD_DEFAULTS = {"seed": 0, "section_index": 0, "time_scheme": "SD", "factorization": "CHOL"}
MODEL_DEFAULTS = {"r": 0.0, "T": 1.0}


def _schema_message(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    best = jsonschema.exceptions.best_match([err])
    return f"invalid config at {where}: {best.message}"


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and fill every default explicitly."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigurationError("; ".join(_schema_message(e) for e in errors))
    cfg = json.loads(json.dumps(raw))
    for k, v in DEFAULTS.items():
        if isinstance(v, dict):
            cfg[k] = {**v, **cfg.get(k, {})}
        else:
            cfg.setdefault(k, json.loads(json.dumps(v)))
    cfg["model"] = {**MODEL_DEFAULTS, **cfg["model"]}
    cfg["methods"] = [{**METHOD_DEFAULTS, **m} for m in cfg["methods"]]
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return resolve_config(raw)


def config_hash(cfg: dict) -> str:
    return canonical_hash(cfg)[:16]


def _model(cfg) -> MarketModel:
    m = cfg["model"]
    if "rho" in m:
        return MarketModel.equicorrelated(m["S0"], m["sigma"], m["rho"], r=m["r"], T=m["T"])
    return MarketModel(m["S0"], m["sigma"], m.get("R"), m["r"], m["T"])


def _grid(cfg, T) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid.uniform(T, g["n_steps"]) if "n_steps" in g else TimeGrid(g["times"])


def build_runs(cfg: dict, workers: int = 1) -> list[SimulationRun]:
    """One :class:`SimulationRun` per configured method."""
    model = _model(cfg)
    grid = _grid(cfg, model.T)
    pay = payoff_from_dict(cfg["payoff"])
    runs = []
    for m in cfg["methods"]:
        gen = GeneratorSpec(m["generator"], m["seed"], m["section_index"])
        scheme = SchemeSpec(m["time_scheme"], m["factorization"])
        runs.append(SimulationRun(model, grid, pay, scheme, gen, cfg["N"], cfg["shift"], workers=workers))
    return runs


class Emitter:
    """Writes reports with a shared provenance block."""

    def __init__(self, out: Path, emit: str, cfg: dict, runs):
        self.out = Path(out)
        self.emit = emit
        self.provenance = {
            "config_hash": config_hash(cfg),
            "config": cfg,
            "generators": [r.generator.descriptor(r.dimension, r.N) for r in runs],
            "versions": {"qmcgreeks": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "scikit-learn": sklearn.__version__},
        }
        self.out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def _header(self) -> str:
        p = self.provenance
        lines = [
            f"# config_hash: {p['config_hash']}",
            "# generators: " + json.dumps(p["generators"], sort_keys=True),
            "# versions: " + json.dumps(p["versions"], sort_keys=True),
        ]
        return "\n".join(lines) + "\n"

    def csv(self, name: str, writer, *args):
        if self.emit not in ("csv", "both"):
            return
        buf = io.StringIO()
        buf.write(self._header())
        writer(*args, buf)
        self._write(name + ".csv", buf.getvalue())

    def json(self, name: str, payload):
        if self.emit not in ("json", "both"):
            return
        doc = {"provenance": self.provenance, "results": payload}
        self._write(name + ".json", json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def _write(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.written.append(path)


def _rows_csv(header, rows, fh):
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def cmd_price(cfg, runs, em):
    rows, payload = [], []
    for run in runs:
        m, se = estimate(run, "PRICE")
        label = method_label(run)
        rows.append([label, run.N, run.dimension, _fmt(m), _fmt(se)])
        payload.append({"method": label, "price": m, "std_error": se, "metadata": run.metadata()})
    em.csv("price", lambda fh: _rows_csv(["method", "N", "D", "price", "std_error"], rows, fh))
    em.json("price", payload)


def cmd_greeks(cfg, runs, em):
    which = {"FD": (fd_greeks,), "AAD": (aad_greeks,), "BOTH": (fd_greeks, aad_greeks)}[cfg["greeks_method"]]
    rows, payload = [], []
    for run in runs:
        label = method_label(run)
        for fn in which:
            rep = fn(run)
            for q, asset, v, s, meth in rep.rows():
                rows.append([label, rep.method, q, asset, _fmt(v), _fmt(s), meth])
            payload.append({"method": label, "report": rep.to_dict()})
    em.csv("greeks", lambda fh: _rows_csv(
        ["method", "estimator", "quantity", "asset", "value", "std_error", "quantity_method"], rows, fh))
    em.json("greeks", payload)


def cmd_gsa(cfg, runs, em):
    seen = set()
    for run in runs:
        if run.scheme.label in seen:
            continue
        seen.add(run.scheme.label)
        for tgt in cfg["targets"]:
            rep = gsa_on_pricer(run, tgt, cfg["gsa_samples"])
            name = f"gsa_{run.payoff.kind}_{tgt}_{run.scheme.label}".replace("+", "_")
            em.csv(name, write_gsa_csv, rep)
            em.json(name, rep.to_dict())


def _curves(cfg, runs, fixtures=None):
    out = []
    for tgt in cfg["targets"]:
        V = load_fixture(runs[0], tgt, fixtures).value
        for run in runs:
            c = rmse_curve(run, cfg["N_list"], cfg["L"], V, tgt)
            out.append((tgt, run, c, fit_power_law(c)))
    return out


def _emit_curves(em, curves):
    em.csv("convergence", write_convergence_csv, [c for _, _, c, _ in curves])
    em.csv("fits", write_fits_csv, [(c.method, t, f) for t, _, c, f in curves])
    em.json("convergence", [
        {"method": c.method, "target": t, "N": c.N_values.tolist(), "rmse": c.rmse.tolist(),
         "L": c.L, "reference": c.reference, "slope": f.slope, "stderr_slope": f.stderr_slope,
         "intercept_at_512": f.intercept_at_N0, "stderr_intercept": f.stderr_intercept}
        for t, _, c, f in curves
    ])


def cmd_convergence(cfg, runs, em):
    _emit_curves(em, _curves(cfg, runs, cfg["fixture"].get("directory")))


def _budget(fx):
    """Total simulated paths behind a fixture (``None`` for semi-analytic ones)."""
    p = fx.provenance
    if "paths_per_seed" in p and "seeds" in p:
        return p["paths_per_seed"] * p["seeds"]
    return None


def cmd_speedup(cfg, runs, em):
    fixtures = cfg["fixture"].get("directory")
    for tgt in cfg["targets"]:  # fail fast before any simulation
        load_fixture(runs[0], tgt, fixtures)
    if len(runs) < 2:
        raise ConfigurationError("speed-up needs at least two methods (the first is the baseline)")
    curves = _curves(cfg, runs, fixtures)
    _emit_curves(em, curves)
    rows, payload = [], []
    for tgt in cfg["targets"]:
        fx = load_fixture(runs[0], tgt, fixtures)
        group = [(c, f) for t, _, c, f in curves if t == tgt]
        (base_c, base_f), others = group[0], group[1:]
        for c, f in others:
            for a in cfg["accuracies"]:
                res = speedup(base_f, f, a, fx.value, max_paths=_budget(fx), floor=fx.std_error)
                pair = f"{tgt}:{base_c.method}/{c.method}"
                rows.append((pair, res))
                payload.append({"pair": pair, "a": a, "N_star_A": res.N_star_A, "N_star_B": res.N_star_B,
                                "S_star": res.ratio, "reachable": res.reachable, "note": res.reason})
    em.csv("speedup", write_speedup_csv, rows)
    em.json("speedup", payload)


def cmd_stability(cfg, runs, em):
    st = cfg["stability"]
    N_values = np.arange(st["N_start"], st["N_stop"] + 1, st["N_step"])
    payload = []
    for tgt in cfg["targets"]:
        for run in runs:
            tr = stability_trace(run, N_values, st["windows"], tgt)
            label = method_label(run)
            name = f"stability_{tgt}_{label}".replace("+", "_")
            em.csv(name, lambda fh: write_stability_csv(tr, fh, label))
            payload.append({"method": label, "target": tgt, "m": tr.window_means.tolist(),
                            "s": tr.window_vols.tolist(),
                            "logret": [None if np.isnan(v) else float(v) for v in tr.log_returns]})
    em.json("stability", payload)


def cmd_fixtures(cfg, runs, em, out=None):
    run = runs[0]
    fx_cfg = cfg["fixture"]
    fixtures = build_fixture(run, tuple(cfg["targets"]), N=fx_cfg["N"], seeds=fx_cfg["seeds"])
    if isinstance(run.payoff, Cliquet):
        fixtures = [cliquet_fixture(run, f) if f.label.endswith("PRICE") else f for f in fixtures]
    directory = out or fx_cfg.get("directory")
    for f in fixtures:
        path = save_fixture(f, directory)
        print(f"{f.label}: {f.value:.10g} +/- {f.std_error:.3g} -> {path}")


COMMANDS = {
    "price": cmd_price,
    "greeks": cmd_greeks,
    "gsa": cmd_gsa,
    "convergence": cmd_convergence,
    "speedup": cmd_speedup,
    "stability": cmd_stability,
    "fixtures": cmd_fixtures,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmcgreeks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qmcgreeks {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", default=None,
                       help="output directory (fixtures: defaults to the package fixture store)")
        s.add_argument("--workers", type=int, default=1, help="threads over path chunks")
        s.add_argument("--emit", choices=("csv", "json", "both"), default="both")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        cfg = load_config(args.config)
        runs = build_runs(cfg, args.workers)
        if args.command == "fixtures":
            cmd_fixtures(cfg, runs, None, args.out)
        else:
            em = Emitter(args.out or "results", args.emit, cfg, runs)
            COMMANDS[args.command](cfg, runs, em)
            for path in em.written:
                print(path)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QMCGreeksError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
