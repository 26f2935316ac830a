"""Command line front-end.

    wickfk --config run.json [--mode solve] [--seed N] [--threads N]
           [--output PATH] [--estimator.n_samples=20000 ...]

Exit codes: 0 success, 2 configuration error, 3 numerical or diagnostic
failure, 4 failed comparison.  Problems are reported on stderr, one line
each, prefixed with a stable event code.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import expr as ex
from .data_function import DataFunction, augment_velocity
from .domain import DomainSpec, GeometryError
from .estimator import EstimatorConfig, IntegrabilityWarning, grid_evaluate, exit_samples
from .exits import TruncationError
from .reference import (CflError, WaveData, WaveFdConfig, fd_continuation_check, harmonic_check,
                        solve_mean_exit_ode, exit_probability_ode, wave_fd_solve)
from .sde import NumericalError, SdeSpec, StepConfig

MODES = ("solve", "dt", "exit-stats", "reference", "compare", "selftest")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_COMPARE = 0, 2, 3, 4
CSV_FIELDS = ("u_re", "u_im", "stderr_re", "stderr_im", "n", "tau_mean", "tau_max", "flags")

DEFAULTS = {
    "problem": {"dim": 1, "domain": {"type": "interval", "a": 0.0, "b": 1.0},
                "drift": "0", "diffusion": "1", "f": "exp(x1 + z)", "phi": None},
    "estimator": {"n_samples": 10000, "h": 1e-3, "seed": 0, "antithetic": False,
                  "rao_blackwell": "off", "max_steps": None, "common_random_numbers": False},
    "output": {"t_grid": [0.5], "x_grid": [0.5], "format": "csv", "path": None},
    "mode": "solve",
}


class ConfigError(ValueError):
    pass


def emit(code: str, message: str) -> None:
    print(f"{code}: {' '.join(str(message).split())}", file=sys.stderr)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "domain":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, items: list[str]) -> dict:
    """Apply ``--a.b=value`` (or ``--a.b value``) overrides; values are JSON when they parse."""
    cfg = copy.deepcopy(cfg)
    i = 0
    while i < len(items):
        item = items[i]
        if not item.startswith("--") or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"unrecognised argument {item!r}")
        if "=" in item:
            key, raw = item[2:].split("=", 1)
        else:
            if i + 1 >= len(items):
                raise ConfigError(f"override {item} has no value")
            key, raw = item[2:], items[i + 1]
            i += 1
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = _parse_value(raw)
        i += 1
    return cfg


def _domain(spec: dict, dim: int) -> DomainSpec:
    kind = spec.get("type")
    tol = float(spec.get("boundary_tol", 1e-12))
    if kind == "interval":
        if dim != 1:
            raise ConfigError("an interval domain needs dim = 1")
        return DomainSpec.interval(float(spec["a"]), float(spec["b"]), tol)
    if kind == "box":
        return DomainSpec.box(spec["lo"], spec["hi"], tol)
    if kind == "ball":
        return DomainSpec.ball(spec["center"], float(spec["radius"]), tol)
    if kind == "generic":
        return DomainSpec.generic(spec["indicator"], spec["lo"], spec["hi"], spec.get("interior"),
                                  tol)
    raise ConfigError(f"unknown domain type {kind!r}")


@dataclass
class Problem:
    """Everything a run needs, built and validated from the JSON config."""

    config: dict
    spec: SdeSpec
    dom: DomainSpec
    f: DataFunction
    est: EstimatorConfig
    t_grid: np.ndarray
    x_grid: np.ndarray
    crn: bool

    @classmethod
    def from_dict(cls, cfg: dict, threads: int = 1) -> "Problem":
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
        cfg = _merge(DEFAULTS, cfg)
        if cfg["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        p, e, o = cfg["problem"], cfg["estimator"], cfg["output"]
        for section, allowed in (("problem", DEFAULTS["problem"]),
                                 ("estimator", DEFAULTS["estimator"]),
                                 ("output", DEFAULTS["output"])):
            extra = set(cfg[section]) - set(allowed)
            if extra:
                raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")
        try:
            dim = int(p["dim"])
            dom = _domain(p["domain"], dim)
            if dom.dim != dim:
                raise ConfigError("domain dimension does not match problem.dim")
            spec = SdeSpec.from_strings(dim, p["drift"], p["diffusion"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ex.EntirenessWarning)
                f = DataFunction.parse(str(p["f"]), dim)
            if p.get("phi"):
                f = augment_velocity(f, str(p["phi"]), dom)
            step = StepConfig(float(e["h"]), e["max_steps"] and int(e["max_steps"]))
            est = EstimatorConfig(int(e["n_samples"]), bool(e["antithetic"]),
                                  str(e["rao_blackwell"]), int(e["seed"]), step, max(1, threads))
        except ex.ExprSyntaxError as err:
            raise ConfigError(f"expression error: {err}") from err
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
        t_grid = np.asarray(o["t_grid"], dtype=float).ravel()
        xs = np.asarray(o["x_grid"], dtype=float)
        xs = xs.reshape(-1, 1) if xs.ndim <= 1 else xs
        if t_grid.size == 0 or xs.shape[0] == 0:
            raise ConfigError("t_grid and x_grid must be non-empty")
        if np.any(t_grid < 0):
            raise ConfigError("t_grid must lie in [0, inf)")
        if xs.shape[1] != dim:
            raise ConfigError(f"x_grid points must have {dim} coordinates")
        for xp in xs:
            if not dom.in_closure(xp):
                raise ConfigError(f"x_grid point {xp.tolist()} is outside the closed domain")
        if o["format"] not in ("csv", "json"):
            raise ConfigError("output.format must be csv or json")
        return cls(cfg, spec, dom, f, est, t_grid, xs, bool(e["common_random_numbers"]))


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for floats."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _flags(est) -> str:
    out = []
    if est.exact:
        out.append("exact")
    if est.diag.rao_blackwell:
        out.append("rb")
    if est.diag.tail_flagged:
        out.append("tail")
    if est.diag.truncated_count:
        out.append(f"trunc{est.diag.truncated_count}")
    return "|".join(out) or "-"


def table_rows(table):
    for t, x, est in table.rows():
        yield ([float(t)] + [float(v) for v in x]
               + [est.mean.real, est.mean.imag, est.stderr_re, est.stderr_im, est.n_effective,
                  est.tau_mean, est.tau_max, _flags(est)])


def echo_config(config: dict) -> dict:
    """The config as echoed into outputs; the output path is dropped so
    that the same run written to two places gives identical files."""
    out = copy.deepcopy(config)
    out.get("output", {}).pop("path", None)
    return out


def write_table(rows, dim: int, config: dict, fmt_name: str) -> str:
    header = ["t"] + [f"x{i + 1}" for i in range(dim)] + list(CSV_FIELDS)
    config = echo_config(config)
    echo = json.dumps(config, sort_keys=True, separators=(",", ":"))
    if fmt_name == "json":
        cells = [dict(zip(header, r)) for r in rows]
        return json.dumps({"config": config, "cells": cells}, sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# {echo}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _write(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# modes
# --------------------------------------------------------------------------

def run_solve(pb: Problem, derivative: bool = False) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrabilityWarning)
        table = grid_evaluate(pb.f, pb.spec, pb.dom, pb.t_grid, pb.x_grid, pb.est,
                              derivative=derivative, common_random_numbers=pb.crn)
    rows = list(table_rows(table))
    _write(write_table(rows, pb.spec.dim, pb.config, pb.config["output"]["format"]),
           pb.config["output"]["path"])
    code = EXIT_OK
    for t, x, est in table.rows():
        if est.diag.tail_flagged:
            emit("E_TAIL", f"integrability suspect at t={t!r} x={x.tolist()}")
            code = EXIT_NUMERIC
    return code


def run_exit_stats(pb: Problem, dump: Optional[str]) -> int:
    out = {"config": echo_config(pb.config), "points": []}
    oracle = None
    oracle_p = None
    if pb.spec.dim == 1 and pb.dom.kind == 0:
        oracle = solve_mean_exit_ode(pb.spec, pb.dom, 2001)
        oracle_p = exit_probability_ode(pb.spec, pb.dom, 2001)
    for j, x in enumerate(pb.x_grid):
        batch = exit_samples(pb.spec, pb.dom, x, pb.est.step, pb.est.seed, pb.est.n_samples,
                             pb.est.workers)
        if dump:
            batch.write_csv(dump if len(pb.x_grid) == 1 else f"{dump}.{j}")
        ok = ~batch.truncated
        if batch.truncated.mean() > pb.est.truncation_limit:
            raise TruncationError(f"x={x.tolist()}: {batch.truncated_count} truncated exit samples")
        tau = batch.tau[ok]
        counts, edges = np.histogram(tau, bins=40)
        row = {"x": x.tolist(), "n": int(ok.sum()), "tau_mean": float(tau.mean()),
               "tau_stderr": float(tau.std(ddof=1) / math.sqrt(tau.size)),
               "tau_var": float(tau.var(ddof=1)), "tau_max": float(tau.max()),
               "truncated": batch.truncated_count,
               "histogram": {"edges": edges.tolist(), "counts": counts.tolist()}}
        if oracle is not None:
            right = batch.x_exit[ok, 0] >= pb.dom.hi[0] - 1e-9
            row["tau_oracle"] = float(oracle(x[0]))
            row["right_exit_fraction"] = float(right.mean())
            row["right_exit_oracle"] = float(oracle_p(x[0]))
        out["points"].append(row)
    _write(json.dumps(out, indent=1, sort_keys=True) + "\n", pb.config["output"]["path"])
    return EXIT_OK


def _fd_grid(pb: Problem, T: float):
    lo, hi = pb.dom.lo[0], pb.dom.hi[0]
    nx = 201
    dt = 0.5 * ((hi - lo) / (nx - 1)) / math.sqrt(2 * max(_max_a(pb), 1e-300))
    return WaveFdConfig(nx, dt, T, hi - lo), lo, hi


def run_reference(pb: Problem) -> int:
    if pb.spec.dim != 1 or pb.dom.kind != 0:
        raise ConfigError("reference mode needs a 1D interval problem")
    T = float(pb.t_grid.max())
    fd, lo, hi = _fd_grid(pb, T)
    f = pb.f

    def side(xb):
        return lambda s: np.array([complex(f(complex(si), np.array([xb]))).real
                                   for si in np.atleast_1d(s)])

    data = WaveData(side(lo), side(hi),
                    lambda x: np.array([complex(f(0j, np.array([xi]))).real for xi in x]),
                    lambda x: np.array([complex(f.dz(0j, np.array([xi]))).real for xi in x]))
    sol = wave_fd_solve(pb.spec, pb.dom, data, fd)
    rows = []
    for t in pb.t_grid:
        k = int(np.argmin(np.abs(sol.t - t)))
        for x in pb.x_grid:
            u = float(np.interp(x[0], sol.x, sol.u[k]))
            rows.append([float(t), float(x[0]), u, 0.0, 0.0, 0.0, 0, 0.0, 0.0,
                         f"fd(t={float(sol.t[k])!r})"])
    _write(write_table(rows, 1, pb.config, pb.config["output"]["format"]),
           pb.config["output"]["path"])
    return EXIT_OK


def run_compare(pb: Problem) -> int:
    if pb.spec.dim != 1 or pb.dom.kind != 0:
        raise ConfigError("compare mode needs a 1D interval problem")
    reports = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IntegrabilityWarning)
        if not pb.f.depends_on_z:
            reports.append(harmonic_check(pb.f, pb.spec, pb.dom, pb.x_grid, pb.est,
                                          t_values=[t for t in pb.t_grid if t > 0] or [0.5]))
        else:
            pos = sorted(t for t in pb.t_grid if t > 0)
            if len(pos) < 2:
                raise ConfigError("compare mode needs two positive times in t_grid (t0 < t1)")
            t0, t1 = pos[0], pos[-1]
            length = pb.dom.hi[0] - pb.dom.lo[0]
            dt = 0.5 * (length / 20) / math.sqrt(2 * _max_a(pb))
            fd = WaveFdConfig(21, dt, t1 - t0, length)
            reports.append(fd_continuation_check(pb.f, pb.spec, pb.dom, t0, t1, pb.est, fd,
                                                 compare_x=pb.x_grid[:, 0]))
    payload = {"config": echo_config(pb.config), "reports": [r.to_dict() for r in reports]}
    _write(json.dumps(payload, indent=1, sort_keys=True) + "\n", pb.config["output"]["path"])
    code = EXIT_OK
    for r in reports:
        if not r.passed:
            emit("E_COMPARE", f"{r.name}: max_abs_error={float(r.max_abs_error)!r} "
                              f"budget={float(r.stderr_budget)!r}")
            code = EXIT_COMPARE
    if any(issubclass(w.category, IntegrabilityWarning) for w in caught):
        emit("E_TAIL", "integrability suspect in at least one Monte Carlo estimate")
        if code == EXIT_OK:
            code = EXIT_NUMERIC
    return code


def _max_a(pb: Problem) -> float:
    xs = np.linspace(pb.dom.lo[0], pb.dom.hi[0], 201)
    return max(float(pb.spec.covariance(np.array([x]))[0, 0]) for x in xs)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wickfk", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
    ap.add_argument("--output", help="output path (default: stdout)")
    ap.add_argument("--dump-exits", metavar="PATH", help="exit-stats mode: write raw exit samples")
    return ap


def effective_config(args, extra: list[str]) -> dict:
    cfg = load_config(args.config) if args.config else {}
    cfg = apply_overrides(cfg, extra)
    if args.mode:
        cfg["mode"] = args.mode
    if args.seed is not None:
        cfg.setdefault("estimator", {})["seed"] = args.seed
    if args.output:
        cfg.setdefault("output", {})["path"] = args.output
    return cfg


def main(argv=None) -> int:
    args, extra = build_parser().parse_known_args(argv)
    try:
        cfg = effective_config(args, extra)
        mode = cfg.get("mode", "solve")
        if mode == "selftest":
            from .selftest import run_selftest
            return EXIT_OK if run_selftest(verbose=True) else EXIT_COMPARE
        if not args.config:
            raise ConfigError("--config is required")
        pb = Problem.from_dict(cfg, args.threads)
        if pb.config["mode"] in ("solve", "dt"):
            return run_solve(pb, derivative=pb.config["mode"] == "dt")
        if pb.config["mode"] == "exit-stats":
            return run_exit_stats(pb, args.dump_exits)
        if pb.config["mode"] == "reference":
            return run_reference(pb)
        return run_compare(pb)
    except ConfigError as err:
        emit("E_CONFIG", err)
        return EXIT_CONFIG
    except TruncationError as err:
        emit("E_TRUNC", err)
        return EXIT_NUMERIC
    except CflError as err:
        emit("E_CFL", err)
        return EXIT_NUMERIC
    except (NumericalError, GeometryError, ex.EvaluationError, FloatingPointError) as err:
        emit("E_NUMERIC", err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
