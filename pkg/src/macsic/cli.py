"""
Batch experiment driver.

Usage::

    macsic <command> --config run.json --out results/ [--seed N] [--threads N]

The config is one JSON object with keys ``params`` (command-specific block),
and optionally ``command``, ``seed`` and ``out``; command-line flags override
the file.  Each run writes one or more CSV files (header row, ``#`` metadata
lines, 17 significant digits) plus ``summary.json``.  Files are staged and
renamed into place only after every computation succeeded.

Exit codes: 0 success, 2 configuration or precondition error, 3 numerical
envelope exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Callable

import numpy as np

from . import __version__
from .asymptotic import BoundKind, CodeSpec, pe_lower_bound, single_user_pe
from .errors import ContractError, DomainError, UnsupportedRangeError
from .evolution import PowerProfile, evolve, final_pe
from .numerics import gauss_hermite, gaussian_q, marcum_q
from .poweropt import FadingModel, OptimizerSettings, fading_outer_bound, min_ebno_for_rate, optimize_profile
from .simulator import SimConfig, run_simulation

log = logging.getLogger("macsic")

COMMANDS = ("pe-curve", "evolve", "optimize", "tradeoff", "simulate", "validate-marcum")
EXIT_OK, EXIT_CONFIG, EXIT_ENVELOPE = 0, 2, 3
_REQUIRED = object()


class ConfigError(ValueError):
    """Malformed experiment configuration; the message names the field."""


# ---------------------------------------------------------------- validation


def _where(path, msg):
    return ConfigError(f"{path}: {msg}")


def _int(path, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
        raise _where(path, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise _where(path, f"must be >= {lo}, got {v}")
    return v


def _float(path, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise _where(path, f"expected a finite number, got {v!r}")
    return float(v)


def _bool(path, v):
    if not isinstance(v, bool):
        raise _where(path, f"expected true/false, got {v!r}")
    return v


def _string(path, v):
    if not isinstance(v, str):
        raise _where(path, f"expected a string, got {v!r}")
    return v


def _str(choices):
    def conv(path, v):
        if v not in choices:
            raise _where(path, f"expected one of {list(choices)}, got {v!r}")
        return v

    return conv


def _list(item):
    def conv(path, v):
        if not isinstance(v, list) or not v:
            raise _where(path, f"expected a non-empty list, got {v!r}")
        return [item(f"{path}[{i}]", x) for i, x in enumerate(v)]

    return conv


def _grid(path, v):
    """A list of numbers or ``{"start", "stop", "num"}`` (inclusive linspace)."""
    if isinstance(v, dict):
        obj = _object(path, v, {"start": (_float, _REQUIRED), "stop": (_float, _REQUIRED), "num": (lambda p, x: _int(p, x, 1), _REQUIRED)})
        return [float(x) for x in np.linspace(obj["start"], obj["stop"], obj["num"])]
    return _list(_float)(path, v)


def _object(path, v, schema: dict[str, tuple[Callable, Any]]):
    if not isinstance(v, dict):
        raise _where(path, f"expected an object, got {type(v).__name__}")
    unknown = sorted(set(v) - set(schema))
    if unknown:
        raise _where(f"{path}.{unknown[0]}", f"unknown key (allowed: {sorted(schema)})")
    out = {}
    for key, (conv, default) in schema.items():
        sub = f"{path}.{key}"
        if key in v:
            out[key] = conv(sub, v[key])
        elif default is _REQUIRED:
            raise _where(sub, "missing required key")
        else:
            out[key] = default
    return out


def _optional(conv):
    return lambda p, v: None if v is None else conv(p, v)


_FADING = {"L": (lambda p, v: _int(p, v, 1), _REQUIRED), "weights": (_optional(_list(_float)), None), "probabilities": (_optional(_list(_float)), None)}


def _fading(path, v):
    obj = _object(path, v, _FADING)
    return FadingModel(obj["L"], None if obj["weights"] is None else tuple(obj["weights"]), None if obj["probabilities"] is None else tuple(obj["probabilities"]))


def _settings(path, v):
    schema = {}
    for f in fields(OptimizerSettings):
        conv = (lambda p, x: _int(p, x, 1)) if isinstance(f.default, int) else _float
        schema[f.name] = (conv, f.default)
    return OptimizerSettings(**_object(path, v, schema))


def _profile(path, v):
    obj = _object(path, v, {"alphas": (_list(_float), _REQUIRED), "powers": (_list(_float), _REQUIRED)})
    return PowerProfile(tuple(obj["alphas"]), tuple(obj["powers"]))


def _sim_groups(path, v):
    obj = _object(path, v, {"group_sizes": (_list(lambda p, x: _int(p, x, 0)), _REQUIRED), "powers": (_list(_float), _REQUIRED)})
    return tuple(obj["group_sizes"]), tuple(obj["powers"])


_BOUND = _str(("upper", "lower"))
_POS_INT = lambda p, v: _int(p, v, 1)  # noqa: E731
_K_DEFAULT = [4, 8, 16, 32, 64, 128, 256, 512, 1024]

SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "pe-curve": {
        "K": (_list(_POS_INT), _K_DEFAULT),
        "ebno_db": (_grid, {"start": -2.0, "stop": 12.0, "num": 57}),
        "quad_n": (_POS_INT, 300),
    },
    "evolve": {
        "K": (_POS_INT, _REQUIRED),
        "N": (_float, _REQUIRED),
        "profile": (_profile, _REQUIRED),
        "bound": (_BOUND, "upper"),
        "max_iter": (_POS_INT, 10_000),
        "tol": (_float, 1e-9),
    },
    "optimize": {
        "K": (_POS_INT, _REQUIRED),
        "N": (_float, _REQUIRED),
        "target_pe": (_float, 1e-3),
        "bound": (_BOUND, "upper"),
        "eps": (_float, 1e-3),
        "fading": (_optional(_fading), None),
        "settings": (_optional(_settings), None),
        "power_grid": (_optional(_list(_float)), None),
    },
    "tradeoff": {
        "K": (_POS_INT, _REQUIRED),
        "R": (_grid, _REQUIRED),
        "target_pe": (_float, 1e-3),
        "eps": (_float, 1e-3),
        "fading": (_optional(_fading), None),
        "settings": (_optional(_settings), None),
    },
    "simulate": {
        "M": (_POS_INT, _REQUIRED),
        "K": (_POS_INT, _REQUIRED),
        "N": (_float, _REQUIRED),
        "groups": (_sim_groups, _REQUIRED),
        "trials": (_POS_INT, 1000),
        "max_iterations": (lambda p, v: _int(p, v, 0), 30),
        "eta_tol": (_float, 1e-4),
        "renormalize": (_bool, True),
        "p_mode": (_str(("posterior", "genie")), "posterior"),
        "batch_size": (_POS_INT, 64),
        "memory_budget": (_POS_INT, 1 << 30),
    },
    "validate-marcum": {
        "M": (_list(_POS_INT), [100, 1000, 10_000]),
        "a": (_float, 1.0),
        "eps": (_float, 0.5),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: dict
    out: str | None = None
    seed: int = 0
    threads: int = 1


def parse_config(doc: Any, command: str | None = None, out: str | None = None, seed: int | None = None, threads: int | None = None) -> ExperimentConfig:
    """Validate a config document; explicit arguments override its fields."""
    top = _object("config", doc, {
        "command": (_str(COMMANDS), None),
        "params": (lambda p, v: v, {}),
        "seed": (lambda p, v: _int(p, v, 0), 0),
        "out": (_string, None),
        "threads": (_POS_INT, 1),
    })
    cmd = command or top["command"]
    if cmd is None:
        raise _where("config.command", "missing (give it in the file or on the command line)")
    if cmd not in COMMANDS:
        raise _where("command", f"unknown command {cmd!r}")
    if top["command"] is not None and command is not None and top["command"] != command:
        raise _where("config.command", f"file says {top['command']!r} but {command!r} was requested")
    params = _object("params", top["params"], SCHEMAS[cmd])
    return ExperimentConfig(
        cmd,
        params,
        out if out is not None else top["out"],
        _int("seed", seed, 0) if seed is not None else top["seed"],
        _int("threads", threads, 1) if threads is not None else top["threads"],
    )


# ------------------------------------------------------------------ commands


@dataclass(frozen=True)
class Table:
    columns: tuple
    rows: list
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentResult:
    tables: dict  # file name -> Table
    summary: dict


def _db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def _pe_curve(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    rule = gauss_hermite(p["quad_n"])
    ebno_db = np.asarray(p["ebno_db"])
    lin = 10.0 ** (ebno_db / 10.0)
    rows = []
    for K in p["K"]:
        exact = np.atleast_1d(single_user_pe(K, lin, rule))
        lower = np.atleast_1d(pe_lower_bound(K, lin))
        rows += [[K, float(e), float(a), float(b)] for e, a, b in zip(ebno_db, exact, lower)]
    return ExperimentResult({"pe_curve.csv": Table(("K", "ebno_db", "pe_single_user", "pe_lower_bound"), rows)}, {"points": len(rows)})


def _evolve(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    code = CodeSpec(p["K"], p["N"])
    prof = p["profile"]
    traj = evolve(code, prof, p["bound"], p["max_iter"], p["tol"])
    cols = ("iteration", "eta") + tuple(f"v_{j + 1}" for j in range(prof.J))
    rows = [[s.iteration, s.eta, *s.v] for s in traj.states]
    pe = final_pe(code, prof, p["bound"], trajectory=traj)
    summary = {"eta": traj.eta, "iterations": traj.iterations, "converged": traj.converged, "pe": [float(x) for x in pe]}
    return ExperimentResult({"evolve.csv": Table(cols, rows)}, summary)


def _result_summary(res) -> dict:
    return {
        "feasible": res.feasible,
        "verified": res.verified,
        "total_power": res.total_power,
        "ebno_db": res.ebno_db,
        "achieved_pe": res.achieved_pe,
        "eta_hi": res.eta_hi,
        "eta_lo": res.eta_lo,
        "message": res.message,
    }


def _optimize(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    code = CodeSpec(p["K"], p["N"])
    res = optimize_profile(code, p["target_pe"], p["power_grid"], p["bound"], p["fading"], p["eps"], p["settings"])
    rows = [[P, a] for P, a in res.groups]
    table = Table(("P", "alpha"), rows, {"total_power": res.total_power})
    return ExperimentResult({"optimize.csv": table}, _result_summary(res))


def _tradeoff(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    K, fading = p["K"], p["fading"]
    jobs = [(R, b) for R in p["R"] for b in (BoundKind.UPPER, BoundKind.LOWER)]

    def run(job):
        R, b = job
        if R <= 0:
            raise DomainError(f"R must be > 0, got {R!r}")
        log.info("tradeoff K=%d R=%g bound=%s", K, R, b.value)
        return min_ebno_for_rate(K, R, p["target_pe"], b, fading, p["eps"], p["settings"])

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    cols = ["K", "R", "ebno_db_inner", "ebno_db_outer"]
    if fading is not None:
        cols.append("ebno_db_fading_bound")
    rows = []
    for i, R in enumerate(p["R"]):
        inner, outer = results[2 * i], results[2 * i + 1]
        row = [K, R, inner.ebno_db, outer.ebno_db]
        if fading is not None:
            row.append(_db(fading_outer_bound(R, K, p["target_pe"], fading)))
        rows.append(row)
    return ExperimentResult({"tradeoff.csv": Table(tuple(cols), rows)}, {"points": len(rows)})


def _simulate(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    sizes, powers = p["groups"]
    sim = SimConfig(
        p["M"], CodeSpec(p["K"], p["N"]), sizes, powers,
        trials=p["trials"], max_iterations=p["max_iterations"], seed=cfg.seed, eta_tol=p["eta_tol"],
        renormalize=p["renormalize"], p_mode=p["p_mode"], batch_size=p["batch_size"],
        threads=cfg.threads, memory_budget=p["memory_budget"],
    )
    rep = run_simulation(sim)
    J = len(sizes)
    cols = ("iteration", "eta") + tuple(f"v_{j + 1}" for j in range(J))
    traj = [[i, float(e), *map(float, v)] for i, (e, v) in enumerate(zip(rep.eta_trajectory, rep.v_trajectory))]
    users = [[m, int(g), float(e)] for m, (g, e) in enumerate(zip(sim.user_group, rep.per_user_error_rate))]
    summary = {
        "error_rate": rep.error_rate,
        "std_error": rep.std_error,
        "errors": rep.errors,
        "decisions": rep.decisions,
        "iterations": rep.iterations,
        "max_iterations_used": rep.max_iterations_used,
        "converged_fraction": rep.converged_fraction,
        "residual_power": [float(x) for x in rep.residual_power],
    }
    return ExperimentResult({
        "simulate.csv": Table(cols, traj, {"error_rate": rep.error_rate}),
        "users.csv": Table(("user", "group", "error_rate"), users),
    }, summary)


def _validate_marcum(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.params
    a, eps = p["a"], p["eps"]
    limit = float(gaussian_q(eps - a))
    rows = []
    for M in p["M"]:
        val = marcum_q(a * M, M - eps, M)
        rows.append([M, val, limit, abs(val - limit)])
    return ExperimentResult({"marcum.csv": Table(("M", "marcum", "gaussian_limit", "abs_diff"), rows)}, {"points": len(rows)})


_RUNNERS = {
    "pe-curve": _pe_curve,
    "evolve": _evolve,
    "optimize": _optimize,
    "tradeoff": _tradeoff,
    "simulate": _simulate,
    "validate-marcum": _validate_marcum,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Compute all outputs of one run in memory (no files are touched)."""
    return _RUNNERS[cfg.command](cfg)


# -------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(table: Table, cfg: ExperimentConfig) -> str:
    meta = {"command": cfg.command, "seed": cfg.seed, "version": __version__, **table.meta}
    lines = [f"# {k}: {_fmt(v)}" for k, v in meta.items()]
    lines.append(",".join(table.columns))
    lines += [",".join(_fmt(x) for x in row) for row in table.rows]
    return "\n".join(lines) + "\n"


def read_csv(path: str) -> tuple[dict, list[str], list[list[float]]]:
    """Parse a file written by :func:`render_csv`: ``(meta, columns, rows)``."""
    meta, cols, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = v
            elif cols is None:
                cols = line.split(",")
            elif line:
                rows.append([float(x) for x in line.split(",")])
    return meta, cols or [], rows


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out_dir: str) -> list[str]:
    """Stage every file in a temporary directory, then rename into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {name: render_csv(t, cfg) for name, t in result.tables.items()}
    summary = {
        "command": cfg.command,
        "seed": cfg.seed,
        "version": __version__,
        "params": {k: v for k, v in cfg.params.items() if isinstance(v, (int, float, str, bool, list, type(None)))},
        "summary": result.summary,
        "tables": {name: {"columns": list(t.columns), "rows": t.rows} for name, t in result.tables.items()},
    }
    payload["summary.json"] = json.dumps(_jsonable(summary), indent=2) + "\n"
    stage = tempfile.mkdtemp(prefix=".macsic-", dir=out_dir)
    written = []
    try:
        for name, text in payload.items():
            with open(os.path.join(stage, name), "w") as fh:
                fh.write(text)
        for name in payload:
            dst = os.path.join(out_dir, name)
            os.replace(os.path.join(stage, name), dst)
            written.append(dst)
    except BaseException:
        for dst in written:
            try:
                os.remove(dst)
            except OSError:
                pass
        raise
    finally:
        for name in os.listdir(stage):
            os.remove(os.path.join(stage, name))
        os.rmdir(stage)
    return written


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macsic", description="Soft interference cancellation analysis toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"macsic {__version__}")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"error: config: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: config: invalid JSON at line {exc.lineno}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(doc, args.command, args.out, args.seed, args.threads)
        if cfg.out is None:
            raise _where("out", "no output directory (use --out or the 'out' key)")
        result = run_experiment(cfg)
        files = write_outputs(result, cfg, cfg.out)
    except UnsupportedRangeError as exc:
        print(f"error: numerical envelope: {exc}", file=sys.stderr)
        return EXIT_ENVELOPE
    except (ConfigError, DomainError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: out: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        log.info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
