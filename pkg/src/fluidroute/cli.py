"""Command-line runner: ``fluidroute <command> [options]``.

Commands: solve, trace, unitcost, simulate, sweep, validate.  Options may
also come from a TOML file given with ``--config``; keys use the long option
names with dashes or underscores (``rho = 0.7``, ``u_B = 2.0``).  Flags given
on the command line override file keys.

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence,
4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import __version__, optpath
from .jobsize import get_distribution
from .optpath import SolverError
from .policies import KINDS, MissingTableError, PolicyConfig
from .sim import SimConfig, compare, run
from .tables import TableIntegrityError, header_lines, load_table, save_table, table_text

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("fluidroute")


class ConfigError(ValueError):
    pass


# option name -> (type, default); list types are comma-separated on the command line
OPTIONS = {
    "dist": (str, "exp"),
    "rho": ("floats", [0.7]),
    "grid": (int, 2001),
    "controls": (int, 401),
    "out": (str, None),
    "seed": (int, 0),
    "table": ("strs", []),
    "u0": ("floats", [1.0, 1.0]),
    "policies": ("strs", ["RND", "STO", "MWL", "OPT"]),
    "points": (int, 50),
    "policy": (str, "LWL"),
    "n": (int, 2),
    "arrivals": (int, 10_000_000),
    "replications": (int, 10),
    "warmup": (float, 0.05),
    "tau_dice": (float, 6.0),
    "u_B": (float, None),
    "h_S": (float, None),
    "card": ("floats", None),
    "threads": (int, None),
    "json": (str, None),
    "criteria": ("ints", []),
    "tol": ("strs", []),
}

COMMAND_OPTIONS = {
    "solve": ("dist", "rho", "grid", "controls", "out"),
    "trace": ("dist", "rho", "grid", "controls", "out", "table", "u0"),
    "unitcost": ("dist", "rho", "grid", "controls", "out", "table", "policies", "points"),
    "simulate": ("dist", "rho", "out", "seed", "policy", "n", "arrivals", "replications", "warmup", "tau_dice", "u_B", "h_S", "card", "threads", "json", "grid", "controls", "table"),
    "sweep": ("dist", "rho", "out", "seed", "policies", "n", "arrivals", "replications", "warmup", "tau_dice", "u_B", "h_S", "card", "threads", "json", "grid", "controls"),
    "validate": ("criteria", "tol", "table"),
}


def _convert(name, kind, value):
    try:
        if kind in ("floats", "ints", "strs"):
            items = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
            cast = {"floats": float, "ints": int, "strs": str}[kind]
            return [cast(v.strip() if isinstance(v, str) else v) for v in items]
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def _key(name):
    k = name.replace("-", "_")
    for opt in OPTIONS:
        if opt.lower() == k.lower():
            return opt
    return None


def resolve_config(command, args) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    allowed = COMMAND_OPTIONS[command]
    cfg = {k: OPTIONS[k][1] for k in allowed}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from exc
        data.pop("command", None)
        for raw, value in data.items():
            k = _key(raw)
            if k is None or k not in allowed:
                raise ConfigError(f"unknown key {raw!r} for {command}")
            cfg[k] = _convert(k, OPTIONS[k][0], value)
    for k in allowed:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _convert(k, OPTIONS[k][0], v)
    if "rho" in cfg:
        for r in cfg["rho"]:
            if not 0.0 < r < 1.0:
                raise ConfigError(f"rho must lie in (0, 1), got {r}")
    if "dist" in cfg:
        try:
            get_distribution(cfg["dist"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    for t in cfg.get("table", []) if command != "validate" else []:
        if not Path(t).exists():
            raise ConfigError(f"table file {t} does not exist")
    return cfg


# --- output helpers ---------------------------------------------------------


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(config, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines(config):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    return buf.getvalue()


def _out_for(out, rho, many):
    if out is None or not many:
        return out
    if "{rho}" in out:
        return out.format(rho=rho)
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return str(p / f"table_rho{rho}.csv")


def _table_for(cfg, rho=None):
    if cfg.get("table"):
        t = load_table(cfg["table"][0])
        return t
    rho = cfg["rho"][0] if rho is None else rho
    log.info("solving %s rho=%s grid=%d", cfg["dist"], rho, cfg["grid"])
    return optpath.solve(get_distribution(cfg["dist"]), rho, n_grid=cfg["grid"], n_controls=cfg["controls"])


# --- commands ---------------------------------------------------------------


def cmd_solve(cfg):
    many = len(cfg["rho"]) > 1
    if many and cfg["out"] is None:
        raise ConfigError("several loads need --out with '{rho}' or a directory")
    for rho in cfg["rho"]:
        t = optpath.solve(get_distribution(cfg["dist"]), rho, n_grid=cfg["grid"], n_controls=cfg["controls"])
        out = _out_for(cfg["out"], rho, many)
        meta = dict(cfg, rho=rho, command="solve")
        if out:
            save_table(t, out, meta)
        else:
            sys.stdout.write(table_text(t, meta))
        print(f"solved {t.dist_tag} rho={rho}: residual {t.residual:.2e}, sweeps {t.sweeps}, flat argmin at {100 * t.flat_fraction:.1f}% of nodes", file=sys.stderr)
    return EXIT_OK


def cmd_trace(cfg):
    t = _table_for(cfg)
    u0 = cfg["u0"]
    if len(u0) != 2 or min(u0) < 0:
        raise ConfigError("u0 needs two nonnegative backlogs")
    tr = optpath.trace(t, u0)
    cols = ("s", "u1", "u2", "x", "y", "yhat", "yprime", "h_threshold", "cost_so_far")
    meta = dict(cfg, rho=t.rho, dist=t.dist_tag, command="trace")
    _emit(_csv(meta, cols, tr.rows()), cfg["out"])
    return EXIT_OK


def cmd_unitcost(cfg):
    pols = [p.upper() for p in cfg["policies"]]
    for p in pols:
        if p not in optpath._POLICIES:
            raise ConfigError(f"unknown policy {p!r}; choose from {optpath._POLICIES}")
    t = _table_for(cfg) if "OPT" in pols else None
    rho = t.rho if t is not None else cfg["rho"][0]
    dist = t.dist_tag if t is not None else cfg["dist"]
    thetas = np.linspace(0.0, math.pi / 4, cfg["points"])
    curves = {p: optpath.unit_cost_curve(t if p == "OPT" else p, thetas, dist, rho)[:, 1] for p in pols}
    rows = [[th] + [curves[p][i] for p in pols] for i, th in enumerate(thetas)]
    meta = dict(cfg, rho=rho, dist=dist, command="unitcost")
    _emit(_csv(meta, ["theta"] + [f"w_{p}" for p in pols], rows), cfg["out"])
    return EXIT_OK


def _policy(cfg, kind, table):
    kind = kind.upper()
    if kind not in KINDS:
        raise ConfigError(f"unknown policy {kind!r}; choose from {KINDS}")
    card = tuple(cfg["card"]) if cfg.get("card") else None
    return PolicyConfig(kind, tau_dice=cfg["tau_dice"], u_B=cfg["u_B"], h_S=cfg["h_S"], card_params=card, table=table if kind in ("F_BLB", "F_BLBH", "FLUID_OPT_REF") else None)


def _sim_rows(rho, results, cfgs):
    for c, s in zip(cfgs, results):
        yield [rho, c.policy.kind, s.mean_wait, s.half_width, s.ratio_to_lwl, c.arrivals, c.seed]


SIM_COLUMNS = ("rho", "policy", "EW", "ci", "ratio_to_lwl", "arrivals", "seed")


def _summary(rows):
    return [dict(zip(SIM_COLUMNS, r)) for r in rows]


def cmd_simulate(cfg):
    if len(cfg["rho"]) != 1:
        raise ConfigError("simulate takes a single rho; use sweep for several")
    rho = cfg["rho"][0]
    kind = cfg["policy"].upper()
    table = _table_for(cfg, rho) if kind in ("F_BLB", "F_BLBH", "FLUID_OPT_REF") else None
    sc = SimConfig(rho=rho, policy=_policy(cfg, kind, table), dist=cfg["dist"], n=cfg["n"], arrivals=cfg["arrivals"], warmup=cfg["warmup"], seed=cfg["seed"], replications=cfg["replications"])
    log.info("simulating %s rho=%s arrivals=%d", kind, rho, sc.arrivals)
    st = run(sc, cfg["threads"])
    rows = list(_sim_rows(rho, [st], [sc]))
    meta = dict(cfg, command="simulate")
    _emit(_csv(meta, SIM_COLUMNS, rows), cfg["out"])
    if cfg["json"]:
        Path(cfg["json"]).write_text(json.dumps({"config": meta, "version": __version__, "results": _summary(rows)}, indent=2, default=str))
    return EXIT_OK


def cmd_sweep(cfg):
    kinds = [p.upper() for p in cfg["policies"]]
    rows = []
    for rho in cfg["rho"]:
        table = _table_for(cfg, rho) if any(k in ("F_BLB", "F_BLBH", "FLUID_OPT_REF") for k in kinds) else None
        cfgs = [SimConfig(rho=rho, policy=_policy(cfg, k, table), dist=cfg["dist"], n=cfg["n"], arrivals=cfg["arrivals"], warmup=cfg["warmup"], seed=cfg["seed"], replications=cfg["replications"]) for k in kinds]
        log.info("sweep rho=%s over %s", rho, ",".join(kinds))
        rows.extend(_sim_rows(rho, compare(cfgs, cfg["threads"]), cfgs))
    meta = dict(cfg, command="sweep")
    _emit(_csv(meta, SIM_COLUMNS, rows), cfg["out"])
    if cfg["json"]:
        Path(cfg["json"]).write_text(json.dumps({"config": meta, "version": __version__, "results": _summary(rows)}, indent=2, default=str))
    return EXIT_OK


def cmd_validate(cfg):
    from .validation import CHECKS, check_table_file, run_checks

    tol = {}
    for item in cfg["tol"]:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"tolerance override needs key=value, got {item!r}")
        tol[k.strip()] = _convert(k, float, v)
    selected = cfg["criteria"] or (sorted(CHECKS) if not cfg["table"] else [])
    for c in selected:
        if c not in CHECKS:
            raise ConfigError(f"no criterion {c}; valid: {sorted(CHECKS)}")
    ok = True
    for path in cfg["table"]:
        r = check_table_file(path)
        print(r.line(), flush=True)
        ok &= r.passed
    if tol:
        print("tolerance overrides: " + ", ".join(f"{k}={v:g}" for k, v in sorted(tol.items())), flush=True)
    try:
        results = run_checks(selected, tol, report=lambda r: print(r.line(), flush=True))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    ok &= all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed" + ("" if ok else "; validation FAILED"))
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "solve": cmd_solve,
    "trace": cmd_trace,
    "unitcost": cmd_unitcost,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}

HELP = {
    "dist": "job-size distribution tag (det, uniform, exp, bpareto, pareto)",
    "rho": "offered load, or a comma-separated list",
    "grid": "yhat grid points for the solver",
    "controls": "candidate slopes per node",
    "out": "output file (stdout if omitted)",
    "seed": "root random seed",
    "table": "solved table file (repeat or comma-separate for validate)",
    "u0": "initial backlogs u1,u2",
    "policies": "comma-separated policy names",
    "points": "number of theta points on [0, pi/4]",
    "policy": "dispatching policy",
    "n": "number of servers",
    "arrivals": "total arrivals over all replications",
    "replications": "independent replications",
    "warmup": "fraction of each replication discarded",
    "tau_dice": "DICE threshold",
    "u_B": "buffer lower bound for F_BLB/F_BLBH/SSLL_BLB",
    "h_S": "short-job threshold for SSLL variants and F_BLBH",
    "card": "CARD thresholds small,large,queue",
    "threads": "worker threads (capped by FLUIDROUTE_THREADS)",
    "json": "also write a JSON summary here",
    "criteria": "acceptance criteria to run, e.g. 1,3,5",
    "tol": "tolerance override key=value (repeatable)",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluidroute", description="Size-aware fluid dispatching experiments.")
    p.add_argument("--version", action="version", version=f"fluidroute {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in COMMAND_OPTIONS.items():
        sp = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0] if COMMANDS[name].__doc__ else name)
        sp.add_argument("--config", help="TOML file with option keys")
        for o in opts:
            flag = "--" + o.replace("_", "-")
            if o in ("table", "tol"):
                sp.add_argument(flag, action="append", help=HELP[o])
            else:
                sp.add_argument(flag, dest=o, help=HELP[o])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    try:
        cfg = resolve_config(args.command, args)
        if "table" in cfg:
            cfg["table"] = [t for item in cfg["table"] for t in str(item).split(",") if t] if cfg["table"] else []
        return COMMANDS[args.command](cfg)
    except SolverError as exc:
        print(f"error: solver did not converge: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    except TableIntegrityError as exc:
        print(f"error: table integrity: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if args.command == "validate" else EXIT_CONFIG
    except (ConfigError, MissingTableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
