"""CSV persistence for solved tables and a shared output header.

A table file opens with ``# key: value`` lines (format version, distribution
tag, load, grid, solver residual, sha256 of the data block) followed by the
column header ``yhat,tau,yprime,w,theta,move`` and one row per node.
Floats are written with ``repr`` so a reload is bit-identical.
"""
from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .optpath import OptimalPathTable

FORMAT_VERSION = 1
COLUMNS = ("yhat", "tau", "yprime", "w", "theta", "move")

__all__ = ["TableIntegrityError", "save_table", "table_text", "load_table", "config_hash", "header_lines", "FORMAT_VERSION"]


class TableIntegrityError(ValueError):
    pass


# keys that never change the numbers: where output goes and how many threads
_UNHASHED = ("out", "json", "threads")


def config_hash(config: dict) -> str:
    blob = json.dumps({k: v for k, v in config.items() if k not in _UNHASHED}, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_lines(config: dict) -> list:
    """Comment lines carrying the package version and config hash."""
    from . import __version__

    return [f"# fluidroute {__version__} format {FORMAT_VERSION}", f"# config_hash: {config_hash(config)}"]


def _data_block(t: OptimalPathTable) -> str:
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    w, th = t.w, t.theta
    for i in range(len(t.yhat)):
        buf.write(",".join([repr(float(t.yhat[i])), repr(float(t.tau[i])), repr(float(t.control[i])), repr(float(w[i])), repr(float(th[i])), str(int(t.move[i]))]) + "\n")
    return buf.getvalue()


def save_table(table: OptimalPathTable, path, config: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(table_text(table, config))
    return path


def table_text(table: OptimalPathTable, config: dict | None = None) -> str:
    data = _data_block(table)
    meta = {
        "dist": table.dist_tag,
        "rho": repr(float(table.rho)),
        "grid": str(len(table.yhat)),
        "controls": str(table.n_controls),
        "residual": repr(float(table.residual)),
        "sweeps": str(table.sweeps),
        "flat_fraction": repr(float(table.flat_fraction)),
        "mean_size": repr(float(table.mean_size)),
        "sha256": hashlib.sha256(data.encode()).hexdigest(),
    }
    lines = header_lines(config or {"dist": table.dist_tag, "rho": table.rho, "grid": len(table.yhat)})
    lines += [f"# {k}: {v}" for k, v in meta.items()]
    return "\n".join(lines) + "\n" + data


def load_table(path) -> OptimalPathTable:
    """Read a table written by ``save_table``; checks the checksum and shape."""
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise TableIntegrityError(f"{path}: not a text table") from exc
    meta = {}
    body_start = 0
    lines = text.splitlines(keepends=True)
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, sep, val = line[1:].partition(":")
        if sep:
            meta[key.strip()] = val.strip()
    else:
        raise TableIntegrityError(f"{path}: no data block")
    data = "".join(lines[body_start:])
    for k in ("dist", "rho", "grid", "sha256"):
        if k not in meta:
            raise TableIntegrityError(f"{path}: header lacks {k!r}")
    if hashlib.sha256(data.encode()).hexdigest() != meta["sha256"]:
        raise TableIntegrityError(f"{path}: checksum mismatch")
    rows = data.splitlines()
    if tuple(rows[0].split(",")) != COLUMNS:
        raise TableIntegrityError(f"{path}: unexpected columns {rows[0]!r}")
    try:
        arr = np.array([[float(v) for v in r.split(",")] for r in rows[1:]], dtype=float)
        rho = float(meta["rho"])
        grid = int(meta["grid"])
    except ValueError as exc:
        raise TableIntegrityError(f"{path}: malformed value ({exc})") from exc
    if arr.shape != (grid, len(COLUMNS)):
        raise TableIntegrityError(f"{path}: expected {grid} rows, found {arr.shape[0]}")
    return OptimalPathTable(
        yhat=arr[:, 0].copy(),
        tau=arr[:, 1].copy(),
        control=arr[:, 2].copy(),
        move=arr[:, 5].astype(int),
        rho=rho,
        dist_tag=meta["dist"],
        mean_size=float(meta.get("mean_size", "1.0")),
        residual=float(meta.get("residual", "nan")),
        sweeps=int(meta.get("sweeps", "0")),
        flat_fraction=float(meta.get("flat_fraction", "nan")),
        n_controls=int(meta.get("controls", "401")),
        meta={"path": str(path)},
    )
