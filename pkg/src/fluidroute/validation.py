"""Acceptance checks shared by ``fluidroute validate`` and the test-suite.

Each check returns a :class:`CheckResult`; tolerances live in
``DEFAULT_TOLERANCES`` and may be overridden per call.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from . import euler, fluid, optpath
from .jobsize import DISTRIBUTIONS, feasible_slope, get_distribution
from .policies import PolicyConfig
from .sim import SimConfig, compare, run

__all__ = ["CheckResult", "DEFAULT_TOLERANCES", "CHECKS", "run_checks", "solved_table", "check_table_file"]

DEFAULT_TOLERANCES: Dict[str, float] = {
    "oracle_rel": 1e-4,
    "rnd_sim_rel": 0.02,
    "unaware_abs": 1e-5,
    "scaling_rel": 1e-6,
    "heavy_traffic_rel": 0.25,
    "light_load_band": 0.03,
    "dp_rel": 0.01,
}


@dataclass
class CheckResult:
    key: int
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.key:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


@lru_cache(maxsize=32)
def solved_table(tag: str, rho: float, grid: int = 2001) -> optpath.OptimalPathTable:
    return optpath.solve(get_distribution(tag), rho, n_grid=grid)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def _sorted_pair(rng, lo=0.05, hi=1.0):
    a, b = rng.uniform(lo, hi, 2)
    return max(a, b), min(a, b)


def _unaware_coeffs(rng):
    return (rng.uniform(0.25, 0.75), rng.uniform(0.0, 0.25), rng.uniform(0.5, 6.0), rng.uniform(0.5, 6.0))


def lwl_absorption(u1, u2, rho):
    """Total backlog where LWL meets the axis (0 if it balances first)."""
    if rho >= 0.5 or (u1 - u2) <= feasible_slope(rho) * (u1 + u2):
        return 0.0
    return u1 - u2 / (1.0 - 2.0 * rho)


# --- the ten checks ---------------------------------------------------------


def check_oracle(tol, states=20, seed=11):
    d = get_distribution("exp")
    worst = {"rnd": 0.0, "sto": 0.0, "mwl": 0.0, "unaware": 0.0}
    rng = np.random.default_rng(seed)
    for rho in (0.3, 0.5, 0.7, 0.9):
        for _ in range(states):
            u1, u2 = _sorted_pair(rng)
            x, y = u1 + u2, u1 - u2
            worst["rnd"] = max(worst["rnd"], _rel(fluid.v_rnd((u1, u2), rho, d), euler.euler_rnd([u1, u2], rho, d).cost))
            worst["sto"] = max(worst["sto"], _rel(fluid.v_sto(x, y, d, rho), euler.sto_oracle(x, y, d, rho).cost))
            worst["mwl"] = max(worst["mwl"], _rel(fluid.v_mwl(u1, u2, d, rho), euler.mwl_oracle(u1, u2, d, rho).cost))
            if rho >= 0.5:
                ref = euler.unaware_oracle(u1, u2, rho, _unaware_coeffs(rng)).cost
                val = fluid.v_size_unaware(x, y, rho)
            else:
                # below 1/2 the axis absorbs, so the value depends on where it is met
                ref = euler.lwl_oracle(u1, u2, rho).cost
                val = fluid.v_size_unaware(x, y, rho, x_absorb=lwl_absorption(u1, u2, rho))
            worst["unaware"] = max(worst["unaware"], _rel(val, ref))
    m = max(worst.values())
    ok = m < tol["oracle_rel"]
    return ok, "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), worst


def check_rnd_sim(tol, arrivals=10_000_000, seed=1):
    d = get_distribution("exp")
    st = run(SimConfig(rho=0.5, policy=PolicyConfig("RND"), dist="exp", arrivals=arrivals, seed=seed))
    fluid_mean = fluid.mean_wait_fluid(lambda a, b: fluid.v_rnd((a, b), 0.5, d), d)
    err = _rel(st.mean_wait, 2.0)
    ok = err < tol["rnd_sim_rel"] and abs(fluid_mean - 2.0) < 1e-9
    return ok, f"E[W]={st.mean_wait:.4f}±{st.half_width:.4f} (target 2, fluid {fluid_mean:.6f})", {"EW": st.mean_wait, "ci": st.half_width, "fluid": fluid_mean}


def check_unaware(tol, controls=5, seed=5):
    rho, x1, y1 = 0.7, 2.0, 1.0
    u1, u2 = (x1 + y1) / 2, (x1 - y1) / 2
    rng = np.random.default_rng(seed)
    target = (rho * x1**2 - (1 - rho) * y1**2) / (2 * (1 - rho))
    vals = [euler.unaware_oracle(u1, u2, rho, _unaware_coeffs(rng)).cost for _ in range(controls)]
    spread = max(vals) - min(vals)
    dev = max(abs(v - target) for v in vals)
    ok = spread <= tol["unaware_abs"] and dev <= tol["unaware_abs"] and abs(fluid.v_size_unaware(x1, y1, rho) - target) < 1e-12
    return ok, f"{controls} controls, spread {spread:.1e}, max dev from {target:.6f} {dev:.1e}", {"values": vals, "target": target}


def check_scaling(tol, states=20, seed=4):
    t = solved_table("exp", 0.7)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(states):
        u = np.array(_sorted_pair(rng))
        v = optpath.value_lookup(t, u)
        for a in (0.5, 2.0, 10.0):
            worst = max(worst, _rel(optpath.value_lookup(t, a * u), a * a * v))
    step = 1.0 / (len(t.yhat) - 1)
    overlay = 0.0
    base = optpath.trace(t, (1.0, 1.0))
    for a in (0.5, 2.0, 10.0):
        tr = optpath.trace(t, (a, a))
        if len(tr.x) != len(base.x):
            overlay = math.inf
            break
        with np.errstate(invalid="ignore"):
            overlay = max(overlay, float(np.nanmax(np.abs(tr.x / a - base.x))), float(np.nanmax(np.abs(tr.yhat - base.yhat))))
    ok = worst <= tol["scaling_rel"] and overlay <= step
    return ok, f"value rel err {worst:.1e}, trajectory overlay {overlay:.1e} (grid step {step:.1e})", {"value": worst, "overlay": overlay}


def check_sto_monotone(tol, points=50):
    grid = np.linspace(0.0, 1.0, points)
    bad = []
    for tag in DISTRIBUTIONS:
        d = get_distribution(tag)
        for rho in (0.4, 0.7):
            v = np.array([fluid.v_sto(1.0, g, d, rho) for g in grid])
            if not np.all(np.diff(v) < 0):
                bad.append((tag, rho))
    return not bad, "strictly decreasing for all" if not bad else f"not strictly decreasing: {bad}", {"failures": bad}


CONVEX_PAIRS = (("det", "uniform"), ("det", "exp"), ("uniform", "exp"))


def stop_loss_dominates(less: str, more: str, grid=None) -> bool:
    """E[(Y-h)^+] >= E[(X-h)^+] on a grid with equal means (Y more variable)."""
    a, b = get_distribution(less), get_distribution(more)
    grid = np.linspace(0.0, 10.0, 401) if grid is None else grid
    return abs(a.mean - b.mean) < 1e-12 and bool(np.all(np.asarray(b.stop_loss(grid)) >= np.asarray(a.stop_loss(grid)) - 1e-12))


def random_path(rng, rho, x1=1.0, y1=None, num=4000) -> fluid.PathSpec:
    k = feasible_slope(rho)
    y1 = rng.uniform(0.0, x1) if y1 is None else y1
    a, b, c, s = rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(0, 2 * math.pi), rng.uniform(0.3, 1.0)
    return fluid.PathSpec.from_control(x1, y1, lambda x, y: s * k * math.sin(a * x + b * y + c), rho, num=num)


def check_convex_order(tol, paths=10, states=10, seed=6, grid=2001):
    rho = 0.7
    rng = np.random.default_rng(seed)
    specs = [random_path(rng, rho) for _ in range(paths)]
    states_ = [_sorted_pair(rng) for _ in range(states)]
    out, ok = {}, True
    for less, more in CONVEX_PAIRS:
        premise = stop_loss_dominates(less, more)
        dl, dm = get_distribution(less), get_distribution(more)
        fixed = max(fluid.path_cost(p, dm, rho).v - fluid.path_cost(p, dl, rho).v for p in specs)
        tl, tm = solved_table(less, rho, grid), solved_table(more, rho, grid)
        opt = max(optpath.value_lookup(tm, u) - optpath.value_lookup(tl, u) for u in states_)
        good = premise and fixed <= 1e-12 and opt <= 1e-9
        ok &= good
        out[f"{less}<{more}"] = {"premise": premise, "fixed_max_gap": fixed, "opt_max_gap": opt}
    detail = "; ".join(f"{k}: premise {v['premise']}, fixed {v['fixed_max_gap']:.2e}, opt {v['opt_max_gap']:.2e}" for k, v in out.items())
    return ok, detail, out


def monotone_report(t: optpath.OptimalPathTable, u0=(1.0, 1.0)):
    tr = optpath.trace(t, u0)
    yh = tr.yhat[np.isfinite(tr.yhat)]
    step = 1.0 / (len(t.yhat) - 1)
    diffs = np.diff(yh)
    return {
        "min_step": float(diffs.min()) if diffs.size else 0.0,
        "violations": int(np.sum(diffs < -step)),
        "strict_fraction": float(np.mean(diffs > 0)) if diffs.size else 1.0,
        "reversals": tr.reversals,
        "final_yhat": float(yh[-1]) if yh.size else math.nan,
        "grid_step": step,
        "absorbed": tr.absorbed,
    }


def check_monotone(tol):
    rep = {rho: monotone_report(solved_table("exp", rho)) for rho in (0.5, 0.7, 0.9)}
    ok = all(r["violations"] == 0 and r["reversals"] == 0 and r["absorbed"] for r in rep.values())
    detail = "; ".join(f"rho {rho}: min dyhat {r['min_step']:.1e}, strict {r['strict_fraction']:.2f}, reversals {r['reversals']}" for rho, r in rep.items())
    return ok, detail, rep


def heavy_traffic_constant(tag="exp", rho=0.95):
    d = get_distribution(tag)
    return 2.0 * rho * (1.0 - d.phi_axis(rho)) * d.second_moment


def check_heavy_traffic(tol, arrivals=20_000_000, seed=8):
    rho = 0.95
    t = solved_table("exp", rho)
    st = run(SimConfig(rho=rho, policy=PolicyConfig("F_BLBH", table=t), dist="exp", arrivals=arrivals, warmup=0.2, seed=seed))
    scaled = (1 - rho) * st.mean_wait
    target = heavy_traffic_constant("exp", rho)
    err = _rel(scaled, target)
    ok = err <= tol["heavy_traffic_rel"]
    return ok, f"(1-rho)E[W]={scaled:.4f}±{(1 - rho) * st.half_width:.4f} vs {target:.4f} (rel {err:.3f})", {"scaled": scaled, "target": target, "rel": err}


def check_ordering(tol, arrivals=10_000_000, seed=9):
    res = {}
    t8 = solved_table("exp", 0.8)
    kinds = ("LWL", "RND", "DICE", "F_BLB", "F_BLBH")
    cfgs = [SimConfig(rho=0.8, policy=PolicyConfig(k, table=t8 if k.startswith("F_") else None), arrivals=arrivals, seed=seed) for k in kinds]
    for k, s in zip(kinds, compare(cfgs)):
        res[k] = (s.ratio_to_lwl, s.ratio_half_width)
    ok = all(res[k][0] + res[k][1] < 1.0 for k in ("DICE", "F_BLBH", "F_BLB")) and res["RND"][0] - res["RND"][1] > 1.0
    t3 = solved_table("exp", 0.3)
    cfg3 = [SimConfig(rho=0.3, policy=PolicyConfig(k, table=t3 if k == "F_BLB" else None), arrivals=arrivals, seed=seed) for k in ("LWL", "F_BLB")]
    light = compare(cfg3)[1].ratio_to_lwl
    band = tol["light_load_band"]
    ok = ok and (1 - band) <= light <= (1 + band)
    detail = ", ".join(f"{k} {r:.3f}±{h:.3f}" for k, (r, h) in res.items() if k != "LWL") + f"; rho 0.3 F_BLB {light:.4f}"
    return ok, detail, {"rho0.8": res, "rho0.3_F_BLB": light}


def check_dp(tol, states=20, seed=10):
    rho = 0.7
    t = solved_table("exp", rho)
    dp = optpath.solve_dp2d(get_distribution("exp"), rho)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(states):
        u = rng.uniform(0.0, 0.5, 2)
        worst = max(worst, _rel(dp.value(*u), optpath.value_lookup(t, u)))
    return worst <= tol["dp_rel"], f"max rel diff {worst:.2e}", {"rel": worst}


CHECKS: Dict[int, tuple] = {
    1: ("closed forms vs Euler oracle", check_oracle),
    2: ("RND simulation vs M/M/1", check_rnd_sim),
    3: ("size-unaware controls equal", check_unaware),
    4: ("optimal value scaling", check_scaling),
    5: ("STO cost decreasing in imbalance", check_sto_monotone),
    6: ("convex order lowers cost", check_convex_order),
    7: ("optimal paths monotone in imbalance", check_monotone),
    8: ("heavy-traffic constant", check_heavy_traffic),
    9: ("policy ordering vs LWL", check_ordering),
    10: ("1-D solver vs 2-D DP", check_dp),
}


def check_table_file(path) -> CheckResult:
    from .tables import TableIntegrityError, load_table

    t0 = time.time()
    try:
        t = load_table(path)
    except (TableIntegrityError, OSError) as exc:
        return CheckResult(0, "table integrity", False, str(exc), seconds=time.time() - t0)
    k = feasible_slope(t.rho)
    ok = bool(np.all(np.abs(t.control) <= k * (1 + 1e-12)) and math.isfinite(t.residual) and t.residual < 1e-6)
    return CheckResult(0, "table integrity", ok, f"{path}: {len(t.yhat)} nodes, residual {t.residual:.1e}", seconds=time.time() - t0)


def run_checks(selected: Optional[Iterable[int]] = None, tolerances: Optional[dict] = None, report: Optional[Callable[[CheckResult], None]] = None) -> list:
    tol = dict(DEFAULT_TOLERANCES)
    if tolerances:
        unknown = set(tolerances) - set(tol)
        if unknown:
            raise KeyError(f"unknown tolerance keys {sorted(unknown)}")
        tol.update(tolerances)
    results = []
    for key in sorted(CHECKS) if selected is None else selected:
        name, fn = CHECKS[key]
        t0 = time.time()
        ok, detail, metrics = fn(tol)
        r = CheckResult(key, name, bool(ok), detail, metrics, time.time() - t0)
        results.append(r)
        if report:
            report(r)
    return results
