"""Two-server optimal fluid paths.

By scale invariance the path-dependent part of the cost is
``T(x, y) = x**2 * tau(yhat)``.  ``solve`` computes ``tau`` on a yhat-grid as
the fixed point of a dynamic program over straight segments: from node j a
constant slope y' either holds yhat fixed (straight to the origin), or
carries the state to the neighbouring node above (y' < yhat) or below
(y' > yhat).  A straight segment from (x, yhat_j x) to (r x, yhat_nb r x)
costs ``(1 - 2 Phi(y')) * (yhat_j + yhat_nb r) (1 - r) / 2 * x**2`` and
shrinks the remaining problem by ``r**2``.

``solve_dp2d`` is an independent backward induction on the (x, y) triangle
that does not use the scaling reduction; it is the cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import fluid
from .jobsize import JobSizeDistribution, feasible_slope, get_distribution

__all__ = [
    "OptimalPathTable",
    "Trajectory",
    "SolverError",
    "solve",
    "trace",
    "value_lookup",
    "unit_cost_curve",
    "solve_dp2d",
    "DP2D",
]

UP, STO, DOWN, AXIS = 1, 0, -1, 2


class SolverError(RuntimeError):
    def __init__(self, message, residual=math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OptimalPathTable:
    yhat: np.ndarray
    tau: np.ndarray
    control: np.ndarray
    move: np.ndarray
    rho: float
    dist_tag: str
    mean_size: float = 1.0
    residual: float = 0.0
    sweeps: int = 0
    flat_fraction: float = 0.0
    n_controls: int = 401
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dist(self) -> JobSizeDistribution:
        return get_distribution(self.dist_tag)

    @property
    def job_rate(self) -> float:
        return self.rho / self.mean_size

    @property
    def prefactor(self) -> float:
        return self.job_rate / (1.0 - self.rho)

    @property
    def theta(self) -> np.ndarray:
        return np.arctan((1.0 - self.yhat) / (1.0 + self.yhat))

    @property
    def w(self) -> np.ndarray:
        """Cost at unit Euclidean distance, indexed like ``yhat``."""
        return self.prefactor * (0.5 + self.tau) * 2.0 / (1.0 + self.yhat**2)

    @property
    def threshold(self) -> np.ndarray:
        """Size threshold h realising the optimal slope at each node."""
        d = self.dist
        k = feasible_slope(self.rho)
        c = np.clip(self.control, -k, k)
        h = np.asarray(d.inverse_partial_load(0.5 * (self.rho + (1.0 - self.rho) * c), self.rho), dtype=float)
        if self.rho >= 0.5:
            h[-1] = float(d.inverse_partial_load(0.5, self.rho))
        else:
            h[-1] = math.inf
        return h

    def value(self, u1: float, u2: float) -> float:
        return value_lookup(self, (u1, u2))


@dataclass
class Trajectory:
    x: np.ndarray
    y: np.ndarray
    yprime: np.ndarray
    h: np.ndarray
    cost: np.ndarray
    t: np.ndarray
    rho: float
    absorbed: bool = True
    reversals: int = 0

    @property
    def yhat(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.x > 0, self.y / np.where(self.x > 0, self.x, 1.0), np.nan)

    @property
    def u1(self) -> np.ndarray:
        return 0.5 * (self.x + self.y)

    @property
    def u2(self) -> np.ndarray:
        return 0.5 * (self.x - self.y)

    @property
    def total_cost(self) -> float:
        return float(self.cost[-1])

    def rows(self):
        """Rows for CSV export: s, u1, u2, x, y, yhat, yprime, h_threshold, cost_so_far."""
        yh = self.yhat
        for i in range(len(self.x)):
            yield (self.t[i], self.u1[i], self.u2[i], self.x[i], self.y[i], yh[i], self.yprime[i], self.h[i], self.cost[i])


# --- solver -----------------------------------------------------------------


def _cell(phi, yh_j, yh_nb, c, tau_nb):
    """Cost of a straight segment from node j to its neighbour, per x**2."""
    r = (yh_j - c) / (yh_nb - c)
    return (1.0 - 2.0 * phi) * 0.5 * (yh_j + yh_nb * r) * (1.0 - r) + r * r * tau_nb


class _Problem:
    def __init__(self, d, rho, n_grid, n_controls):
        self.d = d
        self.rho = rho
        self.k = feasible_slope(rho)
        self.yh = np.linspace(0.0, 1.0, n_grid)
        self.cands = np.linspace(-self.k, self.k, n_controls)
        self.phi_c = np.asarray(d.phi(self.cands, rho), dtype=float)
        self.tau_axis = 0.5 * (1.0 - 2.0 * d.phi_axis(rho))

    def phi(self, c):
        return np.asarray(self.d.phi(np.clip(c, -self.k, self.k), self.rho), dtype=float)

    def sto(self, yh):
        if yh > self.k:
            return math.inf
        return 0.5 * (1.0 - 2.0 * float(self.phi(yh))) * yh

    def options(self, yh_j, below, above, tau, refine=True):
        """Best move from an arbitrary yhat between grid nodes ``below`` and
        ``above`` (node indices, or None)."""
        best = (self.sto(yh_j), yh_j, STO)
        c, ph = self.cands, self.phi_c
        if above is not None:
            m = c < yh_j
            if np.any(m):
                cand = self._side(yh_j, self.yh[above], tau[above], c[m], ph[m], refine, lo=-self.k, hi=yh_j)
                if cand[0] < best[0] - 1e-15 * (1 + abs(best[0])) or (abs(cand[0] - best[0]) <= 1e-15 * (1 + abs(best[0])) and abs(cand[1]) < abs(best[1])):
                    best = (cand[0], cand[1], UP)
        if below is not None:
            m = c > yh_j
            if np.any(m):
                cand = self._side(yh_j, self.yh[below], tau[below], c[m], ph[m], refine, lo=yh_j, hi=self.k)
                if cand[0] < best[0] - 1e-15 * (1 + abs(best[0])) or (abs(cand[0] - best[0]) <= 1e-15 * (1 + abs(best[0])) and abs(cand[1]) < abs(best[1])):
                    best = (cand[0], cand[1], DOWN)
        return best

    def _side(self, yh_j, yh_nb, tau_nb, c, ph, refine, lo, hi):
        if not math.isfinite(tau_nb):
            return (math.inf, 0.0)
        vals = _cell(ph, yh_j, yh_nb, c, tau_nb)
        vmin = vals.min()
        near = np.flatnonzero(vals <= vmin + 1e-14 * (1.0 + abs(vmin)))
        i = near[np.argmin(np.abs(c[near]))]
        best_v, best_c = float(vals[i]), float(c[i])
        if not refine or len(c) < 3 or len(near) > 3:
            return (best_v, best_c)
        step = (self.cands[1] - self.cands[0])
        a, b = max(best_c - step, lo), min(best_c + step, hi)
        for _ in range(3):
            grid = np.linspace(a, b, 41)
            # open-side guard: never evaluate the STO slope itself here
            grid = grid[(grid != yh_j)]
            v = _cell(self.phi(grid), yh_j, yh_nb, grid, tau_nb)
            jj = int(np.argmin(v))
            if v[jj] < best_v:
                best_v, best_c = float(v[jj]), float(grid[jj])
            w = (b - a) / 40.0
            a, b = max(best_c - w, lo), min(best_c + w, hi)
        return (best_v, best_c)


def solve(d, rho: float, n_grid: int = 2001, n_controls: int = 401, refine: bool = True, tol: float = 1e-13, max_sweeps: int = 60) -> OptimalPathTable:
    """Optimal normalised path cost tau(yhat) and control y'*(yhat).

    Alternating (fast-sweeping) Gauss-Seidel passes over the yhat-grid until
    the largest change drops below ``tol``.
    """
    d = get_distribution(d)
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    P = _Problem(d, rho, n_grid, n_controls)
    N = n_grid
    yh = P.yh
    tau = np.array([P.sto(v) for v in yh])
    tau[-1] = P.tau_axis
    control = yh.copy()
    move = np.zeros(N, dtype=int)
    move[-1] = AXIS
    # below half load the axis absorbs: every job to the empty queue, Phi(k) = 1
    control[-1] = min(1.0, P.k)

    def update(j, do_refine):
        below = j - 1 if j > 0 else None
        return P.options(yh[j], below, j + 1, tau, refine=do_refine)

    sweeps = 0
    phase_refine = False
    while True:
        change = 0.0
        order = range(N - 2, -1, -1) if sweeps % 2 == 0 else range(0, N - 1)
        for j in order:
            v, c, mv = update(j, phase_refine)
            change = max(change, abs(v - tau[j]) if math.isfinite(tau[j]) else math.inf)
            tau[j], control[j], move[j] = v, c, mv
        sweeps += 1
        if change <= tol and sweeps >= 2:
            if phase_refine or not refine:
                break
            phase_refine = True
        if sweeps >= max_sweeps:
            raise SolverError(f"no convergence after {sweeps} sweeps (last change {change:.3e})", residual=change)
    # residual of the discrete Bellman equation and flatness of the argmin
    resid = 0.0
    flat = 0
    for j in range(N - 1):
        v, _, _ = update(j, refine)
        resid = max(resid, abs(v - tau[j]))
        vals = []
        if j > 0:
            m = P.cands > yh[j]
            vals.append(_cell(P.phi_c[m], yh[j], yh[j - 1], P.cands[m], tau[j - 1]))
        m = P.cands < yh[j]
        vals.append(_cell(P.phi_c[m], yh[j], yh[j + 1], P.cands[m], tau[j + 1]))
        allv = np.concatenate(vals)
        allv = allv[np.isfinite(allv)]
        if allv.size and allv.max() - allv.min() <= 1e-10 * (1.0 + abs(allv.min())):
            flat += 1
    if not math.isfinite(resid) or resid > 1e-6:
        raise SolverError(f"stationarity residual {resid:.3e} exceeds 1e-6", residual=resid)
    return OptimalPathTable(
        yhat=yh,
        tau=tau,
        control=control,
        move=move,
        rho=rho,
        dist_tag=d.tag,
        mean_size=d.mean,
        residual=resid,
        sweeps=sweeps,
        flat_fraction=flat / (N - 1),
        n_controls=n_controls,
    )


# --- queries ----------------------------------------------------------------


def _w_at(table: OptimalPathTable, theta):
    th = table.theta[::-1]
    w = table.w[::-1]
    return np.interp(theta, th, w)


def value_lookup(table: OptimalPathTable, u, method: str = "bellman") -> float:
    """Optimal fluid value v(u).

    ``method="bellman"`` (default) takes one exact local step from ``u`` to a
    neighbouring node of the table; it stays accurate near the absorbing axis
    where v vanishes quadratically.  ``method="interp"`` uses
    v = |u|^2 w(theta) with w linear in theta between nodes.
    """
    u1, u2 = float(u[0]), float(u[1])
    if u1 < u2:
        u1, u2 = u2, u1
    r2 = u1 * u1 + u2 * u2
    if r2 == 0.0:
        return 0.0
    if method == "interp":
        return r2 * float(_w_at(table, math.atan2(u2, u1)))
    if method != "bellman":
        raise ValueError("method must be 'bellman' or 'interp'")
    x, y = u1 + u2, u1 - u2
    yh = table.yhat
    N = len(yh)
    cur = y / x
    pos = cur * (N - 1)
    j = int(round(pos))
    if abs(yh[j] - cur) <= 1e-12:
        tau = float(table.tau[j])
    else:
        jb = min(max(int(math.floor(pos)), 0), N - 2)
        P = _problem_for(table)
        tau = P.options(cur, jb, jb + 1, table.tau)[0]
    return table.prefactor * x * x * (0.5 + tau)


_PROBLEMS: dict = {}


def _problem_for(table):
    key = (table.dist_tag, table.rho, len(table.yhat), table.n_controls)
    P = _PROBLEMS.get(key)
    if P is None:
        if len(_PROBLEMS) > 32:
            _PROBLEMS.clear()
        P = _PROBLEMS[key] = _Problem(table.dist, table.rho, len(table.yhat), table.n_controls)
    return P


def trace(table: OptimalPathTable, u0, max_segments: Optional[int] = None) -> Trajectory:
    """Follow the stored optimal control from ``u0`` to absorption."""
    d = table.dist
    rho = table.rho
    P = _problem_for(table)
    yh = table.yhat
    N = len(yh)
    u1, u2 = float(u0[0]), float(u0[1])
    if u1 < u2:
        u1, u2 = u2, u1
    x, y = u1 + u2, u1 - u2
    thr = table.threshold
    pref = table.prefactor
    h_axis = float(d.inverse_partial_load(0.5, rho)) if rho >= 0.5 else math.inf

    xs, ys, yps, hs, costs, ts = [x], [y], [], [], [0.0], [0.0]
    T = 0.0
    t = 0.0
    reversals = 0
    last_move = 0

    def h_for(c):
        k = P.k
        return float(d.inverse_partial_load(0.5 * (rho + (1 - rho) * min(max(c, -k), k)), rho))

    def push(xn, yn, c, h, dT):
        nonlocal x, y, T, t
        T += dT
        t += (x - xn) / (1.0 - rho)
        x, y = xn, yn
        xs.append(xn)
        ys.append(yn)
        yps.append(c)
        hs.append(h)
        costs.append(pref * (0.5 * (xs[0] ** 2 - xn**2) + T))
        ts.append(t)

    def finish_axis():
        # queue 2 kept empty at full rate down to the origin
        dT = (1.0 - 2.0 * d.phi_axis(rho)) * 0.5 * x * x
        push(0.0, 0.0, 1.0, h_axis, dT)

    def finish_sto(c, h):
        dT = (1.0 - 2.0 * float(P.phi(c))) * 0.5 * y * x
        push(0.0, 0.0, c, h, dT)

    if x <= 0.0:
        return Trajectory(np.array([0.0]), np.array([0.0]), np.array([np.nan]), np.array([np.nan]), np.array([0.0]), np.array([0.0]), rho)

    cur = y / x
    j = int(round(cur * (N - 1)))
    if abs(yh[j] - cur) > 1e-12:
        # off-grid start: one local Bellman step to a neighbouring node
        jb = int(math.floor(cur * (N - 1)))
        jb = min(max(jb, 0), N - 2)
        v, c, mv = P.options(cur, jb, jb + 1, table.tau)
        if mv == STO:
            finish_sto(c, h_for(c))
        else:
            nb = jb + 1 if mv == UP else jb
            r = (cur - c) / (yh[nb] - c)
            xn = r * x
            dT = (1.0 - 2.0 * float(P.phi(c))) * 0.5 * (y + yh[nb] * xn) * (x - xn)
            push(xn, yh[nb] * xn, c, h_for(c), dT)
            j = nb
            last_move = mv
    else:
        j = min(max(j, 0), N - 1)

    limit = max_segments or 20 * N
    steps = 0
    while x > 0.0 and steps < limit:
        steps += 1
        if j == N - 1:
            if rho >= 0.5:
                finish_axis()
            break
        mv = int(table.move[j])
        c = float(table.control[j])
        if mv == STO:
            finish_sto(c, float(thr[j]))
            break
        if last_move and mv != last_move:
            reversals += 1
        nb = j + 1 if mv == UP else j - 1
        r = (yh[j] - c) / (yh[nb] - c)
        xn = r * x
        yn = yh[nb] * xn
        dT = (1.0 - 2.0 * float(table.dist.phi(np.clip(c, -P.k, P.k), rho))) * 0.5 * (y + yn) * (x - xn)
        push(xn, yn, c, float(thr[j]), dT)
        j = nb
        last_move = mv
    absorbed = x <= 0.0 or (rho < 0.5 and j == N - 1)
    yps.append(np.nan)
    hs.append(np.nan)
    return Trajectory(np.array(xs), np.array(ys), np.array(yps), np.array(hs), np.array(costs), np.array(ts), rho, absorbed, reversals)


_POLICIES = ("OPT", "RND", "LWL", "STO", "MWL", "UNAWARE")


def policy_value(name: str, u1: float, u2: float, d, rho: float, table: Optional[OptimalPathTable] = None) -> float:
    """Fluid value of a named policy at (u1, u2)."""
    name = name.upper()
    d = get_distribution(d)
    if u1 < u2:
        u1, u2 = u2, u1
    if name == "OPT":
        if table is None:
            raise ValueError("OPT needs a solved table")
        return value_lookup(table, (u1, u2))
    if name == "RND":
        return fluid.v_rnd((u1, u2), rho, d)
    if name == "LWL":
        return fluid.v_lwl(u1, u2, rho)
    if name == "STO":
        return fluid.v_sto(u1 + u2, u1 - u2, d, rho)
    if name == "MWL":
        return fluid.v_mwl(u1, u2, d, rho)
    if name == "UNAWARE":
        if rho < 0.5:
            # path-dependent below half load; LWL is the size-blind representative
            return fluid.v_lwl(u1, u2, rho)
        return fluid.v_size_unaware(u1 + u2, u1 - u2, rho)
    raise ValueError(f"unknown policy {name!r}; choose from {_POLICIES}")


def unit_cost_curve(source, thetas: Iterable[float], d=None, rho: Optional[float] = None) -> np.ndarray:
    """w(theta) at unit distance for a solved table or a named policy.

    Returns an array of shape (len(thetas), 2) with columns theta, w.
    """
    thetas = np.asarray(list(thetas), dtype=float)
    if np.any(thetas < -1e-12) or np.any(thetas > math.pi / 4 + 1e-12):
        raise ValueError("theta must lie in [0, pi/4]")
    if isinstance(source, OptimalPathTable):
        w = np.array([value_lookup(source, (math.cos(t), math.sin(t))) for t in thetas])
    else:
        if d is None or rho is None:
            raise ValueError("named policies need d and rho")
        w = np.array([policy_value(source, math.cos(t), math.sin(t), d, rho) for t in thetas])
    return np.column_stack([thetas, w])


# --- independent 2-D dynamic program ---------------------------------------


@dataclass
class DP2D:
    x_levels: np.ndarray
    V: np.ndarray  # V[i, m] at x_levels[i], y = x_levels[i] * m / M
    rho: float
    mean_size: float

    def path_term(self, u1, u2) -> float:
        if u1 < u2:
            u1, u2 = u2, u1
        x, y = u1 + u2, u1 - u2
        if x <= 0:
            return 0.0
        if x > self.x_levels[-1] * (1 + 1e-12):
            raise ValueError("state outside the solved triangle")
        M = self.V.shape[1] - 1
        yh_nodes = np.linspace(0.0, 1.0, M + 1)
        i = np.searchsorted(self.x_levels, x)
        i = min(max(i, 1), len(self.x_levels) - 1)
        x0, x1 = self.x_levels[i - 1], self.x_levels[i]
        # normalised values interpolated in yhat, then in x
        n1 = np.interp(y / x, yh_nodes, self.V[i]) / x1**2
        n0 = np.interp(y / x, yh_nodes, self.V[i - 1]) / x0**2 if x0 > 0 else n1
        a = (x - x0) / (x1 - x0)
        return ((1 - a) * n0 + a * n1) * x * x

    def value(self, u1, u2) -> float:
        x = u1 + u2
        lam = self.rho / self.mean_size
        return lam / (1.0 - self.rho) * (0.5 * x * x + self.path_term(u1, u2))


def solve_dp2d(d, rho: float, x_max: float = 1.0, nx: int = 400, ny: int = 401, n_controls: int = 201) -> DP2D:
    """Backward induction in x on the triangle 0 <= y <= x <= x_max."""
    d = get_distribution(d)
    k = feasible_slope(rho)
    cands = np.linspace(-k, k, n_controls)
    phi_c = np.asarray(d.phi(cands, rho), dtype=float)
    phi_m = phi_c[::-1]  # Phi(-c) on the symmetric grid
    phi_ax = d.phi_axis(rho)
    axis_coef = 0.5 * (1.0 - 2.0 * phi_ax) if rho >= 0.5 else -0.5
    xs = np.linspace(0.0, x_max, nx + 1)
    dx = xs[1] - xs[0]
    M = ny - 1
    frac = np.linspace(0.0, 1.0, M + 1)
    V = np.zeros((nx + 1, M + 1))
    C = cands[None, :]
    for i in range(1, nx + 1):
        xi, xp = xs[i], xs[i - 1]
        y = (xi * frac)[:, None]
        yn = y - C * dx
        prev = V[i - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            inside = np.abs(yn) <= xp
            pos = yn >= 0
            # interior step, possibly crossing y = 0
            fr = np.where(pos, 1.0, y / (y - yn))
            seg = np.where(
                pos,
                (1 - 2 * phi_c) * 0.5 * (y + yn) * dx,
                (1 - 2 * phi_c) * 0.5 * y * dx * fr + (1 - 2 * phi_m) * 0.5 * (-yn) * dx * (1 - fr),
            )
            nxt = np.interp(np.abs(yn).ravel() / xp if xp > 0 else np.zeros(yn.size), frac, prev).reshape(yn.shape) if xp > 0 else np.zeros_like(yn)
            val_in = seg + nxt
            # hitting the axis y = x inside the step
            xh = (y - C * xi) / (1.0 - C)
            hit = (yn > xp) & (C < 1.0)
            val_hit = (1 - 2 * phi_c) * 0.5 * (y + xh) * (xi - xh) + axis_coef * xh * xh
        val = np.where(inside, val_in, np.where(hit, val_hit, np.inf))
        V[i] = val.min(axis=1)
        V[i, M] = axis_coef * xi * xi
    return DP2D(x_levels=xs, V=V, rho=rho, mean_size=d.mean)
