"""Fluid dispatching model: state, load splits, path costs and closed-form
value functions.

Conventions
-----------
``u[i]`` is the remaining work in queue ``i``; each of the ``n`` servers
drains at rate ``1/n``, so a job dispatched to queue ``i`` waits ``n * u[i]``.
For two servers the coordinates are ``x = u1 + u2`` (total backlog),
``y = u1 - u2`` (imbalance) and ``yhat = y / x``; queue 1 is the longer one
and ties go to the lower index.

Size-aware costs use the job rate ``lam = rho / E[X]`` (``lam == rho`` for
mean-one sizes).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .jobsize import JobSizeDistribution, feasible_slope

__all__ = [
    "FluidState",
    "LoadSplit",
    "PathSpec",
    "ValueResult",
    "InfeasiblePathError",
    "cost_rate",
    "n_star",
    "is_absorbing",
    "split_to_thresholds",
    "path_cost",
    "v_rnd",
    "v_sto",
    "v_mwl",
    "v_lwl",
    "v_size_unaware",
    "mean_wait_fluid",
]

_FEAS_TOL = 1e-9


class InfeasiblePathError(ValueError):
    """A path asks for a drift no dispatching split can produce."""


def _job_rate(rho: float, d: Optional[JobSizeDistribution]) -> float:
    return rho if d is None else rho / d.mean


@dataclass(frozen=True)
class FluidState:
    u: tuple
    rho: float

    def __post_init__(self):
        u = tuple(float(v) for v in np.atleast_1d(self.u))
        if any(v < 0 for v in u):
            raise ValueError(f"backlogs must be nonnegative, got {u}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return len(self.u)

    @property
    def n_empty(self) -> int:
        return sum(1 for v in self.u if v == 0.0)

    def _two(self):
        if self.n != 2:
            raise ValueError("two-server coordinates need n == 2")
        u1, u2 = self.u
        return (u1, u2) if u1 >= u2 else (u2, u1)

    @property
    def x(self) -> float:
        return sum(self._two())

    @property
    def y(self) -> float:
        u1, u2 = self._two()
        return u1 - u2

    @property
    def yhat(self) -> float:
        x = self.x
        return self.y / x if x > 0 else 0.0

    @property
    def theta(self) -> float:
        u1, u2 = self._two()
        return math.atan2(u2, u1)


@dataclass(frozen=True)
class LoadSplit:
    """Per-server work rates, job rates and the size thresholds realising them.

    ``thresholds`` is ``h_0 = 0 <= h_1 <= ... <= h_n = inf`` in the order of
    increasing backlog; ``order[j]`` is the server receiving the j-th interval.
    """

    rho_i: np.ndarray
    lambda_i: np.ndarray
    thresholds: np.ndarray
    order: np.ndarray

    @property
    def nu_i(self) -> np.ndarray:
        n = len(self.rho_i)
        return 1.0 / n - self.rho_i


def n_star(rho: float, n: int) -> int:
    """Number of empty servers needed to absorb all incoming work."""
    return math.ceil(rho * n - 1e-12)


def is_absorbing(state: FluidState) -> bool:
    return state.n_empty >= state.n * state.rho - 1e-12


def cost_rate(state: FluidState, split: LoadSplit) -> float:
    """Waiting cost per unit time, n * sum_i lambda_i u_i."""
    return state.n * float(np.dot(split.lambda_i, state.u))


def _short_first(u: Sequence[float]) -> np.ndarray:
    # ascending backlog; on ties the higher index counts as shorter
    n = len(u)
    return np.array(sorted(range(n), key=lambda i: (u[i], -i)))


def split_to_thresholds(state: FluidState, rho_split, d: JobSizeDistribution) -> LoadSplit:
    """Realise a per-server load split with size intervals, shortest jobs to
    the smallest backlog."""
    rho = state.rho
    loads = np.asarray(rho_split, dtype=float)
    if loads.shape != (state.n,):
        raise ValueError("one load per server required")
    if np.any(loads < -_FEAS_TOL) or abs(loads.sum() - rho) > 1e-9:
        raise InfeasiblePathError(f"split {loads} must be nonnegative and sum to rho={rho}")
    loads = np.clip(loads, 0.0, rho)
    order = _short_first(state.u)
    cum = np.clip(np.cumsum(loads[order]), 0.0, rho)
    cum[-1] = rho
    lam = _job_rate(rho, d)
    frac = np.concatenate([[0.0], np.asarray(d.job_fraction(cum, rho), dtype=float)])
    frac[-1] = 1.0
    lambda_i = np.empty(state.n)
    lambda_i[order] = lam * np.diff(frac)
    h = np.concatenate([[0.0], np.asarray(d.inverse_partial_load(cum[:-1], rho), dtype=float), [math.inf]])
    return LoadSplit(rho_i=loads, lambda_i=lambda_i, thresholds=h, order=order)


@dataclass(frozen=True)
class ValueResult:
    v: float
    backlog_term: float = 0.0
    path_term: float = 0.0

    def __float__(self):
        return self.v


@dataclass(frozen=True)
class PathSpec:
    """A polygonal fluid path.

    Two-server form: ``x`` strictly decreasing from the initial total backlog,
    ``y`` the imbalance at each vertex and ``yprime[k]`` the constant slope on
    segment ``k``.  General form: ``states`` of shape (K+1, n) running from the
    absorbing end (row 0) to the initial state (row K).
    """

    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    yprime: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_states(cls, states) -> "PathSpec":
        return cls(states=np.asarray(states, dtype=float))

    @classmethod
    def from_xy(cls, x, y) -> "PathSpec":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        yp = np.diff(y) / np.diff(x)
        return cls(x=x, y=y, yprime=yp)

    @classmethod
    def from_control(cls, x1: float, y1: float, control: Callable[[float, float], float], rho: float, num: int = 10_000) -> "PathSpec":
        """March a feedback control y'(x, y) from (x1, y1) to absorption on a
        uniform x-grid, detecting the axis |y| = x."""
        xs, ys, yps = [x1], [y1], []
        dx = x1 / num
        x, y = x1, y1
        on_axis = x > 0 and abs(abs(y) - x) <= 1e-12 * x
        while x > 1e-15 * x1 and not (on_axis and rho < 0.5):
            if on_axis:
                # queue 2 stays empty; the rest of the path runs down the axis
                s = 1.0 if y > 0 else -1.0
                xs.append(0.0)
                ys.append(0.0)
                yps.append(s)
                break
            yp = float(control(x, y))
            x_next = max(x - dx, 0.0)
            if x_next < 1e-12 * x1:
                x_next = 0.0
            y_next = y - yp * (x - x_next)
            if abs(y_next) > x_next:
                # axis hit inside this step
                s = 1.0 if y_next > 0 else -1.0
                x_hit = (y - yp * x) / (s - yp) if s != yp else x
                x_hit = min(max(x_hit, x_next), x)
                x_next, y_next = x_hit, s * x_hit
                on_axis = True
                if x_hit >= x * (1 - 1e-14):
                    y = s * x
                    ys[-1] = y
                    continue
            xs.append(x_next)
            ys.append(y_next)
            yps.append(yp)
            x, y = x_next, y_next
        return cls(x=np.array(xs), y=np.array(ys), yprime=np.array(yps), meta={"rho": rho})

    def scaled(self, alpha: float) -> "PathSpec":
        if self.states is not None:
            return PathSpec(states=alpha * self.states)
        return PathSpec(x=alpha * self.x, y=alpha * self.y, yprime=self.yprime.copy())


def _segment_cost_xy(yp, ya, yb, dx, d, rho, phi_axis):
    """Integral of (1 - 2 Phi(y')) |y| dx over one straight segment."""
    k = feasible_slope(rho)
    if ya < 0 or yb < 0:
        if ya > 0 or yb > 0:
            # split at the crossing of y = 0
            frac = ya / (ya - yb)
            return _segment_cost_xy(yp, ya, 0.0, dx * frac, d, rho, phi_axis) + _segment_cost_xy(yp, 0.0, yb, dx * (1 - frac), d, rho, phi_axis)
        yp, ya, yb = -yp, -ya, -yb
    if abs(yp) <= k * (1 + 1e-12) + 1e-15:
        phi = float(d.phi(np.clip(yp, -k, k), rho))
    elif abs(yp - 1.0) < 1e-9:
        phi = phi_axis
    else:
        raise InfeasiblePathError(f"slope {yp} exceeds the feasible bound {k}")
    return (1.0 - 2.0 * phi) * 0.5 * (ya + yb) * dx


def _path_cost_xy(path: PathSpec, d, rho) -> ValueResult:
    x, y, yp = path.x, path.y, path.yprime
    if len(x) < 2:
        if len(x) == 1 and x[0] > 0 and not (rho < 0.5 and abs(abs(y[0]) - x[0]) < 1e-12 * x[0]):
            raise InfeasiblePathError("single-point path is not absorbing")
        return ValueResult(0.0)
    if np.any(np.diff(x) >= 0):
        raise InfeasiblePathError("x must decrease strictly along a work-conserving path")
    if np.any(np.abs(y) > x * (1 + 1e-9) + 1e-12):
        raise InfeasiblePathError("path leaves the state space |y| <= x")
    phi_axis = d.phi_axis(rho) if rho >= 0.5 else None
    x_end, y_end = x[-1], y[-1]
    if x_end > 1e-12 * x[0]:
        if not (rho < 0.5 and abs(abs(y_end) - x_end) <= 1e-9 * x_end):
            raise InfeasiblePathError("path ends at a non-absorbing state")
    total = 0.0
    for k in range(len(yp)):
        on_axis = abs(abs(y[k]) - x[k]) <= 1e-12 * x[k] and abs(abs(yp[k]) - 1.0) < 1e-9
        if on_axis and rho < 0.5:
            raise InfeasiblePathError("axis is absorbing for rho < 1/2; path must stop there")
        total += _segment_cost_xy(yp[k], y[k], y[k + 1], x[k] - x[k + 1], d, rho, phi_axis)
    pref = _job_rate(rho, d) / (1.0 - rho)
    backlog = 0.5 * (x[0] ** 2 - x_end**2)
    return ValueResult(pref * (backlog + total), pref * backlog, pref * total)


def _path_cost_states(path: PathSpec, d, rho) -> ValueResult:
    r = path.states
    n = r.shape[1]
    first = FluidState(tuple(np.maximum(r[0], 0.0)), rho)
    if not is_absorbing(first) and np.any(r[0] > 1e-12):
        raise InfeasiblePathError("path must start (s = 0) at an absorbing state")
    total = 0.0
    for k in range(len(r) - 1):
        dr = r[k + 1] - r[k]
        S = dr.sum()
        if S <= 0:
            raise InfeasiblePathError("sum of r' must be positive along a work-conserving path")
        nu = (1.0 - rho) * dr / S
        loads = 1.0 / n - nu
        if np.any(loads < -1e-9) or np.any(loads > rho + 1e-9):
            raise InfeasiblePathError(f"segment {k} needs per-server loads {loads}")
        loads = np.clip(loads, 0.0, rho)
        loads *= rho / loads.sum()
        mid = FluidState(tuple(np.maximum(0.5 * (r[k] + r[k + 1]), 0.0)), rho)
        split = split_to_thresholds(mid, loads, d)
        # cost rate is linear along a segment with fixed split: midpoint is exact
        total += cost_rate(mid, split) * S
    return ValueResult(total / (1.0 - rho))


def path_cost(path: PathSpec, d: JobSizeDistribution, rho: float) -> ValueResult:
    """Total waiting cost accumulated along an admissible path."""
    if path.states is not None:
        return _path_cost_states(path, d, rho)
    return _path_cost_xy(path, d, rho)


# --- closed forms -----------------------------------------------------------


def _long_short(u1, u2):
    return (u1, u2) if u1 >= u2 else (u2, u1)


def v_rnd(u, rho: float, d: Optional[JobSizeDistribution] = None) -> float:
    """Random load-balancing split: lam * n / (2 (1 - rho)) * sum u_i^2."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = len(u)
    return _job_rate(rho, d) * n / (2.0 * (1.0 - rho)) * float(np.dot(u, u))


def v_sto(x0: float, y0: float, d: JobSizeDistribution, rho: float) -> float:
    """Straight-to-origin path from (x0, y0): constant relative imbalance.

    Below rho = 1/2 an imbalance above rho/(1-rho) cannot be held; there the
    path sends everything to the short queue until it empties (absorption).
    """
    y0 = abs(y0)
    if x0 <= 0:
        return 0.0
    if y0 > x0 * (1 + 1e-12):
        raise ValueError("need |y0| <= x0")
    lam = _job_rate(rho, d)
    yh = min(y0 / x0, 1.0)
    k = feasible_slope(rho)
    if yh >= 1.0 - 1e-15:
        if rho < 0.5:
            return 0.0
        return lam * (1.0 - d.phi_axis(rho)) * x0**2 / (1.0 - rho)
    if yh > k:
        u2 = 0.5 * (x0 - y0)
        return 2.0 * lam * u2**2 / (1.0 - 2.0 * rho)
    t_sto = (1.0 - 2.0 * float(d.phi(yh, rho))) * yh * x0**2 / 2.0
    return lam / (1.0 - rho) * (x0**2 / 2.0 + t_sto)


def v_mwl(u1: float, u2: float, d: JobSizeDistribution, rho: float) -> float:
    """Most-work-left: everything to the long queue until the short one is
    empty, then hold the short queue empty at full rate."""
    u1, u2 = _long_short(u1, u2)
    lam = _job_rate(rho, d)
    c01 = 2.0 * lam * (2.0 * u1 * u2 + (2.0 * rho - 1.0) * u2**2)
    if rho < 0.5:
        return c01
    ubar = u1 + (2.0 * rho - 1.0) * u2
    c12 = lam * (1.0 - d.phi_axis(rho)) * ubar**2 / (1.0 - rho)
    return c01 + c12


def v_size_unaware(x1: float, y1: float, rho: float, x_absorb: float = 0.0) -> float:
    """Any size-blind work-conserving path: (rho x1^2 - (1-rho) y1^2) / (2(1-rho)).

    ``x_absorb`` is the total backlog where the path meets the axis when
    rho < 1/2 (zero if it reaches the origin directly).
    """
    if rho >= 0.5:
        x_absorb = 0.0
    xa2 = x_absorb**2
    return (rho * (x1**2 - xa2) - (1.0 - rho) * (y1**2 - xa2)) / (2.0 * (1.0 - rho))


def v_lwl(u1: float, u2: float, rho: float) -> float:
    """Fluid least-work-left: all work to the short queue until balanced,
    then an even size-blind split."""
    u1, u2 = _long_short(u1, u2)
    x, y = u1 + u2, u1 - u2
    if x <= 0:
        return 0.0
    k = feasible_slope(rho)
    if rho < 0.5 and y > k * x:
        # the short queue empties before balance is reached
        return 2.0 * rho * u2**2 / (1.0 - 2.0 * rho)
    return v_size_unaware(x, y, rho)


class DivergentExpectationWarning(RuntimeWarning):
    pass


def mean_wait_fluid(value_fn: Callable[[float, float], float], d: JobSizeDistribution) -> float:
    """E[v(X, 0)]: mean wait of the stochastic system from a fluid value function."""
    if not d.is_continuous:
        return float(value_fn(d.mean, 0.0))
    if not math.isfinite(d.second_moment) and not math.isfinite(d.upper):
        big = float(value_fn(1e3, 0.0))
        if big > 0:
            warnings.warn(f"E[v(X,0)] diverges: {d.tag} has infinite second moment", DivergentExpectationWarning, stacklevel=2)
            return math.inf
    f = lambda t: float(value_fn(t, 0.0)) * float(d.pdf(t))
    upper = d.upper
    if math.isfinite(upper):
        val, _ = integrate.quad(f, d.lower, upper, epsabs=1e-11, epsrel=1e-11, limit=400)
    else:
        val, _ = integrate.quad(f, d.lower, np.inf, epsabs=1e-11, epsrel=1e-11, limit=400)
    return val
