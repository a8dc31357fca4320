"""Dispatching policies for the stochastic simulator.

Queue indices are 0-based.  The "short" queue is the one with the smaller
backlog; ties go to index 0.  Every policy is compiled into a single numba
kernel, ``decide_kernel``, so the simulator can call it per arrival
without leaving nopython mode.  ``decide`` is the Python entry point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .jobsize import JobSizeDistribution, get_distribution
from .optpath import OptimalPathTable

__all__ = [
    "KINDS",
    "PolicyConfig",
    "DispatchContext",
    "MissingTableError",
    "decide",
    "lookahead_cost",
    "card_defaults",
    "tune_card",
]

KINDS = ("RND", "LWL", "DICE", "CARD", "SSLL", "SSLL_BLB", "F_BLB", "F_BLBH", "FLUID_OPT_REF")
RND, LWL, DICE, CARD, SSLL, SSLL_BLB, F_BLB, F_BLBH, FLUID_OPT_REF = range(len(KINDS))
_NEEDS_TABLE = {"F_BLB", "F_BLBH", "FLUID_OPT_REF"}
_TWO_SERVER_ONLY = set(KINDS) - {"RND", "LWL"}


class MissingTableError(ValueError):
    pass


def card_defaults(d, rho: float):
    """Default CARD thresholds (small, large, short-queue backlog)."""
    d = get_distribution(d)
    small = float(d.inverse_partial_load(rho / 4.0, rho))
    large = float(d.inverse_partial_load(3.0 * rho / 4.0, rho))
    return small, large, 2.0 * d.mean * rho / (1.0 - rho)


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    tau_dice: float = 6.0
    u_B: Optional[float] = None
    h_S: Optional[float] = None
    card_params: Optional[tuple] = None
    table: Optional[OptimalPathTable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {KINDS}")
        for name in ("tau_dice", "u_B", "h_S"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.card_params is not None:
            cp = tuple(float(v) for v in self.card_params)
            if len(cp) != 3 or min(cp) < 0:
                raise ValueError("card_params needs three nonnegative thresholds")
            object.__setattr__(self, "card_params", cp)
        if kind in _NEEDS_TABLE and self.table is None:
            raise MissingTableError(f"{kind} needs a solved OptimalPathTable")

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    def resolved(self, d=None, rho: Optional[float] = None) -> "PolicyConfig":
        """Fill defaults that depend on the distribution and load."""
        u_B, h_S, cp = self.u_B, self.h_S, self.card_params
        if u_B is None:
            u_B = 3.0 if self.kind == "F_BLB" else 2.0
        if h_S is None:
            if self.kind == "SSLL":
                if d is None:
                    raise ValueError("SSLL default threshold needs the job-size distribution")
                h_S = float(get_distribution(d).load_balancing_threshold())
            else:
                h_S = 1.5
        if cp is None and self.kind == "CARD":
            if d is None or rho is None:
                raise ValueError("CARD defaults need the distribution and load")
            cp = card_defaults(d, rho)
        return replace(self, u_B=u_B, h_S=h_S, card_params=cp)

    def params(self) -> np.ndarray:
        cp = self.card_params or (0.0, 0.0, 0.0)
        return np.array([self.tau_dice, self.u_B or 0.0, self.h_S or 0.0, cp[0], cp[1], cp[2]], dtype=float)

    def table_arrays(self):
        """(tau, threshold, prefactor) arrays for the kernel."""
        t = self.table
        if t is None:
            return np.zeros(2), np.zeros(2), 0.0
        thr = np.asarray(t.threshold, dtype=float)
        return np.ascontiguousarray(t.tau, dtype=float), np.where(np.isfinite(thr), thr, np.inf), float(t.prefactor)


@dataclass(frozen=True)
class DispatchContext:
    u: tuple
    x: float

    def __post_init__(self):
        u = tuple(float(v) for v in self.u)
        if any(not v >= 0 for v in u):
            raise ValueError("backlogs must be nonnegative")
        if not self.x > 0:
            raise ValueError("job size must be positive")
        object.__setattr__(self, "u", u)


# --- kernel -----------------------------------------------------------------


@njit(cache=True, nogil=True)
def fluid_value(u0, u1, tau, pref):
    """Fluid value with tau linearly interpolated on the uniform yhat-grid."""
    x = u0 + u1
    if x <= 0.0:
        return 0.0
    yh = abs(u0 - u1) / x
    m = tau.shape[0] - 1
    pos = yh * m
    j = int(pos)
    if j >= m:
        t = tau[m]
    else:
        a = pos - j
        t = (1.0 - a) * tau[j] + a * tau[j + 1]
    return pref * x * x * (0.5 + t)


@njit(cache=True, nogil=True)
def _lookahead(u, x, i, tau, pref):
    if i == 0:
        return 2.0 * u[0] + fluid_value(u[0] + x, u[1], tau, pref)
    return 2.0 * u[1] + fluid_value(u[0], u[1] + x, tau, pref)


@njit(cache=True, nogil=True)
def _short_long(u):
    if u[1] < u[0]:
        return 1, 0
    return 0, 1


@njit(cache=True, nogil=True)
def _f_blb(u, x, u_B, tau, pref):
    s, l = _short_long(u)
    if u[s] <= u_B:
        return s
    c0 = _lookahead(u, x, 0, tau, pref)
    c1 = _lookahead(u, x, 1, tau, pref)
    return 0 if c0 <= c1 else 1


@njit(cache=True, nogil=True)
def decide_kernel(code, u, x, coin, params, tau, thr, pref):
    """Index of the queue that receives a job of size ``x``.

    ``coin`` is a uniform(0,1) draw, used only by RND.
    """
    n = u.shape[0]
    if code == RND:
        i = int(coin * n)
        return i if i < n else n - 1
    if code == LWL:
        best = 0
        for i in range(1, n):
            if u[i] < u[best]:
                best = i
        return best
    s, l = _short_long(u)
    if code == DICE:
        return s if u[s] + x < params[0] else l
    if code == CARD:
        if x <= params[3]:
            return s
        if x > params[4]:
            return l
        return s if u[s] < params[5] else l
    if code == SSLL:
        return s if x < params[2] else l
    if code == SSLL_BLB:
        if u[s] < params[1]:
            return s
        return s if x < params[2] else l
    if code == F_BLB:
        return _f_blb(u, x, params[1], tau, pref)
    if code == F_BLBH:
        if x < params[2]:
            return s
        return _f_blb(u, x, params[1], tau, pref)
    # FLUID_OPT_REF: size threshold of the fluid-optimal split at the current imbalance
    tot = u[0] + u[1]
    if tot <= 0.0:
        return s
    m = thr.shape[0] - 1
    j = int(round(abs(u[0] - u[1]) / tot * m))
    return s if x < thr[j] else l


# --- Python API -------------------------------------------------------------


def _check_arity(cfg: PolicyConfig, n: int):
    if n != 2 and cfg.kind in _TWO_SERVER_ONLY:
        raise ValueError(f"{cfg.kind} is defined for two servers only")


def decide(cfg: PolicyConfig, ctx: DispatchContext, rng: Optional[np.random.Generator] = None, d=None, rho=None) -> int:
    """0-based index of the queue chosen for the arriving job."""
    if cfg.kind in _NEEDS_TABLE and cfg.table is None:
        raise MissingTableError(f"{cfg.kind} needs a solved OptimalPathTable")
    u = np.asarray(ctx.u, dtype=float)
    _check_arity(cfg, len(u))
    if cfg.kind == "RND":
        if rng is None:
            raise ValueError("RND needs a random generator")
        coin = float(rng.random())
    else:
        coin = 0.0
    if d is None and cfg.table is not None:
        d = cfg.table.dist
    if rho is None and cfg.table is not None:
        rho = cfg.table.rho
    c = cfg.resolved(d, rho)
    tau, thr, pref = c.table_arrays()
    return int(decide_kernel(c.code, u, float(ctx.x), coin, c.params(), tau, thr, pref))


def lookahead_cost(table: OptimalPathTable, u, x: float, i: int) -> float:
    """Own wait 2 u_i plus the fluid cost-to-go after adding ``x`` to queue i."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise ValueError("lookahead is defined for two servers")
    if i not in (0, 1):
        raise IndexError("queue index must be 0 or 1")
    return float(_lookahead(u, float(x), int(i), np.ascontiguousarray(table.tau), float(table.prefactor)))


def tune_card(d, rho: float, small: Sequence[float], large: Sequence[float], queue: Sequence[float], arrivals: int = 200_000, seed: int = 0):
    """Grid search of CARD thresholds by simulated mean wait.

    Returns ``(best_params, results)`` where results maps each parameter
    triple to its mean wait.  All candidates share random numbers.
    """
    from .sim import SimConfig, run

    results = {}
    for s in small:
        for lg in large:
            if lg < s:
                continue
            for q in queue:
                cfg = PolicyConfig("CARD", card_params=(s, lg, q))
                st = run(SimConfig(rho=rho, dist=d, policy=cfg, arrivals=arrivals, seed=seed, replications=1))
                results[(s, lg, q)] = st.mean_wait
    best = min(results, key=results.get)
    return best, results
