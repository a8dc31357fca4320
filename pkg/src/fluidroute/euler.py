"""Fine-step Euler integration of the fluid dynamics.

This is the ground-truth integrator used to check every closed-form value
function.  It knows nothing about paths or value formulas: it steps
``du_i/dt = rho_i - 1/n`` in time under a feedback control and accumulates
the cost rate ``n * sum_i lambda_i u_i`` until absorption.

Two-server controls are described from the point of view of the *short*
queue by ``(work_short, jobs_short)``: the work rate and the job fraction it
receives.  The control codes:

``CONST``    fixed interior split (straight paths, balanced split)
``MWL``      everything to the long queue
``UNAWARE``  size-blind fraction ``p = clip(c0 + c1 sin(c2 u_long + c3 u_short))``
``LWL``      everything to the short queue until balanced, then half each

When the short queue is empty a work-conserving control sends it work at
rate 1/2 (rho >= 1/2) with job fraction ``axis_jobs``; below rho = 1/2 that
state is absorbing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

CONST, MWL, UNAWARE, LWL = 0, 1, 2, 3


@dataclass(frozen=True)
class EulerResult:
    cost: float
    elapsed: float
    steps: int
    final: tuple


@njit(cache=True)
def _interior(mode, rho, lam, ul, us, params):
    if mode == CONST:
        return params[0], params[1]
    if mode == MWL:
        return 0.0, 0.0
    if mode == UNAWARE:
        p = params[0] + params[1] * math.sin(params[2] * ul + params[3] * us)
        p = min(max(p, 0.0), 1.0)
        return rho * p, p
    # LWL: the caller handles the balanced band
    return rho, 1.0


@njit(cache=True)
def _euler_two(u1, u2, rho, lam, mode, params, axis_jobs, size_aware_axis, dt, max_steps):
    cost = 0.0
    t = 0.0
    steps = 0
    while steps < max_steps:
        if u1 >= u2:
            ul, us, long_is_1 = u1, u2, True
        else:
            ul, us, long_is_1 = u2, u1, False
        if ul <= 0.0:
            break
        on_axis = us <= 0.0
        if on_axis:
            if rho < 0.5:
                break
            ws = 0.5
            fs = axis_jobs if size_aware_axis else 1.0 / (2.0 * rho)
        elif mode == LWL and ul - us <= 2.0 * rho * dt:
            ws, fs = 0.5 * rho, 0.5
        else:
            ws, fs = _interior(mode, rho, lam, ul, us, params)
        wl = rho - ws
        dus = ws - 0.5
        dul = wl - 0.5
        h = dt
        if not on_axis and us + h * dus < 0.0:
            # land exactly on the axis
            h = us / (-dus)
        if ul + h * dul < 0.0:
            h = ul / (-dul)
        us_new = max(us + h * dus, 0.0) if not on_axis else 0.0
        ul_new = max(ul + h * dul, 0.0)
        # cost rate is linear in the state over a step with fixed control
        c0 = 2.0 * lam * (fs * us + (1.0 - fs) * ul)
        c1 = 2.0 * lam * (fs * us_new + (1.0 - fs) * ul_new)
        cost += 0.5 * h * (c0 + c1)
        t += h
        if long_is_1:
            u1, u2 = ul_new, us_new
        else:
            u1, u2 = us_new, ul_new
        steps += 1
    return cost, t, steps, u1, u2


@njit(cache=True)
def _euler_rnd(u, rho, lam, dt, max_steps):
    u = u.copy()
    n = u.shape[0]
    cost = 0.0
    t = 0.0
    steps = 0
    while steps < max_steps:
        if np.max(u) <= 0.0:
            break
        c0 = 0.0
        c1 = 0.0
        for i in range(n):
            ui = u[i]
            if ui <= 0.0:
                continue
            step = dt * (1.0 - rho) / n
            un = ui - step if ui > step else 0.0
            h = dt if ui > step else ui * n / (1.0 - rho)
            # each queue: rate lam/n of jobs, each waiting n*u
            cost += 0.5 * h * lam * (ui + un)
            u[i] = un
        t += dt
        steps += 1
    return cost, t, steps


def euler_two_server(u1, u2, rho, mode, params=(), *, axis_jobs=None, d=None, dt_rel=1e-5, max_steps=50_000_000) -> EulerResult:
    """Integrate a two-server control from (u1, u2) until absorption.

    ``axis_jobs`` is the job fraction to the empty queue on the axis for a
    size-aware control (``d.phi_axis(rho)``); size-blind controls use
    ``1 / (2 rho)``.
    """
    lam = rho if d is None else rho / d.mean
    x0 = u1 + u2
    if x0 <= 0:
        return EulerResult(0.0, 0.0, 0, (u1, u2))
    size_aware_axis = mode in (CONST, MWL)
    if size_aware_axis and axis_jobs is None:
        if d is None:
            raise ValueError("size-aware control needs axis_jobs or a distribution")
        axis_jobs = d.phi_axis(rho)
    p = np.zeros(4)
    p[: len(params)] = params
    cost, t, steps, f1, f2 = _euler_two(float(u1), float(u2), float(rho), float(lam), int(mode), p, float(axis_jobs or 0.0), bool(size_aware_axis), dt_rel * x0, int(max_steps))
    return EulerResult(cost, t, steps, (f1, f2))


def euler_rnd(u, rho, d=None, dt_rel=1e-5, max_steps=50_000_000) -> EulerResult:
    """Integrate the random split for any number of servers."""
    u = np.asarray(u, dtype=float)
    lam = rho if d is None else rho / d.mean
    total = u.sum()
    if total <= 0:
        return EulerResult(0.0, 0.0, 0, tuple(u))
    cost, t, steps = _euler_rnd(u, float(rho), float(lam), dt_rel * total, int(max_steps))
    return EulerResult(cost, t, steps, (0.0,) * len(u))


# convenience wrappers pairing each closed form with its control


def sto_oracle(x0, y0, d, rho, **kw) -> EulerResult:
    u1, u2 = 0.5 * (x0 + abs(y0)), 0.5 * (x0 - abs(y0))
    yh = abs(y0) / x0 if x0 > 0 else 0.0
    k = rho / (1.0 - rho)
    if yh > k or yh >= 1.0:
        # saturated: every job to the short queue
        return euler_two_server(u1, u2, rho, CONST, (rho, 1.0), d=d, **kw)
    z = 0.5 * (rho + (1.0 - rho) * yh)
    return euler_two_server(u1, u2, rho, CONST, (z, float(d.phi(yh, rho))), d=d, **kw)


def mwl_oracle(u1, u2, d, rho, **kw) -> EulerResult:
    return euler_two_server(u1, u2, rho, MWL, (), d=d, **kw)


def balanced_oracle(u1, u2, d, rho, **kw) -> EulerResult:
    """Size-aware even split of the load (slope 0)."""
    return euler_two_server(u1, u2, rho, CONST, (0.5 * rho, float(d.phi(0.0, rho))), d=d, **kw)


def unaware_oracle(u1, u2, rho, coeffs, **kw) -> EulerResult:
    return euler_two_server(u1, u2, rho, UNAWARE, coeffs, **kw)


def lwl_oracle(u1, u2, rho, **kw) -> EulerResult:
    return euler_two_server(u1, u2, rho, LWL, (), **kw)
