"""Stochastic n-server FCFS dispatching simulator.

Poisson arrivals of work rate rho, n servers of rate 1/n each.  A job
dispatched to queue i waits ``n * u_i`` where ``u_i`` is that queue's backlog
at the arrival instant.  Arrivals are the only events: between them every
backlog drains by ``dt / n``, floored at zero.

Replications draw independent streams from ``SeedSequence(seed).spawn``; the
same seed gives every policy the same arrival times, sizes and coins, so
policy comparisons are paired.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats

from .jobsize import get_distribution
from .policies import PolicyConfig, decide_kernel

__all__ = ["SimConfig", "SimStats", "ReplicationResult", "run", "compare", "worker_count", "CHUNK"]

log = logging.getLogger(__name__)

CHUNK = 1 << 20
N_BATCHES = 50


def worker_count(requested: Optional[int] = None) -> int:
    """Thread count, capped by FLUIDROUTE_THREADS when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("FLUIDROUTE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"FLUIDROUTE_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class SimConfig:
    rho: float
    policy: PolicyConfig
    dist: str = "exp"
    n: int = 2
    arrivals: int = 10_000_000
    warmup: float = 0.05
    seed: int = 0
    replications: int = 10

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("need at least one server")
        if self.arrivals < 0 or self.replications < 1:
            raise ValueError("arrivals must be >= 0 and replications >= 1")
        if not 0.0 <= self.warmup < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if isinstance(self.policy, str):
            object.__setattr__(self, "policy", PolicyConfig(self.policy))
        try:
            get_distribution(self.dist)
        except KeyError as exc:
            raise ValueError(exc.args[0]) from None

    @property
    def per_replication(self) -> int:
        return self.arrivals // self.replications


@dataclass
class ReplicationResult:
    batch_means: np.ndarray
    wait_sum: float
    samples: int
    zero_waits: int
    sim_time: float
    arrived_work: float
    served_work: float
    final_backlog: float
    backlog_area: float
    observed_backlog_sum: float
    measured_time: float

    @property
    def work_drift(self) -> float:
        return self.arrived_work - self.served_work - self.final_backlog


@dataclass
class SimStats:
    mean_wait: Optional[float]
    half_width: Optional[float]
    sim_time: float
    samples: int
    zero_waits: int
    replications: list = field(default_factory=list, repr=False)
    ratio_to_lwl: Optional[float] = None
    ratio_half_width: Optional[float] = None

    @property
    def work_drift(self) -> float:
        return max((abs(r.work_drift) for r in self.replications), default=0.0)

    @property
    def time_avg_backlog(self) -> Optional[float]:
        t = sum(r.measured_time for r in self.replications)
        return sum(r.backlog_area for r in self.replications) / t if t > 0 else None

    @property
    def arrival_avg_backlog(self) -> Optional[float]:
        if self.samples == 0:
            return None
        return sum(r.observed_backlog_sum for r in self.replications) / self.samples

    def backlog_ci(self):
        """Half-width of the arrival-average backlog across replications."""
        vals = [r.observed_backlog_sum / r.samples for r in self.replications if r.samples]
        if len(vals) < 2:
            return math.nan
        return float(stats.t.ppf(0.975, len(vals) - 1) * np.std(vals, ddof=1) / math.sqrt(len(vals)))


@njit(cache=True, nogil=True)
def _run_chunk(u, gaps, sizes, coins, code, params, tau, thr, pref, start, warm, batch_len, batch_sums, acc):
    """Process one chunk of arrivals.  ``acc`` carries running totals:
    0 wait, 1 samples, 2 zero waits, 3 time, 4 arrived, 5 served,
    6 backlog area, 7 observed backlog, 8 measured time,
    9/10 compensation terms for arrived/served (Kahan)."""
    n = u.shape[0]
    rate = 1.0 / n
    nb = batch_sums.shape[0]
    for k in range(gaps.shape[0]):
        dt = gaps[k]
        idx = start + k
        drain = dt * rate
        measured = idx >= warm
        served = 0.0
        area = 0.0
        for i in range(n):
            ui = u[i]
            if ui > drain:
                served += drain
                area += (ui - 0.5 * drain) * dt
                u[i] = ui - drain
            else:
                served += ui
                area += 0.5 * ui * ui * n
                u[i] = 0.0
        acc[3] += dt
        # Kahan sum of served work
        yv = served - acc[10]
        tv = acc[5] + yv
        acc[10] = (tv - acc[5]) - yv
        acc[5] = tv
        if measured:
            acc[6] += area
            acc[8] += dt
        x = sizes[k]
        j = decide_kernel(code, u, x, coins[k], params, tau, thr, pref)
        w = n * u[j]
        if measured:
            tot = 0.0
            for i in range(n):
                tot += u[i]
            acc[7] += tot
            acc[0] += w
            acc[1] += 1.0
            if w == 0.0:
                acc[2] += 1.0
            b = (idx - warm) // batch_len
            if b < nb:
                batch_sums[b] += w
        u[j] += x
        yv = x - acc[9]
        tv = acc[4] + yv
        acc[9] = (tv - acc[4]) - yv
        acc[4] = tv


def _replicate(cfg: SimConfig, pol: PolicyConfig, seq: np.random.SeedSequence, count: int) -> ReplicationResult:
    d = get_distribution(cfg.dist)
    lam = cfg.rho / d.mean
    rng = np.random.default_rng(seq)
    warm = int(math.floor(cfg.warmup * count))
    measured = count - warm
    batch_len = max(1, measured // N_BATCHES)
    nb = min(N_BATCHES, measured) if measured > 0 else 0
    batch_sums = np.zeros(max(nb, 1))
    u = np.zeros(cfg.n)
    acc = np.zeros(11)
    params = pol.params()
    tau, thr, pref = pol.table_arrays()
    done = 0
    while done < count:
        m = min(CHUNK, count - done)
        # fixed draw order per chunk keeps streams identical across policies
        gaps = rng.exponential(1.0 / lam, m)
        sizes = np.asarray(d.sample(rng, m), dtype=float)
        coins = rng.random(m)
        _run_chunk(u, gaps, sizes, coins, pol.code, params, tau, thr, pref, done, warm, batch_len, batch_sums, acc)
        done += m
    if nb:
        # the last batch absorbs the remainder
        counts = np.full(nb, batch_len, dtype=float)
        counts[-1] = measured - batch_len * (nb - 1)
        tail = acc[0] - batch_sums[:nb].sum()
        batch_sums[nb - 1] += tail
        means = batch_sums[:nb] / counts
    else:
        means = np.zeros(0)
    return ReplicationResult(
        batch_means=means,
        wait_sum=float(acc[0]),
        samples=int(acc[1]),
        zero_waits=int(acc[2]),
        sim_time=float(acc[3]),
        arrived_work=float(acc[4]),
        served_work=float(acc[5]),
        final_backlog=float(u.sum()),
        backlog_area=float(acc[6]),
        observed_backlog_sum=float(acc[7]),
        measured_time=float(acc[8]),
    )


def _ci(values: np.ndarray) -> float:
    k = len(values)
    if k < 2:
        return math.nan
    return float(stats.t.ppf(0.975, k - 1) * np.std(values, ddof=1) / math.sqrt(k))


def _resolve(cfg: SimConfig) -> PolicyConfig:
    pol = cfg.policy.resolved(cfg.dist, cfg.rho)
    if cfg.n != 2 and pol.kind not in ("RND", "LWL"):
        raise ValueError(f"{pol.kind} is defined for two servers only")
    if pol.table is not None and (abs(pol.table.rho - cfg.rho) > 1e-12 or pol.table.dist_tag != get_distribution(cfg.dist).tag):
        raise ValueError("policy table was solved for a different load or distribution")
    return pol


def run(cfg: SimConfig, threads: Optional[int] = None) -> SimStats:
    """Simulate ``cfg``; replications run on a thread pool."""
    pol = _resolve(cfg)
    count = cfg.per_replication
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    if count == 0:
        return SimStats(None, None, 0.0, 0, 0, [])
    workers = min(worker_count(threads), cfg.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            reps = list(ex.map(lambda s: _replicate(cfg, pol, s, count), seqs))
    else:
        reps = [_replicate(cfg, pol, s, count) for s in seqs]
    samples = sum(r.samples for r in reps)
    if samples == 0:
        return SimStats(None, None, sum(r.sim_time for r in reps), 0, 0, reps)
    rep_means = np.array([r.wait_sum / r.samples for r in reps if r.samples])
    pooled = np.concatenate([r.batch_means for r in reps])
    ew = float(rep_means.mean())
    hw = _ci(pooled)
    for r in reps:
        if abs(r.work_drift) > 1e-9 * max(1.0, r.arrived_work):
            warnings.warn(f"work conservation drift {r.work_drift:.3e}", RuntimeWarning)
    return SimStats(ew, hw, sum(r.sim_time for r in reps), samples, sum(r.zero_waits for r in reps), reps)


def _paired_ratio(a: SimStats, b: SimStats):
    """Ratio of batch-mean averages with a delta-method CI on paired batches."""
    xa = np.concatenate([r.batch_means for r in a.replications])
    xb = np.concatenate([r.batch_means for r in b.replications])
    if len(xa) != len(xb) or len(xa) < 2:
        return a.mean_wait / b.mean_wait, math.nan
    ma, mb = xa.mean(), xb.mean()
    ratio = ma / mb
    resid = (xa - ratio * xb) / mb
    hw = float(stats.t.ppf(0.975, len(xa) - 1) * np.std(resid, ddof=1) / math.sqrt(len(xa)))
    return float(ratio), hw


def compare(cfgs: Sequence[SimConfig], threads: Optional[int] = None, baseline: str = "LWL") -> list:
    """Run every config with shared seeds and attach ratios to the baseline.

    The baseline (LWL) is simulated with the same seed and settings if it is
    not among ``cfgs``.  Returns the list of SimStats in input order.
    """
    cfgs = list(cfgs)
    if not cfgs:
        return []
    ref = cfgs[0]
    for c in cfgs[1:]:
        if (c.rho, c.n, get_distribution(c.dist).tag, c.arrivals, c.replications, c.seed, c.warmup) != (ref.rho, ref.n, get_distribution(ref.dist).tag, ref.arrivals, ref.replications, ref.seed, ref.warmup):
            raise ValueError("compared configs must share rho, n, distribution, run length and seed")
    results = [run(c, threads) for c in cfgs]
    base = next((r for c, r in zip(cfgs, results) if c.policy.kind == baseline and c.policy == PolicyConfig(baseline)), None)
    if base is None:
        from dataclasses import replace

        base = run(replace(ref, policy=PolicyConfig(baseline)), threads)
    for c, r in zip(cfgs, results):
        if r.mean_wait is None or base.mean_wait is None:
            continue
        if r is base:
            r.ratio_to_lwl, r.ratio_half_width = 1.0, 0.0
        else:
            r.ratio_to_lwl, r.ratio_half_width = _paired_ratio(r, base)
    return results
