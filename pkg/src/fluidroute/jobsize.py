"""Job-size distributions and the size-derived quantities of the fluid model.

Every distribution exposes its density, CDF, the partial load ``g(h)``
carried by jobs no larger than ``h``, the inverse of ``g``, and the routing
fraction ``phi(y')`` needed to realize a drift slope ``y'`` in the
two-server system.

The partial load is normalised so that ``g(inf) == rho``; that is, the job
arrival rate is ``rho / E[X]``.  For the four mean-one families this is the
usual ``lambda == rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np
from scipy import integrate, optimize
from scipy.special import lambertw

__all__ = [
    "JobSizeDistribution",
    "Deterministic",
    "Uniform",
    "Exponential",
    "BoundedParetoLog",
    "Pareto",
    "DISTRIBUTIONS",
    "register",
    "get_distribution",
    "feasible_slope",
]

_QUAD_TOL = 1e-10


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def feasible_slope(rho: float) -> float:
    """Largest |y'| reachable away from the axis: rho / (1 - rho)."""
    return rho / (1.0 - rho)


@dataclass(frozen=True)
class JobSizeDistribution:
    """Base class.  Subclasses supply closed forms; the generic numerical
    routines here (quadrature, bracketed root finding) double as oracles."""

    tag: str = field(init=False, default="")
    lower: float = field(init=False, default=0.0)
    upper: float = field(init=False, default=math.inf)

    # -- primitives subclasses override -------------------------------------
    def _pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _ppf(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _first_moment_below(self, h: np.ndarray) -> np.ndarray:
        """E[X; X <= h].  Default: adaptive quadrature."""
        return np.vectorize(self._first_moment_below_quad)(h)

    def _stop_loss(self, h: np.ndarray) -> np.ndarray:
        """E[(X - h)^+].  Default: quadrature of the survival function."""
        return np.vectorize(self._stop_loss_quad)(h)

    # -- moments ------------------------------------------------------------
    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    @property
    def is_continuous(self) -> bool:
        return True

    # -- public API ---------------------------------------------------------
    def pdf(self, x):
        xa = np.asarray(x, dtype=float)
        out = np.where((xa >= self.lower) & (xa <= self.upper), self._pdf(np.clip(xa, self.lower, self.upper)), 0.0)
        return _scalar_or_array(out, x)

    def cdf(self, x):
        xa = np.asarray(x, dtype=float)
        inside = np.clip(xa, self.lower, min(self.upper, np.finfo(float).max))
        out = np.where(xa < self.lower, 0.0, np.where(xa >= self.upper, 1.0, self._cdf(inside)))
        return _scalar_or_array(out, x)

    def ccdf(self, x):
        xa = np.asarray(x, dtype=float)
        return _scalar_or_array(1.0 - np.asarray(self.cdf(xa)), x)

    def ppf(self, q):
        qa = np.asarray(q, dtype=float)
        return _scalar_or_array(self._ppf(qa), q)

    def first_moment_below(self, h):
        ha = np.asarray(h, dtype=float)
        out = np.where(
            ha < self.lower,
            0.0,
            np.where(ha >= self.upper, self.mean, self._first_moment_below(np.clip(ha, self.lower, min(self.upper, 1e300)))),
        )
        return _scalar_or_array(out, h)

    def stop_loss(self, h):
        """Expected excess E[(X - h)^+]; equals E[X] at h = 0."""
        ha = np.asarray(h, dtype=float)
        if np.any(ha < 0):
            raise ValueError("stop_loss requires h >= 0")
        return _scalar_or_array(self._stop_loss(ha), h)

    def partial_load(self, h, rho: float):
        """Load g(h) carried by jobs of size <= h when the total load is rho."""
        _check_rho(rho)
        ha = np.asarray(h, dtype=float)
        out = rho * np.asarray(self.first_moment_below(ha)) / self.mean
        return _scalar_or_array(np.clip(out, 0.0, rho), h)

    def inverse_partial_load(self, z, rho: float):
        """Smallest size threshold h with g(h) = z.

        Returns the infimum of the support at z = 0 and the supremum at
        z = rho.
        """
        _check_rho(rho)
        za = np.asarray(z, dtype=float)
        if np.any(za < -1e-12) or np.any(za > rho * (1 + 1e-12)):
            raise ValueError(f"load {z!r} outside [0, rho={rho}]")
        m = np.clip(za / rho, 0.0, 1.0) * self.mean
        out = np.where(m <= 0.0, self.lower, np.where(m >= self.mean, self.upper, self._inverse_first_moment(np.clip(m, 0.0, self.mean))))
        return _scalar_or_array(out, z)

    def job_fraction(self, z, rho: float):
        """Fraction of jobs that must be routed, smallest first, to carry load z."""
        h = np.asarray(self.inverse_partial_load(z, rho))
        return _scalar_or_array(np.asarray(self.cdf(h)), z)

    def phi(self, yprime, rho: float):
        """Fraction of jobs sent to the shorter queue to move with slope y'."""
        k = feasible_slope(rho)
        ya = np.asarray(yprime, dtype=float)
        if np.any(np.abs(ya) > k * (1 + 1e-12) + 1e-15):
            raise ValueError(f"slope {yprime!r} infeasible: |y'| must be <= {k}")
        z = np.clip((rho + (1.0 - rho) * ya) / 2.0, 0.0, rho)
        return _scalar_or_array(np.asarray(self.job_fraction(z, rho)), yprime)

    def phi_axis(self, rho: float) -> float:
        """Phi on the axis u2 = 0.  Equal to 1 below rho = 1/2 (absorbing)."""
        if rho < 0.5:
            return 1.0
        return float(self.job_fraction(0.5, rho))

    def load_balancing_threshold(self, rho: float = 0.5) -> float:
        """Size h splitting the load in half, g(h) = rho / 2 (independent of rho)."""
        return float(self.inverse_partial_load(rho / 2.0, rho))

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF sampling from a caller-owned generator."""
        return self.ppf(rng.random(size))

    # -- numerical routines (fallback and test oracles) --------------------
    def _inverse_first_moment(self, m: np.ndarray) -> np.ndarray:
        return np.vectorize(self._inverse_first_moment_bisect)(m)

    def _first_moment_below_quad(self, h: float) -> float:
        if h <= self.lower:
            return 0.0
        val, _ = integrate.quad(lambda t: t * self.pdf(t), self.lower, min(h, self.upper), epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=200)
        return val

    def _stop_loss_quad(self, h: float) -> float:
        start = max(h, self.lower)
        if start >= self.upper:
            return 0.0
        val, _ = integrate.quad(lambda t: self.ccdf(t), start, self.upper, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=200)
        return val + max(self.lower - h, 0.0)

    def _inverse_first_moment_bisect(self, m: float) -> float:
        if m <= 0.0:
            return self.lower
        if m >= self.mean:
            return self.upper
        hi = self.upper if math.isfinite(self.upper) else max(1.0, self.lower) * 2.0
        while not math.isfinite(self.upper) and float(self.first_moment_below(hi)) < m:
            hi *= 2.0
        f = lambda t: float(self.first_moment_below(t)) - m
        return optimize.brentq(f, self.lower, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def _check_rho(rho: float) -> None:
    if not 0.0 < rho < 1.0:
        raise ValueError(f"load rho={rho} must lie in (0, 1)")


@dataclass(frozen=True)
class Deterministic(JobSizeDistribution):
    """All jobs have size ``value``.  Atom routing is fractional."""

    value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tag", "det")
        object.__setattr__(self, "lower", self.value)
        object.__setattr__(self, "upper", self.value)

    @property
    def mean(self):
        return self.value

    @property
    def second_moment(self):
        return self.value**2

    @property
    def is_continuous(self):
        return False

    def pdf(self, x):
        # point mass: no density; reported as zero everywhere
        return _scalar_or_array(np.zeros_like(np.asarray(x, dtype=float)), x)

    def cdf(self, x):
        xa = np.asarray(x, dtype=float)
        return _scalar_or_array(np.where(xa >= self.value, 1.0, 0.0), x)

    def _ppf(self, q):
        return np.full_like(q, self.value, dtype=float)

    def first_moment_below(self, h):
        ha = np.asarray(h, dtype=float)
        return _scalar_or_array(np.where(ha >= self.value, self.value, 0.0), h)

    def _stop_loss(self, h):
        return np.maximum(self.value - h, 0.0)

    def inverse_partial_load(self, z, rho):
        _check_rho(rho)
        za = np.asarray(z, dtype=float)
        if np.any(za < -1e-12) or np.any(za > rho * (1 + 1e-12)):
            raise ValueError(f"load {z!r} outside [0, rho={rho}]")
        return _scalar_or_array(np.full_like(za, self.value), z)

    def job_fraction(self, z, rho):
        _check_rho(rho)
        za = np.asarray(z, dtype=float)
        if np.any(za < -1e-12) or np.any(za > rho * (1 + 1e-12)):
            raise ValueError(f"load {z!r} outside [0, rho={rho}]")
        return _scalar_or_array(np.clip(za / rho, 0.0, 1.0), z)


@dataclass(frozen=True)
class Uniform(JobSizeDistribution):
    """Uniform on [0, 2 * mean_size]."""

    width: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "tag", "uniform")
        object.__setattr__(self, "lower", 0.0)
        object.__setattr__(self, "upper", self.width)

    @property
    def mean(self):
        return self.width / 2.0

    @property
    def second_moment(self):
        return self.width**2 / 3.0

    def _pdf(self, x):
        return np.full_like(x, 1.0 / self.width, dtype=float)

    def _cdf(self, x):
        return x / self.width

    def _ppf(self, q):
        return self.width * q

    def _first_moment_below(self, h):
        return h * h / (2.0 * self.width)

    def _stop_loss(self, h):
        b = self.width
        return np.where(h >= b, 0.0, (b - np.minimum(h, b)) ** 2 / (2.0 * b))

    def _inverse_first_moment(self, m):
        return np.sqrt(2.0 * self.width * m)


@dataclass(frozen=True)
class Exponential(JobSizeDistribution):
    rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tag", "exp")

    @property
    def mean(self):
        return 1.0 / self.rate

    @property
    def second_moment(self):
        return 2.0 / self.rate**2

    def _pdf(self, x):
        return self.rate * np.exp(-self.rate * x)

    def _cdf(self, x):
        return -np.expm1(-self.rate * x)

    def _ppf(self, q):
        return -np.log1p(-q) / self.rate

    def _first_moment_below(self, h):
        t = self.rate * h
        return (-np.expm1(-t) - t * np.exp(-t)) / self.rate

    def _stop_loss(self, h):
        return np.exp(-self.rate * h) / self.rate

    def _inverse_first_moment(self, m):
        # (1 + t) e^{-t} = 1 - rate * m  ->  t = -1 - W_{-1}(-(1 - rate m) / e)
        c = np.clip(1.0 - self.rate * m, 0.0, 1.0)
        with np.errstate(all="ignore"):
            t = -1.0 - np.real(lambertw(-c / math.e, -1))
        t = np.where(c >= 1.0, 0.0, np.where(c <= 0.0, np.inf, t))
        # one Newton polish: d/dt[(1+t)e^{-t}] = -t e^{-t}
        with np.errstate(all="ignore"):
            fin = np.isfinite(t) & (t > 1e-8)
            tt = np.where(fin, t, 1.0)
            step = ((1.0 + tt) * np.exp(-tt) - c) / (tt * np.exp(-tt))
            t = np.where(fin, tt + step, t)
        return t / self.rate


@dataclass(frozen=True)
class BoundedParetoLog(JobSizeDistribution):
    """Density proportional to 1/x on [low, high] (mean ~1 for [1/66, 6])."""

    low: float = 1.0 / 66.0
    high: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "tag", "bpareto")
        object.__setattr__(self, "lower", self.low)
        object.__setattr__(self, "upper", self.high)

    @property
    def _log_ratio(self):
        return math.log(self.high / self.low)

    @property
    def mean(self):
        return (self.high - self.low) / self._log_ratio

    @property
    def second_moment(self):
        return (self.high**2 - self.low**2) / (2.0 * self._log_ratio)

    def _pdf(self, x):
        return 1.0 / (x * self._log_ratio)

    def _cdf(self, x):
        return np.log(x / self.low) / self._log_ratio

    def _ppf(self, q):
        return self.low * (self.high / self.low) ** q

    def _first_moment_below(self, h):
        return (h - self.low) / self._log_ratio

    def _stop_loss(self, h):
        a, b, L = self.low, self.high, self._log_ratio
        hc = np.clip(h, a, b)
        inside = -hc + (b - hc) / L + hc * np.log(hc / a) / L
        return np.where(h < a, self.mean - h, np.where(h >= b, 0.0, inside))

    def _inverse_first_moment(self, m):
        return self.low + m * self._log_ratio


@dataclass(frozen=True)
class Pareto(JobSizeDistribution):
    """Pareto with shape ``alpha`` and scale ``xm``; (2, 1/2) has mean 1."""

    alpha: float = 2.0
    xm: float = 0.5

    def __post_init__(self):
        if self.alpha <= 1.0:
            raise ValueError("Pareto needs alpha > 1 for a finite mean")
        object.__setattr__(self, "tag", "pareto")
        object.__setattr__(self, "lower", self.xm)

    @property
    def mean(self):
        return self.alpha * self.xm / (self.alpha - 1.0)

    @property
    def second_moment(self):
        if self.alpha <= 2.0:
            return math.inf
        return self.alpha * self.xm**2 / (self.alpha - 2.0)

    def _pdf(self, x):
        return self.alpha * self.xm**self.alpha * x ** (-self.alpha - 1.0)

    def _cdf(self, x):
        return 1.0 - (self.xm / x) ** self.alpha

    def _ppf(self, q):
        return self.xm * (1.0 - q) ** (-1.0 / self.alpha)

    def _first_moment_below(self, h):
        # E[X; X > h] = mean * (xm / h)^(alpha - 1)
        return self.mean * (1.0 - (self.xm / h) ** (self.alpha - 1.0))

    def _stop_loss(self, h):
        a, xm = self.alpha, self.xm
        hc = np.maximum(h, xm)
        tail = xm**a * hc ** (1.0 - a) / (a - 1.0)
        return np.where(h < xm, self.mean - h, tail)

    def _inverse_first_moment(self, m):
        with np.errstate(divide="ignore"):
            return self.xm * (1.0 - m / self.mean) ** (-1.0 / (self.alpha - 1.0))


DISTRIBUTIONS: Dict[str, Callable[[], JobSizeDistribution]] = {}


def register(tag: str, factory: Callable[[], JobSizeDistribution]) -> None:
    """Make a distribution available by config tag."""
    DISTRIBUTIONS[tag] = factory


register("det", Deterministic)
register("uniform", Uniform)
register("exp", Exponential)
register("bpareto", BoundedParetoLog)
register("pareto", Pareto)


def get_distribution(tag) -> JobSizeDistribution:
    if isinstance(tag, JobSizeDistribution):
        return tag
    try:
        return DISTRIBUTIONS[tag]()
    except KeyError:
        raise KeyError(f"unknown distribution tag {tag!r}; known: {sorted(DISTRIBUTIONS)}") from None
