"""Symbols of the minimal citation model.

Growth of the literature, relative fitness, aging kernels, the attachment
weight in its two readings, and the closed-form citation curves.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, HistoryValidationError, KernelParameterError

__all__ = [
    "SystemParams",
    "AgingKernel",
    "LogNormal",
    "Exponential",
    "Uniform",
    "parse_kernel",
    "PaperParams",
    "KernelVariant",
    "CitationHistory",
    "paper_count",
    "relative_fitness",
    "aging_pdf",
    "aging_cdf",
    "kernel_weight",
    "ultimate_citations",
    "citation_curve",
    "comment_curve",
]


@dataclass(frozen=True)
class SystemParams:
    beta: float
    bigA: float = 1.0
    m: int = 1
    n0: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if not self.bigA > 0:
            raise DomainError(f"bigA must be positive, got {self.bigA}")
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"m must be a positive integer, got {self.m}")
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise DomainError(f"n0 must be a positive integer, got {self.n0}")


# ---------------------------------------------------------------------------
# aging kernels


class AgingKernel:
    """Waiting-time density P(dt) for the age dependence of citability.

    Subclasses implement ``_pdf``, ``_cdf``, ``_sf`` and ``_ppf`` on the
    nonnegative half-line; the public methods handle negative ages and
    scalar/array dispatch.
    """

    kind: ClassVar[str] = ""

    def pdf(self, dt):
        dt = np.asarray(dt, dtype=float)
        out = np.zeros_like(dt)
        pos = dt >= 0
        if np.any(pos):
            out[pos] = self._pdf(dt[pos])
        return out[()] if out.ndim == 0 else out

    def cdf(self, dt):
        dt = np.asarray(dt, dtype=float)
        out = np.zeros_like(dt)
        pos = dt > 0
        if np.any(pos):
            out[pos] = self._cdf(dt[pos])
        return out[()] if out.ndim == 0 else out

    def sf(self, dt):
        dt = np.asarray(dt, dtype=float)
        out = np.ones_like(dt)
        pos = dt > 0
        if np.any(pos):
            out[pos] = self._sf(dt[pos])
        return out[()] if out.ndim == 0 else out

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile levels must lie in [0, 1]")
        out = self._ppf(q)
        return out[()] if np.ndim(out) == 0 else out

    def exhaustion_time(self, level: float = 1e-9, cap: float = 1e4) -> float:
        """Smallest age with survival <= ``level``, capped at ``cap``."""
        return float(min(self._isf(level), cap))

    def breakpoints(self) -> tuple[float, ...]:
        """Ages where the density is discontinuous."""
        return ()

    def spec_string(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec_string()

    def _isf(self, level):
        return self._ppf(1.0 - level)


@dataclass(frozen=True)
class LogNormal(AgingKernel):
    mu: float = 0.0
    sigma: float = 1.0

    kind: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.sigma > 0 and math.isfinite(self.sigma)):
            raise KernelParameterError(f"LogNormal needs finite mu and sigma > 0, got ({self.mu}, {self.sigma})")

    def _z(self, dt):
        return (np.log(dt) - self.mu) / self.sigma

    def _pdf(self, dt):
        pos = dt > 0
        safe = np.where(pos, dt, 1.0)
        log_dt = np.log(safe)
        z = (log_dt - self.mu) / self.sigma
        # log space keeps subnormal ages from producing 0/0
        return np.where(pos, np.exp(-0.5 * z * z - log_dt - math.log(self.sigma * math.sqrt(2 * math.pi))), 0.0)

    def _cdf(self, dt):
        return special.ndtr(self._z(dt))

    def _sf(self, dt):
        return special.ndtr(-self._z(dt))

    def _ppf(self, q):
        return np.exp(self.mu + self.sigma * special.ndtri(q))

    def _isf(self, level):
        return math.exp(self.mu - self.sigma * special.ndtri(level))

    def spec_string(self):
        return f"lognormal:{self.mu!r},{self.sigma!r}"


@dataclass(frozen=True)
class Exponential(AgingKernel):
    rate: float = 1.0

    kind: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise KernelParameterError(f"Exponential needs rate > 0, got {self.rate}")

    def _pdf(self, dt):
        return self.rate * np.exp(-self.rate * dt)

    def _cdf(self, dt):
        return -np.expm1(-self.rate * dt)

    def _sf(self, dt):
        return np.exp(-self.rate * dt)

    def _ppf(self, q):
        with np.errstate(divide="ignore"):
            return -np.log1p(-q) / self.rate

    def _isf(self, level):
        return -math.log(level) / self.rate

    def spec_string(self):
        return f"exponential:{self.rate!r}"


@dataclass(frozen=True)
class Uniform(AgingKernel):
    horizon: float = 1.0

    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise KernelParameterError(f"Uniform needs horizon > 0, got {self.horizon}")

    def _pdf(self, dt):
        return np.where(dt < self.horizon, 1.0 / self.horizon, 0.0)

    def _cdf(self, dt):
        return np.minimum(dt / self.horizon, 1.0)

    def _sf(self, dt):
        return np.maximum(1.0 - dt / self.horizon, 0.0)

    def _ppf(self, q):
        return q * self.horizon

    def _isf(self, level):
        return self.horizon

    def breakpoints(self):
        return (self.horizon,)

    def spec_string(self):
        return f"uniform:{self.horizon!r}"


_KERNELS = {k.kind: k for k in (LogNormal, Exponential, Uniform)}


def parse_kernel(text: str) -> AgingKernel:
    """Build a kernel from ``lognormal:<mu>,<sigma>``, ``exponential:<rate>`` or ``uniform:<horizon>``."""
    name, _, args = text.strip().partition(":")
    cls = _KERNELS.get(name.strip().lower())
    if cls is None:
        raise KernelParameterError(f"unknown kernel kind {name!r}; expected one of {sorted(_KERNELS)}")
    try:
        values = [float(a) for a in args.split(",")] if args.strip() else []
    except ValueError as exc:
        raise KernelParameterError(f"bad kernel parameters in {text!r}") from exc
    expected = {LogNormal: 2, Exponential: 1, Uniform: 1}[cls]
    if len(values) != expected:
        raise KernelParameterError(f"{cls.kind} takes {expected} parameter(s), got {len(values)} in {text!r}")
    return cls(*values)


def aging_pdf(kernel: AgingKernel, dt):
    return kernel.pdf(dt)


def aging_cdf(kernel: AgingKernel, dt):
    return kernel.cdf(dt)


# ---------------------------------------------------------------------------
# papers and histories


class KernelVariant(enum.Enum):
    """Reading of the attachment kernel.

    ``LITERAL`` weights a paper by its citation count c, so an uncited paper
    can never be cited. ``WITH_ATTRACTIVENESS`` weights by c + m.
    """

    LITERAL = "literal"
    WITH_ATTRACTIVENESS = "with_attractiveness"

    def count_offset(self, m: int) -> int:
        return m if self is KernelVariant.WITH_ATTRACTIVENESS else 0

    @classmethod
    def parse(cls, text: str) -> "KernelVariant":
        key = text.strip().lower().replace("-", "_")
        aliases = {"attractiveness": "with_attractiveness", "withattractiveness": "with_attractiveness"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class PaperParams:
    eta: float | None = None
    lam: float | None = None
    aging: AgingKernel = field(default_factory=LogNormal)
    pub_time: float = 0.0

    def __post_init__(self):
        if self.eta is None and self.lam is None:
            raise DomainError("PaperParams needs eta or lam")
        if self.eta is not None and self.eta < 0:
            raise DomainError(f"eta must be nonnegative, got {self.eta}")
        if self.lam is not None and self.lam < 0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")

    @classmethod
    def from_fitness(cls, eta: float, sys: SystemParams, aging: AgingKernel | None = None, pub_time: float = 0.0):
        return cls(eta=eta, lam=relative_fitness(eta, sys), aging=aging or LogNormal(), pub_time=pub_time)

    def consistent_with(self, sys: SystemParams, rel_tol: float = 1e-12) -> bool:
        if self.eta is None or self.lam is None:
            return True
        return math.isclose(self.lam, relative_fitness(self.eta, sys), rel_tol=rel_tol, abs_tol=1e-300)


@dataclass(frozen=True)
class CitationHistory:
    """Publication time plus the nondecreasing times of received citations."""

    paper_id: str
    pub_time: float
    event_times: tuple[float, ...] = ()

    def __post_init__(self):
        times = tuple(float(t) for t in self.event_times)
        object.__setattr__(self, "event_times", times)
        for i, t in enumerate(times):
            if not t > self.pub_time:
                raise HistoryValidationError(
                    f"paper {self.paper_id!r}: event time {t} is not after publication time {self.pub_time}"
                )
            if i and t < times[i - 1]:
                raise HistoryValidationError(f"paper {self.paper_id!r}: event times are not nondecreasing")

    @property
    def n_events(self) -> int:
        return len(self.event_times)

    def ages(self) -> np.ndarray:
        return np.asarray(self.event_times, dtype=float) - self.pub_time

    def count_at(self, t: float) -> int:
        """c(t): number of events at or before ``t``."""
        return bisect.bisect_right(self.event_times, t)

    def counts_at(self, times: Sequence[float]) -> np.ndarray:
        return np.searchsorted(np.asarray(self.event_times), np.asarray(times, dtype=float), side="right")


# ---------------------------------------------------------------------------
# model formulas


def paper_count(t: float, sys: SystemParams) -> float:
    """N(t) = n0 exp(beta t)."""
    if t < 0:
        raise DomainError(f"paper_count needs t >= 0, got {t}")
    return sys.n0 * math.exp(sys.beta * t)


def relative_fitness(eta: float, sys: SystemParams) -> float:
    if eta < 0:
        raise DomainError(f"fitness must be nonnegative, got {eta}")
    return eta * sys.beta / sys.bigA


def kernel_weight(c, dt, p: PaperParams, variant: KernelVariant, sys: SystemParams):
    """Unnormalized attachment weight eta * (c or c + m) * P(dt)."""
    eta = p.eta if p.eta is not None else p.lam * sys.bigA / sys.beta
    return eta * (np.asarray(c, dtype=float) + variant.count_offset(sys.m)) * p.aging.pdf(dt)


def ultimate_citations(lam: float, m: int) -> float:
    """Total citations after the aging kernel is exhausted, m (e^lambda - 1)."""
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if lam > 709.0:
        return math.inf
    return m * math.expm1(lam)


def citation_curve(lam: float, m: int, kernel: AgingKernel, dt):
    """Mean-field citation count m (exp(lambda cdf(dt)) - 1) at age ``dt``."""
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    return m * np.expm1(lam * kernel.cdf(dt))


def comment_curve(dt):
    """Citation count from the corrected rate equation: zero at every age."""
    return np.zeros_like(np.asarray(dt, dtype=float))[()]
