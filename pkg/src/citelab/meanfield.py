"""Mean-field rate equations for the relative citation factor f(dt).

Two right-hand sides compete.  ``COMMENT_C1`` is the corrected equation,
lambda (f - 1) P(dt), whose solution from f(0) = 1 never leaves 1.
``ORIGINAL_S14`` is lambda f P(dt), the form whose solution
exp(lambda cdf(dt)) yields the nonzero ultimate-impact formula.
Citations follow from either as c = m (f - 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, IntegrationError
from .model import AgingKernel

__all__ = [
    "OdeVariant",
    "Trajectory",
    "FixedPointReport",
    "ErrorSummary",
    "rhs",
    "integrate",
    "closed_form",
    "verify_fixed_point",
    "compare_closed_form",
    "default_t_end",
]


class OdeVariant(enum.Enum):
    COMMENT_C1 = "comment_c1"
    ORIGINAL_S14 = "original_s14"

    @classmethod
    def parse(cls, text: str) -> "OdeVariant":
        key = text.strip().lower().replace("-", "_")
        aliases = {"c1": "comment_c1", "comment": "comment_c1", "s14": "original_s14", "original": "original_s14"}
        return cls(aliases.get(key, key))


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    variant: OdeVariant
    lam: float
    kernel: AgingKernel
    tol: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def implied_citations(self, m: int) -> np.ndarray:
        return m * (self.values - 1.0)


@dataclass(frozen=True)
class ErrorSummary:
    max_abs: float
    rms: float


@dataclass(frozen=True)
class FixedPointReport:
    variant: OdeVariant
    lam: float
    kernel: AgingKernel
    max_abs_deviation: float
    verdict: bool
    tol: float
    m: int
    max_implied_citations: float

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "lambda": self.lam,
            "kernel": self.kernel.spec_string(),
            "tol": self.tol,
            "m": self.m,
            "max_abs_deviation": self.max_abs_deviation,
            "max_implied_citations": self.max_implied_citations,
            "verdict": self.verdict,
        }


def rhs(variant: OdeVariant, f: float, dt: float, lam: float, kernel: AgingKernel) -> float:
    p = float(kernel.pdf(dt))
    if variant is OdeVariant.COMMENT_C1:
        return lam * (f - 1.0) * p
    return lam * f * p


def closed_form(variant: OdeVariant, lam: float, kernel: AgingKernel, dt):
    """Exact solution from f(0) = 1."""
    dt = np.asarray(dt, dtype=float)
    if variant is OdeVariant.COMMENT_C1:
        return np.ones_like(dt)
    return np.exp(lam * kernel.cdf(dt))


def default_t_end(kernel: AgingKernel) -> float:
    # age at which the kernel is exhausted to 1e-9, capped at 1e4
    return kernel.exhaustion_time(1e-9, cap=1e4)


def integrate(
    variant: OdeVariant,
    lam: float,
    kernel: AgingKernel,
    t_end: float | None = None,
    tol: float = 1e-10,
    grid=None,
) -> Trajectory:
    """Solve df/ddt = rhs(f, dt) from f(0) = 1 with an adaptive 4(5) Runge-Kutta pair.

    The solution is reported at ``grid`` (default: 401 evenly spaced ages on
    [0, t_end]).  Integration restarts at every kernel discontinuity so that
    step-size control never straddles a jump in the density.
    """
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if t_end is None:
        t_end = default_t_end(kernel)
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")

    if grid is None:
        grid = np.linspace(0.0, t_end, 401)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0 or grid[-1] > t_end or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must start at 0, increase strictly, and end at or before t_end")

    if variant is OdeVariant.COMMENT_C1:
        def fun(t, y):
            return lam * (y - 1.0) * kernel.pdf(t)
    else:
        def fun(t, y):
            return lam * y * kernel.pdf(t)

    edges = [0.0] + [b for b in kernel.breakpoints() if 0.0 < b < t_end] + [t_end]
    values = np.empty_like(grid)
    values[0] = 1.0
    y0 = 1.0
    n_steps = 0
    for a, b in zip(edges[:-1], edges[1:]):
        inside = (grid > a) & (grid <= b)
        sol = solve_ivp(fun, (a, b), [y0], method="RK45", rtol=tol, atol=tol, dense_output=True)
        if sol.status != 0:
            reached = float(sol.t[-1]) if sol.t.size else a
            raise IntegrationError(
                f"{variant.value} integration failed at dt={reached:.6g} "
                f"(lambda={lam}, kernel={kernel.spec_string()}): {sol.message}"
            )
        n_steps += sol.nfev
        if inside.any():
            values[inside] = sol.sol(grid[inside])[0]
        y0 = float(sol.y[0, -1])

    return Trajectory(grid, values, variant, lam, kernel, tol, meta={"t_end": t_end, "nfev": n_steps})


def compare_closed_form(traj: Trajectory) -> ErrorSummary:
    exact = closed_form(traj.variant, traj.lam, traj.kernel, traj.times)
    err = np.abs(traj.values - exact)
    return ErrorSummary(max_abs=float(err.max()), rms=float(math.sqrt(np.mean(err**2))))


def verify_fixed_point(
    lam: float,
    kernel: AgingKernel,
    t_end: float | None = None,
    tol: float = 1e-10,
    m: int = 1,
    grid=None,
) -> FixedPointReport:
    """Integrate the corrected equation and check that f stays at 1.

    The verdict holds when max |f - 1| <= 100 tol.  The implied citation curve
    m (f - 1) is reported through its largest magnitude.
    """
    traj = integrate(OdeVariant.COMMENT_C1, lam, kernel, t_end, tol, grid)
    dev = float(np.max(np.abs(traj.values - 1.0)))
    return FixedPointReport(
        variant=OdeVariant.COMMENT_C1,
        lam=lam,
        kernel=kernel,
        max_abs_deviation=dev,
        verdict=dev <= 100 * tol,
        tol=tol,
        m=m,
        max_implied_citations=float(np.max(np.abs(traj.implied_citations(m)))),
    )
