"""Exact simulation of the microscopic citation process.

Single paper
    A pure-birth process with intensity lambda * w(c) * P(dt), where
    w(c) = c (literal kernel) or c + m (with initial attractiveness).  In the
    rescaled clock tau = lambda * cdf(dt) the process is homogeneous with rate
    w(c), so event times are drawn as exponential waiting times in tau and
    mapped back through the kernel quantile function.  No thinning.

Growing system
    Papers arrive on the deterministic schedule t_k = ln(k / n0) / beta and
    each cites up to ``refs_per_paper`` distinct earlier papers, drawn one at
    a time with probability proportional to the attachment weight over the
    remaining candidates.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from .errors import DomainError, InversionError, SampleSizeError
from .model import (
    AgingKernel,
    CitationHistory,
    KernelVariant,
    LogNormal,
    SystemParams,
    relative_fitness,
    ultimate_citations,
)

__all__ = [
    "SimConfig",
    "SystemSimConfig",
    "Constant",
    "SampledUniform",
    "EnsembleStats",
    "GoodnessOfFit",
    "SystemRun",
    "ArbitrationRow",
    "ArbitrationVerdict",
    "replica_rng",
    "simulate_single",
    "simulate_histories",
    "simulate_ensemble",
    "rescaled_increments",
    "final_count_distribution_test",
    "final_count_law",
    "simulate_system",
    "arbitrate",
    "default_workers",
]

EXHAUST = "exhaust"
EXHAUST_LEVEL = 1e-9
INVERSION_TOL = 1e-12
THREADS_ENV = "CITELAB_THREADS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Philox stream keyed by (master seed, replica index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


@dataclass(frozen=True)
class SimConfig:
    variant: KernelVariant
    lam: float
    m: int
    kernel: AgingKernel = field(default_factory=LogNormal)
    horizon: float | str = EXHAUST
    seed: int = 0
    replicas: int = 1000
    pub_time: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"m must be a positive integer, got {self.m}")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if self.horizon != EXHAUST and not (isinstance(self.horizon, (int, float)) and self.horizon > 0):
            raise DomainError(f"horizon must be positive or {EXHAUST!r}, got {self.horizon!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_fitness(cls, eta: float, sys: SystemParams, variant: KernelVariant, **kwargs) -> "SimConfig":
        return cls(variant=variant, lam=relative_fitness(eta, sys), m=sys.m, **kwargs)

    @cached_property
    def horizon_age(self) -> float:
        if self.horizon == EXHAUST:
            return self.kernel.exhaustion_time(EXHAUST_LEVEL, cap=math.inf)
        return float(self.horizon)

    @cached_property
    def horizon_level(self) -> float:
        """cdf at the horizon; the rescaled clock runs on [0, lambda * level]."""
        return float(self.kernel.cdf(self.horizon_age))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "lambda": self.lam,
            "m": self.m,
            "kernel": self.kernel.spec_string(),
            "horizon": self.horizon,
            "seed": self.seed,
            "replicas": self.replicas,
            "pub_time": self.pub_time,
        }


# ---------------------------------------------------------------------------
# single-paper process


def _birth_clock(rng: np.random.Generator, offset: int, tau_max: float, expected: float) -> np.ndarray:
    """Event times on the rescaled clock for a birth process with rate c + offset, c(0) = 0."""
    if offset == 0 or tau_max <= 0:
        return np.empty(0)
    chunk = max(16, int(1.5 * expected) + 8)
    pieces = []
    tau, c = 0.0, 0
    while True:
        steps = rng.standard_exponential(chunk) / (np.arange(c, c + chunk) + offset)
        cum = tau + np.cumsum(steps)
        k = int(np.searchsorted(cum, tau_max, side="right"))
        pieces.append(cum[:k])
        if k < chunk:
            break
        tau, c = float(cum[-1]), c + chunk
    return np.concatenate(pieces)


def _to_ages(kernel: AgingKernel, levels: np.ndarray) -> np.ndarray:
    ages = np.asarray(kernel.ppf(levels), dtype=float)
    if levels.size:
        miss = float(np.max(np.abs(kernel.cdf(ages) - levels)))
        if not miss <= INVERSION_TOL:
            raise InversionError(f"{kernel.spec_string()}: cdf inversion off by {miss:.3g} (> {INVERSION_TOL})")
    return ages


def simulate_single(cfg: SimConfig, replica: int = 0, rng: np.random.Generator | None = None) -> CitationHistory:
    offset = cfg.variant.count_offset(cfg.m)
    tau_max = cfg.lam * cfg.horizon_level
    if offset == 0 or tau_max <= 0:
        # absorbed at c = 0 or zero intensity: no randomness is consumed
        return CitationHistory(f"r{replica}", cfg.pub_time, ())
    if rng is None:
        rng = replica_rng(cfg.seed, replica)
    expected = offset * math.expm1(tau_max) if offset else 0.0
    taus = _birth_clock(rng, offset, tau_max, expected)
    ages = _to_ages(cfg.kernel, taus / cfg.lam) if taus.size else taus
    return CitationHistory(f"r{replica}", cfg.pub_time, tuple((cfg.pub_time + ages).tolist()))


def simulate_histories(cfg: SimConfig, workers: int | None = None) -> list[CitationHistory]:
    """All replicas, in replica order.

    Each replica owns its RNG stream, so the output is the same for any
    ``workers`` count and the first k histories do not depend on
    ``cfg.replicas``.
    """
    workers = workers or default_workers()
    if workers <= 1 or cfg.replicas < 2 * workers:
        return [simulate_single(cfg, r) for r in range(cfg.replicas)]
    bounds = np.linspace(0, cfg.replicas, workers + 1).astype(int)

    def run(span):
        lo, hi = span
        return [simulate_single(cfg, r) for r in range(lo, hi)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, zip(bounds[:-1], bounds[1:])))
    return [h for part in parts for h in part]


@dataclass
class EnsembleStats:
    grid: np.ndarray
    mean_c: np.ndarray
    stderr_c: np.ndarray
    n: int
    final_counts: np.ndarray

    def rows(self):
        for dt, mu, se in zip(self.grid, self.mean_c, self.stderr_c):
            yield float(dt), float(mu), float(se)


def default_grid(cfg: SimConfig, points: int = 21) -> np.ndarray:
    """Ages at evenly spaced kernel quantiles, ending at the horizon."""
    level = cfg.horizon_level
    qs = np.linspace(0.0, 1.0, points)
    qs = np.append(qs[qs < level], level)
    return np.asarray(cfg.kernel.ppf(qs), dtype=float)


def simulate_ensemble(cfg: SimConfig, grid=None, workers: int | None = None) -> EnsembleStats:
    if cfg.replicas < 2:
        raise SampleSizeError("an ensemble needs at least 2 replicas")
    histories = simulate_histories(cfg, workers)
    return ensemble_from_histories(histories, cfg, grid)


def ensemble_from_histories(histories, cfg: SimConfig, grid=None) -> EnsembleStats:
    grid = default_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    counts = np.array([h.counts_at(cfg.pub_time + grid) for h in histories], dtype=float)
    n = len(histories)
    mean = counts.mean(axis=0)
    stderr = counts.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    horizon = cfg.pub_time + cfg.horizon_age
    final = np.array([h.count_at(horizon) for h in histories], dtype=np.int64)
    return EnsembleStats(grid=grid, mean_c=mean, stderr_c=stderr, n=n, final_counts=final)


def rescaled_increments(histories, lam: float, m: int, kernel: AgingKernel, variant: KernelVariant) -> np.ndarray:
    """Pooled lambda * w(c_i) * (cdf(t_{i+1}) - cdf(t_i)) over all observed inter-event gaps.

    Under the model these are i.i.d. Exponential(1).  The censored gap after
    the last event is excluded.
    """
    offset = variant.count_offset(m)
    out = []
    for h in histories:
        if not h.n_events:
            continue
        u = np.concatenate(([0.0], kernel.cdf(h.ages())))
        w = np.arange(h.n_events) + offset
        out.append(lam * w * np.diff(u))
    return np.concatenate(out) if out else np.empty(0)


# ---------------------------------------------------------------------------
# final-count law


def final_count_law(lam: float, m: int):
    """Law of c at exhaustion: failures before the m-th success, success probability e^-lambda."""
    return stats.nbinom(m, math.exp(-lam))


@dataclass(frozen=True)
class GoodnessOfFit:
    n: int
    chi2: float
    dof: int
    p_value: float
    sample_mean: float
    sample_var: float
    expected_mean: float
    expected_var: float

    @property
    def passed(self) -> bool:
        return self.p_value > 0.01

    def summary(self) -> str:
        return (
            f"n={self.n} chi2={self.chi2:.4g} dof={self.dof} p={self.p_value:.4g} "
            f"mean={self.sample_mean:.6g} (expected {self.expected_mean:.6g}) "
            f"var={self.sample_var:.6g} (expected {self.expected_var:.6g})"
        )


def _pooled_bins(expected: np.ndarray, tail: float, min_expected: float = 5.0) -> list[tuple[int, int]]:
    """Contiguous [lo, hi) count ranges, each with expected frequency >= min_expected.

    The final range is open-ended and absorbs the tail mass.
    """
    bins, lo, acc = [], 0, 0.0
    for k, e in enumerate(expected):
        acc += e
        if acc >= min_expected:
            bins.append((lo, k + 1))
            lo, acc = k + 1, 0.0
    if acc + tail < min_expected and bins:
        lo = bins.pop()[0]
    bins.append((lo, -1))
    return bins


def final_count_distribution_test(stats_: EnsembleStats, lam: float, m: int, min_replicas: int = 1000) -> GoodnessOfFit:
    """Chi-square test of final counts against the negative-binomial law.

    (c + m) counts trials up to the m-th success with success probability
    e^-lambda, i.e. a sum of m independent geometrics.  Bins are pooled until
    each expects at least 5 observations.
    """
    counts = np.asarray(stats_.final_counts, dtype=np.int64)
    n = counts.size
    if n < min_replicas:
        raise SampleSizeError(f"distribution test needs >= {min_replicas} replicas, got {n}")
    mean_exp = m * math.expm1(lam)
    var_exp = m * math.exp(lam) * math.expm1(lam)
    smean, svar = float(counts.mean()), float(counts.var(ddof=1))
    if lam == 0:
        ok = bool(np.all(counts == 0))
        return GoodnessOfFit(n, 0.0 if ok else math.inf, 0, 1.0 if ok else 0.0, smean, svar, 0.0, 0.0)

    law = final_count_law(lam, m)
    kmax = int(law.ppf(1 - 1e-12)) + 1
    pmf = law.pmf(np.arange(kmax))
    bins = _pooled_bins(n * pmf, n * float(law.sf(kmax - 1)))
    obs, exp = [], []
    for lo, hi in bins:
        if hi < 0:
            obs.append(int(np.sum(counts >= lo)))
            exp.append(n * float(law.sf(lo - 1)))
        else:
            obs.append(int(np.sum((counts >= lo) & (counts < hi))))
            exp.append(n * float(pmf[lo:hi].sum()))
    exp = np.asarray(exp)
    exp *= n / exp.sum()
    chi2, p = stats.chisquare(obs, exp)
    return GoodnessOfFit(n, float(chi2), len(bins) - 1, float(p), smean, svar, mean_exp, var_exp)


# ---------------------------------------------------------------------------
# growing system


@dataclass(frozen=True)
class Constant:
    eta: float

    def draw(self, rng, size):
        return np.full(size, float(self.eta))


@dataclass(frozen=True)
class SampledUniform:
    lo: float
    hi: float

    def draw(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class SystemSimConfig:
    sys: SystemParams
    t_end: float
    fitness_source: Constant | SampledUniform = Constant(1.0)
    variant: KernelVariant = KernelVariant.WITH_ATTRACTIVENESS
    kernel: AgingKernel = field(default_factory=LogNormal)
    refs_per_paper: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.t_end > 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if self.refs < 1:
            raise DomainError("refs_per_paper must be >= 1")

    @property
    def refs(self) -> int:
        return self.sys.m if self.refs_per_paper is None else int(self.refs_per_paper)

    @property
    def final_count(self) -> int:
        return int(math.floor(self.sys.n0 * math.exp(self.sys.beta * self.t_end)))

    def to_dict(self) -> dict:
        fit = self.fitness_source
        return {
            "beta": self.sys.beta,
            "bigA": self.sys.bigA,
            "m": self.sys.m,
            "n0": self.sys.n0,
            "t_end": self.t_end,
            "fitness": {"constant": fit.eta} if isinstance(fit, Constant) else {"uniform": [fit.lo, fit.hi]},
            "variant": self.variant.value,
            "kernel": self.kernel.spec_string(),
            "refs_per_paper": self.refs,
            "seed": self.seed,
        }


@dataclass
class SystemRun:
    histories: list[CitationHistory]
    fitness: np.ndarray
    out_refs: np.ndarray
    arrival_times: np.ndarray
    normalization: np.ndarray
    meta: dict = field(default_factory=dict)

    def cohort_lambda_eff(self, kernel: AgingKernel, n0: int) -> float:
        """Effective relative fitness of the initial cohort.

        Sums the expected per-unit-weight citation hazard picks_k * eta * P(t_k) / S_k
        over arrivals, S_k being the realized total weight, and divides by
        cdf(t_end) so that citation_curve(lambda_eff, ...) has the same
        endpoint as the run.
        """
        if not self.arrival_times.size:
            return 0.0
        eta = float(np.mean(self.fitness[:n0]))
        picks = self.out_refs[n0:]
        with np.errstate(divide="ignore", invalid="ignore"):
            hazard = np.where(self.normalization > 0, picks * eta * kernel.pdf(self.arrival_times) / self.normalization, 0.0)
        level = float(kernel.cdf(self.arrival_times[-1]))
        return float(hazard.sum() / level) if level > 0 else 0.0


def _draw_distinct(rng: np.random.Generator, w: np.ndarray, cw: np.ndarray, picks: int) -> list[int]:
    """Successive weighted draws without replacement.

    A draw that repeats an earlier pick is rejected and redrawn, which samples
    exactly from the weights renormalized over the remaining candidates.  After
    many rejections the remaining weights are renormalized explicitly.
    """
    chosen: list[int] = []
    total = cw[-1]
    rejected = 0
    while len(chosen) < picks:
        j = int(np.searchsorted(cw, rng.random() * total, side="right"))
        if j in chosen:
            rejected += 1
            if rejected > 64:
                rest = w.copy()
                rest[chosen] = 0.0
                cw, total, rejected = np.cumsum(rest), float(rest.sum()), 0
            continue
        chosen.append(j)
    return chosen


def simulate_system(cfg: SystemSimConfig) -> SystemRun:
    sys = cfg.sys
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0]))
    n_total = max(cfg.final_count, sys.n0)
    n0 = sys.n0
    pub = np.zeros(n_total)
    pub[n0:] = np.log(np.arange(n0 + 1, n_total + 1) / n0) / sys.beta
    eta = cfg.fitness_source.draw(rng, n_total)
    offset = cfg.variant.count_offset(sys.m)

    counts = np.zeros(n_total, dtype=np.int64)
    out_refs = np.zeros(n_total, dtype=np.int64)
    norm = np.zeros(n_total - n0)
    events: list[list[float]] = [[] for _ in range(n_total)]

    for k in range(n0, n_total):
        t = pub[k]
        w = eta[:k] * (counts[:k] + offset) * cfg.kernel.pdf(t - pub[:k])
        cw = np.cumsum(w)
        total = float(cw[-1])
        norm[k - n0] = total
        if total <= 0:
            continue
        picks = min(cfg.refs, int(np.count_nonzero(w)))
        chosen = _draw_distinct(rng, w, cw, picks)
        counts[chosen] += 1
        for j in chosen:
            events[j].append(t)
        out_refs[k] = picks

    width = len(str(n_total))
    histories = [CitationHistory(f"p{i + 1:0{width}d}", float(pub[i]), tuple(events[i])) for i in range(n_total)]
    run = SystemRun(histories, eta, out_refs, pub[n0:], norm, meta={"config": cfg.to_dict(), "n_papers": n_total})
    run.meta["lambda_eff_cohort"] = run.cohort_lambda_eff(cfg.kernel, n0)
    return run


# ---------------------------------------------------------------------------
# arbitration


@dataclass(frozen=True)
class ArbitrationRow:
    variant: str
    lam: float
    m: int
    kernel: str
    n_replicas: int
    sim_mean: float
    sim_stderr: float
    pred_C4: float
    pred_S14: float
    within_3se_of_C4: bool
    within_3se_of_S14: bool
    exact_C4: bool
    z_C4: float | None
    z_S14: float | None
    verdict: str

    @classmethod
    def from_sample(cls, variant: KernelVariant, cfg: SimConfig, finals: np.ndarray) -> "ArbitrationRow":
        n = finals.size
        mean = float(finals.mean())
        se = float(finals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        pred_s14 = ultimate_citations(cfg.lam, cfg.m)
        near_c4 = abs(mean - 0.0) <= 3 * se
        near_s14 = abs(mean - pred_s14) <= 3 * se
        if near_c4 and near_s14:
            verdict = "indistinguishable"
        elif near_c4:
            verdict = "C4"
        elif near_s14:
            verdict = "S14"
        else:
            verdict = "neither"
        return cls(
            variant=variant.value,
            lam=cfg.lam,
            m=cfg.m,
            kernel=cfg.kernel.spec_string(),
            n_replicas=n,
            sim_mean=mean,
            sim_stderr=se,
            pred_C4=0.0,
            pred_S14=pred_s14,
            within_3se_of_C4=near_c4,
            within_3se_of_S14=near_s14,
            exact_C4=bool(np.all(finals == 0)),
            z_C4=abs(mean) / se if se > 0 else None,
            z_S14=abs(mean - pred_s14) / se if se > 0 else None,
            verdict=verdict,
        )


@dataclass(frozen=True)
class ArbitrationVerdict:
    rows: tuple[ArbitrationRow, ...]
    config: dict

    def row(self, variant: KernelVariant) -> ArbitrationRow:
        return next(r for r in self.rows if r.variant == variant.value)


def arbitrate(cfg: SimConfig, workers: int | None = None) -> ArbitrationVerdict:
    """Simulate both kernel readings at identical parameters and score each against both predictions.

    No global winner is declared; each row states which prediction its own
    simulated mean supports.
    """
    rows = []
    for variant in (KernelVariant.LITERAL, KernelVariant.WITH_ATTRACTIVENESS):
        vcfg = SimConfig(
            variant=variant,
            lam=cfg.lam,
            m=cfg.m,
            kernel=cfg.kernel,
            horizon=cfg.horizon,
            seed=cfg.seed,
            replicas=cfg.replicas,
            pub_time=cfg.pub_time,
        )
        histories = simulate_histories(vcfg, workers)
        horizon = vcfg.pub_time + vcfg.horizon_age
        finals = np.array([h.count_at(horizon) for h in histories], dtype=np.int64)
        rows.append(ArbitrationRow.from_sample(variant, vcfg, finals))
    config = cfg.to_dict()
    config.pop("variant")
    return ArbitrationVerdict(tuple(rows), config)
