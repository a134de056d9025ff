import math

import numpy as np
import pytest
from scipy import stats

from citelab.errors import SampleSizeError
from citelab.model import Exponential, KernelVariant, LogNormal, SystemParams, Uniform, citation_curve, ultimate_citations
from citelab.stochastic import (
    Constant,
    SampledUniform,
    SimConfig,
    SystemSimConfig,
    arbitrate,
    default_grid,
    final_count_distribution_test,
    final_count_law,
    rescaled_increments,
    simulate_ensemble,
    simulate_histories,
    simulate_single,
    simulate_system,
)

LIT = KernelVariant.LITERAL
ATT = KernelVariant.WITH_ATTRACTIVENESS


def euler_master_equation(lam, m, h=1e-4, kmax=200):
    """Final-count pmf from forward-Euler steps of the birth-process master equation.

    On the rescaled clock the count k jumps to k + 1 at rate k + m; the clock
    runs from 0 to lambda.
    """
    p = np.zeros(kmax)
    p[0] = 1.0
    rates = np.arange(kmax) + m
    for _ in range(int(round(lam / h))):
        flow = rates * p
        p = p - h * flow
        p[1:] += h * flow[:-1]
    return p


@pytest.fixture(scope="module")
def nb_oracle():
    return euler_master_equation(1.0, 3)


def test_negative_binomial_law_matches_euler_oracle(nb_oracle):
    law = final_count_law(1.0, 3)
    k = np.arange(nb_oracle.size)
    assert np.max(np.abs(nb_oracle - law.pmf(k))) < 1e-4
    mean = np.sum(k * nb_oracle)
    assert mean == pytest.approx(ultimate_citations(1.0, 3), rel=1e-3)
    var = np.sum(k**2 * nb_oracle) - mean**2
    assert var == pytest.approx(3 * math.e * (math.e - 1), rel=1e-3)


# --- single paper ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_literal_absorbing(seed):
    cfg = SimConfig(LIT, 3.0, 2, Exponential(1.0), seed=seed, replicas=1)
    assert simulate_single(cfg, 0).event_times == ()


def test_zero_fitness_no_events():
    cfg = SimConfig(ATT, 0.0, 5, LogNormal(0, 1), seed=3)
    assert simulate_single(cfg, 7).n_events == 0


def test_absorbing_many_replicas():
    rng = np.random.default_rng(11)
    total = 0
    for _ in range(10):
        kernel = [LogNormal(rng.normal(), rng.uniform(0.3, 2)), Exponential(rng.uniform(0.1, 5)),
                  Uniform(rng.uniform(1, 20))][rng.integers(3)]
        cfg = SimConfig(LIT, float(rng.uniform(0, 10)), int(rng.integers(1, 8)), kernel,
                        seed=int(rng.integers(2**63)), replicas=10_000)
        total += sum(h.n_events for h in simulate_histories(cfg))
    assert total == 0


def test_events_after_publication_and_before_horizon():
    cfg = SimConfig(ATT, 2.0, 3, Exponential(0.5), horizon=3.0, seed=5, pub_time=10.0)
    for r in range(200):
        h = simulate_single(cfg, r)
        assert all(10.0 < t <= 13.0 for t in h.event_times)


def test_single_paper_mean_matches_s14():
    cfg = SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=2024, replicas=10_000)
    finals = np.array([simulate_single(cfg, r).n_events for r in range(cfg.replicas)])
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - 3 * math.expm1(1.0)) <= 3 * se


def test_replica_streams_do_not_depend_on_ensemble_size():
    small = SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=9, replicas=300)
    big = SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=9, replicas=600)
    assert simulate_histories(big)[:300] == simulate_histories(small)


def test_histories_identical_across_thread_counts():
    cfg = SimConfig(ATT, 1.5, 2, Uniform(4.0), seed=77, replicas=500)
    ref = simulate_histories(cfg, workers=1)
    for w in (2, 4, 8):
        assert simulate_histories(cfg, workers=w) == ref


# --- ensemble -------------------------------------------------------------------


def test_literal_ensemble_is_zero():
    st_ = simulate_ensemble(SimConfig(LIT, 2.0, 3, LogNormal(0, 1), seed=1, replicas=10_000))
    assert np.all(st_.mean_c == 0) and np.all(st_.stderr_c == 0)
    assert np.all(st_.final_counts == 0)


def test_ensemble_median_point():
    cfg = SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=31, replicas=10_000)
    st_ = simulate_ensemble(cfg, grid=[0.0, 1.0, 5.0])
    assert abs(st_.mean_c[1] - 3 * math.expm1(0.5)) <= 3 * st_.stderr_c[1]
    assert st_.mean_c[0] == 0.0
    assert np.all(np.diff(st_.mean_c) >= 0) and np.all(st_.stderr_c >= 0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("m", [1, 3, 5])
def test_mean_curve_consistency(lam, m):
    kernel = LogNormal(0.5, 0.7)
    cfg = SimConfig(ATT, lam, m, kernel, seed=100 * m + int(10 * lam), replicas=4000)
    grid = kernel.ppf(np.array([0.25, 0.5, 0.75])).tolist() + [cfg.horizon_age]
    st_ = simulate_ensemble(cfg, grid=grid)
    expected = citation_curve(lam, m, kernel, np.asarray(grid))
    assert np.all(np.abs(st_.mean_c - expected) <= 3 * st_.stderr_c)


def test_default_grid_ends_at_horizon():
    cfg = SimConfig(ATT, 1.0, 1, LogNormal(0, 1))
    grid = default_grid(cfg)
    assert grid[0] == 0.0 and grid[-1] == pytest.approx(cfg.horizon_age)
    assert 1.0 in grid  # the median


def test_ensemble_needs_two_replicas():
    with pytest.raises(SampleSizeError):
        simulate_ensemble(SimConfig(ATT, 1.0, 1, replicas=1))


# --- time rescaling ------------------------------------------------------------------


@pytest.mark.parametrize("kernel", [LogNormal(1.0, 0.8), Exponential(2.0), Uniform(3.0)], ids=str)
def test_rescaled_increments_are_unit_exponential(kernel):
    # hundreds of events per history, so dropping each history's censored last gap is negligible
    cfg = SimConfig(ATT, 5.0, 3, kernel, seed=8, replicas=25)
    inc = rescaled_increments(simulate_histories(cfg), cfg.lam, cfg.m, kernel, ATT)
    assert inc.size >= 10_000
    assert stats.kstest(inc, "expon").pvalue > 0.01


def test_rescaled_increments_ignore_kernel():
    # the rescaled clock is kernel-free: same streams give the same increments for any kernel
    runs = []
    for kernel in (LogNormal(1.0, 0.8), Exponential(2.0), Uniform(3.0)):
        cfg = SimConfig(ATT, 2.0, 2, kernel, seed=21, replicas=50)
        runs.append(rescaled_increments(simulate_histories(cfg), 2.0, 2, kernel, ATT))
    assert np.allclose(runs[0], runs[1], atol=1e-9) and np.allclose(runs[0], runs[2], atol=1e-9)


# --- distribution test ---------------------------------------------------------------


def test_distribution_test_accepts_model(nb_oracle):
    st_ = simulate_ensemble(SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=4, replicas=10_000))
    gof = final_count_distribution_test(st_, 1.0, 3)
    assert gof.p_value > 0.01
    assert abs(gof.sample_mean - 3 * math.expm1(1)) <= 3 * math.sqrt(3 * math.e * math.expm1(1) / 10_000)
    assert gof.expected_var == pytest.approx(3 * math.e * math.expm1(1))


def test_distribution_test_rejects_wrong_law():
    st_ = simulate_ensemble(SimConfig(ATT, 1.3, 3, LogNormal(0, 1), seed=4, replicas=5000))
    assert final_count_distribution_test(st_, 1.0, 3).p_value < 1e-6


def test_distribution_test_zero_fitness():
    st_ = simulate_ensemble(SimConfig(ATT, 0.0, 3, LogNormal(0, 1), seed=4, replicas=2000))
    gof = final_count_distribution_test(st_, 0.0, 3)
    assert gof.passed and gof.p_value == 1.0


def test_distribution_test_sample_size_guard():
    st_ = simulate_ensemble(SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=4, replicas=500))
    with pytest.raises(SampleSizeError):
        final_count_distribution_test(st_, 1.0, 3)


# --- full system ------------------------------------------------------------------------


def test_system_literal_degenerate():
    cfg = SystemSimConfig(SystemParams(beta=1.0, m=3, n0=20), 3.0, Constant(1.0), LIT, LogNormal(0, 1), seed=2)
    run = simulate_system(cfg)
    assert all(h.n_events == 0 for h in run.histories)
    assert np.all(run.out_refs == 0)


def test_system_paper_count_schedule():
    sys = SystemParams(beta=0.7, m=2, n0=13)
    cfg = SystemSimConfig(sys, 4.1, Constant(1.0), ATT, Exponential(1.0), seed=1)
    run = simulate_system(cfg)
    assert len(run.histories) == math.floor(13 * math.exp(0.7 * 4.1))
    pubs = np.array([h.pub_time for h in run.histories])
    k = np.arange(14, len(pubs) + 1)
    assert np.allclose(13 * np.exp(0.7 * pubs[13:]), k, rtol=1e-12)


def test_system_conserves_references():
    sys = SystemParams(beta=1.0, m=3, n0=10)
    cfg = SystemSimConfig(sys, 3.5, SampledUniform(0.5, 2.0), ATT, LogNormal(0, 1), seed=6)
    run = simulate_system(cfg)
    assert sum(h.n_events for h in run.histories) == int(run.out_refs.sum())
    assert np.all(run.out_refs[10:] == 3)


def test_system_no_self_or_duplicate_citation():
    sys = SystemParams(beta=1.0, m=4, n0=5)
    run = simulate_system(SystemSimConfig(sys, 3.0, Constant(1.0), ATT, Exponential(0.5), seed=3))
    for h in run.histories:
        assert all(t > h.pub_time for t in h.event_times)
        # one citing paper per arrival time, so a repeat time means a duplicate reference
        assert len(set(h.event_times)) == h.n_events


def test_system_deterministic():
    sys = SystemParams(beta=1.0, m=2, n0=10)
    cfg = SystemSimConfig(sys, 2.5, SampledUniform(0.1, 1.0), ATT, LogNormal(0, 1), seed=12)
    assert simulate_system(cfg).histories == simulate_system(cfg).histories


def test_system_cohort_tracks_mean_field():
    """Initial-cohort mean curve vs citation_curve at the realized lambda_eff, over 20 runs of N = 5000.

    The curve error is measured in sup norm relative to the curve's value at
    the last grid point.
    """
    kernel = LogNormal(0.0, 1.0)
    sys = SystemParams(beta=1.0, m=3, n0=50)
    t_end = math.log(100.0)
    grid = kernel.ppf(np.array([0.1, 0.25, 0.5, 0.75, 0.9]))
    curves, lams = [], []
    for seed in range(20):
        run = simulate_system(SystemSimConfig(sys, t_end, Constant(1.0), ATT, kernel, seed=seed))
        assert run.meta["n_papers"] == 5000
        curves.append(np.mean([h.counts_at(grid) for h in run.histories[:50]], axis=0))
        lams.append(run.meta["lambda_eff_cohort"])
    mean_curve = np.mean(curves, axis=0)
    predicted = citation_curve(float(np.mean(lams)), 3, kernel, grid)
    assert np.max(np.abs(mean_curve - predicted)) / predicted[-1] <= 0.2


# --- arbitration ----------------------------------------------------------------------------


def test_arbitrate_rows():
    v = arbitrate(SimConfig(ATT, 1.0, 3, LogNormal(0, 1), seed=42, replicas=10_000))
    lit, att = v.row(LIT), v.row(ATT)
    assert lit.sim_mean == 0 and lit.exact_C4 and lit.within_3se_of_C4 and not lit.within_3se_of_S14
    assert att.within_3se_of_S14 and not att.within_3se_of_C4
    assert att.z_C4 > 10
    assert att.pred_S14 == ultimate_citations(1.0, 3)


def test_arbitrate_zero_fitness_indistinguishable():
    v = arbitrate(SimConfig(ATT, 0.0, 3, LogNormal(0, 1), seed=1, replicas=100))
    assert {r.verdict for r in v.rows} == {"indistinguishable"}
