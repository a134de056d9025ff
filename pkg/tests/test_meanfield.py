import math

import numpy as np
import pytest
from scipy import integrate as spi

from citelab.errors import DomainError, IntegrationError
from citelab.meanfield import (
    OdeVariant,
    compare_closed_form,
    default_t_end,
    integrate,
    rhs,
    verify_fixed_point,
)
from citelab.model import Exponential, LogNormal, Uniform, ultimate_citations

KERNELS = [LogNormal(0.0, 1.0), Exponential(1.0), Uniform(10.0)]


def test_rhs_c1_stationary_at_one():
    for dt in [0.0, 0.3, 1.0, 7.0]:
        for lam in [0.0, 1.0, 9.0]:
            assert rhs(OdeVariant.COMMENT_C1, 1.0, dt, lam, LogNormal(0, 1)) == 0.0


def test_rhs_s14_at_lognormal_median():
    assert rhs(OdeVariant.ORIGINAL_S14, 1.0, 1.0, 1.0, LogNormal(0, 1)) == pytest.approx(0.398942, abs=1e-6)


def test_rhs_c1_product():
    # Uniform(10) density is 0.1
    assert rhs(OdeVariant.COMMENT_C1, 2.0, 4.0, 3.0, Uniform(10.0)) == pytest.approx(0.3)


def test_c1_stays_at_one():
    traj = integrate(OdeVariant.COMMENT_C1, 5.0, LogNormal(0, 1), 100.0, 1e-10)
    assert np.max(np.abs(traj.values - 1.0)) <= 1e-8
    assert traj.values[0] == 1.0 and traj.times[0] == 0.0


def test_s14_at_median():
    grid = np.array([0.0, 0.5, 1.0, 2.0])
    traj = integrate(OdeVariant.ORIGINAL_S14, 1.0, LogNormal(0, 1), 5.0, 1e-10, grid=grid)
    assert traj.values[2] == pytest.approx(math.exp(0.5), abs=1e-8)


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
def test_s14_zero_fitness_frozen(kernel):
    traj = integrate(OdeVariant.ORIGINAL_S14, 0.0, kernel, 50.0, 1e-8)
    assert np.all(traj.values == 1.0)


def test_verify_fixed_point_lognormal():
    rep = verify_fixed_point(1.0, LogNormal(0, 1), 50.0, 1e-10)
    assert rep.max_abs_deviation <= 1e-8
    assert rep.verdict


def test_verify_fixed_point_zero_fitness():
    rep = verify_fixed_point(0.0, Exponential(1.0), 30.0, 1e-10, m=4)
    assert rep.max_abs_deviation == 0.0
    assert rep.max_implied_citations == 0.0


def _picard(lam, kernel, f0, grid, sweeps):
    """Picard iteration f <- 1 + int_0^t lam (f - 1) pdf, trapezoidal quadrature on ``grid``."""
    pdf = kernel.pdf(grid)
    f = f0.copy()
    for _ in range(sweeps):
        f = 1.0 + spi.cumulative_trapezoid(lam * (f - 1.0) * pdf, grid, initial=0.0)
    return f


def test_verify_fixed_point_uniform_picard_oracle():
    kernel = Uniform(5.0)
    grid = np.linspace(0, 20, 4001)
    # from f = 1 the Picard map is stationary
    assert np.all(_picard(10.0, kernel, np.ones_like(grid), grid, 5) == 1.0)
    # from a perturbed start it contracts back to 1 (lambda * cdf bounds the Lipschitz growth)
    perturbed = _picard(10.0, kernel, 1.0 + 0.5 * np.sin(grid), grid, 60)
    assert np.max(np.abs(perturbed - 1.0)) < 1e-6
    rep = verify_fixed_point(10.0, kernel, 20.0, 1e-10)
    assert rep.verdict
    assert rep.max_abs_deviation <= 100 * 1e-10


def test_compare_closed_form_s14():
    traj = integrate(OdeVariant.ORIGINAL_S14, 1.0, LogNormal(0, 1), 100.0, 1e-10)
    err = compare_closed_form(traj)
    assert err.max_abs <= 1e-6
    assert 0 <= err.rms <= err.max_abs


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
def test_compare_closed_form_c1(kernel):
    for lam in [0.1, 3.0, 10.0]:
        err = compare_closed_form(integrate(OdeVariant.COMMENT_C1, lam, kernel, 100.0, 1e-10))
        assert err.max_abs <= 1e-8


def test_compare_closed_form_zero_fitness():
    err = compare_closed_form(integrate(OdeVariant.ORIGINAL_S14, 0.0, Exponential(2.0), 10.0, 1e-10))
    assert err.max_abs == 0.0 and err.rms == 0.0


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
@pytest.mark.parametrize("lam", np.linspace(0, 10, 6))
def test_c1_fixed_point_grid(kernel, lam):
    rep = verify_fixed_point(float(lam), kernel, 100.0, 1e-8)
    assert rep.max_abs_deviation <= 100 * 1e-8


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_s14_matches_closed_form(kernel, lam):
    err = compare_closed_form(integrate(OdeVariant.ORIGINAL_S14, lam, kernel, 100.0, 1e-10))
    assert err.max_abs <= 1e-6


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
@pytest.mark.parametrize("m", [1, 3])
def test_endpoints_close_loop_with_model(kernel, m):
    lam = 1.5
    t_end = kernel.exhaustion_time(1e-12, cap=1e4)
    s14 = integrate(OdeVariant.ORIGINAL_S14, lam, kernel, t_end, 1e-10)
    assert abs(m * (s14.values[-1] - 1) - ultimate_citations(lam, m)) <= 1e-6
    c1 = integrate(OdeVariant.COMMENT_C1, lam, kernel, t_end, 1e-10)
    assert abs(m * (c1.values[-1] - 1)) <= 1e-6


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_tightening_tolerance_does_not_hurt(kernel, lam):
    errs = [compare_closed_form(integrate(OdeVariant.ORIGINAL_S14, lam, kernel, 100.0, tol)).max_abs
            for tol in (1e-6, 1e-8, 1e-10)]
    assert errs[0] >= errs[1] >= errs[2]


def test_default_t_end():
    assert default_t_end(Exponential(1.0)) == pytest.approx(-math.log(1e-9))
    assert default_t_end(Uniform(10.0)) == 10.0
    assert LogNormal(0, 1).sf(default_t_end(LogNormal(0, 1))) == pytest.approx(1e-9, rel=1e-6)
    assert default_t_end(LogNormal(20, 1)) == 1e4


def test_integration_failure_names_variant(monkeypatch):
    import citelab.meanfield as mf

    class Failed:
        status = -1
        t = np.array([0.0, 0.25])
        message = "Required step size is less than spacing between numbers."

    monkeypatch.setattr(mf, "solve_ivp", lambda *a, **k: Failed())
    with pytest.raises(IntegrationError, match="original_s14.*dt=0.25"):
        mf.integrate(OdeVariant.ORIGINAL_S14, 1.0, Exponential(1.0), 5.0, 1e-10)


def test_integrate_validation():
    with pytest.raises(DomainError):
        integrate(OdeVariant.ORIGINAL_S14, -1.0, Exponential(1.0), 5.0)
    with pytest.raises(DomainError):
        integrate(OdeVariant.ORIGINAL_S14, 1.0, Exponential(1.0), 0.0)
    with pytest.raises(DomainError):
        integrate(OdeVariant.ORIGINAL_S14, 1.0, Exponential(1.0), 5.0, tol=0)
