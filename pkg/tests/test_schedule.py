import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from guidedsynth.errors import DomainError, ShapeError
from guidedsynth.schedule import (
    NoiseSchedule,
    beta_at,
    beta_integral,
    forward_sample,
    gaussian_marginal,
    moments_at,
    true_score_gaussian,
)

SCHED = NoiseSchedule(0.05, 20.0)
SCHEDULES = [NoiseSchedule(0.05, 20.0), NoiseSchedule(0.1, 5.0), NoiseSchedule(0.5, 40.0)]


def test_beta_endpoints_and_midpoint():
    assert beta_at(SCHED, 0.0) == 0.05
    assert beta_at(SCHED, 1.0) == 20.0
    assert beta_at(SCHED, 0.5) == pytest.approx(10.025, rel=1e-15)


def test_beta_integral_closed_forms():
    assert beta_integral(SCHED, 0.0) == 0.0
    assert beta_integral(SCHED, 1.0) == pytest.approx(10.025, rel=1e-15)
    assert beta_integral(SCHED, 0.5) == pytest.approx(2.51875, rel=1e-15)


def test_beta_integral_matches_adaptive_quadrature():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        b0 = rng.uniform(1e-3, 2.0)
        b1 = b0 + rng.uniform(1e-2, 50.0)
        t = rng.uniform(1e-3, 1.0)
        sched = NoiseSchedule(b0, b1)
        ref, _ = integrate.quad(lambda s: beta_at(sched, s), 0.0, t, epsabs=0, epsrel=1e-13)
        worst = max(worst, abs(beta_integral(sched, t) - ref) / ref)
    assert worst < 1e-10


@pytest.mark.parametrize("bad", [-1e-9, 1.0 + 1e-9, np.nan])
def test_time_outside_unit_interval_is_rejected(bad):
    for fn in (beta_at, beta_integral, moments_at):
        with pytest.raises(DomainError):
            fn(SCHED, bad)


def test_schedule_validation():
    with pytest.raises((DomainError, ValueError)):
        NoiseSchedule(1.0, 0.5)
    with pytest.raises((DomainError, ValueError)):
        NoiseSchedule(0.0, 1.0)


def test_moments_at_zero_and_one():
    m = moments_at(SCHED, 0.0)
    assert (m.rho_coeff_mu, m.rho_coeff_x0, m.sigma2) == (0.0, 1.0, 0.0)
    m = moments_at(SCHED, 1.0)
    assert m.rho_coeff_x0 == pytest.approx(np.exp(-5.0125), rel=1e-14)
    assert m.rho_coeff_x0 == pytest.approx(6.648e-3, rel=1e-3)
    assert m.sigma2 == pytest.approx(1 - np.exp(-10.025), rel=1e-14)


def test_moments_approach_prior_for_large_integral():
    m = moments_at(NoiseSchedule(1.0, 200.0), 1.0)
    assert m.sigma2 == pytest.approx(1.0, abs=1e-40)
    assert m.rho_coeff_mu == pytest.approx(1.0, abs=1e-20)


def test_moments_match_euler_integration_of_moment_odes():
    # dm/dt = -beta/2 * m for the x0 coefficient, dv/dt = beta * (1 - v) for
    # the variance; 1e5 Euler steps are an independent oracle for t = 1.
    n = 100_000
    dt = 1.0 / n
    c, v = 1.0, 0.0
    for k in range(n):
        b = beta_at(SCHED, k * dt)
        c, v = c - 0.5 * b * c * dt, v + b * (1.0 - v) * dt
    m = moments_at(SCHED, 1.0)
    assert c == pytest.approx(m.rho_coeff_x0, rel=2e-3)
    assert v == pytest.approx(m.sigma2, rel=1e-5)


@settings(max_examples=200, deadline=None)
@given(
    b0=st.floats(1e-3, 5.0),
    span=st.floats(1e-3, 60.0),
    t=st.floats(0.0, 1.0),
)
def test_moment_identities(b0, span, t):
    m = moments_at(NoiseSchedule(b0, b0 + span), t)
    assert m.rho_coeff_mu + m.rho_coeff_x0 == pytest.approx(1.0, abs=4e-16)
    assert m.sigma2 == pytest.approx(1.0 - m.rho_coeff_x0**2, abs=4e-16)
    assert 0.0 <= m.sigma2 <= 1.0


def test_moments_accept_arrays():
    t = np.linspace(0, 1, 7)
    m = moments_at(SCHED, t)
    np.testing.assert_allclose(m.sigma2, [moments_at(SCHED, ti).sigma2 for ti in t], rtol=0, atol=0)


def test_forward_sample_trivial_cases():
    rng = np.random.default_rng(0)
    x0, mu, eps = (rng.standard_normal((5, 3)) for _ in range(3))
    np.testing.assert_array_equal(forward_sample(SCHED, 0.0, x0, mu, np.zeros_like(x0)), x0)
    s = moments_at(SCHED, 0.4).sigma2
    np.testing.assert_allclose(forward_sample(SCHED, 0.4, mu, mu, eps), mu + np.sqrt(s) * eps, rtol=1e-14)


def test_forward_sample_per_row_times():
    rng = np.random.default_rng(1)
    x0, mu, eps = (rng.standard_normal((4, 2)) for _ in range(3))
    t = np.array([0.1, 0.3, 0.6, 0.9])
    rows = [forward_sample(SCHED, ti, x0[i : i + 1], mu[i : i + 1], eps[i : i + 1]) for i, ti in enumerate(t)]
    np.testing.assert_allclose(forward_sample(SCHED, t, x0, mu, eps), np.vstack(rows), rtol=1e-15)


def test_forward_sample_shape_mismatch():
    with pytest.raises(ShapeError):
        forward_sample(SCHED, 0.5, np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2)))


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_forward_sample_monte_carlo(t):
    rng = np.random.default_rng(int(t * 100))
    n = 100_000
    x0 = np.array([1.5, -0.5])
    mu = np.array([-1.0, 2.0])
    eps = rng.standard_normal((n, 2))
    x = forward_sample(SCHED, t, np.tile(x0, (n, 1)), np.tile(mu, (n, 1)), eps)
    m = moments_at(SCHED, t)
    mean = m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0
    se_mean = np.sqrt(m.sigma2 / n)
    assert np.all(np.abs(x.mean(0) - mean) < 3 * se_mean)
    se_var = m.sigma2 * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(x.var(0, ddof=1) - m.sigma2) < 3 * se_var)


def test_euler_forward_sde_reproduces_marginal():
    # dx = 0.5 beta (mu - x) dt + sqrt(beta) dw, 1e4 paths with dt = 1e-3
    rng = np.random.default_rng(3)
    n, dt = 10_000, 1e-3
    x0 = np.array([2.0, -1.0])
    mu = np.array([0.0, 1.0])
    x = np.tile(x0, (n, 1))
    checkpoints = {250: 0.25, 500: 0.5, 1000: 1.0}
    for k in range(1000):
        b = beta_at(SCHED, k * dt)
        x = x + 0.5 * b * (mu - x) * dt + np.sqrt(b * dt) * rng.standard_normal(x.shape)
        if k + 1 in checkpoints:
            m = moments_at(SCHED, checkpoints[k + 1])
            mean = m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0
            assert np.all(np.abs(x.mean(0) - mean) < 3 * np.sqrt(m.sigma2 / n))
            assert np.all(np.abs(x.var(0, ddof=1) - m.sigma2) < 3 * m.sigma2 * np.sqrt(2.0 / (n - 1)))


@pytest.mark.parametrize("sched", SCHEDULES)
def test_true_score_vanishes_at_mode_and_reduces_at_t0(sched):
    mu = np.array([0.2, -0.3, 1.0])
    m0 = np.array([1.0, 0.0, -1.0])
    v0 = np.array([0.5, 1.0, 2.0])
    mean, var = gaussian_marginal(sched, 0.3, mu, m0, v0)
    np.testing.assert_array_equal(true_score_gaussian(sched, 0.3, mean[None, :], mu, m0, v0), 0.0)
    x = np.array([[0.4, 0.5, -0.2]])
    np.testing.assert_allclose(true_score_gaussian(sched, 0.0, x, mu, m0, v0), -(x - m0) / v0, rtol=1e-15)


@pytest.mark.parametrize("sched", SCHEDULES)
def test_true_score_matches_finite_differences(sched):
    rng = np.random.default_rng(5)
    mu = rng.standard_normal(4)
    m0 = rng.standard_normal(4)
    v0 = rng.uniform(0.1, 2.0, 4)
    t = 0.37
    mean, var = gaussian_marginal(sched, t, mu, m0, v0)

    def logp(x):
        return float(-0.5 * np.sum((x - mean) ** 2 / var + np.log(2 * np.pi * var)))

    x = rng.standard_normal(4)
    h = 1e-5
    fd = np.array([(logp(x + h * e) - logp(x - h * e)) / (2 * h) for e in np.eye(4)])
    got = true_score_gaussian(sched, t, x[None, :], mu, m0, v0)[0]
    assert np.linalg.norm(got - fd) / np.linalg.norm(fd) < 1e-6


def test_true_score_rejects_nonpositive_variance():
    with pytest.raises(DomainError):
        true_score_gaussian(SCHED, 0.0, np.zeros((1, 2)), np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))
