import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from powernpe.errors import InvalidArgument
from powernpe.numerics import gaussian_log_pdf, rng_stream
from powernpe.simulators import (BoxPrior, GaussianMixture, Lorenz96, Slcp, TwoMoons, get_task,
                                 sample_base_joint)

from conftest import StubRng


def test_task_dimensions():
    dims = {"two-moons": (2, 2), "gaussian-mixture": (2, 2), "slcp": (5, 8),
            "lorenz96": (3, 168)}
    for name, (dt, dx) in dims.items():
        task = get_task(name)
        assert (task.theta_dim, task.x_dim) == (dt, dx)
    assert Lorenz96.dt == 3 / 40
    with pytest.raises(InvalidArgument):
        get_task("hodgkin-huxley")


def test_prior_degenerate_stub():
    prior = BoxPrior(np.zeros(2), np.ones(2))
    assert np.array_equal(prior.sample(StubRng(), 1), [[0.5, 0.5]])


def test_prior_moments_and_bounds(rng):
    prior = get_task("two-moons").prior
    draws = prior.sample(rng, 100_000)
    assert np.all(prior.contains(draws))
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)


def test_prior_density_and_gradient(rng):
    prior = get_task("slcp").prior
    inside = prior.sample(rng, 50)
    assert np.allclose(prior.log_prob(inside), -5 * math.log(6.0))
    assert np.array_equal(prior.grad_log_prob(inside), np.zeros_like(inside))
    assert prior.log_prob(np.full(5, 3.5)) == -np.inf
    with pytest.raises(InvalidArgument):
        BoxPrior(np.ones(2), np.zeros(2))


def test_two_moons_stub_simulation():
    x = TwoMoons().simulate(np.zeros(2), StubRng())
    assert np.allclose(x, [[0.35, 0.0]])


def test_gmm_wide_component_stub():
    eps = np.array([0.3, -1.2])
    theta = np.array([[0.1, 0.2]])
    x = GaussianMixture().simulate(theta, StubRng(uniform=[0.0], normal=[eps]))
    assert np.allclose(x, theta + eps)


def test_simulate_rejects_out_of_support(rng):
    with pytest.raises(InvalidArgument):
        get_task("gaussian-mixture").simulate(np.array([1.5, 0.0]), rng)
    with pytest.raises(InvalidArgument):
        get_task("gaussian-mixture").log_likelihood(np.zeros(3), np.zeros(2))


def test_gmm_likelihood_at_mode():
    expected = math.log(0.5 * gaussian_log_pdf_exp(1.0) + 0.5 * gaussian_log_pdf_exp(0.01))
    got = GaussianMixture().log_likelihood(np.array([0.2, -0.3]), np.array([0.2, -0.3]))
    assert math.isclose(float(got[0]), expected, rel_tol=1e-12)


def gaussian_log_pdf_exp(var):
    return math.exp(gaussian_log_pdf(np.zeros(2), np.zeros(2), np.full(2, var)))


def test_slcp_uncorrelated_factorizes(rng):
    task = Slcp()
    theta = np.array([0.5, -1.0, 1.3, -0.7, 0.0])
    x = task.simulate(theta, rng)
    pairs = x.reshape(4, 2)
    expected = sum(gaussian_log_pdf(p, theta[:2], np.array([1.3**4, 0.7**4])) for p in pairs)
    assert math.isclose(float(task.log_likelihood(theta, x)[0]), expected, rel_tol=1e-12)


def test_two_moons_forbidden_half_plane():
    task = TwoMoons()
    theta = np.array([0.2, -0.1])
    x = task.offset(theta) + np.array([0.25 - 0.05, 0.0])
    assert task.log_likelihood(theta, x)[0] == -np.inf


def test_two_moons_density_integrates_to_one():
    task = TwoMoons()
    theta = np.array([0.3, -0.6])
    centre = task.offset(theta) + np.array([0.25, 0.0])

    def density(y, x):
        return math.exp(task.log_likelihood(theta, np.array([x, y]))[0])

    # polar support: half-annulus of radius 0.1 +- 0.06 to the right of centre
    total = 0.0
    for lo, hi in [(-0.16, -0.04), (-0.04, 0.04), (0.04, 0.16)]:
        total += integrate.dblquad(density, centre[0], centre[0] + 0.16,
                                   centre[1] + lo, centre[1] + hi, epsabs=1e-6)[0]
    assert abs(total - 1.0) < 0.01


@pytest.mark.parametrize("name", ["gaussian-mixture", "slcp"])
def test_likelihood_simulator_moment_consistency(name, rng):
    task = get_task(name)
    theta = task.prior.sample(rng, 1)[0] * 0.8
    x = task.simulate(np.repeat(theta[None], 100_000, axis=0), rng)
    if name == "gaussian-mixture":
        mean, cov = theta, 0.5 * (1.0 + 0.01) * np.eye(2)
    else:
        s1, s2, rho = theta[2] ** 2, theta[3] ** 2, math.tanh(theta[4])
        mean = np.tile(theta[:2], 4)
        block = np.array([[s1**2, rho * s1 * s2], [rho * s1 * s2, s2**2]])
        cov = np.kron(np.eye(4), block)
    se = np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean) <= 3 * se + 1e-12)
    emp = np.cov(x.T)
    # var of a sample variance ~ 2 s^4 / n for Gaussian, larger for the mixture
    kurt_factor = 3.0 if name == "gaussian-mixture" else 1.0
    se_var = np.sqrt(2 * kurt_factor / x.shape[0]) * np.diag(cov)
    assert np.all(np.abs(np.diag(emp) - np.diag(cov)) <= 3 * se_var)
    # analytic density agrees with a direct Gaussian evaluation
    lp = task.log_likelihood(np.repeat(theta[None], 5, axis=0), x[:5])
    assert np.all(np.isfinite(lp))


def test_lorenz96_residuals_are_standard_normal(rng):
    task = Lorenz96()
    theta = task.true_theta
    x = task.simulate(np.repeat(theta[None], 2000, axis=0), rng)
    z = task.standardized_residuals(theta, x).ravel()
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1.0) < 0.02
    assert abs(np.mean(z**4) - 3.0) < 0.1


def test_lorenz96_stats_likelihood_matches_direct_sum(rng):
    task = Lorenz96()
    theta = task.prior.sample(rng, 4)
    x = task.simulate(theta, rng)
    z = task.standardized_residuals(theta, x)
    var = theta[:, 2] ** 2 * task.dt
    direct = (-0.5 * z.reshape(4, -1) ** 2).sum(1) - 0.5 * 160 * (np.log(2 * np.pi * var))
    assert np.allclose(task.log_likelihood(theta, x), direct, rtol=1e-10)


def test_lorenz96_noiseless_limit_is_deterministic():
    task = Lorenz96()
    theta = np.array([[1.8, 0.5, 1e-12]])
    a = task._simulate(theta, rng_stream(1))
    b = task._simulate(theta, rng_stream(2))
    assert np.allclose(a, b, atol=1e-9)
    assert np.array_equal(a.reshape(21, 8)[0], np.ones(8))


def test_lorenz96_is_stable_over_prior(rng):
    x = sample_base_joint(Lorenz96(), 2000, rng).x
    assert np.all(np.isfinite(x))
    assert np.abs(x).max() < 100


def test_sample_base_joint_contract():
    task = get_task("gaussian-mixture")
    with pytest.raises(InvalidArgument):
        sample_base_joint(task, 0, rng_stream(0))
    a = sample_base_joint(task, 3, rng_stream(9))
    b = sample_base_joint(task, 3, rng_stream(9))
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.x, b.x)
    joint = sample_base_joint(task, 100_000, rng_stream(10))
    assert np.all(np.abs(joint.theta.mean(axis=0)) < 0.02)


@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
@settings(max_examples=30, deadline=None)
def test_two_moons_simulations_have_positive_likelihood(t1, t2):
    task = TwoMoons()
    theta = np.array([t1, t2])
    x = task.simulate(np.repeat(theta[None], 20, axis=0), rng_stream(0))
    assert np.all(np.isfinite(task.log_likelihood(np.repeat(theta[None], 20, axis=0), x)))
