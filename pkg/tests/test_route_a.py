import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from powernpe.errors import InvalidArgument, NumericFailure
from powernpe.metrics import c2st
from powernpe.models import (ScoreNetwork, ScoreTrainConfig, TrainConfig,
                             posterior_context, train_score)
from powernpe.numerics import rng_stream
from powernpe.route_a import (AnalyticGaussianScore, LangevinConfig, TemperedDataset,
                              build_tempered_dataset, langevin_synthesize, tempered_score,
                              train_npe_route_a)
from powernpe.simulators import BoxPrior, GaussianMixture, get_task, sample_base_joint


class GaussianPrior:
    """N(0, s^2 I) on theta, for exercising the prior-gradient term."""

    def __init__(self, s):
        self.s = s

    def grad_log_prob(self, theta):
        return -np.asarray(theta) / self.s**2


def _probe(seed, n=5):
    r = rng_stream(seed)
    return r.normal(size=(n, 2)), r.normal(size=(n, 3))


def test_beta_one_returns_raw_score():
    net = ScoreNetwork(2, 3, width=8, n_blocks=1)
    theta, x = _probe(0)
    got = tempered_score(net, GaussianPrior(0.7), theta, x, 1.0, 0.3)
    assert np.array_equal(got, net.score(net.standardize(theta, x), 0.3))


def test_uniform_prior_interior_scales_score():
    net = ScoreNetwork(2, 3, width=8, n_blocks=1)
    prior = BoxPrior(np.full(2, -5.0), np.full(2, 5.0))
    theta, x = _probe(1)
    raw = net.score(net.standardize(theta, x), 0.2)
    assert np.allclose(tempered_score(net, prior, theta, x, 2.5, 0.2), 2.5 * raw, rtol=1e-14)


def test_analytic_score_with_gaussian_prior_by_hand():
    s = AnalyticGaussianScore(2, 3, scale=1.0)
    theta, x = _probe(2)
    beta, sigma, tau = 0.4, 0.5, 0.7
    v = np.concatenate([theta, x], axis=1)
    expected = beta * (-v / (1 + sigma**2))
    expected[:, :2] -= (beta - 1) * (-theta / tau**2)
    got = tempered_score(s, GaussianPrior(tau), theta, x, beta, sigma)
    assert np.allclose(got, expected, rtol=1e-14)


@given(st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.floats(0.05, 3.0))
@settings(max_examples=50, deadline=None)
def test_tempered_score_is_affine_in_beta(b1, b2, beta):
    assume(abs(b2 - b1) > 0.1)
    s = AnalyticGaussianScore(2, 3)
    prior = GaussianPrior(0.8)
    theta, x = _probe(3)
    a = tempered_score(s, prior, theta, x, b1, 0.3)
    b = tempered_score(s, prior, theta, x, b2, 0.3)
    got = tempered_score(s, prior, theta, x, beta, 0.3)
    t = (beta - b1) / (b2 - b1)
    assert np.allclose(got, a + t * (b - a), rtol=1e-9, atol=1e-9)


def _gaussian_init(r, m):
    return r.normal(size=(m, 1)), r.normal(size=(m, 1))


def test_zero_steps_return_initial_draws():
    cfg = LangevinConfig(steps_per_level=0)
    th, x = langevin_synthesize(AnalyticGaussianScore(1, 1), _gaussian_init, 2.0, 50, cfg,
                                rng_stream(4))
    t0, x0 = _gaussian_init(rng_stream(4), 50)
    assert np.array_equal(th, t0) and np.array_equal(x, x0)


def test_step_sizes_follow_schedule():
    cfg = LangevinConfig()
    eta = cfg.step_sizes()
    assert eta[-1] == pytest.approx(2e-5)
    assert eta[0] == pytest.approx(2e-5 * 100)
    assert np.all(np.diff(eta) < 0)
    with pytest.raises(InvalidArgument):
        LangevinConfig(eps0=0.0)


@pytest.mark.parametrize("beta", [1.0, 4.0])
def test_langevin_analytic_gaussian_long_run(beta):
    cfg = LangevinConfig(steps_per_level=200, eps0=2e-3, denoise=False)
    th, x = langevin_synthesize(AnalyticGaussianScore(1, 1), _gaussian_init, beta, 10_000, cfg,
                                rng_stream(5))
    v = np.concatenate([th, x], axis=1)
    assert np.all(np.abs(v.mean(axis=0)) <= 0.05)
    assert np.all(np.abs(v.var(axis=0) - 1.0 / beta) <= 0.05)


def test_divergence_exhausts_retries():
    class Exploding(AnalyticGaussianScore):
        def score(self, v, sigma):
            return 1e9 * np.ones_like(v)

    cfg = LangevinConfig(steps_per_level=1, max_retries=2)
    with pytest.raises(NumericFailure):
        langevin_synthesize(Exploding(1, 1), _gaussian_init, 1.0, 5, cfg, rng_stream(6))


def test_dataset_bookkeeping_and_reflection():
    task = get_task("gaussian-mixture")
    cfg = LangevinConfig(steps_per_level=3, eps0=0.05)
    # a wide analytic score pushes chains into the walls
    data = build_tempered_dataset(AnalyticGaussianScore(2, 2, scale=3.0), task, 40, [0.1, 1.5],
                                  cfg, rng_stream(7))
    assert len(data) == 80
    assert len(data.subset(0.1)) == 40 and len(data.subset(1.5)) == 40
    assert np.all(task.prior.contains(data.theta))
    with pytest.raises(InvalidArgument):
        build_tempered_dataset(AnalyticGaussianScore(2, 2), task, 10, [], cfg, rng_stream(7))
    with pytest.raises(InvalidArgument):
        build_tempered_dataset(AnalyticGaussianScore(2, 2), task, 0, [1.0], cfg, rng_stream(7))


def test_beta_one_analytic_synthesis_matches_base():
    """At beta=1 the Langevin kernel targets the base joint itself."""
    cfg = LangevinConfig(steps_per_level=50, eps0=5e-4, denoise=False)
    prior = BoxPrior(np.array([-50.0]), np.array([50.0]))
    th, x = langevin_synthesize(AnalyticGaussianScore(1, 1), _gaussian_init, 1.0, 3000, cfg,
                                rng_stream(8), prior=prior)
    t0, x0 = _gaussian_init(rng_stream(9), 3000)
    assert c2st(np.hstack([th, x]), np.hstack([t0, x0])) <= 0.55


def test_trained_score_beta_one_synthesis_on_gmm():
    task = GaussianMixture()
    base = sample_base_joint(task, 10_000, rng_stream(10))
    score = train_score(base.theta, base.x, cfg=ScoreTrainConfig(batch_size=256, epochs=60),
                        rng=rng_stream(11), width=64, n_blocks=2)
    data = build_tempered_dataset(score.model, task, 2000, [1.0], LangevinConfig(),
                                  rng_stream(12))
    fresh = sample_base_joint(task, 2000, rng_stream(13))
    a = np.concatenate([data.theta, data.x], axis=1)
    b = np.concatenate([fresh.theta, fresh.x], axis=1)
    # sigma_min equals the narrow component's scale; blurring alone costs ~0.56
    assert c2st(a, b) <= 0.65


def test_npe_duplicate_invariance_and_constant_beta():
    r = rng_stream(14)
    theta = r.uniform(-1, 1, size=(300, 1))
    x = theta + 0.3 * r.normal(size=(300, 1))
    data = TemperedDataset(np.full(300, 0.7), theta, x)
    dup = TemperedDataset(np.full(600, 0.7), np.tile(theta, (2, 1)), np.tile(x, (2, 1)))
    cfg = TrainConfig(batch_size=300, max_epochs=3, patience=3, validation_fraction=0.0)
    a = train_npe_route_a(data, cfg, rng_stream(15), 2, 8, 1)
    cfg2 = TrainConfig(batch_size=600, max_epochs=3, patience=3, validation_fraction=0.0)
    b = train_npe_route_a(dup, cfg2, rng_stream(15), 2, 8, 1)
    # full-batch losses are means, so duplication leaves every step unchanged
    assert np.allclose(a.train_loss, b.train_loss, rtol=1e-10)
    # a constant beta column is standardized to zero, so beta has no effect
    lp1 = a.model.log_prob(posterior_context(x[:5], 0.7), theta[:5])
    lp2 = a.model.log_prob(posterior_context(x[:5], 0.7 + 1e-3), theta[:5])
    assert np.array_equal(lp1, lp2)
    with pytest.raises(InvalidArgument):
        train_npe_route_a(TemperedDataset(np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1))))
