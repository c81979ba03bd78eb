import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from powernpe.errors import InvalidArgument, NumericFailure
from powernpe.models import (LOG_SCALE_MIN, MdnModel, NoiseSchedule, RatioClassifier,
                             ScoreNetwork, ScoreTrainConfig, TrainConfig, dsm_loss, load_model,
                             mixture_log_prob, sample_posterior, save_model, train_mdn, train_nle,
                             train_nre, train_score)
from powernpe.numerics import as_tensor, gaussian_log_pdf, rng_stream
from powernpe.simulators import get_task, sample_base_joint


def _set_output(model: MdnModel, logits, means, log_scales):
    """Force the trunk to emit fixed mixture parameters for every context."""
    out = np.concatenate([logits, np.ravel(means), np.ravel(log_scales)])
    with torch.no_grad():
        model.trunk.out.weight.zero_()
        model.trunk.out.bias.copy_(as_tensor(out))


def test_single_component_is_gaussian():
    m = MdnModel(1, 2, n_components=1, width=4, n_blocks=1)
    _set_output(m, [0.3], [[0.5, -1.0]], [[0.2, -0.4]])
    t = np.array([[0.1, 0.7], [2.0, -1.0]])
    expected = gaussian_log_pdf(t, [0.5, -1.0], np.exp(2 * np.array([0.2, -0.4])))
    assert np.allclose(m.log_prob(np.zeros((2, 1)), t), expected, atol=1e-12)


def test_identical_components_collapse():
    one = MdnModel(1, 1, n_components=1, width=4, n_blocks=1)
    two = MdnModel(1, 1, n_components=2, width=4, n_blocks=1)
    _set_output(one, [0.0], [[0.4]], [[0.1]])
    _set_output(two, [0.0, 0.0], [[0.4], [0.4]], [[0.1], [0.1]])
    t = np.linspace(-2, 2, 7)[:, None]
    c = np.zeros((7, 1))
    assert np.allclose(one.log_prob(c, t), two.log_prob(c, t), atol=1e-12)


def test_two_component_hand_computation():
    m = MdnModel(1, 1, n_components=2, width=4, n_blocks=1)
    _set_output(m, [0.0, math.log(3.0)], [[-1.0], [2.0]], [[0.0], [math.log(0.5)]])
    t = 0.5
    hand = (0.25 * math.exp(-0.5 * 1.5**2) / math.sqrt(2 * math.pi)
            + 0.75 * math.exp(-0.5 * 3.0**2) / (0.5 * math.sqrt(2 * math.pi)))
    assert m.log_prob([[0.0]], [[t]])[0] == pytest.approx(math.log(hand), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4))
@settings(max_examples=15, deadline=None)
def test_mdn_normalizes_in_one_dimension(seed, n_comp):
    m = MdnModel(2, 1, n_components=n_comp, width=8, n_blocks=1, seed=seed)
    grid = np.linspace(-20, 20, 40_001)[:, None]
    ctx = rng_stream(seed).normal(size=(1, 2))
    dens = np.exp(m.log_prob(ctx, grid))
    assert 0.99 <= np.trapezoid(dens, grid[:, 0]) <= 1.01


def test_log_scales_are_clamped():
    m = MdnModel(1, 1, n_components=1, width=4, n_blocks=1)
    _set_output(m, [0.0], [[0.0]], [[-50.0]])
    _, _, ls = m.mixture_parameters(as_tensor([[0.0]]))
    assert float(ls.detach().min()) == LOG_SCALE_MIN
    draws = m.sample([0.0], 1000, rng_stream(0))
    assert np.all(np.abs(draws) < 0.01)


def test_sample_respects_zero_weight_component():
    m = MdnModel(1, 1, n_components=2, width=4, n_blocks=1)
    _set_output(m, [0.0, -1e4], [[-5.0], [5.0]], [[-3.0], [-3.0]])
    draws = m.sample([0.0], 2000, rng_stream(0))
    assert np.all(draws < 0)


def test_sample_moments_match_mixture():
    m = MdnModel(1, 2, n_components=3, width=4, n_blocks=1)
    logits = np.array([0.2, -0.5, 0.4])
    means = np.array([[0.0, 1.0], [2.0, -1.0], [-1.5, 0.5]])
    log_scales = np.array([[0.0, -0.5], [-1.0, 0.3], [0.2, 0.1]])
    _set_output(m, logits, means, log_scales)
    w = np.exp(logits) / np.exp(logits).sum()
    mean = w @ means
    var = w @ (np.exp(2 * log_scales) + means**2) - mean**2
    n = 100_000
    draws = m.sample([0.0], n, rng_stream(1))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * np.sqrt(var / n))
    fourth = w @ ((means - mean) ** 4 + 6 * (means - mean) ** 2 * np.exp(2 * log_scales)
                  + 3 * np.exp(4 * log_scales))
    se_var = np.sqrt((fourth - var**2) / n)
    assert np.all(np.abs(draws.var(axis=0) - var) < 3 * se_var)


def test_sample_nll_matches_entropy():
    m = MdnModel(1, 1, n_components=2, width=4, n_blocks=1)
    _set_output(m, [0.0, 0.5], [[-1.0], [1.0]], [[-0.5], [0.0]])
    grid = np.linspace(-15, 15, 60_001)[:, None]
    lp = m.log_prob(np.zeros((1, 1)), grid)
    entropy = -np.trapezoid(np.exp(lp) * lp, grid[:, 0])
    draws = m.sample([0.0], 50_000, rng_stream(2))
    nll = -m.log_prob(np.zeros((1, 1)), draws).mean()
    assert abs(nll - entropy) <= 0.05 * abs(entropy)


def test_mixture_log_prob_shapes():
    lp = mixture_log_prob(torch.zeros(3, 2), torch.zeros(3, 2, 4), torch.zeros(3, 2, 4),
                          torch.zeros(3, 4))
    assert lp.shape == (3,)
    assert torch.allclose(lp, torch.full((3,), -2 * math.log(2 * math.pi), dtype=lp.dtype))


def test_mdn_dimension_checks():
    m = MdnModel(2, 1)
    with pytest.raises(InvalidArgument):
        m.log_prob(np.zeros((1, 3)), np.zeros((1, 1)))
    with pytest.raises(InvalidArgument):
        m.sample(np.zeros((2, 2)), 5, rng_stream(0))


def test_train_mdn_recovers_gaussian_mle():
    r = rng_stream(0)
    y = r.normal(3.0, 2.0, size=(2000, 1))
    m = MdnModel(1, 1, n_components=1, width=16, n_blocks=1)
    train_mdn(m, np.zeros((2000, 1)), y, cfg=TrainConfig(max_epochs=200, patience=30,
                                                          learning_rate=3e-3), rng=r)
    _, mu, ls = m.mixture_parameters(as_tensor([[0.0]]))
    mean = float(m.target_mean + m.target_std * mu.detach()[0, 0, 0])
    scale = float(m.target_std * torch.exp(ls.detach()[0, 0, 0]))
    assert abs(mean - y.mean()) <= 0.05
    assert abs(scale - y.std()) <= 0.05


def test_uniform_weights_match_unweighted_gradient():
    r = rng_stream(1)
    c, t = r.normal(size=(50, 2)), r.normal(size=(50, 1))
    grads = []
    for w in (None, np.full(50, 7.0)):
        m = MdnModel(2, 1, n_components=2, width=8, n_blocks=1, seed=3)
        m.fit_standardization(c, t)
        weights = np.ones(50) if w is None else w * 50 / w.sum()
        loss = -(as_tensor(weights) * m.log_prob_tensor(as_tensor(c), as_tensor(t))).mean()
        loss.backward()
        grads.append(np.concatenate([p.grad.numpy().ravel() for p in m.parameters()]))
    assert np.allclose(grads[0], grads[1], atol=1e-14)


def test_weights_concentrated_on_one_record():
    r = rng_stream(2)
    t = r.normal(size=(200, 1))
    w = np.zeros(200)
    w[17] = 1.0
    m = MdnModel(1, 1, n_components=1, width=8, n_blocks=1)
    train_mdn(m, np.zeros((200, 1)), t, w, TrainConfig(max_epochs=150, patience=150,
                                                      validation_fraction=0.0,
                                                      learning_rate=3e-3), r)
    draws = m.sample([0.0], 2000, r)
    assert abs(np.median(draws) - t[17, 0]) < 0.05


def test_train_mdn_rejects_bad_weights():
    m = MdnModel(1, 1)
    with pytest.raises(InvalidArgument):
        train_mdn(m, np.zeros((4, 1)), np.zeros((4, 1)), np.zeros(4))
    with pytest.raises(InvalidArgument):
        train_mdn(m, np.zeros((4, 1)), np.zeros((4, 1)), np.array([1.0, -1.0, 1.0, 1.0]))


def test_nan_loss_aborts_with_last_good_model():
    r = rng_stream(3)
    c, t = r.normal(size=(64, 1)), r.normal(size=(64, 1))
    m = MdnModel(1, 1, n_components=1, width=4, n_blocks=1)
    calls = {"n": 0}
    real = m.log_prob_tensor

    def flaky(ctx, tgt):
        calls["n"] += 1
        out = real(ctx, tgt)
        return out * float("nan") if calls["n"] > 3 else out

    m.log_prob_tensor = flaky
    with pytest.raises(NumericFailure) as info:
        train_mdn(m, c, t, cfg=TrainConfig(batch_size=16, max_epochs=5), rng=r)
    assert info.value.model is m
    assert all(torch.isfinite(p).all() for p in m.parameters())


def test_noise_schedule():
    s = NoiseSchedule()
    assert s.gammas.size == 10
    assert s.gammas[0] == pytest.approx(0.01) and s.gammas[-1] == pytest.approx(1.0)
    assert np.all(np.diff(s.gammas) > 0)
    assert np.array_equal(s.sigmas, np.sqrt(s.gammas))
    with pytest.raises(InvalidArgument):
        NoiseSchedule(gamma_min=2.0)


def test_dsm_loss_closed_forms():
    r = rng_stream(4)
    theta, x = as_tensor(r.normal(size=(6, 2))), as_tensor(r.normal(size=(6, 1)))
    eps = as_tensor(r.normal(size=(6, 3)))
    sigma = 0.3

    def perfect(v, s):
        return -eps / s

    def zero(v, s):
        return torch.zeros_like(v)

    assert torch.allclose(dsm_loss(perfect, theta, x, sigma, eps),
                          torch.zeros(6, dtype=torch.float64))
    expected = (eps**2).sum(-1) / sigma**3
    assert torch.allclose(dsm_loss(zero, theta, x, sigma, eps), expected)
    with pytest.raises(InvalidArgument):
        dsm_loss(zero, theta, x, 0.0, eps)


def test_dsm_loss_permutation_invariance():
    r = rng_stream(5)
    v, eps = r.normal(size=(4, 3)), r.normal(size=(4, 3))
    perm = [2, 0, 1]
    a = as_tensor(r.normal(size=(3, 3)))

    def linear(w, s):
        return w @ a.T

    def linear_permuted(w, s):
        return w @ a[perm][:, perm].T

    base = dsm_loss(linear, as_tensor(v[:, :1]), as_tensor(v[:, 1:]), 0.5, as_tensor(eps))
    pv, pe = v[:, perm], eps[:, perm]
    moved = dsm_loss(linear_permuted, as_tensor(pv[:, :1]), as_tensor(pv[:, 1:]), 0.5,
                     as_tensor(pe))
    assert torch.allclose(base, moved)


def test_score_network_shape_and_determinism():
    net = ScoreNetwork(2, 3, width=16, n_blocks=1, seed=1)
    v = rng_stream(0).normal(size=(5, 5))
    a = net.score(v, 0.3)
    assert a.shape == (5, 5)
    assert np.array_equal(a, net.score(v, 0.3))
    with pytest.raises(InvalidArgument):
        net.score(np.zeros((1, 4)), 0.3)


def test_score_learns_gaussian_smoothing():
    r = rng_stream(6)
    data = r.normal(size=(10_000, 2))
    cfg = ScoreTrainConfig(batch_size=256, epochs=60, standardize=False)
    res = train_score(data[:, :1], data[:, 1:], cfg=cfg, rng=r, width=64, n_blocks=2)
    losses = np.array(res.train_loss)
    assert np.all(np.isfinite(losses))
    assert losses[-10:].mean() < losses[:10].mean()
    sigma = NoiseSchedule().sigmas[-1]
    probe = r.normal(size=(500, 2))
    truth = -probe / (1 + sigma**2)
    err = np.sqrt(np.mean((res.model.score(probe, sigma) - truth) ** 2) / np.mean(truth**2))
    assert err < 0.2


def test_score_of_repeated_point_vanishes_at_small_noise():
    point = np.tile([[0.2, -0.4]], (512, 1))
    res = train_score(point[:, :1], point[:, 1:], cfg=ScoreTrainConfig(epochs=60, standardize=False),
                      rng=rng_stream(7), width=16, n_blocks=1)
    s = res.model.score(point[:1], NoiseSchedule().sigmas[0])
    assert np.linalg.norm(s) < 0.5


def test_ratio_classifier_contract():
    clf = RatioClassifier(1, 1, width=4, n_blocks=1)
    with torch.no_grad():
        clf.net.out.bias.fill_(1e6)
    lr = clf.log_ratio(np.zeros((3, 1)), np.zeros((3, 1)))
    assert np.all(lr == 30.0)
    p = clf.probability(np.zeros((1, 1)), np.zeros((1, 1)))
    assert 0 < p[0] < 1 and np.isfinite(p[0] / (1 - p[0]))


def test_nre_on_independent_data_is_uninformative():
    r = rng_stream(8)
    theta, x = r.normal(size=(3000, 1)), r.normal(size=(3000, 1))
    res = train_nre(theta, x, TrainConfig(max_epochs=40, patience=10), r, width=16, n_blocks=1)
    lr = res.model.log_ratio(r.normal(size=(500, 1)), r.normal(size=(500, 1)))
    assert np.abs(lr).mean() < 0.15


def test_nre_separable_data_stays_finite():
    theta = np.vstack([np.full((100, 1), -5.0), np.full((100, 1), 5.0)])
    x = theta.copy()
    res = train_nre(theta, x, TrainConfig(max_epochs=30, patience=30), rng_stream(9), width=8,
                    n_blocks=1)
    assert np.all(np.isfinite(res.model.log_ratio(theta, x[::-1])))


def test_nre_requires_balanced_classes():
    theta = np.zeros((10, 1))
    with pytest.raises(InvalidArgument):
        train_nre(theta, theta, negatives=(np.zeros((5, 1)), np.zeros((5, 1))))


def test_nre_matches_analytic_gaussian_ratio_and_identity():
    rho = 0.8
    r = rng_stream(10)
    n = 20_000
    theta = r.normal(size=(n, 1))
    x = rho * theta + math.sqrt(1 - rho**2) * r.normal(size=(n, 1))
    res = train_nre(theta, x, TrainConfig(max_epochs=60, patience=10), r, width=32, n_blocks=2)
    th = r.normal(size=(2000, 1))
    xx = rho * th + math.sqrt(1 - rho**2) * r.normal(size=(2000, 1))
    analytic = (gaussian_log_pdf(xx - rho * th, 0.0, 1 - rho**2)
                - gaussian_log_pdf(xx, 0.0, 1.0))
    rmse = np.sqrt(np.mean((res.model.log_ratio(th, xx) - analytic) ** 2))
    assert rmse <= 0.2
    # importance identity E_{p(theta)p(x)}[r] = 1
    neg = np.exp(res.model.log_ratio(r.normal(size=(20_000, 1)), r.normal(size=(20_000, 1))))
    assert abs(neg.mean() - 1.0) <= 3 * neg.std() / math.sqrt(neg.size)


def test_nle_gmm_tracks_true_likelihood():
    task = get_task("gaussian-mixture")
    r = rng_stream(11)
    base = sample_base_joint(task, 8000, r)
    res = train_nle(base.theta, base.x, TrainConfig(max_epochs=80, patience=15), r,
                    n_components=4, width=64, n_blocks=2)
    held = sample_base_joint(task, 2000, r)
    truth = task.log_likelihood(held.theta, held.x)
    est = res.model.log_prob(held.theta, held.x)
    assert np.corrcoef(truth, est)[0, 1] >= 0.9
    assert abs(-est.mean() - (-truth.mean())) <= 0.2


def test_nle_linear_gaussian_slope():
    r = rng_stream(12)
    theta = r.uniform(-2, 2, size=(6000, 1))
    x = theta + r.normal(size=(6000, 1))
    res = train_nle(theta, x, TrainConfig(max_epochs=300, patience=30), r, n_components=1,
                    width=16, n_blocks=1)
    grid = np.linspace(-1.5, 1.5, 7)[:, None]
    means = [res.model.sample(t, 20_000, r).mean() for t in grid]
    slope = np.polyfit(grid[:, 0], means, 1)[0]
    assert abs(slope - 1.0) <= 0.05


def test_nle_constant_data_does_not_nan():
    theta = rng_stream(13).normal(size=(256, 1))
    x = np.full((256, 1), 2.0)
    res = train_nle(theta, x, TrainConfig(max_epochs=20, patience=20), rng_stream(13),
                    n_components=2, width=8, n_blocks=1)
    assert np.all(np.isfinite(res.model.log_prob(theta, x)))


@pytest.mark.parametrize("kind", ["mdn", "score", "ratio"])
def test_persistence_round_trip_is_bit_identical(kind, tmp_path):
    r = rng_stream(14)
    if kind == "mdn":
        model = MdnModel(3, 2, n_components=3, width=8, n_blocks=2, seed=5)
        model.fit_standardization(r.normal(size=(20, 3)), r.normal(size=(20, 2)))

        def out(m):
            return m.log_prob(np.ones((4, 3)), r_fixed.normal(size=(4, 2)))
    elif kind == "score":
        model = ScoreNetwork(2, 2, width=8, n_blocks=1, seed=5)

        def out(m):
            return m.score(r_fixed.normal(size=(4, 4)), 0.3)
    else:
        model = RatioClassifier(2, 2, width=8, n_blocks=1, seed=5)

        def out(m):
            return m.log_ratio(r_fixed.normal(size=(4, 2)), r_fixed.normal(size=(4, 2)))
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    r_fixed = rng_stream(99)
    a = out(model)
    r_fixed = rng_stream(99)
    b = out(loaded)
    assert np.array_equal(a, b)


def test_load_rejects_foreign_documents(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(InvalidArgument):
        load_model(p)


def test_sample_posterior_respects_prior_box():
    task = get_task("gaussian-mixture")
    m = MdnModel(3, 2, n_components=1, width=4, n_blocks=1)
    _set_output(m, [0.0], [[0.9, 0.9]], [[0.0, 0.0]])
    draws = sample_posterior(m, np.zeros(2), 1.0, 500, rng_stream(0), prior=task.prior)
    assert draws.shape == (500, 2)
    assert np.all(task.prior.contains(draws))
