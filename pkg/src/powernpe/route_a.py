"""Tempering by simulation: learn the joint score of the base joint, push
samples through annealed Langevin dynamics driven by the tempered score, and
fit a temperature-conditioned posterior to the synthesized triples.

Langevin runs in the score model's standardized coordinates; the prior box
constraint is enforced by reflecting theta after every step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .models import (MdnModel, NoiseSchedule, ScoreNetwork, ScoreTrainConfig, TrainConfig,
                     TrainResult, posterior_context, train_mdn, train_score)
from .numerics import child_stream
from .reference import BETA_GRID, reflect
from .simulators import BoxPrior, Task, sample_base_joint

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6


class AnalyticGaussianScore:
    """Score of N(0, scale^2 I) smoothed by N(0, sigma^2 I), in raw coordinates.

    Stands in for a trained :class:`ScoreNetwork` wherever the closed form
    is useful as an oracle.
    """

    def __init__(self, theta_dim: int, x_dim: int, scale: float = 1.0):
        self.theta_dim, self.x_dim, self.scale = theta_dim, x_dim, float(scale)

    @property
    def dim(self) -> int:
        return self.theta_dim + self.x_dim

    def score(self, v, sigma):
        return -np.asarray(v) / (self.scale**2 + np.asarray(sigma, dtype=float) ** 2)

    def standardize(self, theta, x):
        return np.concatenate([np.atleast_2d(theta), np.atleast_2d(x)], axis=1)

    def unstandardize(self, v):
        return v[:, : self.theta_dim], v[:, self.theta_dim :]

    @property
    def theta_scale(self):
        return np.ones(self.theta_dim)


def _theta_scale(score_model) -> np.ndarray:
    if isinstance(score_model, ScoreNetwork):
        return score_model.joint_std.numpy()[: score_model.theta_dim]
    return score_model.theta_scale


def tempered_score(score_model, prior, theta, x, beta: float, sigma: float) -> np.ndarray:
    """beta * s(theta, x, sigma) - (beta - 1) * (grad log prior(theta), 0).

    Inputs are raw coordinates; the result is the score with respect to the
    score model's own (standardized) coordinates.
    """
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    v = score_model.standardize(theta, x)
    out = beta * score_model.score(v, sigma)
    if prior is not None and beta != 1.0:
        # chain rule: d/dv = std * d/dtheta
        grad = prior.grad_log_prob(theta) * _theta_scale(score_model)
        out[:, : theta.shape[1]] -= (beta - 1.0) * grad
    return out


@dataclass
class LangevinConfig:
    steps_per_level: int = 20
    eps0: float = 2e-5
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    beta_grid: tuple = BETA_GRID
    # Tweedie step at sigma_min after the last level
    denoise: bool = True
    max_retries: int = 10
    batch_size: int = 20000

    def __post_init__(self):
        if self.steps_per_level < 0 or self.eps0 <= 0:
            raise InvalidArgument("Langevin needs steps_per_level >= 0 and eps0 > 0")

    def step_sizes(self) -> np.ndarray:
        """eta_t = eps0 * sigma_t^2 / sigma_min^2, ordered from the largest sigma."""
        sig = self.schedule.sigmas[::-1]
        return self.eps0 * sig**2 / sig[-1] ** 2


@dataclass
class TemperedDataset:
    beta: np.ndarray
    theta: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return self.beta.shape[0]

    def subset(self, beta: float) -> "TemperedDataset":
        keep = self.beta == beta
        return TemperedDataset(self.beta[keep], self.theta[keep], self.x[keep])


def _run_chain(score_model, prior: BoxPrior | None, theta, x, beta, cfg: LangevinConfig, rng):
    theta_dim = theta.shape[1]
    v = score_model.standardize(theta, x)
    sigmas = cfg.schedule.sigmas[::-1]
    for sigma, eta in zip(sigmas, cfg.step_sizes()):
        noise_scale = np.sqrt(2.0 * eta)
        for _ in range(cfg.steps_per_level):
            th, xx = score_model.unstandardize(v)
            g = tempered_score(score_model, prior, th, xx, beta, sigma)
            v = v + eta * g + noise_scale * rng.normal(size=v.shape)
            if prior is not None:
                v = _reflect_theta(score_model, prior, v)
    if cfg.denoise and cfg.steps_per_level > 0:
        th, xx = score_model.unstandardize(v)
        v = v + sigmas[-1] ** 2 * tempered_score(score_model, prior, th, xx, beta, sigmas[-1])
        if prior is not None:
            v = _reflect_theta(score_model, prior, v)
    th, xx = score_model.unstandardize(v)
    return th, xx, np.linalg.norm(v, axis=1)


def _reflect_theta(score_model, prior: BoxPrior, v):
    th, xx = score_model.unstandardize(v)
    if np.all(prior.contains(th)):
        return v
    th = reflect(th, prior.low, prior.high)
    return score_model.standardize(th, xx)


def langevin_synthesize(score_model, init_fn, beta: float, n: int, cfg: LangevinConfig, rng,
                        prior: BoxPrior | None = None):
    """``n`` states of the annealed tempered-score Langevin chain at ``beta``.

    ``init_fn(rng, n)`` returns ``(theta, x)`` drawn from the base joint.
    Chains whose state norm exceeds 1e6 (or turns non-finite) are restarted
    from fresh initial draws, at most ``cfg.max_retries`` times.
    """
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    out_theta, out_x = [], []
    for start in range(0, n, cfg.batch_size):
        m = min(cfg.batch_size, n - start)
        theta, x = init_fn(rng, m)
        if cfg.steps_per_level == 0:
            out_theta.append(theta)
            out_x.append(x)
            continue
        th, xx, norm = _run_chain(score_model, prior, theta, x, beta, cfg, rng)
        for _ in range(cfg.max_retries):
            bad = ~(np.isfinite(norm) & (norm <= DIVERGENCE_NORM))
            if not bad.any():
                break
            log.warning("restarting %d diverged Langevin chains", int(bad.sum()))
            t0, x0 = init_fn(rng, int(bad.sum()))
            th[bad], xx[bad], norm[bad] = _run_chain(score_model, prior, t0, x0, beta, cfg, rng)
        else:
            if not np.all(np.isfinite(norm) & (norm <= DIVERGENCE_NORM)):
                raise NumericFailure("Langevin chains keep diverging")
        out_theta.append(th)
        out_x.append(xx)
    return np.concatenate(out_theta), np.concatenate(out_x)


def build_tempered_dataset(score_model, task: Task, n_per_beta: int, beta_grid,
                           cfg: LangevinConfig, rng) -> TemperedDataset:
    """``n_per_beta`` synthesized triples for every beta of the grid.

    Equal counts per grid point realise a uniform temperature distribution
    exactly rather than in expectation.
    """
    grid = [float(b) for b in beta_grid]
    if not grid:
        raise InvalidArgument("empty beta grid")
    if n_per_beta < 1:
        raise InvalidArgument("n_per_beta must be at least 1")

    def init_fn(r, m):
        j = sample_base_joint(task, m, r)
        return j.theta, j.x

    betas, thetas, xs = [], [], []
    for beta in grid:
        th, xx = langevin_synthesize(score_model, init_fn, beta, n_per_beta, cfg,
                                     child_stream(rng), prior=task.prior)
        betas.append(np.full(n_per_beta, beta))
        thetas.append(th)
        xs.append(xx)
    return TemperedDataset(np.concatenate(betas), np.concatenate(thetas), np.concatenate(xs))


def train_npe_route_a(dataset: TemperedDataset, cfg: TrainConfig | None = None, rng=None,
                      n_components: int = 8, width: int = 128, n_blocks: int = 3,
                      seed: int = 0) -> TrainResult:
    """q(theta | x, beta) by maximum likelihood on the synthesized triples."""
    if len(dataset) == 0:
        raise InvalidArgument("empty tempered dataset")
    model = MdnModel(dataset.x.shape[1] + 1, dataset.theta.shape[1], n_components, width,
                     n_blocks, seed)
    return train_mdn(model, posterior_context(dataset.x, dataset.beta), dataset.theta,
                     None, cfg, rng)


@dataclass
class RouteAResult:
    score: TrainResult
    dataset: TemperedDataset
    posterior: TrainResult


def run_route_a(task: Task, budget: int, rng, beta_grid=BETA_GRID, n_per_beta: int | None = None,
                score_cfg: ScoreTrainConfig | None = None, langevin: LangevinConfig | None = None,
                npe_cfg: TrainConfig | None = None, n_components: int = 8, width: int = 128,
                seed: int = 0) -> RouteAResult:
    """Simulate ``budget`` base pairs, then score, synthesize, and fit."""
    base = sample_base_joint(task, budget, child_stream(rng))
    score = train_score(base.theta, base.x, cfg=score_cfg, rng=child_stream(rng), width=width,
                        seed=seed)
    langevin = langevin or LangevinConfig()
    n_per_beta = n_per_beta or max(budget // len(beta_grid), 1)
    data = build_tempered_dataset(score.model, task, n_per_beta, beta_grid, langevin,
                                  child_stream(rng))
    post = train_npe_route_a(data, npe_cfg, child_stream(rng), n_components, width, seed=seed)
    return RouteAResult(score, data, post)
