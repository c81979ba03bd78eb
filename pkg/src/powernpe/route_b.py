"""Tempering by reweighting: self-normalized importance weights over one
base simulation set, normalized globally per temperature, and a weighted
fit of the temperature-conditioned posterior.

For a record (theta_i, x_i) with log-score s_i the unnormalized weight at
temperature beta is exp((beta - 1) s_i). The log-score is a likelihood
(NLE mode, or the exact likelihood) or a log density ratio (NRE mode).
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument, NumericFailure
from .models import (MdnModel, RatioClassifier, TrainConfig, TrainResult, posterior_context,
                     train_mdn, train_nle, train_nre)
from .numerics import child_stream, gaussian_log_pdf
from .reference import BETA_GRID
from .simulators import Task, sample_base_joint

log = logging.getLogger(__name__)

MODES = ("nle", "nre", "exact")
ESS_FLOOR = 50.0


class LowEssWarning(UserWarning):
    """Effective sample size of some temperature fell below the floor."""


@dataclass
class SnisMode:
    """Which log-score drives the weights.

    ``surrogate`` is an MDN likelihood (``nle``), a ratio classifier
    (``nre``), or anything with ``log_likelihood(theta, x)`` (``exact``).
    """

    tag: str
    surrogate: object

    def __post_init__(self):
        if self.tag not in MODES:
            raise InvalidArgument(f"unknown weight mode {self.tag!r}; choose from {MODES}")


def log_score(mode: SnisMode, theta, x) -> np.ndarray:
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    with np.errstate(all="ignore"):
        if mode.tag == "nle":
            # the MDN refuses non-finite output; evaluate the tensor directly so
            # bad records can be flagged instead
            import torch

            from .numerics import as_tensor

            with torch.no_grad():
                return mode.surrogate.log_prob_tensor(as_tensor(theta), as_tensor(x)).numpy()
        if mode.tag == "nre":
            return mode.surrogate.log_ratio(theta, x)
        return np.asarray(mode.surrogate.log_likelihood(theta, x), dtype=np.float64)


@dataclass
class WeightTable:
    betas: np.ndarray
    # (n_beta, N) normalized weights; excluded records carry weight 0
    weights: np.ndarray
    log_normalizer: np.ndarray
    ess: np.ndarray
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n(self) -> int:
        return self.weights.shape[1]

    def row(self, beta: float) -> np.ndarray:
        hits = np.flatnonzero(np.isclose(self.betas, beta, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise InvalidArgument(f"beta={beta} not in weight table")
        return self.weights[hits[0]]


def weights_from_scores(scores, beta_grid) -> WeightTable:
    """Globally normalized weights exp((beta - 1) s_i - S_beta)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    betas = np.asarray([float(b) for b in beta_grid])
    if s.size == 0:
        raise InvalidArgument("empty base set")
    if betas.size == 0:
        raise InvalidArgument("empty beta grid")
    if np.any(betas <= 0):
        raise InvalidArgument("beta values must be positive")
    excluded = ~np.isfinite(s)
    if excluded.all():
        raise NumericFailure("every base record has a non-finite log-score")
    if excluded.any():
        log.warning("%d base records with non-finite log-score excluded", int(excluded.sum()))
    keep = s[~excluded]
    weights = np.zeros((betas.size, s.size))
    log_norm = np.empty(betas.size)
    ess = np.empty(betas.size)
    for k, beta in enumerate(betas):
        a = (beta - 1.0) * keep
        log_norm[k] = logsumexp(a)
        w = np.exp(a - log_norm[k])
        # absorb rounding so each row sums to one
        w /= w.sum()
        weights[k, ~excluded] = w
        ess[k] = 1.0 / np.sum(w**2)
    return WeightTable(betas, weights, log_norm, ess, excluded)


def build_weight_table(mode: SnisMode, theta, x, beta_grid) -> WeightTable:
    return weights_from_scores(log_score(mode, theta, x), beta_grid)


def train_npe_route_b(theta, x, table: WeightTable, cfg: TrainConfig | None = None, rng=None,
                      n_components: int = 8, width: int = 128, n_blocks: int = 3, seed: int = 0,
                      ess_floor: float = ESS_FLOOR) -> TrainResult:
    """Weighted NPE over the base set replicated across the table's betas.

    Record (x_i, beta) -> theta_i carries weight w~_{beta,i}. Minibatch
    losses are ``(N/|B|) sum_B w~ nll``, weights fixed globally.
    """
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    n = theta.shape[0]
    if n != table.n or x.shape[0] != n:
        raise InvalidArgument("base set and weight table sizes differ")
    for beta, ess in zip(table.betas, table.ess):
        if ess < ess_floor:
            warnings.warn(f"ESS {ess:.1f} below {ess_floor:g} at beta={beta:g}", LowEssWarning,
                          stacklevel=2)
    g = table.betas.size
    context = posterior_context(np.tile(x, (g, 1)), np.repeat(table.betas, n))
    target = np.tile(theta, (g, 1))
    w = table.weights.reshape(-1)
    keep = w > 0
    model = MdnModel(x.shape[1] + 1, theta.shape[1], n_components, width, n_blocks, seed)
    return train_mdn(model, context[keep], target[keep], w[keep], cfg, rng)


# ------------------------------------------------------------ end to end


@dataclass
class RouteBResult:
    mode: str
    surrogate: TrainResult | None
    table: WeightTable
    posterior: TrainResult
    theta: np.ndarray
    x: np.ndarray


def train_surrogate(tag: str, theta, x, cfg: TrainConfig | None, rng, width: int = 128,
                    seed: int = 0, task: Task | None = None):
    """Fit the weighting surrogate; returns ``(SnisMode, TrainResult | None)``."""
    if tag == "exact":
        if task is None:
            raise InvalidArgument("exact weights need a task with a likelihood")
        return SnisMode("exact", task), None
    if tag == "nle":
        res = train_nle(theta, x, cfg, rng, n_components=10, width=width, seed=seed)
    elif tag == "nre":
        res = train_nre(theta, x, cfg, rng, width=width, seed=seed)
    else:
        raise InvalidArgument(f"unknown weight mode {tag!r}")
    return SnisMode(tag, res.model), res


def run_route_b(task: Task, budget: int, mode: str, rng, beta_grid=BETA_GRID,
                surrogate_cfg: TrainConfig | None = None, npe_cfg: TrainConfig | None = None,
                n_components: int = 8, width: int = 128, seed: int = 0) -> RouteBResult:
    base = sample_base_joint(task, budget, child_stream(rng))
    snis, sur = train_surrogate(mode, base.theta, base.x, surrogate_cfg, child_stream(rng), width,
                                seed, task)
    table = build_weight_table(snis, base.theta, base.x, beta_grid)
    post = train_npe_route_b(base.theta, base.x, table, npe_cfg, child_stream(rng), n_components,
                             width, seed=seed)
    return RouteBResult(mode, sur, table, post, base.theta, base.x)


# ------------------------------------------------------ linear-Gaussian toy


@dataclass(frozen=True)
class LinearGaussianToy:
    """theta ~ N(0, tau^2), x | theta ~ N(theta, noise^2), both scalar.

    Every quantity the weighting arguments need is closed form here.
    """

    tau: float = 0.5
    noise: float = 1.0

    @property
    def marginal_var(self) -> float:
        return self.tau**2 + self.noise**2

    def sample(self, rng, n: int):
        theta = rng.normal(0.0, self.tau, size=(n, 1))
        return theta, theta + rng.normal(0.0, self.noise, size=(n, 1))

    def log_likelihood(self, theta, x) -> np.ndarray:
        return gaussian_log_pdf(np.atleast_2d(x) - np.atleast_2d(theta), 0.0, self.noise**2)

    def log_ratio(self, theta, x) -> np.ndarray:
        """log p(x | theta) - log p(x)."""
        return self.log_likelihood(theta, x) - gaussian_log_pdf(np.atleast_2d(x), 0.0,
                                                                self.marginal_var)

    def tempered_posterior(self, x: float, beta: float) -> tuple[float, float]:
        """Mean and variance of p_beta(theta | x)."""
        precision = 1.0 / self.tau**2 + beta / self.noise**2
        return beta * x / self.noise**2 / precision, 1.0 / precision

    def second_moment(self, beta: float) -> float:
        """E[w^2] for w = (p(x|theta)/p(x))^(beta-1) under the base joint.

        The integrand pi(theta) p(x|theta)^(2b-1) p(x)^(2-2b) is an
        unnormalized bivariate Gaussian; infinite when its precision is not
        positive definite.
        """
        a, b = 2 * beta - 1, 2 - 2 * beta
        t2, n2, m2 = self.tau**2, self.noise**2, self.marginal_var
        prec = np.array([[1 / t2 + a / n2, -a / n2], [-a / n2, a / n2 + b / m2]])
        if np.any(np.linalg.eigvalsh(prec) <= 0):
            return math.inf
        log_c = -0.5 * (math.log(2 * math.pi * t2) + a * math.log(2 * math.pi * n2)
                        + b * math.log(2 * math.pi * m2))
        return math.exp(log_c + math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(prec)))


@dataclass
class WeightVarianceRow:
    beta: float
    estimate: float
    standard_error: float
    exact: float

    @property
    def bounded(self) -> bool:
        return self.estimate <= 1.0 + 3.0 * self.standard_error


def verify_weight_variance(beta_values, n_mc: int, rng,
                           toy: LinearGaussianToy | None = None) -> list[WeightVarianceRow]:
    """Monte-Carlo E[w_beta^2] under the base joint with exact ratio weights."""
    toy = toy or LinearGaussianToy()
    theta, x = toy.sample(rng, n_mc)
    lr = toy.log_ratio(theta, x)
    rows = []
    for beta in beta_values:
        w2 = np.exp(2.0 * (beta - 1.0) * lr)
        rows.append(WeightVarianceRow(float(beta), float(w2.mean()),
                                      float(w2.std(ddof=1) / math.sqrt(n_mc)),
                                      toy.second_moment(beta)))
    return rows


@dataclass
class UnbiasednessRow:
    n: int
    batch_size: int
    full_objective: float
    global_expectation: float
    local_expectation: float
    unweighted_sum: float

    @property
    def global_error(self) -> float:
        return abs(self.global_expectation - self.full_objective)


def verify_minibatch_unbiasedness(n: int, batch_sizes, rng=None, weights=None,
                                  losses=None) -> list[UnbiasednessRow]:
    """Exact expectations of minibatch objectives over all size-b subsets.

    Global: ``(N/b) sum_B w~_i l_i``. Local: the same with weights
    renormalized inside each batch.
    """
    if n < 1 or n > 8:
        raise InvalidArgument("exact enumeration is limited to 1 <= N <= 8")
    if weights is None:
        weights = rng.uniform(0.05, 1.0, n)
    if losses is None:
        losses = rng.normal(size=n) ** 2 + 0.5
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    loss = np.asarray(losses, dtype=np.float64)
    if w.shape != (n,) or loss.shape != (n,):
        raise InvalidArgument("weights and losses need length N")
    full = float(np.sum(w * loss))
    rows = []
    for b in batch_sizes:
        if not 1 <= b <= n:
            raise InvalidArgument(f"batch size {b} outside [1, {n}]")
        glob, local = [], []
        for subset in itertools.combinations(range(n), b):
            idx = list(subset)
            glob.append(n / b * np.sum(w[idx] * loss[idx]))
            local.append(n / b * np.sum(w[idx] / w[idx].sum() * loss[idx]))
        rows.append(UnbiasednessRow(n, b, full, math.fsum(glob) / len(glob),
                                    math.fsum(local) / len(local), float(loss.sum())))
    return rows
