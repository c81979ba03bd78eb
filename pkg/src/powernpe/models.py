"""Learnable densities and their training loops.

* :class:`MdnModel` - conditional mixture of diagonal Gaussians, used both as
  the temperature-conditioned posterior q(theta | x, beta) and as the
  likelihood surrogate of NLE.
* :class:`ScoreNetwork` - noise-conditioned joint score s(theta, x, sigma).
* :class:`RatioClassifier` - joint-vs-marginal classifier whose logit is the
  log density ratio log p(x | theta) / p(x).

Every model standardises its inputs with statistics fitted at training time;
those statistics live in registered buffers and are persisted with the
weights.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import InvalidArgument, IOFailure, NumericFailure
from .numerics import DTYPE, Mlp, ResidualMlp, as_tensor, make_adam, rng_stream

log = logging.getLogger(__name__)

LOG_SCALE_MIN, LOG_SCALE_MAX = -7.0, 4.0
LOGIT_CLAMP = 30.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 50
    validation_fraction: float = 0.1
    # gradient-norm clip, off by default: clipping the rare minibatches that
    # carry large importance weights would bias the weighted objective
    clip_norm: float = 0.0
    # halve the learning rate after this many epochs without improvement; 0 disables
    plateau_patience: int = 0
    plateau_factor: float = 0.5


@dataclass
class TrainResult:
    model: nn.Module
    train_loss: list = field(default_factory=list)
    validation_loss: list = field(default_factory=list)
    best_epoch: int = 0


def _fit_scale(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


class _Standardized(nn.Module):
    def _register(self, name: str, dim: int):
        self.register_buffer(f"{name}_mean", torch.zeros(dim, dtype=DTYPE))
        self.register_buffer(f"{name}_std", torch.ones(dim, dtype=DTYPE))

    def _set(self, name: str, data: np.ndarray):
        mean, std = _fit_scale(np.asarray(data, dtype=np.float64))
        getattr(self, f"{name}_mean").copy_(as_tensor(mean))
        getattr(self, f"{name}_std").copy_(as_tensor(std))


# ------------------------------------------------------------------ mixtures


def mixture_log_prob(logits: torch.Tensor, means: torch.Tensor, log_scales: torch.Tensor,
                     target: torch.Tensor) -> torch.Tensor:
    """log sum_m softmax(logits)_m N(target; means_m, diag exp(2 log_scales_m)).

    Shapes: logits (n, M), means/log_scales (n, M, d), target (n, d).
    """
    z = (target[:, None, :] - means) * torch.exp(-log_scales)
    comp = -(0.5 * z**2 + log_scales + _HALF_LOG_2PI).sum(-1)
    return torch.logsumexp(torch.log_softmax(logits, -1) + comp, dim=-1)


class MdnModel(_Standardized):
    """Conditional mixture density network with a residual-MLP trunk."""

    kind = "mdn"

    def __init__(self, context_dim: int, target_dim: int, n_components: int = 8,
                 width: int = 128, n_blocks: int = 3, seed: int = 0):
        super().__init__()
        if min(context_dim, target_dim, n_components) < 1:
            raise InvalidArgument("MDN dimensions must be positive")
        self.context_dim, self.target_dim = int(context_dim), int(target_dim)
        self.n_components, self.width, self.n_blocks = int(n_components), int(width), int(n_blocks)
        self.seed = int(seed)
        out = self.n_components * (1 + 2 * self.target_dim)
        self.trunk = ResidualMlp(self.context_dim, out, self.width, self.n_blocks,
                                 rng=rng_stream(self.seed, 11))
        self._register("context", self.context_dim)
        self._register("target", self.target_dim)

    def config(self) -> dict:
        return dict(context_dim=self.context_dim, target_dim=self.target_dim,
                    n_components=self.n_components, width=self.width,
                    n_blocks=self.n_blocks, seed=self.seed)

    def fit_standardization(self, context, target):
        self._set("context", context)
        self._set("target", target)
        # a context column that never varied carries no information; an
        # infinite scale maps it to exactly zero whatever value is queried
        flat = np.asarray(context, dtype=np.float64).std(axis=0) <= 1e-12
        self.context_std[torch.as_tensor(flat)] = math.inf

    def mixture_parameters(self, context: torch.Tensor):
        """Mixture logits, means and log-scales in standardised target units."""
        c = (context - self.context_mean) / self.context_std
        h = self.trunk(c)
        M, d = self.n_components, self.target_dim
        logits = h[:, :M]
        means = h[:, M : M + M * d].reshape(-1, M, d)
        log_scales = h[:, M + M * d :].reshape(-1, M, d).clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)
        return logits, means, log_scales

    def log_prob_tensor(self, context: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        logits, means, log_scales = self.mixture_parameters(context)
        t = (target - self.target_mean) / self.target_std
        return mixture_log_prob(logits, means, log_scales, t) - torch.log(self.target_std).sum()

    def _check(self, context, target=None):
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        if context.shape[-1] != self.context_dim:
            raise InvalidArgument(f"context dimension {context.shape[-1]} != {self.context_dim}")
        if target is None:
            return context
        target = np.atleast_2d(np.asarray(target, dtype=np.float64))
        if target.shape[-1] != self.target_dim:
            raise InvalidArgument(f"target dimension {target.shape[-1]} != {self.target_dim}")
        if context.shape[0] == 1 and target.shape[0] > 1:
            context = np.repeat(context, target.shape[0], axis=0)
        return context, target

    def log_prob(self, context, target) -> np.ndarray:
        context, target = self._check(context, target)
        with torch.no_grad():
            lp = self.log_prob_tensor(as_tensor(context), as_tensor(target)).numpy()
        if not np.all(np.isfinite(lp)):
            raise NumericFailure("non-finite MDN log-probability")
        return lp

    def sample(self, context, n: int, rng) -> np.ndarray:
        """``n`` draws of the target for one context vector."""
        context = self._check(context)
        if context.shape[0] != 1:
            raise InvalidArgument("sample takes a single context vector")
        with torch.no_grad():
            logits, means, log_scales = self.mixture_parameters(as_tensor(context))
            weights = torch.softmax(logits, -1)[0].numpy()
            means, scales = means[0].numpy(), torch.exp(log_scales[0]).numpy()
        weights = weights / weights.sum()
        comp = rng.choice(self.n_components, size=n, p=weights)
        z = means[comp] + scales[comp] * rng.normal(size=(n, self.target_dim))
        return self.target_mean.numpy() + self.target_std.numpy() * z


def _loss_is_bad(loss: torch.Tensor) -> bool:
    return not bool(torch.isfinite(loss))


def _split(n: int, fraction: float, rng):
    perm = rng.permutation(n)
    n_val = int(round(fraction * n)) if n >= 10 else 0
    return perm[n_val:], perm[:n_val]


def _fit(model: nn.Module, n: int, batch_loss, eval_loss, cfg: TrainConfig, rng,
         val_idx: np.ndarray, train_idx: np.ndarray) -> TrainResult:
    """Minibatch Adam with early stopping on ``eval_loss(val_idx)``.

    ``batch_loss(idx)`` returns the scalar training loss of a minibatch.
    Restores the best-validation parameters before returning.
    """
    opt = make_adam(model.parameters(), lr=cfg.learning_rate)
    result = TrainResult(model)
    best, best_state, stale = math.inf, copy.deepcopy(model.state_dict()), 0
    since_cut = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_idx)
        total, count = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = batch_loss(idx)
            if _loss_is_bad(loss):
                model.load_state_dict(best_state)
                raise NumericFailure(f"non-finite training loss at epoch {epoch}", model=model)
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm > 0:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            total += loss.item() * idx.size
            count += idx.size
        result.train_loss.append(total / max(count, 1))
        with torch.no_grad():
            val = eval_loss(val_idx) if val_idx.size else None
        val = result.train_loss[-1] if val is None else float(val)
        if not math.isfinite(val):
            model.load_state_dict(best_state)
            raise NumericFailure(f"non-finite validation loss at epoch {epoch}", model=model)
        result.validation_loss.append(val)
        log.debug("epoch %d train %.5f validation %.5f", epoch, result.train_loss[-1], val)
        if val < best:
            best, best_state, stale, since_cut = val, copy.deepcopy(model.state_dict()), 0, 0
            result.best_epoch = epoch
        else:
            stale += 1
            since_cut += 1
            if stale >= cfg.patience:
                break
            if cfg.plateau_patience and since_cut >= cfg.plateau_patience:
                for group in opt.param_groups:
                    group["lr"] *= cfg.plateau_factor
                since_cut = 0
    model.load_state_dict(best_state)
    return result


def train_mdn(model: MdnModel, context, target, weights=None, cfg: TrainConfig | None = None,
              rng=None) -> TrainResult:
    """Weighted maximum likelihood for an MDN.

    Weights are rescaled to mean one over all records, so a minibatch loss
    ``mean_B(w_i * nll_i)`` equals ``(N/|B|) sum_B w~_i nll_i`` for the
    globally normalised ``w~``; weights are never renormalised per batch.
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else rng_stream(0)
    context, target = model._check(context, target)
    n = target.shape[0]
    if context.shape[0] != n:
        raise InvalidArgument("context and target record counts differ")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not np.any(w > 0) or not np.all(np.isfinite(w)):
        raise InvalidArgument("weights must be finite, non-negative and not all zero")
    w = w * (n / w.sum())
    model.fit_standardization(context, target)
    c, t, wt = as_tensor(context), as_tensor(target), as_tensor(w)
    train_idx, val_idx = _split(n, cfg.validation_fraction, rng)
    if val_idx.size and w[val_idx].sum() <= 0:
        train_idx, val_idx = np.arange(n), np.array([], dtype=int)

    def batch_loss(idx):
        idx = torch.as_tensor(idx)
        return -(wt[idx] * model.log_prob_tensor(c[idx], t[idx])).mean()

    def eval_loss(idx):
        idx = torch.as_tensor(idx)
        return -(wt[idx] * model.log_prob_tensor(c[idx], t[idx])).sum() / wt[idx].sum()

    return _fit(model, n, batch_loss, eval_loss, cfg, rng, val_idx, train_idx)


def train_nle(theta, x, cfg: TrainConfig | None = None, rng=None, n_components: int = 10,
              width: int = 128, n_blocks: int = 3, seed: int = 0) -> TrainResult:
    """Neural likelihood p(x | theta) as an MDN with context theta."""
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    model = MdnModel(theta.shape[1], x.shape[1], n_components, width, n_blocks, seed)
    return train_mdn(model, theta, x, None, cfg, rng)


# ------------------------------------------------------------ noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    n_levels: int = 10
    gamma_min: float = 0.01
    gamma_max: float = 1.0

    def __post_init__(self):
        if self.n_levels < 1 or not 0 < self.gamma_min < self.gamma_max:
            raise InvalidArgument("bad noise schedule")

    @property
    def gammas(self) -> np.ndarray:
        """Geometric, increasing from gamma_min to gamma_max."""
        return np.geomspace(self.gamma_min, self.gamma_max, self.n_levels)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.gammas)


# ------------------------------------------------------------- score network


class ScoreNetwork(_Standardized):
    """s(theta, x, sigma) from embeddings [e_theta, e_x, e_sigma] fused by a
    residual MLP.

    The noise embedding takes log(sigma). The fused output is divided by
    sigma, so the raw network predicts a unit-scale noise direction. Scores
    are in standardised joint coordinates (``joint_mean``/``joint_std``).
    """

    kind = "score"

    def __init__(self, theta_dim: int, x_dim: int, width: int = 128, n_blocks: int = 3,
                 seed: int = 0):
        super().__init__()
        self.theta_dim, self.x_dim = int(theta_dim), int(x_dim)
        self.width, self.n_blocks, self.seed = int(width), int(n_blocks), int(seed)
        w = self.width
        self.embed_theta = ResidualMlp(self.theta_dim, w, w, n_blocks, rng=rng_stream(seed, 21))
        self.embed_x = ResidualMlp(self.x_dim, w, w, n_blocks, rng=rng_stream(seed, 22))
        self.embed_sigma = Mlp([1, w, w], ["tanh", "tanh"], rng=rng_stream(seed, 23))
        self.fuse = ResidualMlp(3 * w, self.dim, w, n_blocks, rng=rng_stream(seed, 24))
        self._register("joint", self.dim)

    @property
    def dim(self) -> int:
        return self.theta_dim + self.x_dim

    def config(self) -> dict:
        return dict(theta_dim=self.theta_dim, x_dim=self.x_dim, width=self.width,
                    n_blocks=self.n_blocks, seed=self.seed)

    def forward(self, v: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        sigma = sigma.reshape(-1, 1).expand(v.shape[0], 1)
        h = torch.cat([self.embed_theta(v[:, : self.theta_dim]),
                       self.embed_x(v[:, self.theta_dim :]),
                       self.embed_sigma(torch.log(sigma))], dim=-1)
        return self.fuse(h) / sigma

    def score(self, v, sigma) -> np.ndarray:
        """Score at standardised joint points ``v`` (n, d) and noise level ``sigma``."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if v.shape[-1] != self.dim:
            raise InvalidArgument(f"joint dimension {v.shape[-1]} != {self.dim}")
        with torch.no_grad():
            return self(as_tensor(v), as_tensor(np.broadcast_to(sigma, (v.shape[0],)))).numpy()

    def standardize(self, theta, x) -> np.ndarray:
        v = np.concatenate([np.atleast_2d(theta), np.atleast_2d(x)], axis=1)
        return (v - self.joint_mean.numpy()) / self.joint_std.numpy()

    def unstandardize(self, v) -> tuple[np.ndarray, np.ndarray]:
        raw = v * self.joint_std.numpy() + self.joint_mean.numpy()
        return raw[:, : self.theta_dim], raw[:, self.theta_dim :]


def dsm_loss(score_fn, theta, x, sigma, eps) -> torch.Tensor:
    """Per-sample ``||s(v + sigma eps, sigma) + eps / sigma||^2 / sigma``.

    ``theta``, ``x`` and ``eps`` are tensors with matching batch size;
    ``sigma`` is a scalar or per-sample tensor.
    """
    sigma = torch.as_tensor(sigma, dtype=DTYPE)
    if torch.any(sigma <= 0):
        raise InvalidArgument("noise level must be positive")
    v = torch.cat([theta, x], dim=-1)
    sig = sigma.reshape(-1, 1) if sigma.ndim else sigma
    noisy = v + sig * eps
    resid = score_fn(noisy, sigma) + eps / sig
    return (resid**2).sum(-1) / sigma


@dataclass
class ScoreTrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 200
    standardize: bool = True
    clip_norm: float = 5.0
    # cosine decay of the learning rate down to this fraction by the last epoch
    final_lr_fraction: float = 0.01


def train_score(theta, x, schedule: NoiseSchedule | None = None,
                cfg: ScoreTrainConfig | None = None, rng=None, width: int = 128,
                n_blocks: int = 3, seed: int = 0) -> TrainResult:
    """Denoising score matching with sigma drawn uniformly from the schedule."""
    schedule = schedule or NoiseSchedule()
    cfg = cfg or ScoreTrainConfig()
    rng = rng if rng is not None else rng_stream(0)
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    n = theta.shape[0]
    if n == 0 or x.shape[0] != n:
        raise InvalidArgument("score training needs a non-empty paired dataset")
    net = ScoreNetwork(theta.shape[1], x.shape[1], width, n_blocks, seed)
    if cfg.standardize:
        net._set("joint", np.concatenate([theta, x], axis=1))
    v = as_tensor(net.standardize(theta, x))
    sigmas = schedule.sigmas
    opt = make_adam(net.parameters(), lr=cfg.learning_rate)
    result = TrainResult(net)
    d_theta = theta.shape[1]
    for epoch in range(cfg.epochs):
        frac = 0.5 * (1.0 + np.cos(np.pi * epoch / max(cfg.epochs - 1, 1)))
        for group in opt.param_groups:
            group["lr"] = cfg.learning_rate * (cfg.final_lr_fraction
                                               + (1.0 - cfg.final_lr_fraction) * frac)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            sig = as_tensor(sigmas[rng.integers(0, sigmas.size, idx.size)])
            eps = as_tensor(rng.normal(size=(idx.size, v.shape[1])))
            vb = v[torch.as_tensor(idx)]
            loss = dsm_loss(net, vb[:, :d_theta], vb[:, d_theta:], sig, eps).mean()
            if _loss_is_bad(loss):
                raise NumericFailure(f"non-finite score loss at epoch {epoch}", model=net)
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm > 0:
                nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_norm)
            opt.step()
            total += loss.item() * idx.size
        result.train_loss.append(total / n)
    result.best_epoch = cfg.epochs - 1
    return result


# --------------------------------------------------------- ratio classifier


class RatioClassifier(_Standardized):
    """d(theta, x) = sigmoid(logit); log r = logit, clamped to +-30."""

    kind = "ratio"

    def __init__(self, theta_dim: int, x_dim: int, width: int = 128, n_blocks: int = 3,
                 seed: int = 0):
        super().__init__()
        self.theta_dim, self.x_dim = int(theta_dim), int(x_dim)
        self.width, self.n_blocks, self.seed = int(width), int(n_blocks), int(seed)
        self.net = ResidualMlp(self.theta_dim + self.x_dim, 1, self.width, self.n_blocks,
                               rng=rng_stream(seed, 31))
        self._register("theta", self.theta_dim)
        self._register("x", self.x_dim)

    def config(self) -> dict:
        return dict(theta_dim=self.theta_dim, x_dim=self.x_dim, width=self.width,
                    n_blocks=self.n_blocks, seed=self.seed)

    def logit_tensor(self, theta: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        h = torch.cat([(theta - self.theta_mean) / self.theta_std,
                       (x - self.x_mean) / self.x_std], dim=-1)
        return self.net(h)[:, 0].clamp(-LOGIT_CLAMP, LOGIT_CLAMP)

    def log_ratio(self, theta, x) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if theta.shape[-1] != self.theta_dim or x.shape[-1] != self.x_dim:
            raise InvalidArgument("ratio classifier input dimension mismatch")
        if x.shape[0] == 1 and theta.shape[0] > 1:
            x = np.repeat(x, theta.shape[0], axis=0)
        with torch.no_grad():
            return self.logit_tensor(as_tensor(theta), as_tensor(x)).numpy()

    def probability(self, theta, x) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_ratio(theta, x)))


def train_nre(theta, x, cfg: TrainConfig | None = None, rng=None, negatives=None,
              width: int = 128, n_blocks: int = 3, seed: int = 0) -> TrainResult:
    """Binary cross-entropy between joint pairs and marginal pairs.

    Without explicit ``negatives`` each minibatch pairs its thetas with a
    shuffled copy of its xs. Explicit negatives must match the positives in
    count (equal class priors).
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else rng_stream(0)
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = theta.shape[0]
    if x.shape[0] != n or n < 2:
        raise InvalidArgument("need at least two paired records")
    if negatives is not None:
        neg_theta, neg_x = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in negatives)
        if neg_theta.shape[0] != n or neg_x.shape[0] != n:
            raise InvalidArgument("positives and negatives must be equal in number")
    model = RatioClassifier(theta.shape[1], x.shape[1], width, n_blocks, seed)
    model._set("theta", theta)
    model._set("x", x)
    th, xt = as_tensor(theta), as_tensor(x)
    if negatives is not None:
        nth, nxt = as_tensor(neg_theta), as_tensor(neg_x)
    train_idx, val_idx = _split(n, cfg.validation_fraction, rng)
    val_perm = torch.as_tensor(rng.permutation(val_idx)) if val_idx.size else None
    bce = nn.functional.binary_cross_entropy_with_logits

    def loss_for(idx, neg_idx):
        pos = model.logit_tensor(th[idx], xt[idx])
        if negatives is not None:
            neg = model.logit_tensor(nth[idx], nxt[idx])
        else:
            neg = model.logit_tensor(th[idx], xt[neg_idx])
        return bce(pos, torch.ones_like(pos)) + bce(neg, torch.zeros_like(neg))

    def batch_loss(idx):
        idx_t = torch.as_tensor(idx)
        return loss_for(idx_t, torch.as_tensor(rng.permutation(idx)))

    def eval_loss(idx):
        return loss_for(torch.as_tensor(idx), val_perm)

    return _fit(model, n, batch_loss, eval_loss, cfg, rng, val_idx, train_idx)


# ---------------------------------------------------------------- posterior


def posterior_context(x, beta) -> np.ndarray:
    """Context rows [x, beta] for a temperature-conditioned posterior."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (x.shape[0],))
    return np.concatenate([x, beta[:, None]], axis=1)


def sample_posterior(model: MdnModel, x_obs, beta, n: int, rng, prior=None,
                     max_rounds: int = 100) -> np.ndarray:
    """Draw ``n`` samples of q(theta | x_obs, beta).

    With a ``prior``, draws outside its support are discarded and redrawn.
    """
    context = posterior_context(x_obs, beta)
    if prior is None:
        return model.sample(context, n, rng)
    out, have = [], 0
    for _ in range(max_rounds):
        draw = model.sample(context, max(n - have, 64) * 2, rng)
        draw = draw[prior.contains(draw)]
        out.append(draw)
        have += draw.shape[0]
        if have >= n:
            return np.concatenate(out)[:n]
    raise NumericFailure("posterior puts almost no mass inside the prior support")


# -------------------------------------------------------------- persistence

FORMAT = "powernpe-model"
FORMAT_VERSION = 1
_KINDS = {cls.kind: cls for cls in (MdnModel, ScoreNetwork, RatioClassifier)}


def save_model(model: nn.Module, path) -> None:
    """JSON document: architecture descriptor plus every parameter and buffer."""
    doc = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config(),
        "state": {name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
                  for name, t in model.state_dict().items()},
    }
    try:
        Path(path).write_text(json.dumps(doc))
    except OSError as exc:
        raise IOFailure(f"cannot write model {path}: {exc}") from exc


def load_model(path) -> nn.Module:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise IOFailure(f"cannot read model {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: not a version-{FORMAT_VERSION} {FORMAT} document")
    model = _KINDS[doc["kind"]](**doc["config"])
    state = {name: torch.tensor(v["data"], dtype=DTYPE).reshape(v["shape"])
             for name, v in doc["state"].items()}
    model.load_state_dict(state)
    return model


def trainconfig_dict(cfg) -> dict:
    return asdict(cfg)
