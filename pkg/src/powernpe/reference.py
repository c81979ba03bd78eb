"""Ground-truth samplers for power posteriors p_beta(theta | x) on the
benchmark tasks, plus the Robbins-Monro step-size adapter they share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InvalidArgument, NumericFailure
from .simulators import GaussianMixture, Lorenz96, Slcp, Task, TwoMoons, get_task

BETA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.5)


@dataclass
class ReferenceSampleSet:
    task: str
    beta: float
    x_obs: np.ndarray
    samples: np.ndarray
    acceptance: float
    extra: dict = field(default_factory=dict)


def robbins_monro_adapt(log_step, accept, target, iteration, gain=1.0, decay=0.6):
    """``log_step + gain / iteration**decay * (accept - target)``."""
    if iteration < 1:
        raise InvalidArgument("Robbins-Monro iteration counter starts at 1")
    return log_step + gain / iteration**decay * (np.asarray(accept, dtype=np.float64) - target)


def reflect(theta, low, high) -> np.ndarray:
    """Mirror values back into ``[low, high]`` (repeatedly, for long jumps)."""
    width = high - low
    y = np.mod(np.asarray(theta) - low, 2 * width)
    return low + np.where(y > width, 2 * width - y, y)


def _check_beta(beta):
    if not beta > 0:
        raise InvalidArgument(f"beta must be positive, got {beta}")


# ------------------------------------------------------------------ two moons


@dataclass
class TwoMoonsConfig:
    burn_in: int = 10_000
    keep_per_chain: int = 5_000
    thin: int = 2
    target_accept: float = 0.3
    initial_step: float = 0.05
    n_init: int = 2_000
    max_init_rounds: int = 20


def _init_opposite_sides(task, x_obs, cfg, rng):
    """Best prior draw on each side of the theta_1 + theta_2 = 0 fold."""
    starts = [None, None]
    for _ in range(cfg.max_init_rounds):
        cand = task.prior.sample(rng, cfg.n_init)
        ll = task.log_likelihood(cand, x_obs)
        side = cand[:, 0] + cand[:, 1] > 0
        for k, mask in enumerate((side, ~side)):
            ok = mask & np.isfinite(ll)
            if starts[k] is None and ok.any():
                starts[k] = cand[np.flatnonzero(ok)[np.argmax(ll[ok])]]
        if starts[0] is not None and starts[1] is not None:
            return np.stack(starts)
    raise NumericFailure("no prior draw with non-zero likelihood on both sides of the fold")


def reflected_rwmh(log_target, init, low, high, rng, burn_in: int, keep: int, thin: int = 1,
                   target_accept: float = 0.3, initial_step: float = 0.05):
    """Independent reflected random-walk MH chains, one per row of ``init``.

    Each chain has an isotropic Gaussian proposal whose log step size is
    Robbins-Monro adapted towards ``target_accept`` during burn-in and then
    frozen. ``log_target`` maps ``(C, d)`` to ``(C,)`` and may return -inf.
    Returns ``(samples (C, keep, d), post-burn-in acceptance, step sizes)``.
    """
    state = np.array(init, dtype=np.float64)
    n_chain, dim = state.shape
    lp = log_target(state)
    if not np.all(np.isfinite(lp)):
        raise InvalidArgument("chains must start where the target is positive")
    log_step = np.full(n_chain, math.log(initial_step))
    kept = np.empty((n_chain, keep, dim))
    n_acc = 0
    for it in range(burn_in + keep * thin):
        prop = reflect(state + np.exp(log_step)[:, None] * rng.normal(size=state.shape), low, high)
        lp_prop = log_target(prop)
        with np.errstate(invalid="ignore"):
            log_alpha = np.where(np.isfinite(lp_prop), lp_prop - lp, -np.inf)
        acc = np.log(rng.uniform(size=n_chain)) < log_alpha
        state = np.where(acc[:, None], prop, state)
        lp = np.where(acc, lp_prop, lp)
        if it < burn_in:
            log_step = robbins_monro_adapt(log_step, acc, target_accept, it + 1)
        else:
            n_acc += acc.sum()
            j = it - burn_in
            if (j + 1) % thin == 0:
                kept[:, j // thin] = state
    acceptance = n_acc / (n_chain * keep * thin) if keep else float("nan")
    return kept, float(acceptance), np.exp(log_step)


def sample_two_moons_reference(x_obs, beta, rng, cfg: TwoMoonsConfig | None = None) -> ReferenceSampleSet:
    """Tempered reflected random-walk MH with two chains, one per fold side."""
    cfg = cfg or TwoMoonsConfig()
    _check_beta(beta)
    task = TwoMoons()
    x_obs = np.asarray(x_obs, dtype=np.float64)
    init = _init_opposite_sides(task, x_obs, cfg, rng)
    kept, acceptance, steps = reflected_rwmh(
        lambda th: beta * task.log_likelihood(th, x_obs), init, task.prior.low, task.prior.high,
        rng, cfg.burn_in, cfg.keep_per_chain, cfg.thin, cfg.target_accept, cfg.initial_step)
    # interleave chains so any prefix covers both fold sides
    samples = kept.transpose(1, 0, 2).reshape(-1, 2)
    return ReferenceSampleSet(task.name, float(beta), x_obs, samples, acceptance,
                              {"step_sizes": steps.tolist()})


# ---------------------------------------------------------- gaussian mixture


def _gmm_envelope(beta, dim=2):
    """Component log-masses log K_beta(Sigma_i) and variances Sigma_i / beta."""
    log_k, variances = [], []
    for s in GaussianMixture.scales:
        var = s**2
        log_det = dim * math.log(var)
        log_k.append(dim * (1 - beta) / 2 * math.log(2 * math.pi) - dim / 2 * math.log(beta)
                     + (1 - beta) / 2 * log_det)
        variances.append(var / beta)
    return np.array(log_k), np.array(variances)


def sample_gmm_reference(x_obs, beta, n, rng, batch: int = 4096,
                         tolerance: float = 1e-9) -> ReferenceSampleSet:
    """Exact rejection sampler for the tempered Gaussian-mixture posterior.

    The envelope sum_i K_beta(S_i) N(theta; x, S_i / beta) dominates
    [0.5 N(theta; x, I) + 0.5 N(theta; x, 0.01 I)]^beta up to the constant
    0.5**min(beta, 1), by subadditivity (beta <= 1) or convexity (beta >= 1).
    """
    _check_beta(beta)
    task = GaussianMixture()
    x_obs = np.asarray(x_obs, dtype=np.float64)
    log_k, variances = _gmm_envelope(beta)
    comp_p = np.exp(log_k - np.logaddexp.reduce(log_k))
    log_bound = min(beta, 1.0) * math.log(0.5)
    out, n_prop = [], 0
    have = 0
    while have < n:
        comp = rng.choice(2, size=batch, p=comp_p)
        theta = x_obs + np.sqrt(variances[comp])[:, None] * rng.normal(size=(batch, 2))
        n_prop += batch
        inside = task.prior.contains(theta)
        theta = theta[inside]
        if theta.shape[0] == 0:
            continue
        sq = np.sum((theta - x_obs) ** 2, axis=1)
        log_env = np.logaddexp.reduce(
            log_k[None, :] - np.log(2 * math.pi * variances)[None, :] - sq[:, None] / (2 * variances[None, :]),
            axis=1)
        log_ratio = beta * task.log_likelihood(theta, x_obs) - log_env - log_bound
        if np.max(log_ratio) > tolerance:
            raise ConsistencyError(f"rejection envelope violated (log ratio {np.max(log_ratio):.3g})")
        acc = np.log(rng.uniform(size=theta.shape[0])) < log_ratio
        out.append(theta[acc])
        have += int(acc.sum())
    samples = np.concatenate(out)[:n]
    return ReferenceSampleSet(task.name, float(beta), x_obs, samples, have / n_prop)


# ---------------------------------------------------------------------- SLCP


@dataclass
class TemperingConfig:
    n_replicas: int = 200
    beta_min: float = 0.01
    iterations: int = 15_000
    burn_in: int = 5_000
    local_steps: int = 5
    swap_every: int = 2
    n_init: int = 2_048
    target_accept: float = 0.25
    initial_scale: float = 0.2


def geometric_ladder(beta_min, beta, n_replicas) -> np.ndarray:
    """Inverse temperatures from hot (``beta_min``) to cold (``beta``)."""
    if n_replicas < 1:
        raise InvalidArgument("ladder needs at least one replica")
    if n_replicas == 1:
        return np.array([float(beta)])
    if not 0 < beta_min < beta:
        raise InvalidArgument("ladder needs 0 < beta_min < beta")
    return beta_min * (beta / beta_min) ** (np.arange(n_replicas) / (n_replicas - 1))


def swap_log_acceptance(beta_lo, beta_hi, ll_lo, ll_hi):
    """Log acceptance for exchanging states between neighbouring replicas."""
    return (beta_hi - beta_lo) * (ll_lo - ll_hi)


def parallel_tempering(log_lik, prior, beta, rng, cfg: TemperingConfig | None = None):
    """Random-walk parallel tempering on a box prior.

    ``log_lik`` maps a ``(R, d)`` array to ``(R,)`` log-likelihoods. Returns the
    cold-chain states after burn-in, plus acceptance diagnostics.
    """
    cfg = cfg or TemperingConfig()
    _check_beta(beta)
    betas = geometric_ladder(cfg.beta_min, beta, cfg.n_replicas)
    R = betas.size
    cand = prior.sample(rng, max(cfg.n_init, R))
    cand_ll = log_lik(cand)
    order = np.argsort(cand_ll, kind="stable")[-R:]  # ascending: coldest gets the best
    state, ll = cand[order].copy(), cand_ll[order].copy()
    log_scale = np.log(cfg.initial_scale / np.sqrt(betas))
    local_acc = np.zeros(R)
    swap_acc, swap_try = np.zeros(max(R - 1, 1)), np.zeros(max(R - 1, 1))
    kept = np.empty((cfg.iterations - cfg.burn_in, prior.dim))
    local_count = 0
    swap_parity = 0
    for it in range(cfg.iterations):
        for _ in range(cfg.local_steps):
            local_count += 1
            prop = state + np.exp(log_scale)[:, None] * rng.normal(size=state.shape)
            inside = prior.contains(prop)
            ll_prop = np.full(R, -np.inf)
            if inside.any():
                ll_prop[inside] = log_lik(prop[inside])
            with np.errstate(invalid="ignore"):
                log_alpha = np.where(np.isfinite(ll_prop), betas * (ll_prop - ll), -np.inf)
            acc = np.log(rng.uniform(size=R)) < log_alpha
            state = np.where(acc[:, None], prop, state)
            ll = np.where(acc, ll_prop, ll)
            if it < cfg.burn_in:
                log_scale = robbins_monro_adapt(log_scale, acc, cfg.target_accept, local_count)
            else:
                local_acc += acc
        if R > 1 and (it + 1) % cfg.swap_every == 0:
            lo = np.arange(swap_parity, R - 1, 2)
            swap_parity ^= 1
            log_alpha = swap_log_acceptance(betas[lo], betas[lo + 1], ll[lo], ll[lo + 1])
            acc = np.log(rng.uniform(size=lo.size)) < log_alpha
            swap_try[lo] += 1
            swap_acc[lo] += acc
            a, b = lo[acc], lo[acc] + 1
            state[a], state[b] = state[b].copy(), state[a].copy()
            ll[a], ll[b] = ll[b].copy(), ll[a].copy()
        if it >= cfg.burn_in:
            kept[it - cfg.burn_in] = state[-1]
    n_post = (cfg.iterations - cfg.burn_in) * cfg.local_steps
    with np.errstate(invalid="ignore"):
        swap_rates = np.where(swap_try > 0, swap_acc / np.maximum(swap_try, 1), np.nan)
    return kept, {
        "cold_acceptance": float(local_acc[-1] / max(n_post, 1)),
        "mean_swap_acceptance": float(np.nanmean(swap_rates)) if R > 1 else float("nan"),
        "ladder": betas,
    }


def sample_slcp_reference(x_obs, beta, rng, cfg: TemperingConfig | None = None) -> ReferenceSampleSet:
    task = Slcp()
    x_obs = np.asarray(x_obs, dtype=np.float64)
    samples, info = parallel_tempering(lambda th: task.log_likelihood(th, x_obs), task.prior,
                                       beta, rng, cfg)
    extra = {"mean_swap_acceptance": info["mean_swap_acceptance"]}
    return ReferenceSampleSet(task.name, float(beta), x_obs, samples, info["cold_acceptance"], extra)


# ----------------------------------------------------------------- Lorenz-96


@dataclass
class AdaptiveMhConfig:
    n_init: int = 1_500
    tune: int = 6_000
    keep: int = 10_000
    target_accept: float = 0.3
    width_fraction: float = 1 / 6


def sample_lorenz96_reference(x_obs, beta, rng, cfg: AdaptiveMhConfig | None = None) -> ReferenceSampleSet:
    """Single-chain reflected random-walk MH with a tuned global step factor."""
    cfg = cfg or AdaptiveMhConfig()
    _check_beta(beta)
    task = Lorenz96()
    stats = task.sufficient_stats(x_obs)

    def log_lik(theta):
        return task.log_likelihood_from_stats(theta, stats)

    low, high = task.prior.low, task.prior.high
    cand = task.prior.sample(rng, cfg.n_init)
    cand_ll = log_lik(cand)
    best = int(np.argmax(cand_ll))
    state, ll = cand[best], cand_ll[best]
    base_scale = task.prior.width * cfg.width_fraction
    log_factor = 0.0
    kept = np.empty((cfg.keep, 3))
    n_acc = 0
    for it in range(cfg.tune + cfg.keep):
        prop = reflect(state + math.exp(log_factor) * base_scale * rng.normal(size=3), low, high)
        ll_prop = log_lik(prop[None])[0]
        acc = math.log(rng.uniform()) < beta * (ll_prop - ll)
        if acc:
            state, ll = prop, ll_prop
        if it < cfg.tune:
            log_factor = float(robbins_monro_adapt(log_factor, float(acc), cfg.target_accept, it + 1))
        else:
            n_acc += acc
            kept[it - cfg.tune] = state
    return ReferenceSampleSet(task.name, float(beta), np.asarray(x_obs, dtype=np.float64), kept,
                              n_acc / cfg.keep, {"step_factor": math.exp(log_factor)})


# ------------------------------------------------------------------ dispatch


def sample_reference(task: Task | str, x_obs, beta, rng, n: int = 10_000, **config) -> ReferenceSampleSet:
    """Run the task's reference sampler and return ``n`` draws.

    For the MCMC samplers ``n`` sets the number of retained states unless
    the corresponding config field is given explicitly.
    """
    name = task if isinstance(task, str) else task.name
    get_task(name)
    if x_obs is None:
        raise InvalidArgument("reference sampling needs an observation x_obs")
    if n < 1:
        raise InvalidArgument("need at least one reference draw")
    if name == "two-moons":
        config.setdefault("keep_per_chain", -(-n // 2))
        res = sample_two_moons_reference(x_obs, beta, rng, TwoMoonsConfig(**config))
        res.samples = res.samples[:n]
        return res
    if name == "gaussian-mixture":
        return sample_gmm_reference(x_obs, beta, n, rng, **config)
    if name == "slcp":
        config.setdefault("iterations", config.get("burn_in", TemperingConfig.burn_in) + n)
        return sample_slcp_reference(x_obs, beta, rng, TemperingConfig(**config))
    config.setdefault("keep", n)
    return sample_lorenz96_reference(x_obs, beta, rng, AdaptiveMhConfig(**config))
