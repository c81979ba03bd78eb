"""Benchmark tasks: box priors, simulators and exact log-likelihoods.

All operations are vectorised over a leading batch axis: ``theta`` has shape
``(n, theta_dim)`` and ``x`` has shape ``(n, x_dim)``.  Single vectors are
accepted and promoted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .numerics import gaussian_log_pdf

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class BoxPrior:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64).ravel()
        high = np.asarray(self.high, dtype=np.float64).ravel()
        if low.shape != high.shape or np.any(low >= high):
            raise InvalidArgument("box prior needs low < high in every dimension")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def width(self) -> np.ndarray:
        return self.high - self.low

    def sample(self, rng, n: int | None = None) -> np.ndarray:
        shape = (self.dim,) if n is None else (n, self.dim)
        return self.low + self.width * rng.uniform(0.0, 1.0, size=shape)

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        return np.all((theta >= self.low) & (theta <= self.high), axis=-1)

    def log_prob(self, theta):
        inside = self.contains(theta)
        return np.where(inside, -np.sum(np.log(self.width)), -np.inf)

    def grad_log_prob(self, theta) -> np.ndarray:
        # constant density: zero in the interior, boundary treated the same way
        return np.zeros_like(np.asarray(theta, dtype=np.float64))


@dataclass(frozen=True)
class JointSamples:
    """Paired draws from the base joint prior x simulator."""

    theta: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return self.theta.shape[0]


class Task:
    name: str = ""
    theta_dim: int = 0
    x_dim: int = 0
    prior: BoxPrior
    # parameter used to generate a default observation
    true_theta: np.ndarray

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if theta.shape[-1] != self.theta_dim:
            raise InvalidArgument(f"{self.name}: theta dimension {theta.shape[-1]} != {self.theta_dim}")
        return theta

    def _check_x(self, x, n: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[-1] != self.x_dim:
            raise InvalidArgument(f"{self.name}: x dimension {x.shape[-1]} != {self.x_dim}")
        if x.shape[0] not in (1, n):
            raise InvalidArgument("x batch does not match theta batch")
        return x

    def simulate(self, theta, rng) -> np.ndarray:
        theta = self._check_theta(theta)
        if not np.all(self.prior.contains(theta)):
            raise InvalidArgument(f"{self.name}: theta outside prior support")
        return self._simulate(theta, rng)

    def log_likelihood(self, theta, x) -> np.ndarray:
        theta = self._check_theta(theta)
        x = self._check_x(x, theta.shape[0])
        return self._log_likelihood(theta, x)

    def _simulate(self, theta, rng):
        raise NotImplementedError

    def _log_likelihood(self, theta, x):
        raise NotImplementedError

    def observation(self, rng) -> np.ndarray:
        """Simulated observation at the task's fixed ``true_theta``."""
        return self.simulate(self.true_theta, rng)[0]


class TwoMoons(Task):
    name = "two-moons"
    theta_dim = 2
    x_dim = 2

    def __init__(self):
        self.prior = BoxPrior(-np.ones(2), np.ones(2))
        self.true_theta = np.array([0.3, 0.3])

    @staticmethod
    def offset(theta) -> np.ndarray:
        t1, t2 = theta[..., 0], theta[..., 1]
        return np.stack([-np.abs(t1 + t2) / math.sqrt(2), (-t1 + t2) / math.sqrt(2)], axis=-1)

    def _simulate(self, theta, rng):
        n = theta.shape[0]
        alpha = rng.uniform(-math.pi / 2, math.pi / 2, size=n)
        r = rng.normal(0.1, 0.01, size=n)
        p = np.stack([r * np.cos(alpha) + 0.25, r * np.sin(alpha)], axis=-1)
        return p + self.offset(theta)

    def _log_likelihood(self, theta, x):
        u = x - self.offset(theta)
        u[..., 0] -= 0.25
        r = np.hypot(u[..., 0], u[..., 1])
        valid = u[..., 0] > 0
        with np.errstate(divide="ignore"):
            lp = (-0.5 * LOG_2PI - math.log(0.01) - 0.5 * ((r - 0.1) / 0.01) ** 2
                  - math.log(math.pi) - np.log(r))
        return np.where(valid, lp, -np.inf)


class GaussianMixture(Task):
    name = "gaussian-mixture"
    theta_dim = 2
    x_dim = 2
    scales = (1.0, 0.1)

    def __init__(self):
        self.prior = BoxPrior(-np.ones(2), np.ones(2))
        self.true_theta = np.array([0.25, -0.4])

    def _simulate(self, theta, rng):
        n = theta.shape[0]
        wide = rng.uniform(size=n) < 0.5
        scale = np.where(wide, self.scales[0], self.scales[1])[:, None]
        return theta + scale * rng.normal(size=theta.shape)

    def _log_likelihood(self, theta, x):
        diff = x - theta
        comps = [math.log(0.5) + gaussian_log_pdf(diff, np.zeros(2), np.full(2, s**2))
                 for s in self.scales]
        return np.logaddexp(*comps)


class Slcp(Task):
    name = "slcp"
    theta_dim = 5
    x_dim = 8
    scale_floor = 1e-8

    def __init__(self):
        self.prior = BoxPrior(-3 * np.ones(5), 3 * np.ones(5))
        self.true_theta = np.array([0.7, -2.9, -1.0, -0.9, 0.6])

    def _moments(self, theta):
        s1 = np.maximum(theta[:, 2] ** 2, self.scale_floor)
        s2 = np.maximum(theta[:, 3] ** 2, self.scale_floor)
        rho = np.tanh(theta[:, 4])
        return theta[:, 0], theta[:, 1], s1, s2, rho

    def _simulate(self, theta, rng):
        m1, m2, s1, s2, rho = self._moments(theta)
        z = rng.normal(size=(theta.shape[0], 4, 2))
        a = m1[:, None] + s1[:, None] * z[..., 0]
        b = m2[:, None] + s2[:, None] * (rho[:, None] * z[..., 0]
                                         + np.sqrt(1 - rho[:, None] ** 2) * z[..., 1])
        return np.stack([a, b], axis=-1).reshape(theta.shape[0], 8)

    def _log_likelihood(self, theta, x):
        m1, m2, s1, s2, rho = (v[:, None] for v in self._moments(theta))
        pairs = x.reshape(x.shape[0], 4, 2)
        z1 = (pairs[..., 0] - m1) / s1
        z2 = (pairs[..., 1] - m2) / s2
        one_m = 1 - rho**2
        q = (z1**2 - 2 * rho * z1 * z2 + z2**2) / one_m
        lp = -LOG_2PI - np.log(s1) - np.log(s2) - 0.5 * np.log(one_m) - 0.5 * q
        return lp.sum(axis=1)


class Lorenz96(Task):
    """Stochastic Lorenz-96 with linear damping ``b0 + b1 x`` and additive
    noise.

    Each step of length ``dt`` is split: the parameter-free advection and
    forcing are advanced with RK4 (``flow_substeps`` substeps), then the
    damping and noise are applied as an Euler-Maruyama step,

        x_{t+1} = flow(x_t) - dt (b0 + b1 x_t) + sigma_e sqrt(dt) eps.

    A plain Euler step of the full drift at this ``dt`` is unstable for
    Lorenz-96; the split keeps transitions Gaussian with a mean affine in
    (b0, b1), so the likelihood still reduces to sufficient statistics.

    theta = (b0, b1, sigma_e); the observation is the flattened trajectory
    ``(x_0, ..., x_T)`` including the fixed initial state.
    """

    name = "lorenz96"
    theta_dim = 3
    n_state = 8
    n_steps = 20
    dt = 3 / 40
    forcing = 10.0
    flow_substeps = 2
    x_dim = (n_steps + 1) * n_state

    def __init__(self):
        self.prior = BoxPrior(np.array([1.4, 0.1, 1.5]), np.array([2.2, 1.0, 2.5]))
        self.true_theta = np.array([1.8, 0.5, 2.0])

    def base_drift(self, state) -> np.ndarray:
        """Parameter-free part of the drift, cyclic in the last axis."""
        xm1 = np.roll(state, 1, axis=-1)
        xm2 = np.roll(state, 2, axis=-1)
        xp1 = np.roll(state, -1, axis=-1)
        return -xm1 * (xm2 - xp1) - state + self.forcing

    def flow(self, state) -> np.ndarray:
        """RK4 solution of the parameter-free dynamics over one ``dt``."""
        h = self.dt / self.flow_substeps
        for _ in range(self.flow_substeps):
            k1 = self.base_drift(state)
            k2 = self.base_drift(state + h / 2 * k1)
            k3 = self.base_drift(state + h / 2 * k2)
            k4 = self.base_drift(state + h * k3)
            state = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return state

    def _simulate(self, theta, rng):
        n = theta.shape[0]
        b0, b1, sig = (theta[:, i : i + 1] for i in range(3))
        traj = np.empty((n, self.n_steps + 1, self.n_state))
        state = np.ones((n, self.n_state))
        traj[:, 0] = state
        root_dt = math.sqrt(self.dt)
        for t in range(self.n_steps):
            state = (self.flow(state) - self.dt * (b0 + b1 * state)
                     + sig * root_dt * rng.normal(size=state.shape))
            traj[:, t + 1] = state
        return traj.reshape(n, self.x_dim)

    def sufficient_stats(self, x) -> np.ndarray:
        """Per-trajectory statistics making the likelihood O(1) in theta.

        With ``y = (x_{t+1} - flow(x_t))/dt`` and ``z = x_t`` the scaled
        residual is ``y + b0 + b1 z``; returned columns are
        ``(count, sum y^2, sum y, sum y z, sum z, sum z^2)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        traj = x.reshape(x.shape[0], self.n_steps + 1, self.n_state)
        z = traj[:, :-1]
        y = (traj[:, 1:] - self.flow(z)) / self.dt
        axes = (1, 2)
        count = np.full(x.shape[0], float(self.n_steps * self.n_state))
        return np.stack([count, (y * y).sum(axes), y.sum(axes), (y * z).sum(axes),
                         z.sum(axes), (z * z).sum(axes)], axis=-1)

    def log_likelihood_from_stats(self, theta, stats) -> np.ndarray:
        theta = self._check_theta(theta)
        stats = np.atleast_2d(stats)
        n, syy, sy, syz, sz, szz = (stats[:, i] for i in range(6))
        b0, b1, sig = theta[:, 0], theta[:, 1], theta[:, 2]
        quad = (syy + 2 * b0 * sy + 2 * b1 * syz + n * b0**2
                + 2 * b0 * b1 * sz + b1**2 * szz)
        var = sig**2 * self.dt
        return -0.5 * n * (LOG_2PI + np.log(var)) - self.dt * quad / (2 * sig**2)

    def _log_likelihood(self, theta, x):
        return self.log_likelihood_from_stats(theta, self.sufficient_stats(x))

    def standardized_residuals(self, theta, x) -> np.ndarray:
        """Per-transition residuals; N(0, 1) under the true parameters."""
        theta = self._check_theta(theta)
        x = np.atleast_2d(x)
        traj = x.reshape(x.shape[0], self.n_steps + 1, self.n_state)
        z = traj[:, :-1]
        b0, b1, sig = (theta[:, i, None, None] for i in range(3))
        mean = self.flow(z) - self.dt * (b0 + b1 * z)
        return (traj[:, 1:] - mean) / (sig * math.sqrt(self.dt))


TASKS = {cls.name: cls for cls in (TwoMoons, GaussianMixture, Slcp, Lorenz96)}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]()
    except KeyError:
        raise InvalidArgument(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def sample_base_joint(task: Task, n: int, rng) -> JointSamples:
    """``n`` i.i.d. pairs with theta from the prior and x from the simulator."""
    if n < 1:
        raise InvalidArgument("need n >= 1 joint samples")
    theta = task.prior.sample(rng, n)
    return JointSamples(theta, task.simulate(theta, rng))
