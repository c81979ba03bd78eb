"""Dense numerics: seeded RNG streams, small MLPs, gradients, Adam, and
log-domain helpers.

Networks are torch modules held in float64. Parameters are initialised from
numpy generators so that a seed fully determines a model.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.spatial.distance import pdist
from scipy.special import logsumexp as _logsumexp
from torch import nn

from .errors import InvalidArgument, NumericFailure

DTYPE = torch.float64

_ACTIVATIONS = {
    "tanh": nn.Tanh,
    "relu": nn.ReLU,
    "identity": nn.Identity,
}


# ---------------------------------------------------------------- randomness


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``.

    Distinct stream ids spawn statistically independent PCG64 streams from
    one seed; the same pair always reproduces the same sequence.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def child_stream(rng: np.random.Generator) -> np.random.Generator:
    """Derive a fresh generator from ``rng`` (consumes one draw)."""
    return np.random.Generator(np.random.PCG64(int(rng.integers(2**63))))


def as_tensor(a) -> torch.Tensor:
    return torch.from_numpy(np.array(a, dtype=np.float64))


# ------------------------------------------------------------------ networks


def init_parameters(module: nn.Module, rng: np.random.Generator) -> None:
    """Uniform(+-1/sqrt(fan_in)) init for linear layers; LayerNorm to identity."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Linear):
                bound = 1.0 / math.sqrt(m.in_features)
                m.weight.copy_(as_tensor(rng.uniform(-bound, bound, m.weight.shape)))
                if m.bias is not None:
                    m.bias.copy_(as_tensor(rng.uniform(-bound, bound, m.bias.shape)))
            elif isinstance(m, nn.LayerNorm):
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)


class Mlp(nn.Module):
    """Plain feed-forward stack.

    ``activations`` names the nonlinearity after each linear layer; it defaults
    to tanh on hidden layers and identity on the output.
    """

    def __init__(self, widths: Sequence[int], activations: Sequence[str] | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidArgument(f"bad layer widths {widths}")
        n_layers = len(widths) - 1
        if activations is None:
            activations = ["tanh"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise InvalidArgument("one activation per layer required")
        self.widths = widths
        self.activations = list(activations)
        layers = []
        for i in range(n_layers):
            layers.append(nn.Linear(widths[i], widths[i + 1], dtype=DTYPE))
            layers.append(_ACTIVATIONS[self.activations[i]]())
        self.net = nn.Sequential(*layers)
        init_parameters(self, rng if rng is not None else rng_stream(0))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width, dtype=DTYPE)
        self.fc2 = nn.Linear(width, width, dtype=DTYPE)
        self.norm = nn.LayerNorm(width, eps=1e-5, dtype=DTYPE)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.norm(h + self.fc2(torch.tanh(self.fc1(h))))


class ResidualMlp(nn.Module):
    """Input projection, ``n_blocks`` residual blocks each followed by
    LayerNorm, then a linear read-out."""

    def __init__(self, in_dim: int, out_dim: int, width: int = 128, n_blocks: int = 3,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if min(in_dim, out_dim, width) < 1 or n_blocks < 0:
            raise InvalidArgument("bad residual MLP shape")
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.width, self.n_blocks = int(width), int(n_blocks)
        self.inp = nn.Linear(self.in_dim, self.width, dtype=DTYPE)
        self.blocks = nn.ModuleList(ResidualBlock(self.width) for _ in range(self.n_blocks))
        self.out = nn.Linear(self.width, self.out_dim, dtype=DTYPE)
        init_parameters(self, rng if rng is not None else rng_stream(0))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(self.inp(h))
        for block in self.blocks:
            h = block(h)
        return self.out(h)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def mlp_forward(net: nn.Module, inputs) -> np.ndarray:
    """Evaluate ``net`` on a vector or a batch of row vectors."""
    v = np.asarray(inputs, dtype=np.float64)
    if v.shape[-1] != net.in_dim:
        raise InvalidArgument(f"input dimension {v.shape[-1]} != {net.in_dim}")
    with torch.no_grad():
        return net(as_tensor(v)).numpy()


def mlp_gradient(net: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor]) -> list[np.ndarray]:
    """Reverse-mode gradient of the scalar ``loss_fn(net)`` w.r.t. every parameter."""
    params = [p for p in net.parameters()]
    loss = loss_fn(net)
    if loss.numel() != 1:
        raise InvalidArgument("loss must be scalar")
    if not torch.isfinite(loss):
        raise NumericFailure(f"non-finite loss {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [np.zeros(tuple(p.shape)) if g is None else g.detach().numpy().copy()
            for p, g in zip(params, grads)]


def finite_difference_gradient(net: nn.Module, loss_fn, step: float = 1e-5) -> list[np.ndarray]:
    """Central differences, one parameter entry at a time."""
    out = []
    with torch.no_grad():
        for p in net.parameters():
            flat = p.view(-1)
            g = np.empty(flat.numel())
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + step
                up = loss_fn(net).item()
                flat[j] = orig - step
                down = loss_fn(net).item()
                flat[j] = orig
                g[j] = (up - down) / (2 * step)
            out.append(g.reshape(tuple(p.shape)))
    return out


def gradient_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """max |analytic - numeric| scaled by the largest gradient magnitude."""
    a = np.concatenate([g.ravel() for g in analytic])
    f = np.concatenate([g.ravel() for g in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(f)), 1e-8)
    return float(np.max(np.abs(a - f)) / scale)


def gradient_check(n_cases: int = 100, seed: int = 0, step: float = 1e-5) -> list[float]:
    """Relative errors of autograd vs. central differences on random small nets.

    Cases alternate between plain tanh MLPs with a squared-error loss and
    residual MLPs with a Gaussian negative log-likelihood loss.
    """
    rng = rng_stream(seed, 101)
    errors = []
    for case in range(n_cases):
        d_in = int(rng.integers(1, 4))
        d_out = int(rng.integers(1, 4))
        width = int(rng.integers(2, 6))
        x = as_tensor(rng.normal(size=(3, d_in)))
        y = as_tensor(rng.normal(size=(3, d_out)))
        if case % 2 == 0:
            net = Mlp([d_in, width, width, d_out], rng=rng)

            def loss_fn(m):
                return 0.5 * ((m(x) - y) ** 2).sum()
        else:
            net = ResidualMlp(d_in, 2 * d_out, width=width, n_blocks=2, rng=rng)

            def loss_fn(m):
                out = m(x)
                mu, log_s = out[:, :d_out], out[:, d_out:]
                return (log_s + 0.5 * ((y - mu) * torch.exp(-log_s)) ** 2).sum()
        errors.append(gradient_relative_error(mlp_gradient(net, loss_fn),
                                              finite_difference_gradient(net, loss_fn, step)))
    return errors


# ---------------------------------------------------------------- optimiser


def make_adam(params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(list(params), lr=lr, betas=betas, eps=eps)


def adam_step(optimizer: torch.optim.Adam, grads: Sequence) -> None:
    """Apply one Adam update using externally supplied gradients."""
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if len(params) != len(grads):
        raise InvalidArgument(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        g = as_tensor(g)
        if tuple(g.shape) != tuple(p.shape):
            raise InvalidArgument(f"gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
        p.grad = g.clone()
    optimizer.step()


# --------------------------------------------------------------- log domain


def logsumexp(values, axis=None):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("logsumexp of empty input")
    return _logsumexp(v, axis=axis)


def gaussian_log_pdf(v, mean, cov) -> np.ndarray | float:
    """Log-density of N(mean, cov) at ``v`` (rows of ``v`` if 2-D).

    ``cov`` is either a vector of variances or a full covariance matrix.
    """
    v = np.asarray(v, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    diff = np.atleast_1d(v - mean)
    d = diff.shape[-1]
    if cov.ndim <= 1:
        var = np.broadcast_to(cov, (d,))
        if np.any(var <= 0):
            raise NumericFailure("variances must be positive")
        out = -0.5 * (d * math.log(2 * math.pi) + np.sum(np.log(var))
                      + np.sum(diff**2 / var, axis=-1))
    else:
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericFailure("covariance is not positive definite") from exc
        from scipy.linalg import solve_triangular

        z = solve_triangular(chol, diff.reshape(-1, d).T, lower=True)
        out = -0.5 * (d * math.log(2 * math.pi) + 2 * np.sum(np.log(np.diag(chol)))
                      + np.sum(z**2, axis=0))
        out = out.reshape(diff.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def median_pairwise_distance(samples) -> float:
    """Lower median of all pairwise Euclidean distances."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InvalidArgument("need at least two samples")
    d = pdist(x)
    k = (d.size - 1) // 2
    return float(np.partition(d, k)[k])
