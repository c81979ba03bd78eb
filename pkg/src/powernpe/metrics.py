"""Two-sample discrepancies between model draws and reference draws."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.neural_network import MLPClassifier

from .errors import InvalidArgument
from .models import sample_posterior
from .numerics import median_pairwise_distance

log = logging.getLogger(__name__)


def _as_samples(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 2:
        raise InvalidArgument(f"{name} needs at least two samples")
    return a


def median_bandwidth(x, y) -> float:
    h = median_pairwise_distance(np.concatenate([x, y]))
    return h if h > 0 else 1.0


def mmd_biased(x, y, bandwidth: float | None = None) -> float:
    """Square root of the biased (V-statistic) Gaussian-kernel MMD^2.

    The default bandwidth is the median pairwise distance of the pooled
    samples, or 1 when that median is zero.
    """
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise InvalidArgument("sample dimensions differ")
    h = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise InvalidArgument("bandwidth must be positive")
    scale = -0.5 / h**2

    def mean_kernel(a, b):
        return np.exp(scale * cdist(a, b, "sqeuclidean")).mean()

    mmd2 = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y)
    return float(np.sqrt(max(mmd2, 0.0)))


@dataclass
class C2stConfig:
    hidden: tuple = (64, 64)
    folds: int = 5
    max_iter: int = 500


def c2st(x, y, cfg: C2stConfig | None = None, seed: int = 0) -> float:
    """Mean held-out accuracy of an MLP separating X (label 0) from Y (label 1).

    Features are standardized with the pooled mean and SD before the
    cross-validation split.
    """
    cfg = cfg or C2stConfig()
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    if min(x.shape[0], y.shape[0]) < cfg.folds:
        raise InvalidArgument("fewer samples than cross-validation folds")
    data = np.concatenate([x, y])
    sd = data.std(axis=0)
    data = (data - data.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    labels = np.concatenate([np.zeros(x.shape[0]), np.ones(y.shape[0])])
    clf = MLPClassifier(hidden_layer_sizes=cfg.hidden, activation="relu",
                        max_iter=cfg.max_iter, solver="adam", random_state=seed)
    folds = StratifiedKFold(n_splits=cfg.folds, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        scores = cross_val_score(clf, data, labels, cv=folds, scoring="accuracy")
    return float(np.mean(scores))


@dataclass
class MetricReport:
    task: str
    method: str
    beta: float
    mmd: float
    c2st: float
    n_model: int
    n_reference: int
    bandwidth: float
    seed: int

    FIELDS = ("task", "method", "beta", "mmd", "c2st", "n_model", "n_reference",
              "bandwidth", "seed")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def compare(task: str, method: str, beta: float, model_draws, reference, seed: int = 0,
            c2st_cfg: C2stConfig | None = None) -> MetricReport:
    model_draws, reference = _as_samples(model_draws, "model"), _as_samples(reference, "reference")
    h = median_bandwidth(model_draws, reference)
    return MetricReport(task, method, float(beta), mmd_biased(model_draws, reference, h),
                        c2st(model_draws, reference, c2st_cfg, seed),
                        model_draws.shape[0], reference.shape[0], h, seed)


def thin_to(samples, n: int) -> np.ndarray:
    """At most ``n`` rows, evenly spaced through ``samples``."""
    samples = np.asarray(samples)
    if samples.shape[0] <= n:
        return samples
    return samples[np.linspace(0, samples.shape[0] - 1, n).round().astype(int)]


def sweep_report(task, method: str, beta_grid, references: dict, model, x_obs, n_eval: int,
                 rng, seed: int = 0, c2st_cfg: C2stConfig | None = None) -> list[MetricReport]:
    """One report per grid beta that has a reference set.

    ``model`` is either a trained posterior (sampled at ``(x_obs, beta)``) or
    a callable ``model(beta, n, rng)`` returning draws.
    """
    reports = []
    for beta in beta_grid:
        ref = references.get(float(beta))
        if ref is None:
            log.warning("no reference samples for beta=%g; skipped", beta)
            continue
        if callable(model) and not hasattr(model, "mixture_parameters"):
            draws = model(float(beta), n_eval, rng)
        else:
            draws = sample_posterior(model, x_obs, beta, n_eval, rng, prior=task.prior)
        ref = thin_to(ref, n_eval)
        reports.append(compare(task.name, method, beta, draws, ref, seed, c2st_cfg))
    return reports
