"""
Tempering by Langevin dynamics
===============================

Route A never reweights. It learns the score of the base joint and then runs
annealed Langevin dynamics on beta times that score, which samples the
tempered joint directly. An analytic Gaussian score makes the effect easy to
see: the stationary variance is 1/beta.
"""

import numpy as np

from powernpe.numerics import rng_stream
from powernpe.route_a import AnalyticGaussianScore, LangevinConfig, langevin_synthesize


def init(rng, n):
    return rng.normal(size=(n, 1)), rng.normal(size=(n, 1))


# a long run so the chain forgets its start; the pipeline default is short
cfg = LangevinConfig(steps_per_level=200, eps0=2e-3, denoise=False)
for beta in (0.5, 1.0, 2.0, 4.0):
    theta, x = langevin_synthesize(AnalyticGaussianScore(1, 1), init, beta, 5000, cfg,
                                   rng_stream(int(beta * 10)))
    print(f"beta={beta:3.1f}  var(theta)={theta.var():.3f}  var(x)={x.var():.3f}"
          f"  target={1 / beta:.3f}")
