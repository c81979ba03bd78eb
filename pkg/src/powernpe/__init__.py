"""Amortized estimation of power posteriors p_beta(theta | x) for
simulation-based inference.

Two routes produce training data for one temperature-conditioned posterior
q(theta | x, beta): Langevin synthesis from a learned joint score
(:mod:`powernpe.route_a`) and self-normalized importance reweighting of a
single base simulation set (:mod:`powernpe.route_b`).
"""

__version__ = "0.1.0"

from .errors import ConsistencyError, InvalidArgument, IOFailure, NumericFailure, PowerNpeError
from .simulators import TASKS, get_task, sample_base_joint

__all__ = [
    "ConsistencyError",
    "IOFailure",
    "InvalidArgument",
    "NumericFailure",
    "PowerNpeError",
    "TASKS",
    "get_task",
    "sample_base_joint",
]
