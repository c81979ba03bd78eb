"""
Route B on the Gaussian mixture
================================

Simulate once, weight the records for every temperature of the grid, and fit
one posterior network conditioned on both the data and beta. The exact
rejection sampler then tells us how close each tempered slice came.

Takes a few minutes on one CPU core.
"""

from powernpe.metrics import compare
from powernpe.models import sample_posterior
from powernpe.numerics import rng_stream
from powernpe.reference import sample_reference
from powernpe.route_b import run_route_b
from powernpe.simulators import get_task

task = get_task("gaussian-mixture")
x_obs = task.observation(rng_stream(0, 4))
print("observation", x_obs)

result = run_route_b(task, 10_000, "exact", rng_stream(0, 2))
print("posterior trained for", len(result.posterior.train_loss), "epochs")

for k, beta in enumerate((0.5, 1.0, 1.5)):
    reference = sample_reference(task, x_obs, beta, rng_stream(k, 100), n=2000).samples
    draws = sample_posterior(result.posterior.model, x_obs, beta, 2000, rng_stream(k, 3),
                             prior=task.prior)
    report = compare(task.name, "route-b-exact", beta, draws, reference)
    print(f"beta={beta:3.1f}  C2ST={report.c2st:.3f}  MMD={report.mmd:.3f}")
