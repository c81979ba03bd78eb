"""Command-line front end.

    powernpe simulate  --task gaussian-mixture --out runs/gmm
    powernpe reference --out runs/gmm
    powernpe train     --route b-nle --out runs/gmm
    powernpe evaluate  --out runs/gmm
    powernpe verify    --out runs/checks

Every command reads an optional key=value ``--config`` file; flags override
it. Artifacts and ``manifest.json`` go to ``--out``. Failures print one line
``<error-code>: <message>`` to stderr and exit 2 (invalid argument), 3
(numeric failure) or 4 (I/O failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io, plots
from .errors import InvalidArgument, IOFailure, NumericFailure, PowerNpeError
from .metrics import C2stConfig, sweep_report, thin_to
from .models import (ScoreTrainConfig, TrainConfig, load_model, save_model)
from .numerics import gradient_check, rng_stream
from .reference import BETA_GRID, sample_reference
from .route_a import LangevinConfig, build_tempered_dataset, train_npe_route_a
from .route_b import (build_weight_table, train_npe_route_b, train_surrogate,
                      verify_minibatch_unbiasedness, verify_weight_variance)
from .simulators import get_task, sample_base_joint
from .models import train_score

log = logging.getLogger("powernpe")

ROUTES = ("a", "b-nle", "b-nre", "b-exact", "reference-only")
SCATTER_BETAS = (0.1, 0.7, 1.5)

# stream ids keep the commands' randomness independent under one seed
_STREAM_SIMULATE, _STREAM_TRAIN, _STREAM_EVAL, _STREAM_OBS, _STREAM_REF = 1, 2, 3, 4, 100


@dataclass
class ExperimentConfig:
    task: str = "gaussian-mixture"
    route: str = "b-nle"
    budget: int = 10_000
    beta_grid: tuple = BETA_GRID
    seed: int = 0
    out: str = "runs/default"
    # "auto" simulates at the task's true theta with obs_seed
    x_obs: str = "auto"
    obs_seed: int = 0
    n_reference: int = 10_000
    n_eval: int = 2_000
    # 0 picks 8 for 2-D parameters and 10 otherwise
    n_components: int = 0
    width: int = 128
    n_blocks: int = 3
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 50
    validation_fraction: float = 0.1
    surrogate_max_epochs: int = 200
    score_epochs: int = 200
    langevin_steps: int = 20
    langevin_eps0: float = 2e-5
    langevin_denoise: bool = True
    # 0 spreads the budget evenly over the grid
    n_per_beta: int = 0
    ess_floor: float = 50.0
    c2st_folds: int = 5
    gradient_cases: int = 100
    n_mc: int = 100_000

    def __post_init__(self):
        if self.route not in ROUTES:
            raise InvalidArgument(f"unknown route {self.route!r}; choose from {ROUTES}")
        if self.budget < 1:
            raise InvalidArgument("budget must be at least 1")
        grid = tuple(float(b) for b in self.beta_grid)
        if not grid or any(not np.isfinite(b) or b <= 0 for b in grid):
            raise InvalidArgument("beta grid must be non-empty with positive finite values")
        self.beta_grid = grid
        if self.seed < 0 or self.seed >= 2**64:
            raise InvalidArgument("seed must be an unsigned 64-bit integer")
        get_task(self.task)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def components(self, theta_dim: int) -> int:
        return self.n_components or (8 if theta_dim <= 2 else 10)

    def npe_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.learning_rate, self.max_epochs, self.patience,
                           self.validation_fraction)

    def surrogate_config(self) -> TrainConfig:
        return dataclasses.replace(self.npe_config(), max_epochs=self.surrogate_max_epochs)

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


def _convert(name: str, kind, raw: str):
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise InvalidArgument(f"bad value for {name}: {raw!r}") from None
    return raw


def build_config(values: dict[str, str]) -> ExperimentConfig:
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in values.items():
        name = key.replace("-", "_")
        if name not in known:
            raise InvalidArgument(f"unknown configuration key {key!r}")
        kwargs[name] = _convert(name, known[name], raw)
    return ExperimentConfig(**kwargs)


def resolve_x_obs(cfg: ExperimentConfig, task) -> np.ndarray:
    if cfg.x_obs.strip() == "":
        raise InvalidArgument("x_obs is empty; give values or 'auto'")
    if cfg.x_obs.strip().lower() == "auto":
        return task.observation(rng_stream(cfg.obs_seed, _STREAM_OBS))
    try:
        x = np.array([float(v) for v in cfg.x_obs.split(",")])
    except ValueError:
        raise InvalidArgument(f"x_obs is not a comma-separated list: {cfg.x_obs!r}") from None
    if x.size != task.x_dim:
        raise InvalidArgument(f"x_obs has {x.size} values, task expects {task.x_dim}")
    return x


# ------------------------------------------------------------ manifest


class Run:
    """Collects artifacts and timings for one command and writes the manifest."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg, self.command = cfg, command
        self.out = io.ensure_dir(cfg.out_dir)
        self.started = time.perf_counter()
        self.artifacts: dict[str, str] = {}
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, key: str, path) -> Path:
        self.artifacts[key] = str(path)
        return Path(path)

    def finish(self, status: str = "ok") -> Path:
        manifest_path = self.out / "manifest.json"
        manifest = io.read_manifest(manifest_path) if manifest_path.exists() else {}
        manifest.setdefault("commands", {})[self.command] = {
            "status": status,
            "config": self.cfg.snapshot(),
            "seed": self.cfg.seed,
            "seconds": round(time.perf_counter() - self.started, 3),
            "artifacts": dict(self.artifacts),
            **self.extra,
        }
        manifest["versions"] = _versions()
        manifest["artifacts"] = {k: v for c in manifest["commands"].values()
                                 for k, v in c["artifacts"].items() if Path(v).exists()}
        return io.write_manifest(manifest_path, manifest)


def _versions() -> dict:
    import scipy
    import sklearn
    import torch

    from . import __version__

    return {"powernpe": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "torch": torch.__version__,
            "scikit-learn": sklearn.__version__}


def _trace_rows(result):
    val = result.validation_loss or [float("nan")] * len(result.train_loss)
    return ([i, t, v] for i, (t, v) in enumerate(zip(result.train_loss, val)))


def _write_trace(run: Run, key: str, result) -> None:
    run.record(f"{key}_trace", io.write_rows(run.path(f"{key}_loss.csv"),
                                             ["epoch", "train_loss", "validation_loss"],
                                             _trace_rows(result)))


# ------------------------------------------------------------ commands


def cmd_simulate(cfg: ExperimentConfig) -> Run:
    run = Run(cfg, "simulate")
    task = get_task(cfg.task)
    base = sample_base_joint(task, cfg.budget, rng_stream(cfg.seed, _STREAM_SIMULATE))
    run.record("base", io.write_joint(run.path("base.csv"), base.theta, base.x))
    run.finish()
    return run


def _beta_tag(beta: float) -> str:
    return f"{beta:g}".replace(".", "p")


def cmd_reference(cfg: ExperimentConfig) -> Run:
    run = Run(cfg, "reference")
    task = get_task(cfg.task)
    x_obs = resolve_x_obs(cfg, task)
    ref_dir = io.ensure_dir(run.path("reference"))
    run.record("x_obs", io.write_rows(run.path("x_obs.csv"),
                                      io.column_names("x", x_obs.size), [x_obs]))
    for k, beta in enumerate(cfg.beta_grid):
        res = sample_reference(task, x_obs, beta, rng_stream(cfg.seed, _STREAM_REF + k),
                               n=cfg.n_reference)
        tag = _beta_tag(beta)
        run.record(f"reference_{tag}", io.write_reference(ref_dir / f"beta_{tag}.csv", beta,
                                                          res.samples))
        meta = {"task": task.name, "beta": beta, "x_obs": x_obs, "seed": cfg.seed,
                "acceptance": res.acceptance, **res.extra}
        run.record(f"reference_{tag}_meta", io.write_key_values(ref_dir / f"beta_{tag}.txt",
                                                                meta))
    run.extra["x_obs"] = x_obs
    run.finish()
    return run


def cmd_train(cfg: ExperimentConfig) -> Run:
    if cfg.route == "reference-only":
        raise InvalidArgument("route reference-only has nothing to train")
    run = Run(cfg, "train")
    task = get_task(cfg.task)
    rng = rng_stream(cfg.seed, _STREAM_TRAIN)
    n_comp = cfg.components(task.theta_dim)
    try:
        if cfg.route == "a":
            _train_route_a(cfg, run, task, rng, n_comp)
        else:
            _train_route_b(cfg, run, task, rng, n_comp)
    except NumericFailure as exc:
        if exc.model is not None:
            run.record("partial_model", _save(exc.model, run.path("partial_model.json")))
        run.extra["error"] = str(exc)
        run.finish(status="failed")
        raise
    run.finish()
    return run


def _save(model, path) -> Path:
    save_model(model, path)
    return Path(path)


def _train_route_a(cfg, run, task, rng, n_comp):
    base = sample_base_joint(task, cfg.budget, rng_stream(cfg.seed, _STREAM_SIMULATE))
    score = train_score(base.theta, base.x,
                        cfg=ScoreTrainConfig(cfg.batch_size, cfg.learning_rate, cfg.score_epochs),
                        rng=rng, width=cfg.width, n_blocks=cfg.n_blocks, seed=cfg.seed)
    run.record("score", _save(score.model, run.path("score.json")))
    _write_trace(run, "score", score)
    langevin = LangevinConfig(cfg.langevin_steps, cfg.langevin_eps0, beta_grid=cfg.beta_grid,
                              denoise=cfg.langevin_denoise)
    n_per_beta = cfg.n_per_beta or max(cfg.budget // len(cfg.beta_grid), 1)
    data = build_tempered_dataset(score.model, task, n_per_beta, cfg.beta_grid, langevin, rng)
    run.record("tempered", io.write_tempered(run.path("tempered.csv"), data.beta, data.theta,
                                             data.x))
    post = train_npe_route_a(data, cfg.npe_config(), rng, n_comp, cfg.width, cfg.n_blocks,
                             cfg.seed)
    run.record("posterior", _save(post.model, run.path("posterior.json")))
    _write_trace(run, "posterior", post)


def _train_route_b(cfg, run, task, rng, n_comp):
    base_path = run.path("base.csv")
    if not base_path.exists():
        raise IOFailure(f"missing base dataset {base_path}; run 'simulate' first")
    theta, x = io.read_joint(base_path)
    mode = cfg.route.split("-", 1)[1]
    snis, sur = train_surrogate(mode, theta, x, cfg.surrogate_config(), rng, cfg.width,
                                cfg.seed, task)
    if sur is not None:
        run.record(mode, _save(sur.model, run.path(f"{mode}.json")))
        _write_trace(run, mode, sur)
    table = build_weight_table(snis, theta, x, cfg.beta_grid)
    run.record("weights", io.write_weight_table(run.path("weights.csv"), table))
    run.extra["ess"] = dict(zip(map(str, table.betas), table.ess))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        post = train_npe_route_b(theta, x, table, cfg.npe_config(), rng, n_comp, cfg.width,
                                 cfg.n_blocks, cfg.seed, cfg.ess_floor)
    for w in caught:
        log.warning("%s", w.message)
    run.extra["warnings"] = [str(w.message) for w in caught]
    run.record("posterior", _save(post.model, run.path("posterior.json")))
    _write_trace(run, "posterior", post)


def _load_references(cfg, run) -> dict:
    refs = {}
    for beta in cfg.beta_grid:
        path = run.path("reference") / f"beta_{_beta_tag(beta)}.csv"
        if path.exists():
            refs[beta] = io.read_reference(path)[1]
        else:
            log.warning("missing reference %s", path)
    if not refs:
        raise IOFailure(f"no reference sets under {run.path('reference')}; run 'reference' first")
    return refs


def cmd_evaluate(cfg: ExperimentConfig) -> Run:
    run = Run(cfg, "evaluate")
    task = get_task(cfg.task)
    x_path = run.path("x_obs.csv")
    if not x_path.exists():
        raise IOFailure(f"missing {x_path}; run 'reference' first")
    x_obs = io.read_table(x_path)[1][0]
    refs = _load_references(cfg, run)
    if cfg.route == "reference-only":
        # control: even-indexed draws against odd-indexed draws of one set
        def model(beta, n, _rng):
            return thin_to(refs[beta][1::2], n)

        method = "reference"
        refs_eval = {b: r[0::2] for b, r in refs.items()}
    else:
        post_path = run.path("posterior.json")
        if not post_path.exists():
            raise IOFailure(f"missing model {post_path}; run 'train' first")
        model = load_model(post_path)
        method = f"route-{cfg.route}"
        refs_eval = refs
    reports = sweep_report(task, method, cfg.beta_grid, refs_eval, model, x_obs, cfg.n_eval,
                           rng_stream(cfg.seed, _STREAM_EVAL), seed=cfg.seed,
                           c2st_cfg=C2stConfig(folds=cfg.c2st_folds))
    run.record("report", io.write_reports(run.path("report.csv"), reports))
    betas = [r.beta for r in reports]
    for metric in ("mmd", "c2st"):
        run.record(f"{metric}_plot", plots.line_chart(
            run.path(f"{metric}.svg"), {method: (betas, [getattr(r, metric) for r in reports])},
            "beta", metric.upper(), f"{task.name}: {metric.upper()} vs beta"))
    if task.theta_dim == 2:
        rows = []
        eval_rng = rng_stream(cfg.seed, _STREAM_EVAL + 1)
        for beta in SCATTER_BETAS:
            if beta not in refs:
                continue
            if callable(model) and not hasattr(model, "mixture_parameters"):
                draws = model(beta, cfg.n_eval, eval_rng)
            else:
                from .models import sample_posterior

                draws = sample_posterior(model, x_obs, beta, cfg.n_eval, eval_rng, task.prior)
            rows.append((f"beta={beta:g}", refs[beta], draws))
        if rows:
            run.record("scatter", plots.scatter_panels(run.path("scatter.svg"), rows))
    run.finish()
    return run


def cmd_verify(cfg: ExperimentConfig) -> Run:
    run = Run(cfg, "verify")
    rng = rng_stream(cfg.seed, _STREAM_TRAIN)
    grad = gradient_check(cfg.gradient_cases, seed=cfg.seed)
    variance = verify_weight_variance((0.5, 0.75, 1.0), cfg.n_mc, rng)
    batches = [row for n in (4, 6) for row in verify_minibatch_unbiasedness(n, (1, 2, 3), rng)]
    summary = {
        "gradient_cases": len(grad),
        "gradient_max_relative_error": max(grad),
        "gradient_ok": max(grad) <= 1e-5,
    }
    for row in variance:
        tag = f"{row.beta:g}"
        summary[f"weight_second_moment_{tag}"] = row.estimate
        summary[f"weight_second_moment_se_{tag}"] = row.standard_error
        summary[f"weight_second_moment_exact_{tag}"] = row.exact
    summary["weight_variance_ok"] = all(r.bounded for r in variance)
    summary["minibatch_max_global_error"] = max(r.global_error for r in batches)
    local_b1 = [abs(r.local_expectation - r.unweighted_sum) for r in batches if r.batch_size == 1]
    summary["minibatch_local_b1_max_gap"] = max(local_b1)
    summary["minibatch_ok"] = (summary["minibatch_max_global_error"] <= 1e-12
                               and max(local_b1) <= 1e-12)
    run.record("verify", io.write_key_values(run.path("verify.txt"), summary))
    ok = summary["gradient_ok"] and summary["weight_variance_ok"] and summary["minibatch_ok"]
    run.finish(status="ok" if ok else "failed")
    if not ok:
        raise NumericFailure("verification failed; see verify.txt")
    return run


COMMANDS = {"simulate": cmd_simulate, "reference": cmd_reference, "train": cmd_train,
            "evaluate": cmd_evaluate, "verify": cmd_verify}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidArgument(message)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="powernpe", description="Amortized power-posterior estimation.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", help="unsigned 64-bit seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--task", help="two-moons | gaussian-mixture | slcp | lorenz96")
    parser.add_argument("--route", help="a | b-nle | b-nre | b-exact | reference-only")
    parser.add_argument("--beta-grid", help="comma-separated temperatures")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = io.read_key_values(args.config) if args.config else {}
        for key in ("seed", "out", "task", "route", "beta_grid"):
            flag = getattr(args, key)
            if flag is not None:
                values[key] = flag
        cfg = build_config(values)
        run = COMMANDS[args.command](cfg)
        print(run.path("manifest.json"))
        return 0
    except PowerNpeError as exc:
        print(f"{exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io-failure: {' '.join(str(exc).split())}", file=sys.stderr)
        return 4
