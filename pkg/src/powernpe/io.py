"""File formats: numeric CSV, key=value text, and the run manifest.

Reals are written with 17 significant digits so every float64 survives a
round trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, IOFailure

REAL = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return REAL % v
    return str(v)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create directory {path}: {exc}") from exc
    return path


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for row in rows:
                out.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a purely numeric CSV."""
    path = Path(path)
    if not path.exists():
        raise IOFailure(f"missing file {path}")
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: non-numeric entry ({exc})") from exc
    return rows[0], data.reshape(len(rows) - 1, len(rows[0]))


def column_names(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}_{i}" for i in range(dim)]


def write_joint(path, theta, x) -> Path:
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    header = column_names("theta", theta.shape[1]) + column_names("x", x.shape[1])
    return write_rows(path, header, np.hstack([theta, x]))


def read_joint(path) -> tuple[np.ndarray, np.ndarray]:
    header, data = read_table(path)
    d = sum(h.startswith("theta_") for h in header)
    return data[:, :d], data[:, d:]


def write_tempered(path, beta, theta, x) -> Path:
    theta, x = np.atleast_2d(theta), np.atleast_2d(x)
    header = ["beta"] + column_names("theta", theta.shape[1]) + column_names("x", x.shape[1])
    return write_rows(path, header, np.hstack([np.asarray(beta)[:, None], theta, x]))


def write_reference(path, beta: float, samples) -> Path:
    samples = np.atleast_2d(samples)
    header = ["beta"] + column_names("theta", samples.shape[1])
    return write_rows(path, header, np.hstack([np.full((samples.shape[0], 1), beta), samples]))


def read_reference(path) -> tuple[float, np.ndarray]:
    _, data = read_table(path)
    if data.shape[0] == 0:
        raise InvalidArgument(f"{path} has no samples")
    return float(data[0, 0]), data[:, 1:]


def write_weight_table(path, table) -> Path:
    """Long format: ``beta, index, weight, ess_beta``."""
    rows = ([b, i, w, e] for b, row, e in zip(table.betas, table.weights, table.ess)
            for i, w in enumerate(row))
    return write_rows(path, ["beta", "index", "weight", "ess_beta"], rows)


def write_reports(path, reports) -> Path:
    from .metrics import MetricReport

    return write_rows(path, MetricReport.FIELDS, (r.row() for r in reports))


def read_reports(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise IOFailure(f"missing file {path}")
    kinds = {"beta": float, "mmd": float, "c2st": float, "bandwidth": float, "n_model": int,
             "n_reference": int, "seed": int}
    with path.open(newline="") as fh:
        return [{k: kinds.get(k, str)(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ------------------------------------------------------------- key=value


def parse_key_values(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidArgument(f"line {n}: empty key")
        out[key] = value
    return out


def read_key_values(path) -> dict[str, str]:
    path = Path(path)
    try:
        return parse_key_values(path.read_text())
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc


def write_key_values(path, values: dict) -> Path:
    path = Path(path)
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ",".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


# -------------------------------------------------------------- manifest


def write_manifest(path, manifest: dict) -> Path:
    """JSON manifest; every path listed under ``artifacts`` must exist."""
    path = Path(path)
    missing = [p for p in manifest.get("artifacts", {}).values() if not Path(p).exists()]
    if missing:
        raise IOFailure(f"manifest references missing files: {missing}")
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise IOFailure(f"cannot read manifest {path}: {exc}") from exc


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
