"""CSV readers and writers. All files are LF-terminated, floats at 17
significant digits so that a write/read round trip is exact."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dynamics import SubsystemTrajectory
from .errors import ConfigError
from .response import RESPONSE_HEADER, ResponseEstimate


def fmt(x):
    return f"{x:.17g}"


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def trajectory_csv(traj: SubsystemTrajectory):
    head = "t," + ",".join(f"y{i + 1}" for i in range(traj.m))
    lines = [head]
    for t, y in zip(traj.times, traj.samples):
        lines.append(fmt(t) + "," + ",".join(fmt(v) for v in y))
    return "\n".join(lines) + "\n"


def write_trajectory(traj: SubsystemTrajectory, path):
    _write(path, trajectory_csv(traj))


def read_trajectory(path, epsilon=0.0, seed=0) -> SubsystemTrajectory:
    text = Path(path).read_text()
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("t,"):
        raise ConfigError(f"{path}: not a trajectory file (header 't,y1..ym' expected)")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.ndim != 2 or data.shape[0] < 2:
        raise ConfigError(f"{path}: need at least two samples")
    steps = np.diff(data[:, 0])
    dt = float(steps.mean())
    if np.abs(steps - dt).max() > 1e-9 * max(dt, 1.0):
        raise ConfigError(f"{path}: samples are not equally spaced")
    return SubsystemTrajectory(dt, data[:, 1:], epsilon, seed)


def response_csv(estimates):
    lines = [RESPONSE_HEADER]
    for e in estimates:
        lines.append(",".join(fmt(v) for v in e.row()))
    return "\n".join(lines) + "\n"


def read_response(text):
    lines = text.strip().splitlines()
    if lines[0] != RESPONSE_HEADER:
        raise ConfigError("not a response file")
    out = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split(",")]
        out.append(ResponseEstimate(*vals))
    return out


def table_csv(header, columns):
    """Columns of equal length under a comma-separated header."""
    cols = [np.asarray(c, float) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    lines = [header]
    for i in range(n):
        lines.append(",".join(fmt(c[i]) if math.isfinite(c[i]) else "nan" for c in cols))
    return "\n".join(lines) + "\n"


def write_text(path, text):
    _write(path, text)
