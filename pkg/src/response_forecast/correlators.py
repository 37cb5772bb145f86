"""Ergodic estimates of the equilibrium subsystem averages entering the
second-order forecast.

Lagged averages use every overlapping pair along each trajectory.
Statistical errors are batch means over ceil(sqrt(N)) contiguous blocks of
the pooled product series, pooled in trajectory order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import Ensemble, SubsystemTrajectory
from .errors import ConfigError, InsufficientDataError, LagGridError

MIN_SAMPLES = 16

ENTRIES = (
    "mean_k", "mean_V", "mean_Vk", "mean_V2", "mean_V2k",
    "lag_V_k_T", "lag_V_Vk_T", "lag_V_k_halfT", "lag_V_V_halfT",
)


@dataclass(frozen=True)
class Observable:
    """Function of the subsystem state; ``eval`` maps (..., m) to (...)."""

    m: int
    eval: Callable[[np.ndarray], np.ndarray]
    name: str = "obs"

    def __call__(self, y):
        y = np.asarray(y, float)
        out = np.asarray(self.eval(y), float)
        if out.shape == y.shape and self.m == 1:
            out = out[..., 0]
        return np.broadcast_to(out, y.shape[:-1])

    @classmethod
    def coordinate(cls, m=1, i=0, name=None):
        return cls(m, lambda y: y[..., i], name or f"y{i + 1}")

    @classmethod
    def constant(cls, m=1, c=1.0):
        return cls(m, lambda y: np.full(y.shape[:-1], c), f"const{c:g}")

    @classmethod
    def from_perturbation(cls, pert, name="v"):
        return cls(pert.m, pert.v, name)


class Estimate(NamedTuple):
    mean: float
    se: float
    count: int


def batch_means(x) -> Estimate:
    """Mean of a correlated series with a batch-means standard error.

    Uses ceil(sqrt(N)) blocks of equal length; se is ``nan`` when fewer than
    two full blocks are available.
    """
    x = np.asarray(x, float).ravel()
    n = x.size
    if n == 0:
        return Estimate(math.nan, math.nan, 0)
    mean = float(x.mean())
    nb = math.ceil(math.sqrt(n))
    size = n // nb
    if size < 1 or nb < 2 or n < MIN_SAMPLES:
        return Estimate(mean, math.nan, n)
    blocks = x[: nb * size].reshape(nb, size).mean(axis=1)
    se = float(blocks.std(ddof=1) / math.sqrt(nb))
    return Estimate(mean, se, n)


def _as_list(trajs) -> list:
    if isinstance(trajs, SubsystemTrajectory):
        return [trajs]
    return list(trajs)


def lag_steps(lag, dt):
    steps = lag / dt
    k = int(round(steps))
    if abs(steps - k) > 1e-9 * max(1.0, abs(steps)):
        raise LagGridError(f"lag {lag} is not a multiple of dt={dt}")
    if k < 0:
        raise LagGridError("lag must be non-negative")
    return k


def static_average(traj: SubsystemTrajectory, obs: Observable) -> Estimate:
    """Time average of ``obs`` along ``traj``."""
    if len(traj) < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {len(traj)}")
    return batch_means(obs(traj.samples))


def _lag_products(a, b, ell):
    # a, b: (n_traj, N); rows concatenated in trajectory order
    n = a.shape[-1]
    return (a[..., : n - ell] * b[..., ell:]).ravel()


def lagged_average(traj: SubsystemTrajectory, obs_a: Observable, obs_b: Observable,
                   lag) -> Estimate:
    """Mean of obs_a(y_i) obs_b(y_{i+l}) over all overlapping pairs, l = lag/dt."""
    ell = lag_steps(lag, traj.dt)
    if ell > len(traj) - 1:
        raise LagGridError(f"lag {lag} exceeds the trajectory span {traj.dt * (len(traj) - 1)}")
    return batch_means(_lag_products(obs_a(traj.samples), obs_b(traj.samples), ell))


@dataclass
class CorrelatorSet:
    """Equilibrium subsystem averages at horizon ``T``, with standard errors."""

    T: float
    mean_k: float
    mean_V: float
    mean_Vk: float
    mean_V2: float
    mean_V2k: float
    lag_V_k_T: float
    lag_V_Vk_T: float
    lag_V_k_halfT: float
    lag_V_V_halfT: float
    se: dict = field(default_factory=dict)
    dt: float = math.nan
    n_traj: int = 0
    n_samples: int = 0

    def values(self):
        return {name: getattr(self, name) for name in ENTRIES}

    def se_of(self, name):
        return self.se.get(name, 0.0)

    def to_csv(self):
        lines = ["name,value,se"]
        for name in ENTRIES:
            lines.append(f"{name},{getattr(self, name):.17g},{self.se_of(name):.17g}")
        lines.append(f"T,{self.T:.17g},")
        lines.append(f"dt,{self.dt:.17g},")
        lines.append(f"n_traj,{self.n_traj},")
        lines.append(f"n_samples,{self.n_samples},")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        vals, se, meta = {}, {}, {}
        for line in text.strip().splitlines()[1:]:
            name, value, err = (line.split(",") + ["", ""])[:3]
            if name in ENTRIES:
                vals[name] = float(value)
                se[name] = float(err) if err else 0.0
            else:
                meta[name] = float(value)
        missing = set(ENTRIES) - set(vals)
        if missing or "T" not in meta:
            raise ConfigError(f"correlator file lacks {sorted(missing) or ['T']}")
        return cls(
            meta["T"], **vals, se=se,
            dt=meta.get("dt", math.nan),
            n_traj=int(meta.get("n_traj", 0)),
            n_samples=int(meta.get("n_samples", 0)),
        )


def _stack(trajs) -> tuple[np.ndarray, float]:
    if isinstance(trajs, Ensemble):
        if trajs.epsilon != 0:
            raise ConfigError("correlators need equilibrium (eps = 0) trajectories")
        return trajs.samples, trajs.dt
    tl = _as_list(trajs)
    if not tl:
        raise ConfigError("no trajectories given")
    dts = {t.dt for t in tl}
    if max(dts) - min(dts) > 1e-12 * max(dts):
        raise ConfigError(f"trajectories have mixed dt: {sorted(dts)}")
    if any(t.epsilon != 0 for t in tl):
        raise ConfigError("correlators need equilibrium (eps = 0) trajectories")
    lens = {len(t) for t in tl}
    if len(lens) == 1:
        return np.stack([t.samples for t in tl]), tl[0].dt
    return [t.samples for t in tl], tl[0].dt


def correlator_bundle(trajs: Sequence[SubsystemTrajectory] | Ensemble, kappa: Observable,
                      v: Observable, T) -> CorrelatorSet:
    """All nine averages pooled over ``trajs`` (weights = usable pair counts)."""
    samples, dt = _stack(trajs)
    ell = lag_steps(T, dt)
    if ell % 2:
        raise LagGridError(f"T/dt = {ell} must be even so that T/2 is on the grid")
    half = ell // 2
    if isinstance(samples, list):
        series = [(kappa(s), v(s)) for s in samples]
        n_traj = len(samples)
        n_samples = sum(len(s) for s in samples)
        if any(len(s) <= ell for s in samples):
            raise LagGridError(f"T={T} exceeds a trajectory span")

        def pooled(fn):
            return batch_means(np.concatenate([fn(k, w) for k, w in series]))
    else:
        k = kappa(samples)
        w = v(samples)
        n_traj, n_samples = samples.shape[0], samples.shape[0] * samples.shape[1]
        if samples.shape[1] <= ell:
            raise LagGridError(f"T={T} exceeds the trajectory span")

        def pooled(fn):
            return batch_means(fn(k, w))

    est = {
        "mean_k": pooled(lambda k, w: k.ravel()),
        "mean_V": pooled(lambda k, w: w.ravel()),
        "mean_Vk": pooled(lambda k, w: (w * k).ravel()),
        "mean_V2": pooled(lambda k, w: (w * w).ravel()),
        "mean_V2k": pooled(lambda k, w: (w * w * k).ravel()),
        "lag_V_k_T": pooled(lambda k, w: _lag_products(w, k, ell)),
        "lag_V_Vk_T": pooled(lambda k, w: _lag_products(w, w * k, ell)),
        "lag_V_k_halfT": pooled(lambda k, w: _lag_products(w, k, half)),
        "lag_V_V_halfT": pooled(lambda k, w: _lag_products(w, w, half)),
    }
    return CorrelatorSet(
        float(T),
        **{name: e.mean for name, e in est.items()},
        se={name: e.se for name, e in est.items()},
        dt=dt,
        n_traj=n_traj,
        n_samples=n_samples,
    )
