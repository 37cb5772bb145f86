"""Potentials, coarse maps and Euler-Maruyama simulation of the forced
overdamped Langevin system

    dx = -grad U(x) dt + eps * lift(grad v(pi(x))) dt + noise_scale dW,

with equilibrium initial conditions obtained by burn-in from the origin.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, NumericDomainError, PreconditionError

SQRT2 = math.sqrt(2.0)
DIVERGENCE_BOUND = 1e6
_CHUNK = 512


# ---------------------------------------------------------------------------
# term sums: the closed-form family every built-in potential lives in

@dataclass(frozen=True)
class TermSum:
    """Scalar field on R^dim of the form

        1/2 x.A.x + b.x + sum_k c_k exp(-sum_j w_kj (x_j - m_kj)^2)
                        + sum_l a_l cos(f_l.x + phi_l).

    Only this family is handled by the compiled integrator.
    """

    dim: int
    quad: np.ndarray
    lin: np.ndarray
    g_amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    g_width: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    g_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    c_amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c_freq: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    c_phase: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def build(cls, dim, quad=None, lin=None, gaussians=(), cosines=()):
        """``gaussians``: (amp, width, center) triples; ``cosines``: (amp, freq, phase)."""
        quad = np.zeros((dim, dim)) if quad is None else np.asarray(quad, float).reshape(dim, dim)
        lin = np.zeros(dim) if lin is None else np.asarray(lin, float).reshape(dim)
        g = list(gaussians)
        c = list(cosines)
        return cls(
            dim,
            quad,
            lin,
            np.array([a for a, _, _ in g], float),
            np.array([np.broadcast_to(w, (dim,)) for _, w, _ in g], float).reshape(len(g), dim),
            np.array([np.broadcast_to(m, (dim,)) for _, _, m in g], float).reshape(len(g), dim),
            np.array([a for a, _, _ in c], float),
            np.array([np.broadcast_to(f, (dim,)) for _, f, _ in c], float).reshape(len(c), dim),
            np.array([p for _, _, p in c], float),
        )

    def energy(self, x):
        x = np.asarray(x, float)
        e = 0.5 * np.einsum("...i,ij,...j->...", x, self.quad, x) + x @ self.lin
        for a, w, m in zip(self.g_amp, self.g_width, self.g_center):
            e = e + a * np.exp(-np.sum(w * (x - m) ** 2, axis=-1))
        for a, f, p in zip(self.c_amp, self.c_freq, self.c_phase):
            e = e + a * np.cos(x @ f + p)
        return e

    def gradient(self, x):
        from ._fallback import term_gradient
        return term_gradient(self.packed(), np.asarray(x, float))

    def packed(self):
        # zero-length arrays are padded so the compiled side can take &a[0]
        d = self.dim
        ng, nc = len(self.g_amp), len(self.c_amp)

        def pad(a, shape):
            return np.ascontiguousarray(a if a.size else np.zeros(shape), dtype=np.float64)

        A = np.ascontiguousarray(0.5 * (self.quad + self.quad.T))
        return (
            A,
            np.ascontiguousarray(self.lin, dtype=np.float64),
            pad(self.g_amp, (1,)),
            pad(self.g_width, (1, d)),
            pad(self.g_center, (1, d)),
            pad(self.c_amp, (1,)),
            pad(self.c_freq, (1, d)),
            pad(self.c_phase, (1,)),
            ng,
            nc,
        )


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Potential:
    """Energy U on R^dim in k_B T units, with its gradient.

    ``terms`` is set for the built-in families and enables the compiled
    integrator; custom potentials run on the NumPy path.
    """

    dim: int
    energy: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    terms: TermSum | None = None

    @classmethod
    def from_terms(cls, terms: TermSum, kind: str = "custom-sum-of-gaussians"):
        return cls(terms.dim, terms.energy, terms.gradient, kind, terms)

    @classmethod
    def quadratic(cls, a):
        """U(x) = x.a.x / 2 for a symmetric positive definite ``a``."""
        a = np.atleast_2d(np.asarray(a, float))
        if not np.allclose(a, a.T):
            raise ConfigError("quadratic form must be symmetric")
        if np.linalg.eigvalsh(a).min() <= 0:
            raise ConfigError("quadratic form must be positive definite")
        return cls.from_terms(TermSum.build(a.shape[0], quad=a), "quadratic-form")

    @classmethod
    def multiwell(cls, sigma=0.5, sigma_m=1 / 3, sigma_1=0.1, sigma_2=0.1):
        """Four-well landscape on R^2: two horizontal troughs at y = +-1, each
        holding two wells at x = +-1, plus a weak confining bowl."""
        s2pi = math.sqrt(2 * math.pi)
        g = [
            (-s2pi / sigma, (0.0, 1 / (2 * sigma)), (0.0, 1.0)),
            (-s2pi / sigma_m, (0.0, 1 / (2 * sigma_m)), (0.0, -1.0)),
            (-1 / (2 * sigma_1), (1.0, 1.0), (1.0, 1.0)),
            (-1 / (2 * sigma_1), (1.0, 1.0), (-1.0, 1.0)),
            (-1 / (2 * sigma_2), (1.0, 1.0), (-1.0, -1.0)),
            (-1 / (2 * sigma_2), (1.0, 1.0), (1.0, -1.0)),
        ]
        return cls.from_terms(TermSum.build(2, quad=np.eye(2) / 5, gaussians=g), "multiwell")

    @classmethod
    def gaussian_sum(cls, dim, confinement, gaussians):
        """Isotropic bowl ``confinement * |x|^2 / 2`` plus Gaussian bumps."""
        return cls.from_terms(
            TermSum.build(dim, quad=confinement * np.eye(dim), gaussians=gaussians)
        )

    @classmethod
    def custom(cls, dim, energy, gradient):
        return cls(dim, energy, gradient, "custom")

    def check_gradient(self, rng=None, n_probe=8, step=1e-5, rtol=1e-6):
        """Compare the gradient with central differences at random probes."""
        rng = np.random.default_rng(0) if rng is None else rng
        worst = 0.0
        for _ in range(n_probe):
            x = rng.normal(size=self.dim)
            g = np.asarray(self.gradient(x), float)
            fd = np.empty(self.dim)
            for j in range(self.dim):
                e = np.zeros(self.dim)
                e[j] = step
                fd[j] = (self.energy(x + e) - self.energy(x - e)) / (2 * step)
            scale = max(np.abs(g).max(), 1.0)
            worst = max(worst, np.abs(g - fd).max() / scale)
        return worst <= rtol, worst

    def check_confinement(self, radius=100.0, n_dirs=16, rng=None):
        rng = np.random.default_rng(1) if rng is None else rng
        u = rng.normal(size=(n_dirs, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        e0 = float(self.energy(np.zeros(self.dim)))
        return bool(np.all(np.asarray([self.energy(radius * ui) for ui in u]) > e0))


@dataclass(frozen=True)
class CoarseMap:
    """Coordinate projection R^d -> R^m, pi(x) = x[indices]."""

    d: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx or len(idx) > self.d:
            raise ConfigError("need 1 <= m <= d projected coordinates")
        if len(set(idx)) != len(idx):
            raise ConfigError("projection indices must be distinct")
        if any(i < 0 or i >= self.d for i in idx):
            raise ConfigError(f"projection indices must lie in [0, {self.d})")

    @classmethod
    def identity(cls, d):
        return cls(d, tuple(range(d)))

    @property
    def m(self):
        return len(self.indices)

    def project(self, x):
        return np.asarray(x)[..., list(self.indices)]

    def lift(self, gy):
        """Scatter subsystem components back to full coordinates, zeros elsewhere."""
        gy = np.asarray(gy, float)
        out = np.zeros(gy.shape[:-1] + (self.d,))
        out[..., list(self.indices)] = gy
        return out


@dataclass(frozen=True)
class Perturbation:
    """Subsystem potential v on R^m; V(x) = v(pi(x)) enters the drift as +eps grad V."""

    m: int
    v: Callable[[np.ndarray], np.ndarray]
    grad_v: Callable[[np.ndarray], np.ndarray]
    terms: TermSum | None = None

    @classmethod
    def from_terms(cls, terms: TermSum):
        return cls(terms.dim, terms.energy, terms.gradient, terms)

    @classmethod
    def zero(cls, m=1):
        return cls.from_terms(TermSum.build(m))

    @classmethod
    def linear(cls, coef):
        coef = np.atleast_1d(np.asarray(coef, float))
        return cls.from_terms(TermSum.build(coef.size, lin=coef))

    @classmethod
    def cosine(cls, amp=-1.0, freq=1.0, phase=-math.pi / 4):
        """v(y) = amp * cos(freq * y + phase) on R^1; default -cos(y - pi/4)."""
        return cls.from_terms(TermSum.build(1, cosines=[(amp, freq, phase)]))

    @classmethod
    def gaussian(cls, amp=1.0, width=0.25, center=1.0):
        """v(y) = amp * exp(-width (y - center)^2) on R^1; default exp(-(y-1)^2/4)."""
        return cls.from_terms(TermSum.build(1, gaussians=[(amp, width, center)]))

    @classmethod
    def custom(cls, m, v, grad_v):
        return cls(m, v, grad_v, None)

    def lifted(self, cmap: CoarseMap):
        """V = v o pi as a function on R^d."""
        return lambda x: self.v(cmap.project(x))


@dataclass(frozen=True)
class SimConfig:
    """Integration settings. Samples are recorded every ``sample_every`` steps."""

    dt: float = 1e-3
    t_max: float = 10.0
    burn_in: float = 100.0
    epsilon: float = 0.0
    seed: int = 0
    n_traj: int = 1
    noise_scale: float = SQRT2
    sample_every: int = 1
    relaxation_time: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_max < 0:
            raise ConfigError("t_max must be non-negative")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be at least 1")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be at least 1")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be positive")

    @property
    def sample_dt(self):
        return self.dt * self.sample_every

    @property
    def n_steps(self):
        n = int(math.floor(self.t_max / self.dt + 1e-9))
        return n - n % self.sample_every

    @property
    def n_samples(self):
        return self.n_steps // self.sample_every + 1

    @property
    def burn_steps(self):
        return int(round(self.burn_in / self.dt))


@dataclass(frozen=True)
class SubsystemTrajectory:
    """Observed path y_i = pi(x_{i dt}), i = 0..N-1."""

    dt: float
    samples: np.ndarray
    epsilon: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ConfigError("samples must be a non-empty (N, m) array")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def m(self):
        return self.samples.shape[1]

    @property
    def times(self):
        return self.dt * np.arange(len(self.samples))

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Ensemble:
    """Replicate paths sharing one sampling step; ``samples`` is (n_traj, N, m)."""

    dt: float
    samples: np.ndarray
    epsilon: float = 0.0
    seed: int | None = None

    def __len__(self):
        return self.samples.shape[0]

    def __iter__(self) -> Iterator[SubsystemTrajectory]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        s = None if self.seed is None else replicate_seed(self.seed, i)
        return SubsystemTrajectory(self.dt, self.samples[i], self.epsilon, s)

    @property
    def times(self):
        return self.dt * np.arange(self.samples.shape[1])


# ---------------------------------------------------------------------------
# single-step operations

def drift(potential: Potential, pert: Perturbation, cmap: CoarseMap, epsilon, x):
    """-grad U(x) + eps * lift(grad v(pi(x)))."""
    x = np.asarray(x, float)
    g = -np.asarray(potential.gradient(x), float)
    if epsilon != 0:
        g = g + epsilon * cmap.lift(pert.grad_v(cmap.project(x)))
    bad = ~np.isfinite(g)
    if bad.any():
        j = int(np.argmax(bad.reshape(-1, g.shape[-1]).any(axis=0)))
        raise NumericDomainError(f"non-finite drift in coordinate {j}")
    return g


def euler_maruyama_step(x, drift_val, dt, gauss, noise_scale=SQRT2):
    """x + drift dt + noise_scale sqrt(dt) gauss."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    return np.asarray(x) + np.asarray(drift_val) * dt + noise_scale * math.sqrt(dt) * np.asarray(gauss)


# ---------------------------------------------------------------------------
# ensembles

def replicate_seed(seed, index):
    return int(seed) ^ int(index)


def n_workers():
    env = os.environ.get("RESPONSE_FORECAST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class _Integrator:
    """Chunked driver around the selected ``em_integrate`` kernel."""

    def __init__(self, potential, pert, cmap, cfg, backend=None):
        if potential.dim != cmap.d or pert.m != cmap.m:
            raise ConfigError("potential, perturbation and coarse map dimensions disagree")
        self.potential = potential
        self.pert = pert
        self.cmap = cmap
        self.cfg = cfg
        self.proj = np.asarray(cmap.indices, dtype=np.intp)
        self.amp = cfg.noise_scale * math.sqrt(cfg.dt)
        self.kernel = kernels.get_backend(backend)
        if potential.terms is None or pert.terms is None:
            self.kernel = kernels.get_backend("python")
            self.upack = self.vpack = None
        else:
            self.upack = potential.terms.packed()
            self.vpack = pert.terms.packed()

    def _run(self, x, gauss, eps, out=None, rec_offset=0, record_every=0):
        if out is None:
            out = np.empty((x.shape[0], 1, self.cmap.m))
        if self.upack is None:
            bad = _custom_integrate(self, x, gauss, eps, record_every, out, rec_offset)
        else:
            bad = self.kernel(x, gauss, self.cfg.dt, self.amp, self.upack, self.vpack,
                              self.proj, float(eps), record_every, out, rec_offset,
                              DIVERGENCE_BOUND)
        if bad >= 0:
            raise DivergenceError(
                f"replicate {bad} escaped |x| > {DIVERGENCE_BOUND:g}; "
                "reduce dt or check that U is confining"
            )

    def _draws(self, rngs, steps):
        d = self.potential.dim
        g = np.empty((len(rngs), steps, d))
        for i, r in enumerate(rngs):
            g[i] = r.standard_normal((steps, d))
        return g

    def burn(self, rngs):
        x = np.zeros((len(rngs), self.potential.dim))
        left = self.cfg.burn_steps
        while left > 0:
            s = min(_CHUNK, left)
            self._run(x, self._draws(rngs, s), 0.0)
            left -= s
        return x

    def record(self, rngs, x, eps, x_ref=None):
        """Integrate from ``x`` recording pi(x); ``x_ref`` (if given) is integrated
        alongside at eps = 0 with the same noise."""
        cfg = self.cfg
        ns = cfg.n_samples
        out = np.empty((len(rngs), ns, self.cmap.m))
        out[:, 0] = x[:, self.proj]
        ref = None
        if x_ref is not None:
            ref = np.empty_like(out)
            ref[:, 0] = x_ref[:, self.proj]
        chunk = max(cfg.sample_every, (_CHUNK // cfg.sample_every) * cfg.sample_every)
        done = 0
        while done < cfg.n_steps:
            s = min(chunk, cfg.n_steps - done)
            g = self._draws(rngs, s)
            off = 1 + done // cfg.sample_every
            self._run(x, g, eps, out, off, cfg.sample_every)
            if x_ref is not None:
                self._run(x_ref, g, 0.0, ref, off, cfg.sample_every)
            done += s
        return out, ref


def _custom_integrate(integ, x, gauss, eps, record_every, out, rec_offset):
    cmap, cfg = integ.cmap, integ.cfg
    for s in range(gauss.shape[1]):
        dv = -np.asarray(integ.potential.gradient(x), float)
        if eps != 0:
            dv = dv + eps * cmap.lift(integ.pert.grad_v(cmap.project(x)))
        x[...] = x + dv * cfg.dt + integ.amp * gauss[:, s, :]
        bad = ~(np.abs(x) <= DIVERGENCE_BOUND).all(axis=1)
        if bad.any():
            return int(np.argmax(bad))
        if record_every > 0 and (s + 1) % record_every == 0:
            out[:, rec_offset + (s + 1) // record_every - 1, :] = cmap.project(x)
    return -1


def _check_burn_in(cfg):
    if cfg.relaxation_time is not None and cfg.burn_in < 50 * cfg.relaxation_time:
        raise PreconditionError(
            f"burn_in={cfg.burn_in} is shorter than 50 relaxation times "
            f"({50 * cfg.relaxation_time:g})"
        )


def sample_equilibrium(potential: Potential, cfg: SimConfig, seed=None, backend=None):
    """State after integrating the unforced dynamics for ``cfg.burn_in`` from the origin."""
    _check_burn_in(cfg)
    cmap = CoarseMap.identity(potential.dim)
    pert = Perturbation.zero(potential.dim)
    integ = _Integrator(potential, pert, cmap, cfg, backend)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return integ.burn([rng])[0]


def _batches(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def _ensemble(potential, pert, cmap, cfg, epsilon, paired, backend, workers, batch):
    _check_burn_in(cfg)
    integ = _Integrator(potential, pert, cmap, cfg, backend)
    n = cfg.n_traj
    shape = (n, cfg.n_samples, cmap.m)
    out = np.empty(shape)
    ref = np.empty(shape) if paired else None

    def work(span):
        lo, hi = span
        rngs = [np.random.default_rng(replicate_seed(cfg.seed, i)) for i in range(lo, hi)]
        x = integ.burn(rngs)
        xr = x.copy() if paired else None
        o, r = integ.record(rngs, x, epsilon, xr)
        out[lo:hi] = o
        if paired:
            ref[lo:hi] = r

    spans = _batches(n, batch)
    workers = min(workers or n_workers(), len(spans))
    if workers <= 1:
        for sp in spans:
            work(sp)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, spans))
    return out, ref


def simulate(potential, pert, cmap, cfg: SimConfig, epsilon=None, backend=None):
    """One equilibrium-initialised path of pi(x_t) under forcing ``epsilon``."""
    eps = cfg.epsilon if epsilon is None else epsilon
    one = replace(cfg, n_traj=1)
    out, _ = _ensemble(potential, pert, cmap, one, eps, False, backend, 1, 1)
    return SubsystemTrajectory(cfg.sample_dt, out[0], eps, cfg.seed)


def simulate_ensemble(potential, pert, cmap, cfg: SimConfig, epsilon=None,
                      backend=None, workers=None, batch=256) -> Ensemble:
    """``cfg.n_traj`` replicates; replicate i is seeded with ``seed ^ i``.

    Output is independent of ``workers`` and ``batch``.
    """
    eps = cfg.epsilon if epsilon is None else epsilon
    out, _ = _ensemble(potential, pert, cmap, cfg, eps, False, backend, workers, batch)
    return Ensemble(cfg.sample_dt, out, eps, cfg.seed)


@dataclass(frozen=True)
class ForcedResponse:
    """Direct estimate of E[k(pi(x_T^eps))] on the sampling grid.

    ``mean`` averages the forced paths; ``paired`` adds the common-noise
    difference k(forced) - k(unforced) to a supplied equilibrium mean,
    which has far lower variance at small eps.
    """

    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    diff: np.ndarray
    diff_se: np.ndarray
    n_traj: int

    def paired(self, eq_mean):
        return eq_mean + self.diff


def forced_response(potential, pert, cmap, cfg: SimConfig, kappa: Callable,
                    epsilon=None, backend=None, workers=None, batch=256) -> ForcedResponse:
    """Run equilibrium-started forced and unforced copies with common noise."""
    eps = cfg.epsilon if epsilon is None else epsilon
    out, ref = _ensemble(potential, pert, cmap, cfg, eps, True, backend, workers, batch)
    kf = np.asarray(kappa(out), float)
    k0 = np.asarray(kappa(ref), float)
    if kf.ndim == 3:
        kf, k0 = kf[..., 0], k0[..., 0]
    n = kf.shape[0]
    dk = kf - k0
    ddof = 1 if n > 1 else 0
    return ForcedResponse(
        cfg.sample_dt * np.arange(kf.shape[1]),
        kf.mean(axis=0),
        kf.std(axis=0, ddof=ddof) / math.sqrt(n),
        dk.mean(axis=0),
        dk.std(axis=0, ddof=ddof) / math.sqrt(n),
        n,
    )


def stationary_covariance(a, noise_scale=SQRT2):
    """Lyapunov solution C of a C + C a^T = noise_scale^2 I for dx = -a x dt + noise dW."""
    from scipy.linalg import solve_continuous_lyapunov
    a = np.atleast_2d(np.asarray(a, float))
    return solve_continuous_lyapunov(a, noise_scale ** 2 * np.eye(a.shape[0]))


def trajectories_from(obj) -> Sequence[SubsystemTrajectory]:
    if isinstance(obj, SubsystemTrajectory):
        return [obj]
    return list(obj)
