"""Grid oracle: a reversible finite-volume discretisation of the generator
on a truncated box, used as ground truth for the response identities.

The discretisation is the square-root approximation on a cell-centred grid:
with cell masses m_i = int_cell e^{-U}, neighbouring cells exchange at rate

    L_ij = sqrt(m_j / m_i) / h^2,

which is consistent with -grad U . grad + Laplacian, has zero-flux walls,
and is exactly reversible with respect to m. The forcing direction is the
discrete carre du champ B g = Gamma(V, g), B_ij = L_ij (V_j - V_i) / 2, so
that L0 + eps B discretises L0 + eps grad V . grad and <B g> = -<V L0 g>
holds exactly on the grid.

At eps = 0 the semigroup acting on a function f is kept in modal form
P_t f = Phi (exp(-theta t) * c): from a dense eigendecomposition on small
grids, from a Lanczos process started at f on large ones.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh, expm_multiply
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from . import chain
from .correlators import CorrelatorSet, Observable
from .dynamics import CoarseMap, Perturbation, Potential
from .errors import (
    ConfigError,
    DomainTooSmallError,
    NumericDomainError,
    PreconditionError,
    StepSizeError,
)
from .response import NormBundle, error_bound, error_bound_holder, second_order_approx

DENSE_MAX = 2500
MAX_POINTS = 200_000
TAIL_MASS = 1e-6
TAIL_BAND = 0.02
N_TIME = 2048
MAX_STEP = 0.005
FD_STEP = 1e-3
FD_RTOL = 1e-4
_GL_NODES = 6
_CACHE_SIZE = 16


@dataclass(frozen=True)
class GridSpec:
    """Box [lo, hi] per axis with ``n`` cells per axis; nodes are cell centres."""

    lo: tuple
    hi: tuple
    n: tuple

    def __post_init__(self):
        lo, hi, n = (tuple(np.atleast_1d(a).tolist()) for a in (self.lo, self.hi, self.n))
        object.__setattr__(self, "lo", tuple(float(a) for a in lo))
        object.__setattr__(self, "hi", tuple(float(a) for a in hi))
        object.__setattr__(self, "n", tuple(int(a) for a in n))
        if not len(self.lo) == len(self.hi) == len(self.n):
            raise ConfigError("lo, hi and n must have the same length")
        if self.dims not in (1, 2):
            raise ConfigError("grids are 1- or 2-dimensional")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigError("need hi > lo on every axis")
        if min(self.n) < 16:
            raise ConfigError("need at least 16 points per axis")
        if self.size > MAX_POINTS:
            raise ConfigError(f"{self.size} grid points exceed the budget of {MAX_POINTS}")

    @property
    def dims(self):
        return len(self.n)

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def h(self):
        return tuple((b - a) / k for a, b, k in zip(self.lo, self.hi, self.n))

    def axis(self, i):
        a, h = self.lo[i], self.h[i]
        return a + h * (np.arange(self.n[i]) + 0.5)

    def nodes(self):
        mesh = np.meshgrid(*(self.axis(i) for i in range(self.dims)), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass(frozen=True)
class Modal:
    """P_t f = phi @ (exp(-theta t) * coef)."""

    phi: np.ndarray
    theta: np.ndarray
    coef: np.ndarray

    def amplitudes(self, t):
        t = np.asarray(t, float)
        return np.exp(-np.multiply.outer(t, self.theta)) * self.coef

    def at(self, t):
        return self.phi @ self.amplitudes(t)


def _lanczos(matvec, u, t_max, tol=1e-11, m_max=2000, check=20):
    """Modal form of exp(-t A) u for symmetric PSD ``A`` on [0, t_max].

    Full reorthogonalisation. The stopping rule uses the a-posteriori bound
    ||err(t)|| <= beta_m int_0^t |e_m^T exp(-s T_m) e_1| ds, which holds
    because exp(-t A) is a contraction; the integral is taken numerically.
    """
    n = u.size
    norm_u = float(np.linalg.norm(u))
    if norm_u == 0:
        return np.zeros((n, 0)), np.zeros(0), np.zeros(0)
    m_max = min(m_max, n)
    Q = np.empty((n, min(m_max, 256)))
    alpha = np.empty(m_max)
    beta = np.empty(m_max)
    Q[:, 0] = u / norm_u
    s_grid = np.concatenate([[0.0], t_max * np.logspace(-10, 0, 400)])
    scale = 0.0
    for j in range(m_max):
        w = matvec(Q[:, j])
        alpha[j] = Q[:, j] @ w
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        beta[j] = np.linalg.norm(w)
        scale = max(scale, abs(alpha[j]) + beta[j])
        m = j + 1
        breakdown = beta[j] <= 1e-14 * scale
        if breakdown or m == m_max or m % check == 0:
            theta, Y = linalg.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            theta = np.clip(theta, 0.0, None)
            # |e_m^T exp(-s T_m) e_1| on a log-spaced s grid, trapezoid in s
            g = np.abs(np.exp(-np.multiply.outer(s_grid, theta)) @ (Y[-1] * Y[0]))
            err = 0.0 if breakdown else beta[j] * float(trapezoid(g, s_grid))
            if err <= tol:
                return Q[:, :m] @ Y, theta, norm_u * Y[0]
            if m == m_max:
                raise NumericDomainError(
                    f"Lanczos did not reach {tol:g} within {m_max} steps (err {err:.2g})"
                )
        if j + 1 == Q.shape[1]:
            Q = np.concatenate([Q, np.empty((n, min(256, m_max - Q.shape[1])))], axis=1)
        Q[:, j + 1] = w / beta[j]
    raise AssertionError("unreachable")


def simpson_weights(n_int, step):
    """Composite Simpson weights; an odd interval count ends with a 3/8 panel."""
    if n_int < 1:
        return np.zeros(n_int + 1)
    w = np.zeros(n_int + 1)
    if n_int == 1:
        w[:] = step / 2
        return w
    k = n_int if n_int % 2 == 0 else n_int - 3
    if k > 0:
        w[0:k + 1:2] += 2 * step / 3
        w[1:k:2] += 4 * step / 3
        w[0] -= step / 3
        w[k] -= step / 3
    if n_int % 2:
        w[k:] += 3 * step / 8 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


class GridOperator:
    """Discretised L0 and forcing direction B with stationary weights ``mu_w``.

    Immutable after construction; spectral data is computed lazily.
    """

    def __init__(self, spec: GridSpec, potential: Potential, pert: Perturbation,
                 cmap: CoarseMap, log_mass: np.ndarray):
        self.spec = spec
        self._modal_cache = {}
        self.potential = potential
        self.pert = pert
        self.cmap = cmap
        self.nodes = spec.nodes()
        self.log_mass = log_mass - logsumexp(log_mass)
        self.mu_w = np.exp(self.log_mass)
        self.V = np.asarray(pert.v(cmap.project(self.nodes)), float).reshape(-1)
        rows, cols, rate_ij, sym_ij = self._edges()
        n = spec.size
        L = sparse.csr_matrix((rate_ij, (rows, cols)), shape=(n, n))
        self._diag = -np.asarray(L.sum(axis=1)).ravel()
        self.L0 = (L + sparse.diags(self._diag)).tocsr()
        S = sparse.csr_matrix((sym_ij, (rows, cols)), shape=(n, n))
        # A = -D^{1/2} L0 D^{-1/2}: symmetric positive semidefinite
        self.A = (-(S + sparse.diags(self._diag))).tocsr()
        b_ij = 0.5 * rate_ij * (self.V[cols] - self.V[rows])
        Boff = sparse.csr_matrix((b_ij, (rows, cols)), shape=(n, n))
        self.B = (Boff - sparse.diags(np.asarray(Boff.sum(axis=1)).ravel())).tocsr()

    def _edges(self):
        spec = self.spec
        idx = np.arange(spec.size).reshape(spec.n)
        lm = self.log_mass
        rows, cols, rates, syms = [], [], [], []
        for a in range(spec.dims):
            h2 = spec.h[a] ** 2
            lo = np.take(idx, np.arange(spec.n[a] - 1), axis=a).ravel()
            hi = np.take(idx, np.arange(1, spec.n[a]), axis=a).ravel()
            for i, j in ((lo, hi), (hi, lo)):
                rows.append(i)
                cols.append(j)
                rates.append(np.exp(0.5 * (lm[j] - lm[i])) / h2)
                syms.append(np.full(i.size, 1.0 / h2))
        return (np.concatenate(rows), np.concatenate(cols),
                np.concatenate(rates), np.concatenate(syms))

    @property
    def size(self):
        return self.spec.size

    @property
    def dense(self):
        return self.size <= DENSE_MAX

    # -- functions on the grid -------------------------------------------

    def lift(self, obs):
        """Grid values of a subsystem observable, or pass an array through."""
        if isinstance(obs, (Observable,)) or callable(obs):
            vals = obs(self.cmap.project(self.nodes))
            return np.asarray(vals, float).reshape(-1)
        arr = np.asarray(obs, float).reshape(-1)
        if arr.size != self.size:
            raise ConfigError("grid function has the wrong length")
        return arr

    def mean(self, f):
        return float(self.mu_w @ f)

    def inner(self, f, g):
        return float(self.mu_w @ (f * g))

    def norm(self, f, p=2.0):
        if math.isinf(p):
            return float(np.abs(f).max())
        return float((self.mu_w @ np.abs(f) ** p) ** (1 / p))

    @cached_property
    def LV(self):
        return self.L0 @ self.V

    @cached_property
    def labels(self):
        """Partition of grid cells by the projected coordinates."""
        idx = np.indices(self.spec.n).reshape(self.spec.dims, -1)
        sub = idx[list(self.cmap.indices)]
        return chain.StatePartition(np.ravel_multi_index(sub, [self.spec.n[i] for i in self.cmap.indices]))

    @cached_property
    def tail_mass(self):
        """Stationary mass within the outer band of every face."""
        spec = self.spec
        mask = np.zeros(spec.n, bool)
        for a in range(spec.dims):
            k = max(1, int(round(TAIL_BAND * spec.n[a])))
            sl = [slice(None)] * spec.dims
            sl[a] = slice(0, k)
            mask[tuple(sl)] = True
            sl[a] = slice(spec.n[a] - k, None)
            mask[tuple(sl)] = True
        return float(self.mu_w[mask.ravel()].sum())

    # -- spectral data ----------------------------------------------------

    @cached_property
    def _eig(self):
        theta, psi = linalg.eigh(self.A.toarray())
        return _snap(theta), psi

    def modal(self, f, t_max=1.0, tol=1e-11) -> Modal:
        """Modal form of P_t f at eps = 0, accurate on [0, t_max].

        Lanczos results are cached by the bytes of ``f``, so a sweep over
        horizons should request the largest one first.
        """
        f = np.ascontiguousarray(f, float)
        s = np.sqrt(self.mu_w)
        key = hashlib.sha1(f.tobytes()).hexdigest()
        hit = self._modal_cache.get(key)
        if hit is not None and hit[0] >= t_max and hit[1] <= tol:
            return hit[2]
        if self.dense:
            theta, psi = self._eig
            coef = psi.T @ (s * f)
            keep = np.abs(coef) > 1e-17 * max(np.abs(coef).max(), 1e-300)
            return Modal(psi[:, keep] / s[:, None], theta[keep], coef[keep])
        Y, theta, coef = _lanczos(self.A.dot, s * f, max(t_max, 1e-12), tol)
        mod = Modal(Y / s[:, None], theta, coef)
        if len(self._modal_cache) >= _CACHE_SIZE:
            self._modal_cache.pop(next(iter(self._modal_cache)))
        self._modal_cache[key] = (t_max, tol, mod)
        return mod

    def low_spectrum(self, k=50):
        """Lowest ``k`` eigenvalues of -L0 with mu-orthonormal eigenvectors."""
        s = np.sqrt(self.mu_w)
        if self.dense:
            theta, psi = self._eig
            return theta[:k], psi[:, :k] / s[:, None]
        k = min(k, self.size - 2)
        theta, psi = eigsh(self.A, k=k, sigma=-1e-3, which="LM")
        order = np.argsort(theta)
        return _snap(theta[order]), psi[:, order] / s[:, None]

    def generator_eps(self, epsilon):
        return (self.L0 + epsilon * self.B).tocsr()


def _snap(theta):
    # the constant mode comes back as +-1e-14 or so
    theta = np.clip(theta, 0.0, None)
    return np.where(theta < 1e-10 * max(1.0, float(theta.max())), 0.0, theta)


def discretize(potential: Potential, pert: Perturbation, cmap: CoarseMap,
               spec: GridSpec) -> GridOperator:
    """Build the grid operator; cell masses use tensor Gauss-Legendre rules."""
    if potential.dim != spec.dims:
        raise ConfigError(f"potential is {potential.dim}-D, grid is {spec.dims}-D")
    if cmap.d != spec.dims or pert.m != cmap.m:
        raise ConfigError("coarse map, perturbation and grid dimensions disagree")
    g, gw = np.polynomial.legendre.leggauss(_GL_NODES)
    centres = spec.nodes()
    offs = np.stack(np.meshgrid(*([g] * spec.dims), indexing="ij"), -1).reshape(-1, spec.dims)
    logw = np.log(np.prod(np.stack(np.meshgrid(*([gw] * spec.dims), indexing="ij"), -1)
                          .reshape(-1, spec.dims), axis=1))
    half = 0.5 * np.asarray(spec.h)
    pts = centres[:, None, :] + offs[None, :, :] * half
    energy = np.asarray(potential.energy(pts.reshape(-1, spec.dims)), float).reshape(pts.shape[:2])
    if not np.all(np.isfinite(energy)):
        raise NumericDomainError("potential is not finite on the grid")
    log_mass = logsumexp(-energy + logw[None, :], axis=1)
    op = GridOperator(spec, potential, pert, cmap, log_mass)
    if op.tail_mass >= TAIL_MASS:
        raise DomainTooSmallError(
            f"stationary mass {op.tail_mass:.3g} near the walls exceeds {TAIL_MASS:g}; enlarge the box"
        )
    return op


# ---------------------------------------------------------------------------
# semigroup

def propagate(op: GridOperator, epsilon, t, g):
    """exp(t (L0 + eps B)) g."""
    if t < 0:
        raise PreconditionError("t must be non-negative")
    g = np.asarray(g, float)
    if t == 0:
        return g.copy()
    if epsilon == 0 and op.dense:
        return op.modal(g, t).at(t)
    # a single sparse action: Krylov needs no modal basis for stiff fine grids
    return _expm_action(op, epsilon, t, g)


def _expm_action(op, epsilon, t, g):
    A = op.generator_eps(epsilon)
    if op.dense:
        return linalg.expm(t * A.toarray()) @ g
    return expm_multiply(t * A, g)


def _path(op, epsilon, T, g, n_int):
    """Rows P^eps_{t_j} g on t_j = j T / n_int."""
    g = np.asarray(g, float)
    if epsilon == 0:
        mod = op.modal(g, T)
        return mod.amplitudes(np.linspace(0, T, n_int + 1)) @ mod.phi.T
    A = op.generator_eps(epsilon)
    if op.dense:
        step = linalg.expm((T / n_int) * A.toarray())
        out = np.empty((n_int + 1, g.size))
        out[0] = g
        for j in range(n_int):
            out[j + 1] = step @ out[j]
        return out
    return expm_multiply(A, g, start=0, stop=T, num=n_int + 1, endpoint=True)


def dyson_residual(op: GridOperator, epsilon, T, g, n_nodes=129):
    """L2(mu) norm of P^eps_T g - P_T g - eps int_0^T P_s B P^eps_{T-s} g ds.

    The identity is exact, so the residual is Simpson error in s.
    """
    if not T > 0:
        raise PreconditionError("T must be positive")
    if n_nodes < 33 or n_nodes % 2 == 0:
        raise ConfigError("need an odd Simpson node count of at least 33")
    n_int = n_nodes - 1
    g = op.lift(g)
    if epsilon == 0:
        return 0.0
    forced = _path(op, epsilon, T, g, n_int)          # P^eps_{t_j} g
    inner = (op.B @ forced[::-1].T).T                  # B P^eps_{T - s_j} g
    s = np.linspace(0, T, n_int + 1)
    w = simpson_weights(n_int, T / n_int)
    acc = w[0] * inner[0]
    for j in range(1, n_int + 1):
        if op.dense:
            acc += w[j] * propagate(op, 0.0, s[j], inner[j])
        else:
            # one Lanczos run per node would dominate; a Krylov action is cheaper
            acc += w[j] * expm_multiply(s[j] * op.L0, inner[j])
    r = forced[-1] - propagate(op, 0.0, T, g) - epsilon * acc
    return op.norm(r)


# ---------------------------------------------------------------------------
# response of F(eps) = < P^eps_T k >_mu

def _F(op, epsilon, T, k):
    # one propagation path for every eps, so differences see no method switch
    return op.mean(_expm_action(op, epsilon, T, k))


def response_derivatives_fd(op: GridOperator, T, kappa, h=FD_STEP, rtol=FD_RTOL):
    """Central differences of F at eps = 0, Richardson-refined from h and h/2."""
    if not T > 0:
        raise PreconditionError("T must be positive")
    k = op.lift(kappa)
    f0 = _F(op, 0.0, T, k)

    def diffs(step):
        fp, fm = _F(op, step, T, k), _F(op, -step, T, k)
        return (fp - fm) / (2 * step), (fp - 2 * f0 + fm) / step ** 2

    d1a, d2a = diffs(h)
    d1b, d2b = diffs(h / 2)
    for a, b, name in ((d1a, d1b, "d1"), (d2a, d2b, "d2")):
        if abs(a - b) > rtol * max(abs(b), 1e-6):
            raise StepSizeError(f"{name} unstable under step refinement: {a:.10g} vs {b:.10g}")
    return (4 * d1b - d1a) / 3, (4 * d2b - d2a) / 3


@dataclass(frozen=True)
class _Pieces:
    """Modal data shared by the second-order quantities at one horizon."""

    T: float
    k: np.ndarray
    mV: Modal
    mk: Modal
    Ev: np.ndarray      # amplitudes of P_t V at t_j
    Ek: np.ndarray      # amplitudes of P_t k at t_j
    M: np.ndarray       # phi_V^T diag(mu LV) phi_k
    n_int: int


def time_intervals(T, n_int=None):
    """Default Simpson interval count: at least N_TIME, step at most MAX_STEP,
    divisible by 4 so that T/2 is a node of both half-grids."""
    if n_int is None:
        n_int = max(N_TIME, 4 * math.ceil(T / (4 * MAX_STEP)))
    return n_int


def _pieces(op, T, kappa, n_int=None):
    n_int = time_intervals(T, n_int)
    if n_int % 4:
        raise ConfigError("time interval count must be divisible by 4")
    k = op.lift(kappa)
    mV = op.modal(op.V, T)
    mk = op.modal(k, T)
    t = np.linspace(0, T, n_int + 1)
    M = mV.phi.T @ ((op.mu_w * op.LV)[:, None] * mk.phi)
    return _Pieces(T, k, mV, mk, mV.amplitudes(t), mk.amplitudes(t), M, n_int)


def _cross(p: _Pieces):
    """G_j = < P_{T - t_j} V . LV . P_{t_j} k >."""
    return np.einsum("ja,ab,jb->j", p.Ev[::-1], p.M, p.Ek, optimize=True)


def exact_second_order(op: GridOperator, T, kappa, n_int=None):
    """<V^2 k> - <V P_T (V k)> + int_0^T <P_t V . L0 V . P_{T-t} k> dt."""
    if not T > 0:
        raise PreconditionError("T must be positive")
    p = _pieces(op, T, kappa, n_int)
    return _exact_from(op, p)


def _exact_from(op, p):
    V, k = op.V, p.k
    w = simpson_weights(p.n_int, p.T / p.n_int)
    lag = op.inner(V, propagate(op, 0.0, p.T, V * k))
    return op.mean(V * V * k) - lag + float(w @ _cross(p))


def remainder_terms(op: GridOperator, T, kappa, n_int=None):
    """(f_V, f_k): the two remainder integrals split at T/2."""
    if not T > 0:
        raise PreconditionError("T must be positive")
    p = _pieces(op, T, kappa, n_int)
    return _remainders_from(op, p)


def _remainders_from(op, p):
    half = p.n_int // 2
    G = _cross(p)
    wLV = op.mu_w * op.LV
    a_k = p.mk.phi.T @ wLV
    a_V = p.mV.phi.T @ wLV
    gv = G[: half + 1] - op.mean(op.V) * (p.Ek[: half + 1] @ a_k)
    gk = G[half:] - op.mean(p.k) * (p.Ev[::-1][half:] @ a_V)
    w = simpson_weights(half, p.T / p.n_int)
    return float(w @ gv), float(w @ gk)


def grid_correlators(op: GridOperator, kappa, T) -> CorrelatorSet:
    """The nine subsystem averages evaluated exactly on the grid."""
    if T < 0:
        raise PreconditionError("T must be non-negative")
    k = op.lift(kappa)
    V = op.V
    return CorrelatorSet(
        float(T),
        mean_k=op.mean(k),
        mean_V=op.mean(V),
        mean_Vk=op.inner(V, k),
        mean_V2=op.inner(V, V),
        mean_V2k=op.mean(V * V * k),
        lag_V_k_T=op.inner(V, propagate(op, 0.0, T, k)),
        lag_V_Vk_T=op.inner(V, propagate(op, 0.0, T, V * k)),
        lag_V_k_halfT=op.inner(V, propagate(op, 0.0, T / 2, k)),
        lag_V_V_halfT=op.inner(V, propagate(op, 0.0, T / 2, V)),
        se={},
        dt=0.0,
    )


def general_protocol_response(op: GridOperator, h: Callable, T, kappa, n_int=512):
    """First and second eps-derivatives of <k(x_T)> for forcing h_t grad V.

    d1 = -int_0^T h_t <V L0 P_{T-t} k> dt,
    d2 = -2 int_0^T int_0^{t1} h_{t1} h_{t2} <(L0 V) P_{t1-t2} (B P_{T-t1} k)> dt2 dt1,
    the inner integral by nested composite Simpson.
    """
    if not T > 0:
        raise PreconditionError("T must be positive")
    if n_int % 2:
        raise ConfigError("interval count must be even")
    t = np.linspace(0, T, n_int + 1)
    hv = np.broadcast_to(np.asarray([h(s) for s in t], float), t.shape)
    if not np.all(np.isfinite(hv)):
        raise ConfigError("protocol h is not bounded on [0, T]")
    k = op.lift(kappa)
    step = T / n_int
    mk = op.modal(k, T)
    mL = op.modal(op.LV, T)
    Ek = mk.amplitudes(t)
    EL = mL.amplitudes(t)
    w = simpson_weights(n_int, step)
    a_k = mk.phi.T @ (op.mu_w * op.LV)
    d1 = -float(w @ (hv * (Ek[::-1] @ a_k)))
    # N = phi_LV^T diag(mu) B phi_k
    N = mL.phi.T @ (op.mu_w[:, None] * (op.B @ mk.phi))
    right = Ek[::-1] @ N.T                       # rows: N e_k(T - t_i)
    outer = np.zeros(n_int + 1)
    for i in range(1, n_int + 1):
        wi = simpson_weights(i, step)
        inner = (wi * hv[: i + 1]) @ EL[i::-1]   # sum_j w_j h_j e_L(t_i - t_j)
        outer[i] = hv[i] * (inner @ right[i])
    d2 = -2.0 * float(w @ outer)
    return d1, d2


def quadrature_norms(op: GridOperator, kappa, v=None, p=2.0) -> NormBundle:
    """Norms of k, V and L0 V under the grid weights; Hoelder pair (p, p/(p-1))."""
    k = op.lift(kappa)
    if v is None:
        V, LV = op.V, op.LV
    else:
        V = op.lift(v)
        LV = op.L0 @ V
    q = p / (p - 1)
    return NormBundle(
        k_2=op.norm(k), V_2=op.norm(V), LV_2=op.norm(LV),
        k_inf=op.norm(k, math.inf), V_inf=op.norm(V, math.inf),
        k_2p=op.norm(k, 2 * p), V_2p=op.norm(V, 2 * p), LV_2q=op.norm(LV, 2 * q),
        p=p, q=q,
    )


def subsystem_gap(op: GridOperator, k=50, tol=1e-9):
    """lambda_pi of the grid generator for the column partition of ``op.cmap``.

    Uses the lowest ``k`` eigenpairs; returns ``(gap, report)`` where gap is
    ``chain.NO_COUPLING`` when none of them couples to the subsystem.
    """
    theta, phi = op.low_spectrum(k)
    gap, norms, coupled, groups = chain.coupling_table(theta, phi, op.mu_w, op.labels, tol)
    rep = chain.SpectralReport(theta, phi, float(theta[1]), gap, norms, coupled, groups)
    return gap, rep


# ---------------------------------------------------------------------------
# verification sweep

ORACLE_HEADER = "T,d1_fd,d1_lemma,d2_fd,d2_exact,d2_approx,fV,fk,bound"


@dataclass(frozen=True)
class OracleRow:
    T: float
    d1_fd: float
    d1_lemma: float
    d2_fd: float
    d2_exact: float
    d2_approx: float
    fV: float
    fk: float
    bound: float

    def values(self):
        return (self.T, self.d1_fd, self.d1_lemma, self.d2_fd, self.d2_exact,
                self.d2_approx, self.fV, self.fk, self.bound)


@dataclass
class OracleReport:
    rows: list
    lambda_pi: float
    dyson: float
    failures: list

    @property
    def ok(self):
        return not self.failures

    def to_csv(self):
        lines = [ORACLE_HEADER]
        for r in self.rows:
            lines.append(",".join(f"{x:.17g}" for x in r.values()))
        return "\n".join(lines) + "\n"


def oracle_row(op: GridOperator, T, kappa, lambda_pi, norms: NormBundle | None = None,
               fd=True, n_int=None) -> OracleRow:
    k = op.lift(kappa)
    c = grid_correlators(op, k, T)
    p = _pieces(op, T, k, n_int)
    d2_exact = _exact_from(op, p)
    fV, fk = _remainders_from(op, p)
    d1_fd, d2_fd = response_derivatives_fd(op, T, k) if fd else (math.nan, math.nan)
    norms = quadrature_norms(op, k) if norms is None else norms
    if norms.V_inf is not None and norms.k_inf is not None:
        bound = error_bound(norms, lambda_pi, T)
    else:
        bound = error_bound_holder(norms, lambda_pi, T)
    return OracleRow(T, d1_fd, c.mean_Vk - c.lag_V_k_T, d2_fd, d2_exact,
                     second_order_approx(c), fV, fk, bound)


def warm(op: GridOperator, kappa, t_max):
    """Precompute the modal forms a sweep up to ``t_max`` needs."""
    k = op.lift(kappa)
    for f in (op.V, k, op.V * k):
        op.modal(f, t_max)
    return k


def sweep(op: GridOperator, kappa, times, lambda_pi, norms: NormBundle | None = None,
          fd=False) -> list:
    """``oracle_row`` at each horizon, sharing the modal forms."""
    k = warm(op, kappa, max(times))
    norms = quadrature_norms(op, k) if norms is None else norms
    return [oracle_row(op, T, k, lambda_pi, norms, fd) for T in times]


def verify(op: GridOperator, kappa, times, fd=True, dyson_eps=0.2, dyson_T=1.0,
           dyson_nodes=129, tol_d1=1e-5, tol_d2=1e-4, tol_dyson=1e-5,
           tol_split=1e-8) -> OracleReport:
    """Run the identity checks over ``times``; failures are listed, not raised."""
    lam, _ = subsystem_gap(op)
    rows = sweep(op, kappa, times, lam, fd=fd)
    k = op.lift(kappa)
    failures = []
    for T, r in zip(times, rows):
        if fd and abs(r.d1_fd - r.d1_lemma) > tol_d1:
            failures.append(f"T={T}: |d1_fd - d1_lemma| = {abs(r.d1_fd - r.d1_lemma):.3g}")
        if fd and abs(r.d2_fd - r.d2_exact) > tol_d2:
            failures.append(f"T={T}: |d2_fd - d2_exact| = {abs(r.d2_fd - r.d2_exact):.3g}")
        split = abs(r.d2_exact - r.d2_approx - r.fV - r.fk)
        if split > tol_split:
            failures.append(f"T={T}: decomposition residual {split:.3g}")
        if abs(r.fV + r.fk) > r.bound * (1 + 1e-9) + 1e-12:
            failures.append(f"T={T}: |fV + fk| = {abs(r.fV + r.fk):.3g} exceeds bound {r.bound:.3g}")
    dy = dyson_residual(op, dyson_eps, dyson_T, k, dyson_nodes) if fd else math.nan
    if fd and dy > tol_dyson:
        failures.append(f"dyson residual {dy:.3g}")
    return OracleReport(rows, lam, dy, failures)
