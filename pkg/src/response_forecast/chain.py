"""Spectral analysis of finite-state reversible generators and the
subsystem spectral gap of a state partition.

All eigen-solves go through the mu-symmetrised matrix
D^{1/2} Q D^{-1/2}, D = diag(mu), which is symmetric exactly when Q is
reversible. Eigenvectors are returned mu-orthonormal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, PreconditionError, ReversibilityError

NO_COUPLING = math.inf


@dataclass(frozen=True)
class GeneratorMatrix:
    Q: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, float)
        mu = np.asarray(self.mu, float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or mu.shape != (Q.shape[0],):
            raise ConfigError("Q must be n x n and mu of length n")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self):
        return self.Q.shape[0]

    def validate(self, atol=1e-12):
        Q, mu = self.Q, self.mu
        off = Q - np.diag(np.diag(Q))
        if (off < 0).any():
            raise ConfigError("off-diagonal rates must be non-negative")
        if np.abs(Q.sum(axis=1)).max() > atol:
            raise ConfigError("rows of Q must sum to zero")
        if (mu <= 0).any() or abs(mu.sum() - 1) > 1e-12:
            raise ConfigError("mu must be a positive probability vector")
        flux = mu[:, None] * Q
        err = np.abs(flux - flux.T).max()
        if err > atol:
            raise ReversibilityError(f"detailed balance violated by {err:.3g}")
        return self

    @classmethod
    def from_rates(cls, Q):
        """Generator with mu computed as the normalised null vector of Q^T."""
        Q = np.asarray(Q, float)
        w = linalg.null_space(Q.T)
        if w.shape[1] != 1:
            raise ConfigError("Q must have a unique invariant distribution")
        mu = np.abs(w[:, 0])
        return cls(Q, mu / mu.sum())


@dataclass(frozen=True)
class StatePartition:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or lab.size == 0:
            raise ConfigError("labels must be a non-empty vector")
        _, inv = np.unique(lab, return_inverse=True)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "_codes", inv.ravel())

    @property
    def codes(self):
        """Labels re-coded as 0..k-1 in sorted label order."""
        return self._codes

    @property
    def n_classes(self):
        return int(self._codes.max()) + 1

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def single(cls, n):
        return cls(np.zeros(n, dtype=int))


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gap: float
    subsystem_gap: float | None = None
    coupling_norms: np.ndarray | None = None
    in_subsystem: np.ndarray | None = None
    groups: list = field(default_factory=list)

    def rows(self):
        """(lambda, coupling_norm, in_subsystem) per eigenvalue; the flag marks
        eigenspaces that are not orthogonal to the subsystem observables."""
        n = len(self.eigenvalues)
        c = np.full(n, np.nan) if self.coupling_norms is None else self.coupling_norms
        flags = np.zeros(n, bool) if self.in_subsystem is None else self.in_subsystem
        return [(float(l), float(ci), bool(fi)) for l, ci, fi in zip(self.eigenvalues, c, flags)]

    def to_csv(self):
        lines = ["lambda,coupling_norm,in_subsystem"]
        for lam, c, flag in self.rows():
            lines.append(f"{lam:.17g},{c:.17g},{int(flag)}")
        return "\n".join(lines) + "\n"


def _symmetric_eig(Q, mu):
    s = np.sqrt(mu)
    S = s[:, None] * Q / s[None, :]
    asym = np.abs(S - S.T).max() if S.size else 0.0
    if asym > 1e-10 * max(1.0, np.abs(S).max()):
        raise ReversibilityError(f"symmetrised generator is not symmetric ({asym:.3g})")
    lam, w = np.linalg.eigh(-0.5 * (S + S.T))
    return lam, w / s[:, None]


def spectrum(gen: GeneratorMatrix) -> SpectralReport:
    """Eigenvalues of -Q, ascending, with mu-orthonormal eigenvectors."""
    gen.validate()
    lam, phi = _symmetric_eig(gen.Q, gen.mu)
    lam = np.where(np.abs(lam) < 1e-13, 0.0, lam)
    # fix sign convention: the constant mode positive
    phi = phi * np.where(phi.sum(axis=0) < 0, -1.0, 1.0)
    gap = float(lam[1]) if len(lam) > 1 else math.inf
    return SpectralReport(lam, phi, gap)


def conditional_expectation(f, part: StatePartition, mu):
    """E_mu(f | labels): on each class the mu-weighted class mean."""
    f = np.asarray(f, float)
    mu = np.asarray(mu, float)
    codes = part.codes
    if codes.shape[0] != f.shape[0]:
        raise ConfigError("partition and vector lengths differ")
    k = part.n_classes
    mass = np.bincount(codes, mu, minlength=k)
    if f.ndim == 1:
        return (np.bincount(codes, mu * f, minlength=k) / mass)[codes]
    cols = [np.bincount(codes, mu * f[:, j], minlength=k) / mass for j in range(f.shape[1])]
    return np.stack(cols, axis=1)[codes]


def group_eigenvalues(lam, rel=1e-9):
    """Index groups of eigenvalues equal within ``rel`` relative tolerance."""
    groups = []
    start = 0
    for i in range(1, len(lam) + 1):
        if i == len(lam) or abs(lam[i] - lam[start]) > rel * max(abs(lam[start]), 1.0):
            groups.append(list(range(start, i)))
            start = i
    return groups


def coupling_table(lam, phi, mu, part: StatePartition, tol=1e-9, rel=1e-9):
    """Per-eigenvalue coupling norms and the subsystem spectral gap.

    Each group of (numerically) equal eigenvalues is tested as a subspace:
    its coupling norm is the operator norm of E(. | labels) restricted to
    the span, which does not depend on the basis the solver returned.
    """
    mu = np.asarray(mu, float)
    ce = conditional_expectation(phi, part, mu)
    groups = group_eigenvalues(lam, rel)
    norms = np.empty(len(lam))
    coupled = np.zeros(len(lam), dtype=bool)
    gap = NO_COUPLING
    for g in groups:
        p = ce[:, g]
        gram = p.T @ (mu[:, None] * p)
        c = math.sqrt(max(float(np.linalg.eigvalsh(gram)[-1]), 0.0))
        norms[g] = c
        if c > tol:
            coupled[g] = True
        if lam[g[0]] > 0 and c > tol and gap == NO_COUPLING:
            gap = float(lam[g[0]])
    return gap, norms, coupled, groups


def subsystem_spectral_gap(gen: GeneratorMatrix, part: StatePartition, tol=1e-9,
                           report: SpectralReport | None = None):
    """(lambda_pi, coupling_norms); lambda_pi is ``NO_COUPLING`` (inf) when no
    non-zero eigenvalue couples to the subsystem."""
    if tol <= 0:
        raise ConfigError("tol must be positive")
    rep = spectrum(gen) if report is None else report
    if len(part.labels) != gen.n:
        raise ConfigError("partition length differs from state count")
    lam = rep.eigenvalues
    # zero-eigenvalue groups are excluded from the infimum
    gap, norms, coupled, groups = coupling_table(lam, rep.eigenvectors, gen.mu, part, tol)
    rep.subsystem_gap = gap
    rep.coupling_norms = norms
    rep.in_subsystem = coupled
    rep.groups = groups
    return gap, norms


def analyse(gen: GeneratorMatrix, part: StatePartition, tol=1e-9) -> SpectralReport:
    rep = spectrum(gen)
    subsystem_spectral_gap(gen, part, tol, rep)
    return rep


def semigroup_apply(gen: GeneratorMatrix, t, f, report: SpectralReport | None = None):
    """exp(tQ) f through the spectral decomposition."""
    if t < 0:
        raise PreconditionError("t must be non-negative")
    rep = spectrum(gen) if report is None else report
    phi = rep.eigenvectors
    f = np.asarray(f, float)
    coef = phi.T @ (gen.mu * f)
    return phi @ (np.exp(-rep.eigenvalues * t) * coef)


@dataclass
class DecayReport:
    times: np.ndarray
    ratios: np.ndarray       # <(P_t f)^2> / <f^2>
    bounds: np.ndarray       # exp(-2 lambda_pi t)
    exponents: np.ndarray    # -log(ratio) / (2 t)
    lambda_pi: float
    holds: bool


def verify_decay(gen: GeneratorMatrix, part: StatePartition, f, times, tol=1e-9,
                 slack=1e-10) -> DecayReport:
    """Check <(P_t f)^2> <= exp(-2 lambda_pi t) <f^2> (1 + slack) at each t."""
    f = np.asarray(f, float)
    mu = gen.mu
    if np.abs(conditional_expectation(f, part, mu) - f).max() > 1e-10 * max(1.0, np.abs(f).max()):
        raise PreconditionError("f is not measurable with respect to the partition")
    if abs(mu @ f) > 1e-12 * max(1.0, np.abs(f).max()):
        raise PreconditionError("f must have zero mean under mu")
    rep = spectrum(gen)
    lam_pi, _ = subsystem_spectral_gap(gen, part, tol, rep)
    f2 = mu @ (f * f)
    times = np.asarray(times, float)
    ratios = np.empty(len(times))
    for i, t in enumerate(times):
        pf = semigroup_apply(gen, t, f, rep)
        ratios[i] = (mu @ (pf * pf)) / f2 if f2 > 0 else 0.0
    bounds = np.exp(-2 * lam_pi * times) if math.isfinite(lam_pi) else (times == 0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(times > 0, -np.log(ratios) / (2 * times), np.nan)
    holds = bool(np.all(ratios <= bounds * (1 + slack) + 1e-300))
    return DecayReport(times, ratios, bounds, expo, lam_pi, holds)


# ---------------------------------------------------------------------------
# bundled example and random reversible chains

def example_chain():
    """Four-state chain whose partition {1,4}|{2,3} hides the slowest mode."""
    Q = np.array([
        [-0.9, 0.8, 0.0, 0.1],
        [0.8, -0.9, 0.1, 0.0],
        [0.0, 0.1, -1.0, 0.9],
        [0.1, 0.0, 0.9, -1.0],
    ])
    return GeneratorMatrix(Q, np.full(4, 0.25)), StatePartition(np.array([0, 1, 1, 0]))


def random_reversible(n, rng, density=0.7):
    """Random reversible generator: symmetric conductances over a random mu."""
    mu = rng.uniform(0.2, 1.0, n)
    mu /= mu.sum()
    c = rng.uniform(0.1, 2.0, (n, n)) * (rng.random((n, n)) < density)
    c = np.triu(c, 1)
    # ring keeps the chain irreducible
    for i in range(n):
        j = (i + 1) % n
        a, b = min(i, j), max(i, j)
        c[a, b] = max(c[a, b], 0.3)
    c = c + c.T
    Q = c / mu[:, None]
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return GeneratorMatrix(Q, mu)


# ---------------------------------------------------------------------------
# chain file format: n, n rows of Q, mu row, label row; '#' comments

def read_chain(text):
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
    try:
        n = int(rows[0][0])
        Q = np.array(rows[1:1 + n])
        mu = np.array(rows[1 + n])
        labels = np.array(rows[2 + n]).astype(int)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed chain file: {exc}") from exc
    if Q.shape != (n, n) or mu.shape != (n,) or labels.shape != (n,):
        raise ConfigError("chain file dimensions do not match n")
    return GeneratorMatrix(Q, mu), StatePartition(labels)


def write_chain(gen: GeneratorMatrix, part: StatePartition):
    lines = [str(gen.n)]
    lines += [" ".join(f"{q:.17g}" for q in row) for row in gen.Q]
    lines.append(" ".join(f"{m:.17g}" for m in gen.mu))
    lines.append(" ".join(str(int(v)) for v in part.labels))
    return "\n".join(lines) + "\n"
