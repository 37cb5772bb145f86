"""Acceptance gate: one check per criterion, each reporting a single
PASS / FAIL / FLAG line (echoed in the terminal summary).

Criteria that cannot be met are implemented faithfully and marked
``xfail(strict=True)``; they stay red in the report and turn the suite
red if they ever start passing without review.
"""

import math
import time

import numpy as np
import pytest

from response_forecast import chain, experiments, oracle
from response_forecast.dynamics import SimConfig
from response_forecast.response import (
    gap_factor,
    ou_bound,
    ou_constant,
    ou_gap,
    second_order_approx,
)

from .conftest import ACCEPTANCE_LINES

PUBLISHED_OU_CONSTANT = 2.564


def report(n, status, detail):
    line = f"criterion {n} {status}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def gate(n, ok, detail):
    report(n, "PASS" if ok else "FAIL", detail)
    assert ok, detail


# ---------------------------------------------------------------------------

def test_criterion_1_chain_example_exact():
    t0 = time.perf_counter()
    gen, part = chain.example_chain()
    rep = chain.analyse(gen, part)
    want = np.array([0.0, 0.2, (18 - math.sqrt(2)) / 10, (18 + math.sqrt(2)) / 10])
    eig_err = float(np.abs(rep.eigenvalues - want).max())
    ce = chain.conditional_expectation(np.array([-1.0, -1.0, 1.0, 1.0]), part, gen.mu)
    elapsed = time.perf_counter() - t0
    ok = (eig_err <= 1e-10 and abs(rep.gap - 0.2) <= 1e-10
          and abs(rep.subsystem_gap - want[2]) <= 1e-10
          and np.all(ce == 0.0) and elapsed < 1.0)
    gate(1, ok, f"eig err {eig_err:.1e}, lambda* = {rep.gap:.12g}, "
                f"lambda_pi = {rep.subsystem_gap:.12g}, E(v2|pi) = {ce.tolist()}, {elapsed:.3f} s")


def _worst_ratio(gen, part, rep, t):
    """sup over measurable mean-zero f of <(P_t f)^2> / <f^2>."""
    mu = gen.mu
    k = part.n_classes
    E = np.eye(k)[part.codes]                      # class indicators
    E = E - mu @ E                                 # mean zero
    E = E[:, :-1]                                  # drop the dependent column
    if E.shape[1] == 0:
        return 0.0
    PE = np.column_stack([chain.semigroup_apply(gen, t, e, rep) for e in E.T])
    G = E.T @ (mu[:, None] * E)
    H = PE.T @ (mu[:, None] * PE)
    from scipy.linalg import eigh
    return float(eigh(H, G, eigvals_only=True)[-1])


# squared-norm ratios carry absolute roundoff near (1e-15)^2; below this the
# relative slack of 1e-10 is not representable
RATIO_FLOOR = 1e-28


def test_criterion_2_decay_inequality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20261016)
    times = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
    cases = [chain.example_chain()]
    for _ in range(100):
        n = int(rng.integers(3, 13))
        gen = chain.random_reversible(n, rng)
        labels = rng.integers(0, int(rng.integers(2, n + 1)), n)
        cases.append((gen, chain.StatePartition(labels)))
    worst, violations = -math.inf, 0
    for gen, part in cases:
        rep = chain.analyse(gen, part)
        lam = rep.subsystem_gap
        for t in times:
            bound = math.exp(-2 * lam * t) if math.isfinite(lam) else 0.0
            r = _worst_ratio(gen, part, rep, t)
            if r > bound * (1 + 1e-10) + RATIO_FLOOR:
                violations += 1
            if bound > 1e-20:
                worst = max(worst, r / bound - 1)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 10
    gate(2, ok, f"{len(cases)} chains x {len(times)} times, {violations} violations, "
                f"max relative excess {worst:.2e} where the bound exceeds 1e-20, {elapsed:.2f} s")


def test_criterion_3_ou_gap():
    g = ou_gap(0.1)
    ok = 0.1935 <= g <= 0.1945 and ou_gap(0.0) == 0.0
    gate(3, ok, f"ou_gap(0.1) = {g:.6f}, ou_gap(0) = {ou_gap(0.0)}")


def test_criterion_4_one_dimensional_derivations(ou1d):
    t0 = time.perf_counter()
    sys_, op = ou1d
    times = (0.25, 0.5, 1.0, 2.0, 4.0)
    rep = oracle.verify(op, sys_.kappa, times, fd=True, dyson_nodes=129)
    d1 = max(abs(r.d1_fd - r.d1_lemma) for r in rep.rows)
    d2 = max(abs(r.d2_fd - r.d2_exact) for r in rep.rows)
    gp = 0.0
    for r in rep.rows:
        g1, g2 = oracle.general_protocol_response(op, lambda s: 1.0, r.T, sys_.kappa)
        gp = max(gp, abs(g1 - r.d1_lemma), abs(g2 - r.d2_exact))
    elapsed = time.perf_counter() - t0
    ok = d1 <= 1e-5 and d2 <= 1e-4 and rep.dyson <= 1e-5 and gp <= 1e-5 and elapsed < 60
    gate(4, ok, f"|d1| {d1:.1e}, |d2| {d2:.1e}, dyson {rep.dyson:.1e}, "
                f"protocol {gp:.1e}, {elapsed:.1f} s")


def test_criterion_5_remainder_bound(ou1d, ou2d):
    t0 = time.perf_counter()
    worst_ratio, worst_split = 0.0, 0.0
    for (sys_, op), times in ((ou1d, experiments.VERIFY_TIMES["ou1d"]),
                              (ou2d, experiments.VERIFY_TIMES["ou2d"])):
        lam, _ = oracle.subsystem_gap(op)
        for r in oracle.sweep(op, sys_.kappa, times, lam):
            worst_ratio = max(worst_ratio, abs(r.fV + r.fk) / r.bound)
            worst_split = max(worst_split, abs(r.d2_exact - r.d2_approx - r.fV - r.fk))
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1.0 and worst_split <= 1e-8 and elapsed < 300
    gate(5, ok, f"max |fV + fk| / bound = {worst_ratio:.3f}, "
                f"decomposition residual {worst_split:.1e}, {elapsed:.1f} s")


def test_criterion_6_epsilon_scaling(ou1d):
    sys_, op = ou1d
    k = op.lift(sys_.kappa)
    eps = (0.02, 0.04, 0.08, 0.16)
    spreads, approx_spread = [], 0.0
    for T in (1.0, 2.0):
        c = oracle.grid_correlators(op, k, T)
        d1 = c.mean_Vk - c.lag_V_k_T
        d2 = oracle.exact_second_order(op, T, k)
        d2a = second_order_approx(c)
        r, ra = [], []
        for e in eps:
            F = op.mean(oracle.propagate(op, e, T, k))
            r.append(abs(F - (c.mean_k + e * d1 + 0.5 * e * e * d2)) / e ** 3)
            ra.append(abs(F - (c.mean_k + e * d1 + 0.5 * e * e * d2a)) / e ** 3)
        spreads.append(max(r) / min(r))
        approx_spread = max(approx_spread, max(ra) / min(ra))
    ok = max(spreads) <= 3.0
    gate(6, ok, f"max/min of |F - e| / eps^3 = {max(spreads):.3f} (<= 3); "
                f"with the correlator coefficient the ratio spreads {approx_spread:.1f}x "
                f"(adiabatic remainder is second order)")


@pytest.mark.slow
def test_criterion_7_monte_carlo_consistency():
    t0 = time.perf_counter()
    cfg = experiments.ExperimentConfig(
        T_grid=(0.5, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0),
        sim=SimConfig(dt=1e-3, t_max=10.0, burn_in=100.0, n_traj=10_000,
                      sample_every=50, seed=7),
        grid_n=(96, 192),
    )
    sys_ = experiments.ou_system(cfg.r)
    run = experiments.response_run(sys_, cfg)
    _, op = experiments.testbed("ou2d", cfg)
    k = op.lift(sys_.kappa)
    worst, where = 0.0, ""
    for c in run.correlators:
        g = oracle.grid_correlators(op, k, c.T)
        for name, val in c.values().items():
            z = abs(val - getattr(g, name)) / c.se_of(name)
            if z > worst:
                worst, where = z, f"{name} at T = {c.T:g}"
    elapsed = time.perf_counter() - t0
    ok = worst <= 4.0 and run.deviation_second < run.deviation_first and elapsed < 600
    gate(7, ok, f"max |MC - grid| / se = {worst:.2f} ({where}); mean deviation "
                f"second {run.deviation_second:.2e} vs first {run.deviation_first:.2e}; {elapsed:.0f} s")


@pytest.fixture(scope="module")
def multiwell_x():
    sys_, op = experiments.testbed("multiwell", projection=0)
    lam, _ = oracle.subsystem_gap(op)
    return sys_, op, lam


MW_TIMES = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0)


@pytest.mark.slow
def test_criterion_8_multiwell_error_shape(multiwell_x):
    sys_, op, lam = multiwell_x
    rows = oracle.sweep(op, sys_.kappa, MW_TIMES, lam)
    err = np.array([abs(r.fV + r.fk) for r in rows])
    T = np.array(MW_TIMES)
    peak = err.max()
    t_peak = T[err.argmax()]
    edge = max(err[T <= 0.5].max(), err[T >= 20].max())
    ok = 0.5 < t_peak < 20 and edge <= 0.5 * peak
    gate("8a", ok, f"|exact - approx| peaks at T = {t_peak:g} ({peak:.3g}); "
                   f"largest edge value {edge:.3g} = {edge / peak:.0%} of peak (<= 50%)")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="slowest multiwell mode couples to both projections")
def test_criterion_8_kramers_ordering(multiwell_x):
    _, _, lam_x = multiwell_x
    _, op_y = experiments.testbed("multiwell", projection=1)
    lam_y, _ = oracle.subsystem_gap(op_y)
    # both come from the same eigenvalue; demand a margin above solver roundoff
    gate("8b", lam_x > lam_y * (1 + 1e-6),
         f"lambda_pi(x) = {lam_x:.12f}, lambda_pi(y) = {lam_y:.12f} (x must exceed y)")


def test_criterion_9_ou_constant():
    c = ou_constant(0.1)
    matches = abs(c - PUBLISHED_OU_CONSTANT) <= 5e-4
    lam = ou_gap(0.1)
    at0 = ou_bound(0.1, 0.0)
    far = ou_bound(0.1, 1e4)
    limits = at0 == 0.0 and far < 1e-300 and gap_factor(lam, 0.0) == 0.0
    status = "PASS" if matches else "FLAG"
    report(9, status, f"ou_constant(0.1) = {c:.5f} vs published {PUBLISHED_OU_CONSTANT} "
                      f"({'agrees' if matches else 'discrepancy recorded'}); "
                      f"bound(T=0) = {at0}, bound(T=1e4) = {far:.1e}")
    assert limits
    assert math.isfinite(c) and c > 0
