import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from response_forecast import chain
from response_forecast.errors import ConfigError, PreconditionError, ReversibilityError


def example():
    return chain.example_chain()


def test_example_spectrum():
    gen, part = example()
    rep = chain.analyse(gen, part)
    want = [0.0, 0.2, (18 - math.sqrt(2)) / 10, (18 + math.sqrt(2)) / 10]
    np.testing.assert_allclose(rep.eigenvalues, want, atol=1e-12)
    assert rep.gap == pytest.approx(0.2, abs=1e-12)
    assert rep.subsystem_gap == pytest.approx((18 - math.sqrt(2)) / 10, abs=1e-12)
    assert not rep.in_subsystem[1] and rep.in_subsystem[2]


def test_slow_mode_is_invisible_to_the_partition():
    gen, part = example()
    ce = chain.conditional_expectation(np.array([-1.0, -1.0, 1.0, 1.0]), part, gen.mu)
    assert np.all(ce == 0.0)


def test_eigenvectors_are_mu_orthonormal():
    gen = chain.random_reversible(7, np.random.default_rng(4))
    rep = chain.spectrum(gen)
    phi = rep.eigenvectors
    np.testing.assert_allclose(phi.T @ (gen.mu[:, None] * phi), np.eye(7), atol=1e-12)
    np.testing.assert_allclose(-gen.Q @ phi, phi * rep.eigenvalues, atol=1e-10)


def test_identity_partition_recovers_the_gap():
    gen = chain.random_reversible(6, np.random.default_rng(1))
    gap, _ = chain.subsystem_spectral_gap(gen, chain.StatePartition.identity(6))
    assert gap == pytest.approx(chain.spectrum(gen).gap)


def test_trivial_partition_has_no_coupling():
    gen = chain.random_reversible(5, np.random.default_rng(2))
    gap, _ = chain.subsystem_spectral_gap(gen, chain.StatePartition.single(5))
    assert gap == chain.NO_COUPLING


def test_subsystem_gap_dominates_gap():
    rng = np.random.default_rng(8)
    for _ in range(30):
        n = int(rng.integers(3, 10))
        gen = chain.random_reversible(n, rng)
        part = chain.StatePartition(rng.integers(0, 3, n))
        rep = chain.analyse(gen, part)
        assert rep.subsystem_gap >= rep.gap - 1e-12


def test_subsystem_gap_moves_slightly_under_symmetric_rate_changes():
    # adding the same rate to every pair keeps the eigenvectors
    gen, part = example()
    bump = 1e-3 * (np.ones((4, 4)) - 4 * np.eye(4))
    lam0, _ = chain.subsystem_spectral_gap(gen, part)
    lam1, _ = chain.subsystem_spectral_gap(chain.GeneratorMatrix(gen.Q + bump, gen.mu), part)
    assert lam1 - lam0 == pytest.approx(4e-3, abs=1e-12)


def test_subsystem_gap_jumps_when_the_hidden_mode_becomes_visible():
    # a generic change gives the slow mode an O(1e-3) coupling, and lambda_pi
    # drops to the spectral gap: it is not continuous in the rates
    gen, part = example()
    bump = np.zeros((4, 4))
    bump[0, 2] = bump[2, 0] = 1e-3
    np.fill_diagonal(bump, -bump.sum(axis=1))
    rep = chain.analyse(chain.GeneratorMatrix(gen.Q + bump, gen.mu), part)
    assert 1e-4 < rep.coupling_norms[1] < 1e-2
    assert rep.subsystem_gap == pytest.approx(rep.gap)
    assert rep.gap == pytest.approx(0.2, abs=2e-3)


def test_degenerate_eigenvalues_tested_as_a_subspace():
    # a symmetric 4-cycle has a doubly degenerate eigenvalue
    Q = np.array([[-2, 1, 0, 1], [1, -2, 1, 0], [0, 1, -2, 1], [1, 0, 1, -2]], float)
    gen = chain.GeneratorMatrix(Q, np.full(4, 0.25))
    part = chain.StatePartition(np.array([0, 0, 1, 1]))
    rep = chain.analyse(gen, part)
    assert [len(g) for g in rep.groups] == [1, 2, 1]
    assert rep.subsystem_gap == pytest.approx(2.0)


def test_semigroup_matches_matrix_exponential():
    gen = chain.random_reversible(6, np.random.default_rng(3))
    f = np.arange(6.0)
    for t in (0.0, 0.3, 2.0):
        np.testing.assert_allclose(chain.semigroup_apply(gen, t, f), expm(t * gen.Q) @ f, atol=1e-12)
    with pytest.raises(PreconditionError):
        chain.semigroup_apply(gen, -1.0, f)


def test_decay_report_on_example():
    gen, part = example()
    dec = chain.verify_decay(gen, part, np.array([1.0, -1.0, -1.0, 1.0]), [0.0, 0.5, 2.0])
    assert dec.holds
    assert dec.lambda_pi == pytest.approx((18 - math.sqrt(2)) / 10)


def test_decay_rejects_non_measurable_or_biased_f():
    gen, part = example()
    with pytest.raises(PreconditionError):
        chain.verify_decay(gen, part, np.array([1.0, 2.0, -1.0, -2.0]), [1.0])
    with pytest.raises(PreconditionError):
        chain.verify_decay(gen, part, np.ones(4), [1.0])


def test_validation_errors():
    gen, _ = example()
    bad = gen.Q.copy()
    bad[0, 1] = -0.1
    with pytest.raises(ConfigError):
        chain.GeneratorMatrix(bad, gen.mu).validate()
    with pytest.raises(ConfigError):
        chain.GeneratorMatrix(gen.Q + 0.1, gen.mu).validate()
    with pytest.raises(ConfigError):
        chain.GeneratorMatrix(gen.Q, np.array([0.5, 0.5, 0.5, -0.5])).validate()
    irrev = np.array([[-1, 1, 0], [0, -1, 1], [1, 0, -1]], float)
    with pytest.raises(ReversibilityError):
        chain.GeneratorMatrix(irrev, np.full(3, 1 / 3)).validate()
    with pytest.raises(ConfigError):
        chain.GeneratorMatrix(np.zeros((2, 3)), np.ones(2))


def test_from_rates_recovers_mu():
    gen = chain.random_reversible(5, np.random.default_rng(6))
    np.testing.assert_allclose(chain.GeneratorMatrix.from_rates(gen.Q).mu, gen.mu, rtol=1e-10)


def test_chain_file_round_trip():
    gen, part = example()
    gen2, part2 = chain.read_chain("# comment\n" + chain.write_chain(gen, part))
    np.testing.assert_array_equal(gen2.Q, gen.Q)
    np.testing.assert_array_equal(gen2.mu, gen.mu)
    np.testing.assert_array_equal(part2.labels, part.labels)


@pytest.mark.parametrize("text", ["", "3\n1 2\n", "2\n-1 1\n1 -1\n0.5 0.5\n0\n"])
def test_malformed_chain_files(text):
    with pytest.raises(ConfigError):
        chain.read_chain(text)


def test_report_csv():
    gen, part = example()
    text = chain.analyse(gen, part).to_csv()
    lines = text.splitlines()
    assert lines[0] == "lambda,coupling_norm,in_subsystem"
    assert len(lines) == 5 and text.endswith("\n")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31 - 1))
def test_conditional_expectation_is_a_projection(n, seed):
    rng = np.random.default_rng(seed)
    gen = chain.random_reversible(n, rng)
    part = chain.StatePartition(rng.integers(0, 3, n))
    f = rng.normal(size=n)
    ce = chain.conditional_expectation(f, part, gen.mu)
    np.testing.assert_allclose(chain.conditional_expectation(ce, part, gen.mu), ce, atol=1e-12)
    assert gen.mu @ ce == pytest.approx(gen.mu @ f, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31 - 1), st.floats(0.01, 5.0))
def test_semigroup_contracts_in_l2(n, seed, t):
    rng = np.random.default_rng(seed)
    gen = chain.random_reversible(n, rng)
    f = rng.normal(size=n)
    pf = chain.semigroup_apply(gen, t, f)
    assert gen.mu @ pf ** 2 <= gen.mu @ f ** 2 * (1 + 1e-12)
