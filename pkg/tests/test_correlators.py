import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from response_forecast.correlators import (
    ENTRIES,
    CorrelatorSet,
    Observable,
    batch_means,
    correlator_bundle,
    lag_steps,
    lagged_average,
    static_average,
)
from response_forecast.dynamics import Ensemble, SubsystemTrajectory
from response_forecast.errors import ConfigError, InsufficientDataError, LagGridError

K = Observable.coordinate(1, 0, "k")
V = Observable(1, lambda y: np.cos(y[..., 0]), "v")


def traj(n=400, dt=0.1, seed=0, eps=0.0):
    y = np.cumsum(np.random.default_rng(seed).normal(size=n)) * 0.1
    return SubsystemTrajectory(dt, y[:, None], eps)


def test_batch_means_constant_series():
    est = batch_means(np.full(100, 2.5))
    assert est.mean == 2.5 and est.se == 0.0 and est.count == 100


def test_batch_means_white_noise_standard_error():
    x = np.random.default_rng(1).normal(size=40_000)
    est = batch_means(x)
    assert est.se == pytest.approx(1 / math.sqrt(40_000), rel=0.15)


def test_batch_means_short_series():
    assert math.isnan(batch_means(np.ones(5)).se)
    assert math.isnan(batch_means(np.array([])).mean)


@given(st.lists(st.floats(-100, 100), min_size=16, max_size=300))
def test_batch_means_mean_is_exact(xs):
    assert batch_means(xs).mean == pytest.approx(np.mean(xs), abs=1e-9)


def test_lag_steps():
    assert lag_steps(0.5, 0.1) == 5
    with pytest.raises(LagGridError):
        lag_steps(0.55, 0.1)
    with pytest.raises(LagGridError):
        lag_steps(-0.2, 0.1)


def test_static_average_needs_samples():
    with pytest.raises(InsufficientDataError):
        static_average(traj(n=8), K)
    t = traj()
    assert static_average(t, K).mean == pytest.approx(t.samples.mean())


def test_lagged_average_definition():
    t = traj()
    est = lagged_average(t, V, K, 0.3)
    y = t.samples[:, 0]
    assert est.mean == pytest.approx(np.mean(np.cos(y[:-3]) * y[3:]))
    assert lagged_average(t, K, K, 0.0).mean == pytest.approx(np.mean(y * y))
    with pytest.raises(LagGridError):
        lagged_average(t, K, K, 100.0)


def test_bundle_matches_hand_computation():
    t = traj()
    c = correlator_bundle([t], K, V, 0.4)
    y = t.samples[:, 0]
    w = np.cos(y)
    assert c.mean_Vk == pytest.approx(np.mean(w * y))
    assert c.mean_V2k == pytest.approx(np.mean(w * w * y))
    assert c.lag_V_k_T == pytest.approx(np.mean(w[:-4] * y[4:]))
    assert c.lag_V_Vk_T == pytest.approx(np.mean(w[:-4] * (w * y)[4:]))
    assert c.lag_V_k_halfT == pytest.approx(np.mean(w[:-2] * y[2:]))
    assert c.lag_V_V_halfT == pytest.approx(np.mean(w[:-2] * w[2:]))
    assert c.n_traj == 1 and c.n_samples == 400


def test_bundle_pools_ensembles_and_lists_alike():
    ts = [traj(seed=s) for s in range(3)]
    ens = Ensemble(0.1, np.stack([t.samples for t in ts]))
    a = correlator_bundle(ts, K, V, 1.0)
    b = correlator_bundle(ens, K, V, 1.0)
    assert a.values() == b.values()


def test_bundle_accepts_unequal_lengths():
    ts = [traj(n=300, seed=0), traj(n=500, seed=1)]
    c = correlator_bundle(ts, K, V, 1.0)
    y = np.concatenate([t.samples[:, 0] for t in ts])
    assert c.mean_k == pytest.approx(y.mean())
    assert c.n_samples == 800


def test_bundle_errors():
    with pytest.raises(LagGridError):
        correlator_bundle([traj()], K, V, 0.3)      # T/dt odd
    with pytest.raises(ConfigError):
        correlator_bundle([traj(), traj(dt=0.2)], K, V, 0.4)
    with pytest.raises(ConfigError):
        correlator_bundle([traj(eps=0.1)], K, V, 0.4)
    with pytest.raises(ConfigError):
        correlator_bundle([], K, V, 0.4)
    with pytest.raises(LagGridError):
        correlator_bundle([traj(n=20)], K, V, 4.0)


def test_csv_round_trip():
    c = correlator_bundle([traj()], K, V, 0.4)
    back = CorrelatorSet.from_csv(c.to_csv())
    assert back.values() == c.values()
    assert back.se == c.se and back.T == c.T and back.n_traj == c.n_traj


def test_csv_missing_entries():
    with pytest.raises(ConfigError):
        CorrelatorSet.from_csv("name,value,se\nmean_k,1,0\n")


def test_observables():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(Observable.coordinate(2, 1)(y), [2.0, 4.0])
    np.testing.assert_array_equal(Observable.constant(2, 3.0)(y), [3.0, 3.0])
    assert len(ENTRIES) == 9
