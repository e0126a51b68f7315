import math

import numpy as np
import pytest

from sirpred.core import HistoryBuffer
from sirpred.dde import DelaySpec, IntegrationError, Trajectory, integrate


def steps_oracle(t, n_terms=10):
    """Method of steps for x' = -x(t-1), x = 1 on [-1, 0].

    On [k-1, k] the solution is sum_{j=0}^{k} (-1)^j (t-j+1)^j / j!, which
    follows by integrating the previous segment term by term.
    """
    k = math.ceil(t) if t > 0 else 0
    return sum((-1) ** j * (t - j + 1) ** j / math.factorial(j) for j in range(min(k, n_terms) + 1))


def _lag1(dt, horizon):
    hist = HistoryBuffer.constant([1.0], -1.0, 0.0, dt)
    return integrate(lambda t, x, d: -d(1.0), hist, DelaySpec([1.0]), dt, horizon)


def test_oracle_segments():
    assert steps_oracle(1.0) == pytest.approx(0.0)
    assert steps_oracle(2.0) == pytest.approx(-0.5)
    assert steps_oracle(0.5) == pytest.approx(0.5)
    assert steps_oracle(1.5) == pytest.approx(1 - 1.5 + 0.125)


def test_exponential():
    hist = HistoryBuffer.constant([1.0], 0.0, 0.0, 0.01)
    tr = integrate(lambda t, x, d: -x, hist, DelaySpec([]), 0.01, 1.0)
    assert abs(tr["x0"][-1] - math.exp(-1)) < 1e-8


def test_exponential_order():
    errs = []
    for dt in (0.1, 0.05):
        hist = HistoryBuffer.constant([1.0], 0.0, 0.0, dt)
        tr = integrate(lambda t, x, d: -x, hist, DelaySpec([]), dt, 1.0)
        errs.append(abs(tr["x0"][-1] - math.exp(-1)))
    assert 8 <= errs[0] / errs[1] <= 32


def test_lag_one_first_segment():
    tr = _lag1(0.01, 1.0)
    assert abs(tr["x0"][-1]) < 1e-10


def test_lag_one_second_segment():
    tr = _lag1(0.01, 2.0)
    assert tr["x0"][-1] == pytest.approx(-0.5, abs=1e-6)


def test_lag_one_against_oracle_path():
    tr = _lag1(0.01, 5.0)
    ref = np.array([steps_oracle(t) for t in tr.t])
    assert np.max(np.abs(tr["x0"] - ref)) < 1e-4


def test_zero_lag_matches_ode():
    hist = HistoryBuffer.constant([1.0], 0.0, 0.0, 0.01)
    a = integrate(lambda t, x, d: -d(0.0), hist, DelaySpec([]), 0.01, 2.0)
    hist = HistoryBuffer.constant([1.0], 0.0, 0.0, 0.01)
    b = integrate(lambda t, x, d: -x, hist, DelaySpec([]), 0.01, 2.0)
    assert np.max(np.abs(a["x0"] - b["x0"])) < 1e-10


def test_history_extended_in_place():
    hist = HistoryBuffer.constant([1.0], -1.0, 0.0, 0.1)
    n0 = len(hist)
    integrate(lambda t, x, d: -d(1.0), hist, DelaySpec([1.0]), 0.1, 1.0)
    assert len(hist) == n0 + 10


def test_short_history_rejected():
    hist = HistoryBuffer.constant([1.0], -0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        integrate(lambda t, x, d: -d(1.0), hist, DelaySpec([1.0]), 0.1, 1.0)


def test_off_grid_delay_rejected():
    hist = HistoryBuffer.constant([1.0], -1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        integrate(lambda t, x, d: -d(0.55), hist, DelaySpec([0.55]), 0.1, 1.0)


def test_blow_up_reported():
    hist = HistoryBuffer.constant([1.0], 0.0, 0.0, 0.1)
    with pytest.raises(IntegrationError):
        integrate(lambda t, x, d: np.array([np.inf]), hist, DelaySpec([]), 0.1, 1.0)


def test_pre_and_post_hooks():
    seen = []
    hist = HistoryBuffer.constant([1.0], 0.0, 0.0, 0.5)
    tr = integrate(lambda t, x, d: -np.ones(1) * 10, hist, DelaySpec([]), 0.5, 2.0,
                   names=["y"], pre_step=lambda k, t, x: seen.append(k),
                   post_step=lambda x: np.maximum(x, 0.0))
    assert seen == [0, 1, 2, 3]
    assert tr["y"][-1] == 0.0


def test_trajectory_interp_and_index():
    tr = Trajectory(np.array([0.0, 0.5, 1.0]), {"a": [0.0, 1.0, 4.0]})
    assert tr.interp("a", 0.75) == pytest.approx(2.5)
    assert tr.index_of(1.0) == 2
    with pytest.raises(IndexError):
        tr.interp("a", 1.5)
    with pytest.raises(ValueError):
        Trajectory(np.zeros(2), {"a": [1.0]})
