import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sirpred.core import (
    Gains,
    HistoryBuffer,
    ModelParams,
    ParameterError,
    SimConfig,
    SirState,
    check_params,
    history_get,
    paper_params,
    steps_in,
    validate_params,
)


def test_paper_params_valid():
    p = paper_params()
    assert validate_params(p) == []
    assert p.r0 == pytest.approx(1.7)
    assert p.rc == pytest.approx(1.1)
    assert p.s_star == pytest.approx(1 / 1.1)
    assert p.h == 10.0


def test_equal_rates_rejected():
    p = ModelParams(0.2, 0.2, 1 / 7)
    assert "beta_min < beta_max violated" in validate_params(p)
    with pytest.raises(ParameterError, match="beta_min < beta_max violated"):
        check_params(p)


def test_zero_gamma_rejected():
    assert "gamma > 0 violated" in validate_params(ModelParams(0.1, 0.2, 0.0))


def test_negative_delay_and_capacity():
    errs = validate_params(ModelParams(0.1, 0.2, 0.1, h1=-1, i_max=1.5))
    assert "h1 >= 0 violated" in errs
    assert "0 < i_max < 1 violated" in errs


def test_s_star_capped_at_one():
    # Rc < 1 puts 1/Rc above the simplex
    assert ModelParams(0.05, 0.2, 0.1).s_star == 1.0


@pytest.mark.parametrize("s,i", [(0.0, 0.1), (0.5, 0.0), (0.7, 0.4), (-0.1, 0.1)])
def test_sir_state_invariants(s, i):
    with pytest.raises(ParameterError):
        SirState(s, i)


def test_gains_finite():
    with pytest.raises(ParameterError):
        Gains(float("nan"), 1.0)
    assert np.array_equal(Gains(4, 1).as_array(), [4.0, 1.0])


def _two_point():
    return HistoryBuffer(0.0, 1.0, [[1.0], [3.0]])


def test_history_midpoint():
    assert history_get(_two_point(), 0.5)[0] == 2.0


def test_history_grid_point():
    assert history_get(_two_point(), 1.0)[0] == 3.0


def test_history_out_of_span():
    with pytest.raises(IndexError):
        history_get(_two_point(), 1.5)
    with pytest.raises(IndexError):
        history_get(_two_point(), -0.01)


def test_history_constant_and_append():
    buf = HistoryBuffer.constant([1.0, 2.0], -1.0, 0.0, 0.25)
    assert len(buf) == 5
    assert buf.t_end == pytest.approx(0.0)
    buf.append([5.0, 6.0])
    assert np.allclose(buf.get(0.125), [3.0, 4.0])
    with pytest.raises(ValueError):
        buf.append([1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
       st.floats(1e-3, 10), st.floats(-100, 100))
def test_history_exact_on_grid(values, dt, t0):
    buf = HistoryBuffer(t0, dt, [[v] for v in values])
    for k, v in enumerate(values):
        assert history_get(buf, t0 + k * dt)[0] == v


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30), st.floats(0, 1), st.data())
def test_history_on_chord(values, w, data):
    buf = HistoryBuffer(0.0, 0.5, [[v] for v in values])
    k = data.draw(st.integers(0, len(values) - 2))
    got = history_get(buf, 0.5 * (k + w))[0]
    a, b = values[k], values[k + 1]
    assert min(a, b) - 1e-9 <= got <= max(a, b) + 1e-9


def test_steps_in():
    assert steps_in(3.0, 0.01) == 300
    with pytest.raises(ParameterError):
        steps_in(3.005, 0.01)


def test_sim_config_defaults():
    cfg = SimConfig()
    assert cfg.plant0.s == pytest.approx(1 - 1e-4)
    assert cfg.estimate0.i == 1e-5
    cfg.validate(paper_params())
    with pytest.raises(ParameterError):
        SimConfig(dt=0.3).validate(paper_params())
    with pytest.raises(ParameterError):
        SimConfig(horizon=0).validate(paper_params())
