"""SIR plant, time-optimal feedback, observer, predictor and error coordinates.

Estimators work on the log-infected coordinate: the innovation is
``ln(y / I_est)`` and the estimation error is ``x1 = ln(I / I_est)``,
``x2 = S - S_est``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sirpred.core import (
    Gains,
    HistoryBuffer,
    ModelParams,
    SimConfig,
    SirState,
    check_params,
    history_get,
    steps_in,
)
from sirpred.dde import DelaySpec, Trajectory, integrate

MODES = ("full_state", "observer", "predictor")
SERIES_CUTOFF = 1e-4


class PositivityError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    """Under-registration: m = 1 - delta*B with B ~ Beta(beta_a, beta_b), held for resample_dt."""

    delta: float
    beta_a: float = 2.0
    beta_b: float = 2.0
    resample_dt: float = 1.0

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if not (self.beta_a > 0 and self.beta_b > 0):
            raise ValueError("beta shape parameters must be positive")
        if not self.resample_dt > 0:
            raise ValueError("resample_dt must be positive")

    @property
    def d_bar(self) -> float:
        return math.log(1.0 / (1.0 - self.delta))


@dataclass(frozen=True)
class ErrorState:
    x1: float
    x2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


# ---------------------------------------------------------------------------
# plant and control law


def sir_rhs(state: SirState, beta_delayed: float, p: ModelParams) -> np.ndarray:
    s, i = state.s, state.i
    return np.array([-beta_delayed * s * i, (beta_delayed * s - p.gamma) * i])


def _sir(s, i, beta, gamma):
    return -beta * s * i, (beta * s - gamma) * i


def phi(s: float, p: ModelParams, extend: bool = False) -> float:
    """Switching curve of the time-optimal law.

    With ``extend`` the logarithmic branch is continued beyond s = 1 and
    below 1/R0 values are clamped to the flat branch, which the feedback
    needs when an estimate leaves the physical domain.
    """
    s_star = p.s_star
    if not extend and not (1.0 / p.r0 - 1e-12 <= s <= 1.0 + 1e-12):
        raise ValueError(f"phi defined on [1/R0, 1] = [{1.0 / p.r0:.6g}, 1], got s={s}")
    if s >= s_star:
        return p.i_max + math.log(s / s_star) / p.rc - (s - s_star)
    return p.i_max


def beta_star(s: float, i: float, p: ModelParams) -> float:
    """beta_max while I < phi(S) or S <= 1/R0, beta_min otherwise."""
    if s <= 1.0 / p.r0:
        return p.beta_max
    if i < phi(s, p, extend=True):
        return p.beta_max
    return p.beta_min


# ---------------------------------------------------------------------------
# estimators


def _log_innovation(y: float, i_ref: float, floor: float = 0.0) -> float:
    if floor > 0:
        y = max(y, floor)
        i_ref = max(i_ref, floor)
    if not (y > 0 and i_ref > 0):
        raise PositivityError(f"logarithmic innovation needs y > 0 and I > 0, got y={y}, I={i_ref}")
    return math.log(y / i_ref)


def observer_rhs(est: SirState, y: float, beta: float, p: ModelParams, g: Gains,
                 floor: float = 0.0) -> np.ndarray:
    inn = _log_innovation(y, est.i, floor)
    return _estimator(est.s, est.i, inn, beta, p.gamma, g)


def predictor_rhs(est: SirState, y: float, ihat_lagged: float, beta_commanded: float,
                  p: ModelParams, g: Gains, floor: float = 0.0) -> np.ndarray:
    """Observer structure, but the innovation compares y(t) with I_hat(t - h1 - h2)."""
    inn = _log_innovation(y, ihat_lagged, floor)
    return _estimator(est.s, est.i, inn, beta_commanded, p.gamma, g)


def _estimator(s, i, inn, beta, gamma, g):
    return np.array([-beta * (s * i - g.alpha2 * inn),
                     (beta * s - gamma + beta * g.alpha1 * inn) * i])


# ---------------------------------------------------------------------------
# measurement


class NoiseProcess:
    """Seeded sample-and-hold multiplier m(t) on a fixed time span."""

    def __init__(self, noise: Optional[NoiseConfig], seed: int, t_start: float, t_end: float):
        self.noise = noise
        self.t_start = float(t_start)
        if noise is None or noise.delta == 0:
            self.values = np.ones(1)
            return
        n = int(math.ceil((t_end - t_start) / noise.resample_dt)) + 2
        rng = np.random.default_rng(seed)
        self.values = 1.0 - noise.delta * rng.beta(noise.beta_a, noise.beta_b, size=n)

    def __call__(self, t: float) -> float:
        if self.values.shape[0] == 1:
            return 1.0
        k = int(math.floor((t - self.t_start) / self.noise.resample_dt + 1e-9))
        k = min(max(k, 0), self.values.shape[0] - 1)
        return float(self.values[k])


def measure(i_lagged: float, noise: Optional[NoiseProcess], t: float = 0.0) -> tuple[float, float]:
    """y = I(t - h2) m(t - h2); ``t`` is the (already lagged) time at which m is read."""
    m = 1.0 if noise is None else noise(t)
    return i_lagged * m, m


# ---------------------------------------------------------------------------
# closed loop


def simulate_closed_loop(p: ModelParams, cfg: SimConfig, mode: str = "full_state",
                         use_delays: bool = True, gains: Optional[Gains] = None) -> Trajectory:
    """Plant + measurement + estimator + time-optimal feedback.

    ``full_state`` feeds beta* the true state, ``observer`` the delay-free
    observer driven by the (possibly delayed) measurement, ``predictor`` the
    observer-based predictor. The command is evaluated on the estimate at
    each grid point and held over the step; the plant receives the command
    issued h1 earlier, and beta_max before t = h1.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    check_params(p)
    if not use_delays:
        p = p.with_delays(0.0, 0.0)
    cfg.validate(p)
    if mode != "full_state" and gains is None:
        raise ValueError(f"mode {mode!r} needs observer gains")
    g = gains if gains is not None else Gains(0.0, 0.0)

    h1, h2, h = p.h1, p.h2, p.h
    gamma, bmax = p.gamma, p.beta_max
    floor = cfg.state_floor
    dt = cfg.dt
    noise = NoiseProcess(cfg.noise, cfg.seed, -h2 - 1.0, cfg.horizon + 1.0)

    x0 = cfg.plant0
    e0 = x0 if mode == "full_state" else cfg.estimate0
    z0 = [x0.s, x0.i, e0.s, e0.i]
    hist = HistoryBuffer.constant(z0, -h, 0.0, dt)
    spec = DelaySpec([d for d in (h1, h2, h) if d > 0])

    l1 = steps_in(h1, dt)
    commands: list[float] = []
    held = [bmax, bmax]   # command latched this step, rate reaching the plant

    def latch(k, t, z):
        commands.append(beta_star(z[2], z[3], p))
        held[0] = commands[k]
        held[1] = commands[k - l1] if k >= l1 else bmax

    def rhs(t, z, delayed):
        s, i, sh, ih = z
        b_cmd, b_app = held
        ds, di = _sir(s, i, b_app, gamma)
        if mode == "full_state":
            return (ds, di, ds, di)
        i_lag = delayed(h2)[1] if h2 > 0 else i
        y = i_lag * noise(t - h2)
        if mode == "observer":
            inn = _log_innovation(y, ih, floor)
        else:
            ih_lag = delayed(h)[3] if h > 0 else ih
            inn = _log_innovation(y, ih_lag, floor)
        return (ds, di, -b_cmd * (sh * ih - g.alpha2 * inn),
                (b_cmd * sh - gamma + b_cmd * g.alpha1 * inn) * ih)

    def clamp(z):
        return np.maximum(z, floor)

    traj = integrate(rhs, hist, spec, dt, cfg.horizon, names=("S", "I", "S_hat", "I_hat"),
                     post_step=clamp, pre_step=latch)
    _add_signal_channels(traj, p, h1, h2, noise, z0)
    return traj


def _add_signal_channels(traj: Trajectory, p: ModelParams, h1, h2, noise, z0) -> None:
    dt = traj.dt
    n = len(traj)
    sh, ih = traj["S_hat"], traj["I_hat"]
    b_cmd = np.array([beta_star(a, b, p) for a, b in zip(sh, ih)])
    l1 = steps_in(h1, dt)
    l2 = steps_in(h2, dt)
    b_app = np.empty(n)
    b_app[:l1] = p.beta_max
    b_app[l1:] = b_cmd[: n - l1]
    i_lag = np.empty(n)
    i_lag[:l2] = z0[1]
    i_lag[l2:] = traj["I"][: n - l2]
    m = np.array([noise(t - h2) for t in traj.t])
    traj.columns["beta_commanded"] = b_cmd
    traj.columns["beta_applied"] = b_app
    traj.columns["y"] = i_lag * m
    traj.columns["m"] = m


# ---------------------------------------------------------------------------
# prediction error


def error_coords(traj: Trajectory, p: ModelParams, t: float) -> ErrorState:
    """x1 = ln(I(t) / I_hat(t - h1)), x2 = S(t) - S_hat(t - h1)."""
    i = traj.interp("I", t)
    ih = traj.interp("I_hat", t - p.h1)
    if not (i > 0 and ih > 0):
        raise PositivityError(f"error coordinates need positive I and I_hat at t={t}")
    return ErrorState(math.log(i / ih), traj.interp("S", t) - traj.interp("S_hat", t - p.h1))


def error_path(traj: Trajectory, p: ModelParams, t_from: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Error coordinates on the trajectory grid from ``t_from`` (default h1) on."""
    dt = traj.dt
    l1 = steps_in(p.h1, dt)
    k0 = l1 if t_from is None else traj.index_of(t_from)
    if k0 < l1:
        raise IndexError("error coordinates need t >= h1")
    I, S = traj["I"][k0:], traj["S"][k0:]
    ih, sh = traj["I_hat"][k0 - l1: len(traj) - l1], traj["S_hat"][k0 - l1: len(traj) - l1]
    return traj.t[k0:], np.column_stack([np.log(I / ih), S - sh])


def g_terms(s: float, i: float, x1: float) -> tuple[float, float]:
    """Nonlinear remainder coefficients (G21, G22); both vanish as x1 -> 0."""
    if abs(x1) < SERIES_CUTOFF:
        q = x1 / 2.0 - x1 * x1 / 6.0 + x1 ** 3 / 24.0
    else:
        q = (math.exp(-x1) + x1 - 1.0) / x1
    return s * i * q, -i * (math.exp(-x1) - 1.0)


def psi(s: float, i: float, x1: float, x2: float) -> float:
    return ((s - x2) * math.exp(-x1) - s) * i


def error_matrices(s: float, i: float, g: Gains) -> tuple[np.ndarray, np.ndarray]:
    a0 = np.array([[0.0, 1.0], [-s * i, -i]])
    a1 = np.array([[-g.alpha1, 0.0], [-g.alpha2, 0.0]])
    return a0, a1


def error_rhs(e: ErrorState, e_lagged_x1: float, plant: SirState, beta_delayed: float,
              g: Gains) -> np.ndarray:
    """beta(t-h1) [A0 x + A1 x(t-h) + G x]; only x1(t-h) enters through A1."""
    return _error_rhs(e.x1, e.x2, e_lagged_x1, plant.s, plant.i, beta_delayed, g)


def _error_rhs(x1, x2, x1_lag, s, i, beta, g):
    g21, g22 = g_terms(s, i, x1)
    d1 = x2 - g.alpha1 * x1_lag
    d2 = -s * i * x1 - i * x2 - g.alpha2 * x1_lag + g21 * x1 + g22 * x2
    return np.array([beta * d1, beta * d2])


def integrate_error_path(traj: Trajectory, p: ModelParams, g: Gains, t_start: float | None = None,
                         t_end: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the error system directly, driven by a recorded closed-loop run.

    The initial function on [t_start - h, t_start] is taken from the
    trajectory's error coordinates; S, I are read from the record (cubic
    Hermite values at RK4 midpoints) and the delayed rate beta(t - h1) is the
    recorded applied rate, held over each step exactly as in the simulation.
    """
    h1, h = p.h1, p.h
    dt = traj.dt
    if t_start is None:
        t_start = h1 + h
    if t_end is None:
        t_end = float(traj.t[-1])
    tt, xe = error_path(traj, p)
    k0 = steps_in(t_start - tt[0], dt)
    lh = steps_in(h, dt)
    if k0 < lh:
        raise IndexError(f"t_start={t_start} leaves no error history of length h={h}")
    hist = HistoryBuffer(-h, dt, list(xe[k0 - lh: k0 + 1]))

    k_start = traj.index_of(t_start)
    b_app = traj["beta_applied"]
    S, I = traj["S"], traj["I"]
    # cubic Hermite midpoints of S and I on each step; the plant derivative is
    # known exactly there because the applied rate is held over the step
    b = b_app[:-1]
    dS0, dS1 = -b * S[:-1] * I[:-1], -b * S[1:] * I[1:]
    dI0, dI1 = (b * S[:-1] - p.gamma) * I[:-1], (b * S[1:] - p.gamma) * I[1:]
    S_mid = 0.5 * (S[:-1] + S[1:]) + dt * (dS0 - dS1) / 8.0
    I_mid = 0.5 * (I[:-1] + I[1:]) + dt * (dI0 - dI1) / 8.0
    held = [0.0]

    def latch(k, u, x):
        held[0] = b_app[k_start + k]

    def plant_at(u):
        half_steps = int(round(2.0 * u / dt))
        k, odd = divmod(half_steps, 2)
        if odd:
            return S_mid[k_start + k], I_mid[k_start + k]
        return S[k_start + k], I[k_start + k]

    def rhs(u, x, delayed):
        x1_lag = delayed(h)[0] if h > 0 else x[0]
        s_, i_ = plant_at(u)
        return _error_rhs(x[0], x[1], x1_lag, s_, i_, held[0], g)

    spec = DelaySpec([h] if h > 0 else [])
    out = integrate(rhs, hist, spec, dt, t_end - t_start, names=("x1", "x2"), pre_step=latch)
    return out.t + t_start, np.column_stack([out["x1"], out["x2"]])


# ---------------------------------------------------------------------------
# time scale


def time_rescale_g(beta_history: HistoryBuffer, p: ModelParams, t: float) -> float:
    """tau = int_0^t beta(s - h1) ds by the trapezoidal rule; beta = beta_max before 0."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if t - p.h1 > beta_history.t_end + 1e-9 * beta_history.dt:
        raise IndexError(f"beta history ends at {beta_history.t_end}, need {t - p.h1}")
    dt = beta_history.dt
    n = int(math.floor(t / dt + 1e-9))
    grid = [k * dt for k in range(n + 1)]
    if t - grid[-1] > 1e-12:
        grid.append(t)

    def b(s):
        u = s - p.h1
        if u < 0:
            return p.beta_max
        return float(history_get(beta_history, u)[0])

    vals = [b(s) for s in grid]
    return float(sum(0.5 * (vals[k] + vals[k + 1]) * (grid[k + 1] - grid[k])
                     for k in range(len(grid) - 1)))


def rescaled_time(traj: Trajectory) -> np.ndarray:
    """Cumulative trapezoid of the applied rate along a trajectory."""
    b = traj["beta_applied"]
    inc = 0.5 * (b[1:] + b[:-1]) * np.diff(traj.t)
    return np.concatenate([[0.0], np.cumsum(inc)])


def eta_bounds(p: ModelParams) -> tuple[float, float]:
    return p.beta_min * p.h, p.beta_max * p.h
