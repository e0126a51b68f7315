"""Fixed-step RK4 integration of delay differential equations.

Delays are constant in simulation time and must be whole multiples of the
step. Delayed values are read from a :class:`HistoryBuffer` that the
integrator extends after every full step, so a stage at ``t + dt/2`` with lag
``L >= dt`` always reads already-computed samples (interpolated linearly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from sirpred.core import HistoryBuffer, history_get, steps_in

CSV_CHANNELS = ("S", "I", "beta_commanded", "beta_applied", "y", "S_hat", "I_hat", "m")


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DelaySpec:
    delays: tuple

    def __init__(self, delays: Sequence[float]):
        object.__setattr__(self, "delays", tuple(float(d) for d in delays))
        for d in self.delays:
            if d < 0:
                raise ValueError(f"negative lag {d}")

    @property
    def max_lag(self) -> float:
        return max(self.delays, default=0.0)

    def check_grid(self, dt: float) -> None:
        for d in self.delays:
            steps_in(d, dt)


@dataclass
class Trajectory:
    """Time grid plus named signal channels of equal length."""

    t: np.ndarray
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for name, col in list(self.columns.items()):
            col = np.asarray(col, dtype=float)
            if col.shape[0] != self.t.shape[0]:
                raise ValueError(f"channel {name!r} has length {col.shape[0]}, grid has {self.t.shape[0]}")
            self.columns[name] = col

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else float("nan")

    def index_of(self, t: float) -> int:
        return steps_in(t - self.t[0], self.dt)

    def interp(self, name: str, t: float) -> float:
        """Linear interpolation of one channel; raises outside the grid."""
        u = (t - self.t[0]) / self.dt
        n = len(self)
        k = round(u)
        if abs(u - k) <= 1e-9 * max(1.0, abs(u)) and 0 <= k < n:
            return float(self.columns[name][k])
        if not 0 <= u <= n - 1:
            raise IndexError(f"t={t} outside trajectory span [{self.t[0]}, {self.t[-1]}]")
        k = int(math.floor(u))
        w = u - k
        col = self.columns[name]
        return float(col[k] + w * (col[k + 1] - col[k]))


Rhs = Callable[[float, np.ndarray, Callable[[float], np.ndarray]], np.ndarray]


def integrate(rhs: Rhs, init_history: HistoryBuffer, spec: DelaySpec, dt: float,
              horizon: float, names: Sequence[str] | None = None,
              post_step: Callable[[np.ndarray], np.ndarray] | None = None,
              pre_step: Callable[[int, float, np.ndarray], None] | None = None) -> Trajectory:
    """Integrate ``x' = rhs(t, x, delayed)`` on [0, horizon] with classical RK4.

    ``delayed(lag)`` returns the state at ``t - lag`` for the stage being
    evaluated; ``lag = 0`` yields the stage state itself. The initial history
    must end at t = 0 and cover ``[-max(delays), 0]``. ``post_step`` may
    project each accepted state (e.g. clamping at a positivity floor);
    ``pre_step(k, t_k, x_k)`` runs before the stages of step k, which is where
    sample-and-hold inputs get latched.

    The history buffer is extended in place, so callers that keep a reference
    to ``init_history`` see the whole path afterwards.
    """
    spec.check_grid(dt)
    if abs(init_history.dt - dt) > 1e-12 * dt:
        raise ValueError(f"history step {init_history.dt} differs from dt={dt}")
    if abs(init_history.t_end) > 1e-9 * dt:
        raise ValueError(f"initial history must end at t=0, ends at {init_history.t_end}")
    if init_history.t0 > -spec.max_lag + 1e-9 * dt:
        raise ValueError(f"initial history starts at {init_history.t0}, need {-spec.max_lag}")

    hist = init_history
    n = steps_in(horizon, dt)
    x = np.array(hist.sample(len(hist) - 1), dtype=float)
    out = np.empty((n + 1, x.shape[0]))
    out[0] = x

    def stage(t, xs):
        def delayed(lag):
            if lag == 0:
                return xs
            return history_get(hist, t - lag)
        dx = np.asarray(rhs(t, xs, delayed), dtype=float)
        if not np.all(np.isfinite(dx)):
            raise IntegrationError(f"right-hand side is not finite at t={t:.6g}")
        return dx

    half = 0.5 * dt
    for k in range(n):
        t = k * dt
        if pre_step is not None:
            pre_step(k, t, x)
        k1 = stage(t, x)
        k2 = stage(t + half, x + half * k1)
        k3 = stage(t + half, x + half * k2)
        k4 = stage(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t + dt:.6g}")
        if post_step is not None:
            x = post_step(x)
        hist.append(x)
        out[k + 1] = x

    tgrid = dt * np.arange(n + 1)
    names = list(names) if names is not None else [f"x{j}" for j in range(x.shape[0])]
    return Trajectory(tgrid, {nm: out[:, j] for j, nm in enumerate(names)})
