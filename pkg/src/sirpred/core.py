"""Shared domain types, parameter validation and history buffers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

GRID_RTOL = 1e-9


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Epidemic rates (1/day), delays (day) and hospital capacity (fraction)."""

    beta_min: float
    beta_max: float
    gamma: float
    h1: float = 0.0
    h2: float = 0.0
    i_max: float = 12.63e-3

    @property
    def r0(self) -> float:
        return self.beta_max / self.gamma

    @property
    def rc(self) -> float:
        return self.beta_min / self.gamma

    @property
    def s_star(self) -> float:
        return min(1.0 / self.rc, 1.0)

    @property
    def h(self) -> float:
        return self.h1 + self.h2

    def with_delays(self, h1: float, h2: float) -> "ModelParams":
        return ModelParams(self.beta_min, self.beta_max, self.gamma, h1, h2, self.i_max)


def paper_params(h1: float = 3.0, h2: float = 7.0) -> ModelParams:
    """Mexico City case: R0 = 1.7, Rc = 1.1, gamma = 1/7."""
    return ModelParams(beta_min=1.1 / 7, beta_max=1.7 / 7, gamma=1 / 7,
                       h1=h1, h2=h2, i_max=12.63e-3)


def validate_params(p: ModelParams) -> list[str]:
    """Return the list of violated constraints; empty means ok."""
    errors = []
    if not p.beta_min > 0:
        errors.append("beta_min > 0 violated")
    if not p.beta_min < p.beta_max:
        errors.append("beta_min < beta_max violated")
    if not p.gamma > 0:
        errors.append("gamma > 0 violated")
    if not p.h1 >= 0:
        errors.append("h1 >= 0 violated")
    if not p.h2 >= 0:
        errors.append("h2 >= 0 violated")
    if not 0 < p.i_max < 1:
        errors.append("0 < i_max < 1 violated")
    if p.gamma > 0 and p.beta_min < p.beta_max and not p.r0 > p.rc:
        errors.append("r0 > rc violated")
    return errors


def check_params(p: ModelParams) -> ModelParams:
    errors = validate_params(p)
    if errors:
        raise ParameterError("; ".join(errors))
    return p


@dataclass(frozen=True)
class SirState:
    s: float
    i: float

    def __post_init__(self):
        if not (self.s > 0 and self.i > 0 and self.s + self.i <= 1 + 1e-12):
            raise ParameterError(
                f"invalid SIR state (s={self.s}, i={self.i}): need s > 0, i > 0, s + i <= 1")


@dataclass(frozen=True)
class Gains:
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha1) and math.isfinite(self.alpha2)):
            raise ParameterError(f"gains must be finite, got {self.alpha1}, {self.alpha2}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2])


class HistoryBuffer:
    """Uniformly sampled past of a vector signal.

    Samples sit at ``t0 + k*dt``. The buffer is append-only; lookups
    between grid points interpolate linearly.
    """

    def __init__(self, t0: float, dt: float, samples=None, dim: Optional[int] = None):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.t0 = float(t0)
        self.dt = float(dt)
        self._data: list[np.ndarray] = []
        self.dim = dim
        for s in samples or []:
            self.append(s)

    @classmethod
    def constant(cls, value, t_start: float, t_end: float, dt: float) -> "HistoryBuffer":
        """Constant history on [t_start, t_end]; the span must be a whole number of steps."""
        n = steps_in(t_end - t_start, dt)
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(t_start, dt, [value] * (n + 1))

    def append(self, x) -> None:
        x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        if self.dim is None:
            self.dim = x.shape[0]
        elif x.shape != (self.dim,):
            raise ValueError(f"sample shape {x.shape} does not match buffer dim {self.dim}")
        self._data.append(x)

    def __len__(self) -> int:
        return len(self._data)

    @property
    def t_end(self) -> float:
        return self.t0 + (len(self._data) - 1) * self.dt

    @property
    def samples(self) -> np.ndarray:
        return np.array(self._data)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self._data))

    def sample(self, k: int) -> np.ndarray:
        return self._data[k]

    def get(self, t: float) -> np.ndarray:
        return history_get(self, t)


def history_get(buf: HistoryBuffer, t: float) -> np.ndarray:
    """Linear interpolation of the buffer at time t (exact on grid points)."""
    n = len(buf._data)
    u = (t - buf.t0) / buf.dt
    k = round(u)
    if abs(u - k) <= GRID_RTOL * max(1.0, abs(u)):
        if 0 <= k < n:
            return buf._data[k]
    elif 0 <= u <= n - 1:
        k = int(math.floor(u))
        w = u - k
        a, b = buf._data[k], buf._data[k + 1]
        return a + w * (b - a)
    raise IndexError(f"lookup t={t} outside history span [{buf.t0}, {buf.t_end}]")


def steps_in(span: float, dt: float) -> int:
    """Number of dt steps in span; span must be an integer multiple of dt."""
    u = span / dt
    k = round(u)
    if abs(u - k) > GRID_RTOL * max(1.0, abs(u)):
        raise ParameterError(f"{span} is not an integer multiple of dt={dt}")
    return int(k)


@dataclass(frozen=True)
class SimConfig:
    """Integration settings and initial conditions of one closed-loop run.

    The plant starts at (s0, i0) with a constant past; the estimator's past
    on [-h, 0] is the constant (shat0, ihat0).
    """

    dt: float = 0.01
    horizon: float = 400.0
    i0: float = 1e-4
    s0: Optional[float] = None
    ihat0: float = 1e-5
    shat0: Optional[float] = None
    noise: Optional[object] = None
    seed: int = 0
    state_floor: float = 1e-12

    @property
    def plant0(self) -> SirState:
        return SirState(1.0 - self.i0 if self.s0 is None else self.s0, self.i0)

    @property
    def estimate0(self) -> SirState:
        return SirState(1.0 - self.ihat0 if self.shat0 is None else self.shat0, self.ihat0)

    def validate(self, p: ModelParams) -> None:
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.horizon > 0:
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        steps_in(p.h1, self.dt)
        steps_in(p.h2, self.dt)
        self.plant0
        self.estimate0
