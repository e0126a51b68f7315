"""Canned experiments: the closed-loop figures, the stability maps and the noise sweep."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sirpred.core import Gains, ModelParams, SimConfig, paper_params, steps_in
from sirpred.dde import Trajectory
from sirpred.epidemic import (
    NoiseConfig,
    error_path,
    integrate_error_path,
    simulate_closed_loop,
)
from sirpred.stability import WINDOW_LARGE, WINDOW_SMALL, StabilityMap, stability_map

log = logging.getLogger(__name__)

SIM_IDS = ("fig1", "fig2", "fig3", "fig6", "fig7", "noise_sweep")
MAP_IDS = ("fig4", "fig5")
SCENARIO_IDS = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "noise_sweep")

CHATTER_WINDOW = 30.0
CHATTER_SWITCHES = 10
NOISE_DELTAS = (0.5, 0.25, 0.1)

PAPER_GAIN = Gains(0.115, 0.005)
OBSERVER_GAIN = Gains(4.0, 1.0)


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    params: ModelParams
    cfg: SimConfig = SimConfig()
    gains: Optional[Gains] = None
    mode: str = "full_state"
    use_delays: bool = True
    # stability-map scenarios only
    i_bar: float = 0.0
    eta_bar: float = 0.0
    window: tuple = WINDOW_SMALL
    resolution: int = 200

    @property
    def is_map(self) -> bool:
        return self.id in MAP_IDS


@dataclass
class Metrics:
    peak_i: float
    overshoot: float
    switch_count: int
    herd_time: Optional[float]
    final_error_norm: float
    max_window_switches: int = 0

    @property
    def chattering(self) -> bool:
        return self.max_window_switches > CHATTER_SWITCHES

    def lines(self) -> list[str]:
        herd = "never" if self.herd_time is None else f"{self.herd_time:.2f}"
        return [f"peak_i = {self.peak_i:.6g}",
                f"overshoot = {self.overshoot:.6g}",
                f"switch_count = {self.switch_count}",
                f"max_switches_in_{CHATTER_WINDOW:g}_days = {self.max_window_switches}",
                f"chattering = {self.chattering}",
                f"herd_time = {herd}",
                f"final_error_norm = {self.final_error_norm:.6g}"]


def scenario(sid: str, seed: int = 0) -> ScenarioSpec:
    """The figure wiring: delays, estimator and gains per id."""
    p = paper_params()
    cfg = SimConfig(seed=seed)
    if sid == "fig1":
        return ScenarioSpec(sid, p.with_delays(0.0, 0.0), cfg, None, "full_state", use_delays=False)
    if sid == "fig2":
        return ScenarioSpec(sid, p.with_delays(3.0, 0.0), cfg, None, "full_state")
    if sid == "fig3":
        return ScenarioSpec(sid, p.with_delays(0.0, 0.0), cfg, OBSERVER_GAIN, "observer",
                            use_delays=False)
    if sid == "fig6":
        return ScenarioSpec(sid, p, cfg, OBSERVER_GAIN, "observer")
    if sid == "fig7":
        return ScenarioSpec(sid, p, cfg, PAPER_GAIN, "predictor")
    if sid == "noise_sweep":
        cfg = dataclasses.replace(cfg, noise=NoiseConfig(0.5))
        return ScenarioSpec(sid, p, cfg, PAPER_GAIN, "predictor")
    if sid == "fig4":
        return ScenarioSpec(sid, p, cfg, i_bar=1.0, eta_bar=0.5, window=WINDOW_LARGE)
    if sid == "fig5":
        return ScenarioSpec(sid, p, cfg, i_bar=0.03, eta_bar=2.5, window=WINDOW_SMALL)
    raise KeyError(f"unknown scenario {sid!r}; choose from {', '.join(SCENARIO_IDS)}")


_CFG_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"noise"}
_PARAM_KEYS = {f.name for f in dataclasses.fields(ModelParams)}


def apply_overrides(spec: ScenarioSpec, overrides: dict) -> ScenarioSpec:
    """Apply key=value settings (strings or numbers) to a scenario.

    Recognized keys: SimConfig fields, ModelParams fields, delta, alpha1,
    alpha2, mode, use_delays, i_bar, eta_bar, resolution.
    """
    cfg_kw, par_kw = {}, {}
    spec_kw: dict = {}
    gains = spec.gains
    noise = spec.cfg.noise
    for key, raw in overrides.items():
        if key in ("mode",):
            spec_kw[key] = str(raw)
        elif key == "use_delays":
            spec_kw[key] = str(raw).lower() in ("1", "true", "yes", "on")
        elif key == "resolution":
            spec_kw[key] = int(raw)
        elif key in ("seed",):
            cfg_kw[key] = int(raw)
        elif key in ("s0", "shat0") and str(raw).lower() == "none":
            cfg_kw[key] = None
        elif key in _CFG_KEYS:
            cfg_kw[key] = float(raw)
        elif key in _PARAM_KEYS:
            par_kw[key] = float(raw)
        elif key in ("i_bar", "eta_bar"):
            spec_kw[key] = float(raw)
        elif key in ("alpha1", "alpha2"):
            base = gains if gains is not None else Gains(0.0, 0.0)
            gains = dataclasses.replace(base, **{key: float(raw)})
        elif key == "delta":
            d = float(raw)
            noise = NoiseConfig(d) if d > 0 else None
        else:
            raise KeyError(f"unknown setting {key!r}")
    cfg = dataclasses.replace(spec.cfg, noise=noise, **cfg_kw)
    params = dataclasses.replace(spec.params, **par_kw)
    return dataclasses.replace(spec, params=params, cfg=cfg, gains=gains, **spec_kw)


# ---------------------------------------------------------------------------
# metrics


def switch_times(t, beta_cmd, p: ModelParams) -> np.ndarray:
    """Times of sign changes of beta_commanded - midpoint after the first intervention."""
    side = np.sign(np.asarray(beta_cmd) - 0.5 * (p.beta_min + p.beta_max))
    on = np.flatnonzero(side < 0)
    if on.size == 0:
        return np.empty(0)
    k0 = on[0]
    flips = np.flatnonzero(side[k0 + 1:] != side[k0:-1]) + k0 + 1
    return np.asarray(t)[flips]


def max_switches_in_window(times, window: float = CHATTER_WINDOW) -> int:
    times = np.asarray(times)
    if times.size == 0:
        return 0
    # count switches in [t_k, t_k + window) for each start switch
    ends = np.searchsorted(times, times + window, side="left")
    return int(np.max(ends - np.arange(times.size)))


def estimation_error(traj: Trajectory, spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """Error path matching the estimator: prediction error for the predictor,
    plain estimation error otherwise."""
    p = spec.params if spec.use_delays else spec.params.with_delays(0.0, 0.0)
    if spec.mode == "predictor":
        return error_path(traj, p)
    x = np.column_stack([np.log(traj["I"] / traj["I_hat"]), traj["S"] - traj["S_hat"]])
    return traj.t, x


def compute_metrics(traj: Trajectory, spec: ScenarioSpec) -> Metrics:
    p = spec.params
    I = traj["I"]
    peak = float(I.max())
    sw = switch_times(traj.t, traj["beta_commanded"], p)
    herd = np.flatnonzero(traj["S"] <= 1.0 / p.r0)
    _, err = estimation_error(traj, spec)
    return Metrics(peak_i=peak, overshoot=(peak - p.i_max) / p.i_max, switch_count=int(sw.size),
                   herd_time=float(traj.t[herd[0]]) if herd.size else None,
                   final_error_norm=float(np.linalg.norm(err[-1])),
                   max_window_switches=max_switches_in_window(sw))


# ---------------------------------------------------------------------------
# runners


def simulate(spec: ScenarioSpec) -> Trajectory:
    if spec.is_map:
        raise ValueError(f"{spec.id} is a stability map, not a simulation")
    return simulate_closed_loop(spec.params, spec.cfg, spec.mode, spec.use_delays, spec.gains)


def run_scenario(spec: ScenarioSpec) -> tuple[Trajectory, Metrics]:
    traj = simulate(spec)
    m = compute_metrics(traj, spec)
    log.info("%s: overshoot %.4f, %d switches", spec.id, m.overshoot, m.switch_count)
    return traj, m


def run_map(spec: ScenarioSpec) -> StabilityMap:
    if not spec.is_map:
        raise ValueError(f"{spec.id} is not a stability map scenario")
    a1, a2 = spec.window
    return stability_map(spec.i_bar, spec.eta_bar, a1, a2, resolution=spec.resolution)


def cross_validate(spec: ScenarioSpec, traj: Trajectory | None = None) -> float:
    """Sup-norm gap between the extracted error path and the directly integrated one."""
    if spec.mode != "predictor":
        raise ValueError("cross-validation needs the predictor wiring")
    if traj is None:
        traj = simulate(spec)
    p = spec.params if spec.use_delays else spec.params.with_delays(0.0, 0.0)
    tt, x_ext = error_path(traj, p)
    td, x_dir = integrate_error_path(traj, p, spec.gains)
    k0 = steps_in(td[0] - tt[0], traj.dt)
    return float(np.max(np.abs(x_ext[k0:k0 + len(td)] - x_dir)))


@dataclass
class SweepRow:
    delta: float
    error_sup: float
    peak_i: float


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def monotone(self) -> bool:
        """True when the final-quarter error does not grow as delta decreases."""
        rows = sorted(self.rows, key=lambda r: -r.delta)
        return all(b.error_sup <= a.error_sup for a, b in zip(rows, rows[1:]))


def noise_sweep(base: ScenarioSpec | None = None, deltas=NOISE_DELTAS) -> SweepResult:
    """Prediction-error sup over the final quarter of the horizon for each delta."""
    base = base if base is not None else scenario("fig7")
    out = SweepResult()
    for d in deltas:
        cfg = dataclasses.replace(base.cfg, noise=NoiseConfig(d) if d > 0 else None)
        spec = dataclasses.replace(base, cfg=cfg)
        traj = simulate(spec)
        t, err = estimation_error(traj, spec)
        tail = t >= 0.75 * spec.cfg.horizon
        sup = float(np.max(np.linalg.norm(err[tail], axis=1)))
        out.rows.append(SweepRow(d, sup, float(traj["I"].max())))
    return out
