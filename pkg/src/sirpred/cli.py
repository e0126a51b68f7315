"""Command-line entry point.

    sirpred simulate --scenario fig7 --seed 42
    sirpred stability-map --i-bar 0.03 --eta-bar 2.5
    sirpred tune-gain --i-bar 0.03 --eta-bar 5
    sirpred lmi-verify --certificate cert.txt --eta-bar 5 --i-bar 0.03 --alpha1 0.115 --alpha2 0.005
    sirpred lmi-search --eta-bar 0.2 --i-bar 0.03 --alpha1 4 --alpha2 1
    sirpred reproduce-all --seed 7

Exit codes: 0 success, 1 runtime or numerical failure (including an
infeasible certificate or a failed search), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from sirpred.core import Gains, ParameterError
from sirpred.dde import CSV_CHANNELS, IntegrationError, Trajectory
from sirpred.epidemic import PositivityError, phi
from sirpred.lmi import (
    CertificateFormatError,
    feasibility_search,
    paper_certificate,
    problem_data,
    read_certificate,
    verify_certificate,
    write_certificate,
)
from sirpred import scenarios as sc
from sirpred.stability import (
    WINDOW_LARGE,
    WINDOW_SMALL,
    NoStabilizingGain,
    RootFindingError,
    StabilityMap,
    pick_gain,
    stability_map,
)
from sirpred import svgplot

log = logging.getLogger("sirpred")

COMMANDS = ("simulate", "stability-map", "tune-gain", "lmi-verify", "lmi-search", "reproduce-all")
CSV_HEADER = ("t",) + CSV_CHANNELS
MAP_HEADER = ("alpha1", "alpha2", "stable_p1", "stable_p2", "stable_p3", "intersection",
              "rightmost_p1", "rightmost_p2", "rightmost_p3")
SCENARIO_CHOICES = sc.SCENARIO_IDS + ("noise",)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    config_path: Optional[str] = None
    output_dir: Path = Path("out")
    overrides: dict = field(default_factory=dict)
    seed: Optional[int] = None
    svg: bool = True
    scenario: Optional[str] = None
    certificate: Optional[str] = None
    eta_bar: Optional[float] = None
    i_bar: Optional[float] = None
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    resolution: int = 200
    coupling_34: bool = True


# ---------------------------------------------------------------------------
# argument handling


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sirpred", description="Delay-compensated SIR epidemic control toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", dest="config_path", help="key=value file; '#' starts a comment")
        p.add_argument("--out", dest="output_dir", help="output directory (default $SIRPRED_OUT or ./out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                       metavar="KEY=VALUE", help="override a setting; repeatable")
        p.add_argument("--svg", dest="svg", action=argparse.BooleanOptionalAction, default=True)

    def lmi_args(p):
        p.add_argument("--eta-bar", type=float, required=True)
        p.add_argument("--i-bar", type=float, required=True)
        p.add_argument("--alpha1", type=float, required=True)
        p.add_argument("--alpha2", type=float, required=True)
        p.add_argument("--no-coupling-34", dest="coupling_34", action="store_false",
                       help="use a zero (3,4) block instead of R")

    p = sub.add_parser("simulate", help="run one closed-loop scenario")
    common(p)
    p.add_argument("--scenario", choices=SCENARIO_CHOICES, required=True)

    for name in ("stability-map", "tune-gain"):
        p = sub.add_parser(name, help="classify a gain grid" if name == "stability-map" else "pick a gain")
        common(p)
        p.add_argument("--scenario", choices=sc.MAP_IDS)
        p.add_argument("--i-bar", type=float)
        p.add_argument("--eta-bar", type=float)
        p.add_argument("--resolution", type=int, default=200)

    p = sub.add_parser("lmi-verify", help="check a certificate file ('paper' for the printed one)")
    common(p)
    p.add_argument("--certificate", required=True)
    lmi_args(p)

    p = sub.add_parser("lmi-search", help="search for a certificate")
    common(p)
    lmi_args(p)

    p = sub.add_parser("reproduce-all", help="all figures, CSV + SVG + metrics.txt")
    common(p)
    p.add_argument("--resolution", type=int, default=200)
    return ap


def read_config_file(path) -> dict:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_args(argv=None) -> CliConfig:
    """Parse argv; argparse exits with status 2 on usage errors."""
    ns = build_parser().parse_args(argv)
    overrides = {}
    if ns.config_path:
        try:
            overrides.update(read_config_file(ns.config_path))
        except OSError as exc:
            raise UsageError(f"cannot read config {ns.config_path}: {exc}") from exc
    overrides.update(dict(ns.overrides))
    out = ns.output_dir or os.environ.get("SIRPRED_OUT") or "out"
    scenario = getattr(ns, "scenario", None)
    if scenario == "noise":
        scenario = "noise_sweep"
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return CliConfig(command=ns.command, config_path=ns.config_path, output_dir=Path(out),
                     overrides=overrides, seed=ns.seed, svg=ns.svg, scenario=scenario,
                     certificate=getattr(ns, "certificate", None),
                     eta_bar=getattr(ns, "eta_bar", None), i_bar=getattr(ns, "i_bar", None),
                     alpha1=getattr(ns, "alpha1", None), alpha2=getattr(ns, "alpha2", None),
                     resolution=getattr(ns, "resolution", 200),
                     coupling_34=getattr(ns, "coupling_34", True))


# ---------------------------------------------------------------------------
# file output


def _num(x: float) -> str:
    return f"{x:.12g}"


def emit_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            cols = [traj.t] + [traj[c] for c in CSV_CHANNELS] if len(traj) else []
            for row in zip(*cols):
                w.writerow([_num(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    cols = {name: data[:, k] for k, name in enumerate(header) if name != "t"}
    return Trajectory(data[:, 0], cols)


def emit_map_csv(smap: StabilityMap, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MAP_HEADER)
        inter = smap.intersection
        for iy, a2 in enumerate(smap.alpha2_grid):
            for ix, a1 in enumerate(smap.alpha1_grid):
                st = smap.stable[:, iy, ix]
                w.writerow([_num(a1), _num(a2)] + [str(int(b)) for b in st] + [str(int(inter[iy, ix]))]
                           + [_num(v) for v in smap.rightmost[:, iy, ix]])
    return path


def _trajectory_svg(traj: Trajectory, spec: sc.ScenarioSpec | None, title: str) -> str:
    p = spec.params if spec is not None else None
    S, I = traj["S"], traj["I"]
    # phase plane
    ymax = max(float(I.max()), float(traj["I_hat"].max()), p.i_max if p else 0.0) * 1.1
    left = svgplot.Panel(70, 40, 360, 300, (0.0, 1.0), (0.0, ymax), "phase plane", "S", "I")
    if p is not None:
        left.rect(0.0, 0.0, 1.0 / p.r0, ymax, "#ffe680", opacity=0.6)
        ss = np.linspace(1.0 / p.r0, 1.0, 200)
        left.polyline(ss, [phi(s, p) for s in ss], "#7f7f7f", 1.0, dash="4,3")
        left.polyline([0.0, 1.0], [p.i_max, p.i_max], "#d62728", 0.8, dash="2,2")
    left.polyline(traj["S_hat"], traj["I_hat"], svgplot.PALETTE[1], 1.0)
    left.polyline(S, I, svgplot.PALETTE[0], 1.5)
    # time series of I, I_hat and the applied rate scaled into the same axes
    t = traj.t
    right = svgplot.Panel(520, 40, 420, 300, (float(t[0]), float(t[-1])), (0.0, ymax), title, "t [days]", "I")
    right.polyline(t, traj["I_hat"], svgplot.PALETTE[1], 1.0)
    right.polyline(t, I, svgplot.PALETTE[0], 1.5)
    if p is not None:
        right.polyline([t[0], t[-1]], [p.i_max, p.i_max], "#d62728", 0.8, dash="2,2")
        b = traj["beta_commanded"]
        scaled = (b - p.beta_min) / (p.beta_max - p.beta_min) * 0.25 * ymax
        right.polyline(t, scaled, "#000000", 0.6)
    legend = [("I", svgplot.PALETTE[0]), ("I estimate", svgplot.PALETTE[1]),
              ("I_max", "#d62728"), ("beta command", "#000000")]
    return svgplot.document([left, right], 1000, 400, legend)


def _map_svg(smap: StabilityMap, gain: Gains | None, title: str) -> str:
    xs, ys = smap.alpha1_grid, smap.alpha2_grid
    d1, d2 = smap.cell_size()
    xl = (xs[0] - d1 / 2, xs[-1] + d1 / 2) if d1 else svgplot.padded(xs[0], xs[-1])
    yl = (ys[0] - d2 / 2, ys[-1] + d2 / 2) if d2 else svgplot.padded(ys[0], ys[-1])
    panel = svgplot.Panel(80, 40, 480, 480, xl, yl, title, "alpha1", "alpha2")
    count = smap.stable.sum(axis=0)
    colors = {0: "#ffffff", 1: "#dbe9f6", 2: "#9ecae1", 3: "#4292c6"}
    svgplot.heatmap(panel, count, xs, ys, colors)
    panel.segments(svgplot.mask_boundary(smap.intersection, xs, ys), "#000000", 1.5)
    if gain is not None:
        panel.star(gain.alpha1, gain.alpha2, 9.0, "#000000")
    legend = [("stable for 1 vertex", colors[1]), ("2 vertices", colors[2]),
              ("all 3 vertices", colors[3]), ("intersection boundary", "#000000")]
    return svgplot.document([panel], 760, 580, legend)


def emit_svg(data, path, spec: sc.ScenarioSpec | None = None, gain: Gains | None = None,
             title: str = "") -> Path:
    """Write a trajectory (phase plane + time series) or a stability map as SVG."""
    path = Path(path)
    if isinstance(data, StabilityMap):
        text = _map_svg(data, gain, title)
    elif isinstance(data, Trajectory):
        if len(data) == 0:
            raise ValueError("cannot plot an empty trajectory")
        text = _trajectory_svg(data, spec, title)
    else:
        # (x, y) series
        x, y = (np.asarray(a, dtype=float) for a in data)
        if x.size == 0:
            raise ValueError("cannot plot an empty series")
        panel = svgplot.Panel(70, 40, 500, 300, svgplot.padded(x.min(), x.max()),
                              svgplot.padded(y.min(), y.max()), title)
        panel.polyline(x, y, svgplot.PALETTE[0])
        text = svgplot.document([panel], 620, 400)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# commands


def _spec_for(cfg: CliConfig, sid: str) -> sc.ScenarioSpec:
    spec = sc.scenario(sid)
    overrides = dict(cfg.overrides)
    if cfg.seed is not None:
        overrides["seed"] = cfg.seed
    try:
        return sc.apply_overrides(spec, overrides)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(cfg: CliConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def cmd_simulate(cfg: CliConfig) -> int:
    spec = _spec_for(cfg, cfg.scenario)
    if spec.is_map:
        raise UsageError(f"{spec.id} is a stability map; use the stability-map command")
    traj, m = sc.run_scenario(spec)
    out = _out_dir(cfg)
    emit_csv(traj, out / f"{spec.id}.csv")
    if cfg.svg:
        emit_svg(traj, out / f"{spec.id}.svg", spec, title=spec.id)
    print(f"scenario {spec.id} ({spec.mode}, h1={spec.params.h1:g}, h2={spec.params.h2:g}, "
          f"delays {'on' if spec.use_delays else 'off'})")
    for line in m.lines():
        print("  " + line)
    return EXIT_OK


def _map_spec(cfg: CliConfig) -> sc.ScenarioSpec:
    spec = sc.scenario(cfg.scenario or "fig5")
    kw = {"resolution": cfg.resolution}
    if cfg.i_bar is not None:
        kw["i_bar"] = cfg.i_bar
    if cfg.eta_bar is not None:
        kw["eta_bar"] = cfg.eta_bar
    spec = dataclasses.replace(spec, **kw)
    if cfg.scenario is None:
        window = WINDOW_LARGE if spec.i_bar >= 0.5 else WINDOW_SMALL
        spec = dataclasses.replace(spec, id="map", window=window)
    if spec.resolution < 2:
        raise UsageError("resolution must be at least 2")
    if not (spec.i_bar > 0 and spec.eta_bar > 0):
        raise UsageError("--i-bar and --eta-bar must be positive")
    return spec


def _run_map(spec: sc.ScenarioSpec) -> StabilityMap:
    a1, a2 = spec.window
    return stability_map(spec.i_bar, spec.eta_bar, a1, a2, resolution=spec.resolution)


def cmd_stability_map(cfg: CliConfig) -> int:
    spec = _map_spec(cfg)
    smap = _run_map(spec)
    out = _out_dir(cfg)
    emit_map_csv(smap, out / f"{spec.id}.csv")
    try:
        gain = pick_gain(smap)
    except NoStabilizingGain:
        gain = None
    if cfg.svg:
        emit_svg(smap, out / f"{spec.id}.svg", gain=gain,
                 title=f"I_bar={spec.i_bar:g}, eta_bar={spec.eta_bar:g}")
    cells = int(smap.intersection.sum())
    print(f"stability map I_bar={spec.i_bar:g} eta_bar={spec.eta_bar:g}: "
          f"{cells} of {smap.intersection.size} cells stable for all vertices")
    if gain is not None:
        print(f"  picked gain alpha1={gain.alpha1:.6g} alpha2={gain.alpha2:.6g}")
    return EXIT_OK


def cmd_tune_gain(cfg: CliConfig) -> int:
    spec = _map_spec(cfg)
    gain = pick_gain(_run_map(spec))
    print(f"alpha1={gain.alpha1:.6g} alpha2={gain.alpha2:.6g}")
    return EXIT_OK


def _lmi_problem(cfg: CliConfig):
    if not cfg.eta_bar > 0:
        raise UsageError("--eta-bar must be positive")
    return problem_data(cfg.i_bar, Gains(cfg.alpha1, cfg.alpha2))


def cmd_lmi_verify(cfg: CliConfig) -> int:
    verts, B1 = _lmi_problem(cfg)
    if cfg.certificate == "paper":
        cand = paper_certificate()
    else:
        try:
            cand = read_certificate(cfg.certificate)
        except OSError as exc:
            raise UsageError(f"cannot read certificate {cfg.certificate}: {exc}") from exc
    rep = verify_certificate(cand, verts, B1, cfg.eta_bar, coupling_34=cfg.coupling_34)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.feasible else EXIT_FAIL


def cmd_lmi_search(cfg: CliConfig) -> int:
    verts, B1 = _lmi_problem(cfg)
    seed = cfg.seed if cfg.seed is not None else 0
    res = feasibility_search(verts, B1, cfg.eta_bar, seed=seed, coupling_34=cfg.coupling_34)
    print(f"search {'succeeded' if res.success else 'failed'}: f = {res.f:.6g} "
          f"({res.restarts} restarts, {res.evaluations} evaluations)")
    if res.success:
        out = _out_dir(cfg)
        write_certificate(res.candidate, out / "certificate.txt",
                                 comment=f"eta_bar={cfg.eta_bar:g} i_bar={cfg.i_bar:g} "
                                         f"alpha=({cfg.alpha1:g}, {cfg.alpha2:g})")
        print(f"certificate written to {out / 'certificate.txt'}")
        for line in verify_certificate(res.candidate, verts, B1, cfg.eta_bar,
                                       coupling_34=cfg.coupling_34).lines():
            print("  " + line)
        return EXIT_OK
    return EXIT_FAIL


def cmd_reproduce_all(cfg: CliConfig) -> int:
    out = _out_dir(cfg)
    lines = [f"# seed {cfg.seed if cfg.seed is not None else 0}"]
    for sid in sc.SCENARIO_IDS:
        spec = _spec_for(cfg, sid)
        if spec.is_map:
            spec = dataclasses.replace(spec, resolution=cfg.resolution)
            smap = _run_map(spec)
            emit_map_csv(smap, out / f"{sid}.csv")
            try:
                gain = pick_gain(smap)
            except NoStabilizingGain:
                gain = None
            if cfg.svg:
                emit_svg(smap, out / f"{sid}.svg", gain=gain,
                         title=f"I_bar={spec.i_bar:g}, eta_bar={spec.eta_bar:g}")
            lines.append(f"[{sid}] I_bar={spec.i_bar:g} eta_bar={spec.eta_bar:g}")
            lines.append(f"intersection_cells = {int(smap.intersection.sum())}")
            lines.append("picked_gain = none" if gain is None else
                         f"picked_gain = {gain.alpha1:.6g}, {gain.alpha2:.6g}")
            continue
        traj, m = sc.run_scenario(spec)
        emit_csv(traj, out / f"{sid}.csv")
        if cfg.svg:
            emit_svg(traj, out / f"{sid}.svg", spec, title=sid)
        lines.append(f"[{sid}] mode={spec.mode} h1={spec.params.h1:g} h2={spec.params.h2:g} "
                     f"delays={'on' if spec.use_delays else 'off'}")
        lines += m.lines()
        if sid == "noise_sweep":
            sweep = sc.noise_sweep(dataclasses.replace(spec, cfg=dataclasses.replace(spec.cfg, noise=None)),
                                   sc.NOISE_DELTAS + (0.0,))
            for row in sweep.rows:
                lines.append(f"delta={row.delta:g} final_quarter_error_sup={row.error_sup:.6g} "
                             f"peak_i={row.peak_i:.6g}")
        print(f"{sid} done")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print(f"outputs written to {out}")
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "stability-map": cmd_stability_map,
    "tune-gain": cmd_tune_gain,
    "lmi-verify": cmd_lmi_verify,
    "lmi-search": cmd_lmi_search,
    "reproduce-all": cmd_reproduce_all,
}


def main(argv=None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except UsageError as exc:
        print(f"sirpred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[cfg.command](cfg)
    except (UsageError, ParameterError, CertificateFormatError) as exc:
        print(f"sirpred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, PositivityError, RootFindingError, NoStabilizingGain, OSError,
            ValueError, FloatingPointError) as exc:
        print(f"sirpred: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
