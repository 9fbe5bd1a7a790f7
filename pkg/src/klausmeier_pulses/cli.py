"""Command-line entry point: ``klausmeier-pulses <command> --config FILE --out DIR``.

Every command writes ``manifest.json`` (input echo, versions, seed, wall
time) plus its own CSV/JSON files. Exit status is 0 on success, 2 on invalid
input and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .amplitudes import NoSolution, solve_amplitudes
from .cascade import run_cascade
from .io import write_csv, write_json
from .model import Scenario, ValidationError, apply_overrides, scenario_from_dict
from .nlep import NearPole, SpectrumError, spectrum, trace_skeleton
from .outer import OuterSolveError
from .pde import (AssociationError, PDEError, PulseTrack, build_initial, compare_series, make_grid,
                  simulate_pde)
from .pulse_ode import (colonization_wavelength, fixed_point, homoclinic_speed, integrate,
                        regular_speed)

COMMANDS = ("ode", "pde", "cascade", "spectrum", "skeleton", "fixed-point", "speeds", "colonization",
            "compare")
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (NoSolution, SpectrumError, NearPole, OuterSolveError, PDEError, AssociationError,
                  np.linalg.LinAlgError, FloatingPointError)


class InputError(Exception):
    """Invalid command-line input; carries every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalFailure(Exception):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def parse_config(path, overrides=(), command: str | None = None) -> Scenario:
    """Load, override and validate a scenario; every problem is reported at once."""
    p = Path(path)
    if not p.is_file():
        raise InputError([f"config file {path} not found"])
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError([f"config file {path} is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise InputError(["config root must be a JSON object"])
    try:
        raw = apply_overrides(raw, overrides)
    except ValidationError as exc:
        raise InputError(exc.errors) from exc
    errors = []
    if command == "pde" and raw.get("domain", {}).get("type") == "unbounded":
        errors.append("the pde command needs a bounded domain (neumann or periodic)")
    try:
        scen = scenario_from_dict(raw)
    except ValidationError as exc:
        raise InputError(errors + exc.errors) from exc
    if errors:
        raise InputError(errors)
    return scen


def _run_overrides(args) -> list[str]:
    out = list(args.set or [])
    if args.seed is not None:
        out.append(f"run.seed={args.seed}")
    if args.spectrum_mode:
        out.append(f"run.spectrum_mode={json.dumps(args.spectrum_mode)}")
    if args.parity:
        out.append(f"run.parity={json.dumps(args.parity)}")
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_ode(s: Scenario, out: Path) -> dict:
    traj = integrate(s.pulses.P, s.params, s.terrain, s.domain, (0.0, s.t_end), (), s.amplitude_mode, s.tuning)
    write_csv(out / "trajectory.csv", traj.header(), traj.rows())
    fin = traj.final
    write_csv(out / "final_state.csv", ["pulse_id", "position", "u0"],
              ([j + 1, p, u] for j, (p, u) in enumerate(zip(fin.positions, fin.amplitudes))))
    summary = {"terminal": traj.reason, "t_final": traj.t[-1],
               "event": None if traj.event is None else traj.event.to_dict()}
    write_json(out / "summary.json", summary)
    return summary


def cmd_cascade(s: Scenario, out: Path) -> dict:
    tr = run_cascade(s.pulses.P, s.params, s.terrain, s.domain, s.t_end, s.spectrum_mode, s.parity,
                     s.tuning, amplitude_mode=s.amplitude_mode)
    write_csv(out / "trajectory.csv", ["t", "a", "segment", "pulse_id", "position", "u0"], tr.trajectory_rows())
    write_json(out / "events.json", tr.to_dict())
    u = tr.final.amplitudes or ()
    write_csv(out / "final_state.csv", ["pulse_id", "position", "u0"],
              ([pid, p, uu] for pid, p, uu in zip(tr.final_ids, tr.final.positions, u)))
    if tr.terminal == "failure":
        raise NumericalFailure(tr.failure or "cascade failed")
    return {"terminal": tr.terminal, "events": len(tr.events), "survivors": len(tr.final_ids)}


def cmd_spectrum(s: Scenario, out: Path) -> dict:
    P = s.pulses.P
    u = solve_amplitudes(P, s.params, s.terrain, s.domain, s.amplitude_mode, s.tuning)
    rep = spectrum(P, s.params, s.terrain, s.domain, s.spectrum_mode, u, 0.0, s.tuning)
    d = rep.to_dict()
    write_json(out / "spectrum.json", d)
    write_csv(out / "eigenvalues.csv", ["re", "im", "dominant"],
              ([e.lam.real, e.lam.imag, e.dominant + 1] for e in rep.eigen))
    return {"mode": rep.mode, "count": len(rep.eigen), "max_real": rep.max_real}


def _slope(s: Scenario) -> float:
    if not s.terrain.is_constant_slope:
        raise InputError(["this command needs a constant-slope terrain"])
    return s.terrain.H


def cmd_skeleton(s: Scenario, out: Path) -> dict:
    sk = trace_skeleton(s.params.m, _slope(s), s.tuning)
    d = sk.to_dict()
    write_json(out / "skeleton.json", d)
    write_csv(out / "skeleton.csv", ["K", "re", "im"], sk.rows())
    return {"landing_point": d["landing_point"], "kstar": d["kstar"]}


def cmd_fixed_point(s: Scenario, out: Path) -> dict:
    if s.domain.kind != "neumann":
        raise InputError(["fixed-point needs a Neumann domain"])
    rep = fixed_point(s.pulses.N, s.params, s.terrain, s.domain, s.amplitude_mode, 0.0, s.tuning, s.seed,
                      guess=s.pulses.P)
    d = {"positions": list(rep.config.positions), "u0": list(rep.config.amplitudes),
         "max_velocity": rep.max_velocity, "unique": rep.unique,
         "jacobian_eigenvalues": [complex(e) for e in rep.jacobian_eigs],
         "stable": bool(np.all(np.real(rep.jacobian_eigs) < 0)),
         "starts": [None if q is None else list(q) for q in rep.starts]}
    write_json(out / "fixed_point.json", d)
    return {"unique": rep.unique, "stable": d["stable"]}


def cmd_speeds(s: Scenario, out: Path) -> dict:
    H = _slope(s)
    ds = np.round(np.linspace(0.5, 50.0, 100), 10)
    rows = []
    for d in ds:
        try:
            rows.append([float(d), regular_speed(float(d), H, s.params, s.amplitude_mode)])
        except NoSolution:
            rows.append([float(d), float("nan")])
    write_csv(out / "speeds.csv", ["spacing", "speed"], rows)
    ch = homoclinic_speed(H, s.params, s.amplitude_mode)
    write_json(out / "speeds.json", {"H": H, "homoclinic_speed": ch})
    return {"homoclinic_speed": ch}


def cmd_colonization(s: Scenario, out: Path) -> dict:
    Hs = np.round(np.linspace(0.2, 2.0, 37), 10)
    rows = [[float(H), colonization_wavelength(float(H), s.params)] for H in Hs]
    write_csv(out / "colonization.csv", ["H", "d_c"], rows)
    return {"points": len(rows)}


def cmd_pde(s: Scenario, out: Path) -> dict:
    grid = make_grid(s.params, s.domain, s.tuning.pde_dx or None)
    init = build_initial(s.pulses, s.params, s.terrain, s.domain, grid, s.tuning, 0.0, s.amplitude_mode,
                         noise=s.tuning.noise, seed=s.seed)
    res = simulate_pde(s.params, s.terrain, s.domain, init, s.t_end, grid, s.tuning)
    write_csv(out / "tracks.csv", ["t", "pulse_id", "position", "height"], res.track_rows())
    write_csv(out / "mass.csv", ["t", "a", "int_U", "int_V", "pulses"], res.mass)
    write_csv(out / "snapshots.csv", ["t", "x", "U", "V"], res.snapshot_rows(max(1, s.tuning.snapshot_stride)))
    summary = {"steps": res.steps, "dt": res.dt, "dx": grid.dx, "nodes": grid.n, "backend": res.backend,
               "extinction_threshold": res.extinction_threshold, "min_raw_V": res.min_raw_V,
               "survivors": [{"pulse_id": tr.pulse_id, "position": tr.position[-1], "height": tr.height[-1]}
                             for tr in res.survivors()],
               "deaths": {tr.pulse_id: tr.death for tr in res.tracks if tr.death is not None}}
    write_json(out / "pde_summary.json", summary)
    return {"survivors": len(summary["survivors"])}


def _read_rows(path: Path):
    if not path.is_file():
        raise InputError([f"{path} not found"])
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_ode_run(run: Path):
    """Per-id series, removal times, survivors and settled flag from a cascade output directory."""
    rows = _read_rows(run / "trajectory.csv")
    events_path = run / "events.json"
    if not events_path.is_file():
        raise InputError([f"{events_path} not found (compare expects a cascade run)"])
    events = json.loads(events_path.read_text(encoding="utf-8"))
    series: dict = {}
    for r in rows:
        ts, ps = series.setdefault(int(r["pulse_id"]), ([], []))
        ts.append(float(r["t"]))
        ps.append(float(r["position"]))
    series = {k: (np.asarray(v[0]), np.asarray(v[1])) for k, v in series.items()}
    removed = {pid: float(ev["t"]) for ev in events["events"] for pid in ev["removed"]}
    return series, removed, list(events["final_ids"]), events["terminal"] == "ode_fixed_point"


def load_pde_tracks(run: Path) -> list:
    rows = _read_rows(run / "tracks.csv")
    summary_path = run / "pde_summary.json"
    deaths = {}
    if summary_path.is_file():
        deaths = {int(k): float(v) for k, v in json.loads(summary_path.read_text())["deaths"].items()}
    tracks: dict = {}
    for r in rows:
        pid = int(r["pulse_id"])
        tr = tracks.setdefault(pid, PulseTrack(pid, birth=float(r["t"])))
        tr.t.append(float(r["t"]))
        tr.position.append(float(r["position"]))
        tr.height.append(float(r["height"]))
    for pid, tr in tracks.items():
        tr.death = deaths.get(pid)
    return [tracks[k] for k in sorted(tracks)]


def cmd_compare(ode_dir: Path, pde_dir: Path, out: Path) -> dict:
    series, removed, final_ids, settled = load_ode_run(ode_dir)
    metrics = compare_series(series, removed, final_ids, settled, load_pde_tracks(pde_dir))
    write_json(out / "metrics.json", metrics)
    return {"max_position_error": metrics["max_position_error"], "survivors_agree": metrics["survivors_agree"]}


HANDLERS = {"ode": cmd_ode, "pde": cmd_pde, "cascade": cmd_cascade, "spectrum": cmd_spectrum,
            "skeleton": cmd_skeleton, "fixed-point": cmd_fixed_point, "speeds": cmd_speeds,
            "colonization": cmd_colonization}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="klausmeier-pulses",
                                 description="Pulse dynamics and quasi-steady spectra for the extended Klausmeier model.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="scenario JSON file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    ap.add_argument("--spectrum-mode", choices=("dsp", "csp", "auto"), default=None)
    ap.add_argument("--parity", choices=("even", "odd"), default=None)
    ap.add_argument("--ode", help="cascade run directory (compare)")
    ap.add_argument("--pde", help="pde run directory (compare)")
    return ap


def _manifest(args, scen: Scenario | None, status: str, wall: float, extra) -> dict:
    return {
        "command": args.command,
        "status": status,
        "scenario": None if scen is None else scen.to_dict(),
        "overrides": list(args.set or []),
        "seed": None if scen is None else scen.seed,
        "inputs": {"config": args.config, "ode": args.ode, "pde": args.pde},
        "versions": {"package": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "kernels": kernels.BACKEND},
        "wall_time_s": wall,
        "result": extra,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    t0 = time.perf_counter()
    scen = None
    try:
        if args.command == "compare":
            if not (args.ode and args.pde):
                raise InputError(["compare needs --ode DIR and --pde DIR"])
            result = cmd_compare(Path(args.ode), Path(args.pde), out)
        else:
            if not args.config:
                raise InputError([f"{args.command} needs --config"])
            scen = parse_config(args.config, _run_overrides(args), args.command)
            with np.errstate(all="ignore"):
                result = HANDLERS[args.command](scen, out)
    except InputError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        write_json(out / "manifest.json", _manifest(args, scen, "invalid", time.perf_counter() - t0,
                                                    {"errors": exc.errors}))
        return EXIT_INVALID
    except (NumericalFailure, *NUMERIC_ERRORS) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_json(out / "manifest.json", _manifest(args, scen, "numerical_failure", time.perf_counter() - t0,
                                                    {"error": str(exc)}))
        return EXIT_NUMERIC
    write_json(out / "manifest.json", _manifest(args, scen, "ok", time.perf_counter() - t0, result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
