"""Hybrid cascade: integrate pulse positions, watch the quasi-steady
spectrum, and remove pulses when it crosses into the right half plane."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .amplitudes import NoSolution
from .model import DomainSpec, ModelParams, PulseConfig, Terrain, Tuning
from .nlep import (SpectrumError, SpectrumReport, csp_spectrum, dsp_margin, dsp_spectrum,
                   use_coupled)
from .pulse_ode import Monitor, Trajectory, integrate, velocity


@dataclass
class CascadeEvent:
    t: float
    a: float
    bifurcation: str  # saddle-node | hopf
    pattern_class: str  # irregular | regular
    removal: str  # single | period_doubling | full_collapse
    removed: list  # pulse ids (1-based labels of the initial configuration)
    lam: complex
    ambiguity: bool
    trigger: str  # spectrum | existence
    positions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"t": self.t, "a": self.a, "type": self.bifurcation, "class": self.pattern_class,
                "removal": self.removal, "removed": list(self.removed),
                "lambda": {"re": self.lam.real, "im": self.lam.imag}, "ambiguity": self.ambiguity,
                "trigger": self.trigger, "positions": list(self.positions), "notes": list(self.notes)}


@dataclass
class CascadeTrace:
    segments: list = field(default_factory=list)  # (Trajectory, ids)
    events: list = field(default_factory=list)
    terminal: str = "t_end"
    final: PulseConfig | None = None
    final_ids: list = field(default_factory=list)
    failure: str | None = None

    def to_dict(self) -> dict:
        return {"terminal": self.terminal, "events": [e.to_dict() for e in self.events],
                "final_positions": [] if self.final is None else list(self.final.positions),
                "final_amplitudes": [] if self.final is None else list(self.final.amplitudes or ()),
                "final_ids": self.final_ids, "failure": self.failure}

    def trajectory_rows(self):
        """Long-format rows: t, a, segment, pulse_id, position, u0."""
        for k, (traj, ids) in enumerate(self.segments):
            for t, a, P, u in zip(traj.t, traj.a, traj.positions, traj.u0):
                for pid, p, uu in zip(ids, P, u):
                    yield [t, a, k, pid, p, uu]


# --------------------------------------------------------------------------
# spectral evaluation
# --------------------------------------------------------------------------

def _resolve_mode(mode: str, params, terrain) -> str:
    mode = mode.lower()
    if mode == "auto":
        return "csp" if use_coupled(params, terrain) else "dsp"
    return mode


def spectral_report(P, u, params, terrain, domain, t, mode, tuning) -> SpectrumReport:
    if mode == "csp":
        return csp_spectrum(P, params, terrain, domain, u, t, tuning)
    return dsp_spectrum(P, params, terrain, u, t, tuning, domain)


def stability_indicator(P, u, params, terrain, domain, t, mode, tuning) -> float:
    """Positive while stable; crosses zero when the spectrum reaches the imaginary axis."""
    if np.any(~np.isfinite(u)):
        return -1.0
    if mode == "dsp":
        rep = dsp_spectrum(P, params, terrain, u, t, tuning, domain)
        return dsp_margin(rep.K, rep.kstar)
    rep = csp_spectrum(P, params, terrain, domain, u, t, tuning)
    if not rep.eigen:
        raise SpectrumError("coupled spectrum returned no eigenvalues")
    return -rep.max_real


# --------------------------------------------------------------------------
# classification and removal
# --------------------------------------------------------------------------

def classify_pattern(K, report: SpectrumReport | None, tuning: Tuning | None = None) -> str:
    tuning = tuning or Tuning()
    K = np.asarray(K, float)
    if K.size < 2:
        return "irregular"
    spread = (K.max() - K.min()) / K.mean()
    if spread >= tuning.regularity_tol:
        return "irregular"
    if report is None or report.critical is None:
        return "regular"
    lc = report.critical.lam
    scale = max(abs(lc), 1e-12)
    close = [e for e in report.eigen if abs(e.lam - lc) / scale < tuning.cluster_tol and e.lam.imag >= 0]
    return "regular" if len(close) >= 2 or spread < 1e-9 else "irregular"


def _alternating(signs) -> bool:
    s = [x for x in signs if x != 0]
    return len(s) == len(signs) and len(s) >= 2 and all(s[i] == -s[i + 1] for i in range(len(s) - 1))


def select_removal(report: SpectrumReport, pattern_class: str, parity: str = "even",
                   sign_report: SpectrumReport | None = None, K=None):
    """Return (removal kind, 0-based indices, ambiguity).

    Irregular patterns lose the pulse with the largest K_j (lowest V peak) in
    either spectral mode.
    """
    N = len(report.u0)
    if pattern_class == "irregular" or N == 1:
        Kv = report.K if K is None else np.asarray(K)
        return "single", [int(np.argmax(Kv))], False
    src = sign_report if sign_report is not None else report
    c = src.critical
    if c is not None and _alternating(c.signs):
        # 1-based even labels are 0-based odd indices
        start = 1 if parity == "even" else 0
        return "period_doubling", list(range(start, N, 2)), True
    return "full_collapse", list(range(N)), False


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def run_cascade(initial, params: ModelParams, terrain: Terrain, domain: DomainSpec, t_end: float,
                spectrum_mode: str = "auto", parity: str = "even", tuning: Tuning | None = None,
                t0: float = 0.0, amplitude_mode: str = "A3prime", max_events: int = 1000,
                log=None) -> CascadeTrace:
    tuning = tuning or Tuning()
    mode = _resolve_mode(spectrum_mode, params, terrain)
    P = np.asarray(initial.P if isinstance(initial, PulseConfig) else initial, float)
    ids = list(range(1, P.size + 1))
    t = float(t0)
    trace = CascadeTrace()

    def ind(tt, PP, uu):
        return stability_indicator(PP, uu, params, terrain, domain, tt, mode, tuning)

    while True:
        if P.size == 0:
            trace.terminal = "extinct"
            trace.final = PulseConfig((), (), t)
            trace.final_ids = []
            return trace
        if t >= t_end:
            break
        mon = Monitor("spectrum", ind, tol=tuning.dt_tol_rel)
        try:
            traj = integrate(P, params, terrain, domain, (t, t_end), [mon], amplitude_mode, tuning)
        except SpectrumError as exc:
            trace.terminal = "failure"
            trace.failure = str(exc)
            return trace
        trace.segments.append((traj, list(ids)))
        reason = traj.reason
        if log:
            log(f"segment N={P.size} t=[{t:.6g}, {traj.t[-1]:.6g}] -> {reason}")
        if reason in ("spectrum", "existence"):
            ev = traj.event
            Pe = np.asarray(ev.positions, float)
            te = ev.t
            u = np.asarray(ev.u0, float)
            if reason == "existence" or not np.all(np.isfinite(u)):
                # last solvable state: amplitudes from the final trajectory sample
                Pe = traj.positions[-1]
                u = traj.u0[-1]
            try:
                rep = spectral_report(Pe, u, params, terrain, domain, te, mode, tuning)
            except SpectrumError as exc:
                trace.terminal = "failure"
                trace.failure = str(exc)
                return trace
            cls = classify_pattern(rep.K, rep, tuning)
            sign_rep = None
            if cls == "regular" and mode == "dsp" and terrain.is_constant_slope:
                try:
                    sign_rep = csp_spectrum(Pe, params, terrain, domain, u, te, tuning)
                except SpectrumError:
                    sign_rep = None
            kind, idx, amb = select_removal(rep, cls, parity, sign_rep)
            crit = rep.critical
            lam = crit.lam if crit is not None else complex(math.nan, math.nan)
            if reason == "existence":
                bif = "saddle-node"
            else:
                bif = "hopf" if abs(lam.imag) > tuning.hopf_tol else "saddle-node"
            removed = [ids[i] for i in idx]
            notes = []
            if kind == "single" and rep.mode == "CSP" and crit is not None and crit.dominant != idx[0]:
                notes.append(f"critical eigenvector weight peaks at pulse {ids[crit.dominant]}, "
                             f"largest K at pulse {removed[0]}")
            trace.events.append(CascadeEvent(te, params.a_at(te), bif, cls, kind, removed, lam, amb,
                                             reason, [float(x) for x in Pe], notes))
            if log:
                log(f"event t={te:.6g} a={params.a_at(te):.6g} {bif}/{cls} remove {removed}")
            keep = [i for i in range(P.size) if i not in idx]
            P = Pe[keep]
            ids = [ids[i] for i in keep]
            t = te
            if len(trace.events) >= max_events:
                trace.terminal = "max_events"
                break
            continue
        if reason == "ode_fixed_point":
            trace.terminal = "ode_fixed_point"
            P = traj.positions[-1]
            t = traj.t[-1]
            break
        if reason == "collision":
            trace.terminal = "collision"
            P = traj.positions[-1]
            t = traj.t[-1]
            break
        if reason == "step_underflow":
            trace.terminal = "failure"
            trace.failure = "step size underflow"
            P = traj.positions[-1]
            t = traj.t[-1]
            break
        P = traj.positions[-1]
        t = traj.t[-1]
        break
    try:
        u = velocity(P, params, terrain, domain, amplitude_mode, t, tuning).u0 if P.size else np.array([])
    except NoSolution:
        u = np.full(P.size, np.nan)
    trace.final = PulseConfig(tuple(P), tuple(u), t)
    trace.final_ids = list(ids)
    return trace
