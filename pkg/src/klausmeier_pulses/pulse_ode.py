"""Reduced dynamics of pulse positions.

dP_j/dt = (D a^2 / (6 m sqrt m)) [U_x(P_j^+)^2 - U_x(P_j^-)^2]

with the one-sided derivatives of the outer field. Positions are integrated
with an adaptive Dormand-Prince scheme; amplitudes are re-solved inside
the right-hand side in the weak mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

from .amplitudes import NoSolution, amplitudes_leading, amplitudes_newton
from .model import DomainSpec, ModelParams, PulseConfig, Terrain, Tuning
from .outer import R_minus, R_plus, edge_map


@dataclass
class Velocity:
    dPdt: np.ndarray
    c: np.ndarray  # bracketed O(1) part divided by 6
    prefactor: float
    u0: np.ndarray

    def to_dict(self) -> dict:
        return {"dPdt": self.dPdt, "c": self.c, "prefactor": self.prefactor, "u0": self.u0}


def _positions(config) -> np.ndarray:
    if isinstance(config, PulseConfig):
        return config.P
    return np.asarray(config, dtype=float)


def velocity(config, params: ModelParams, terrain: Terrain, domain: DomainSpec,
             mode: str = "A3prime", t: float = 0.0, tuning: Tuning | None = None,
             guess=None) -> Velocity:
    """Pulse velocities at time t. Raises NoSolution past the existence fold."""
    tuning = tuning or Tuning()
    P = _positions(config)
    em = edge_map(P, terrain, domain, tuning)
    if mode == "A3":
        u = amplitudes_leading(P, terrain, domain, emap=em)
        w = np.zeros_like(u)
    else:
        sol = amplitudes_newton(P, params, terrain, domain, tuning, t, guess=guess, emap=em)
        u = sol.u0
        w = params.delta(t) * u
    plus, minus = em.derivatives(w)
    c = (plus ** 2 - minus ** 2) / 6.0
    pref = params.prefactor(t)
    return Velocity(pref * c, c, pref, u)


# --------------------------------------------------------------------------
# closed-form speeds
# --------------------------------------------------------------------------

def _regular_amplitude(d: float, H: float, delta: float) -> float:
    """Amplitude of a regular periodic pattern: (1 - delta u) J0 = 6/u, minus root."""
    J0 = R_plus(d, H) - R_minus(d, H)
    if delta == 0:
        return 6.0 / J0
    disc = 1.0 - 24.0 * delta / J0
    if disc < 0:
        raise NoSolution("regular pattern beyond existence fold")
    return 12.0 / (J0 * (1.0 + math.sqrt(disc)))


def regular_speed(d: float, H: float, params: ModelParams, mode: str = "A3prime", t: float = 0.0) -> float:
    """Migration speed of a regular pattern with wavelength d."""
    if d <= 0:
        raise ValueError("spacing must be positive")
    rp, rm = R_plus(d, H), R_minus(d, H)
    c0 = params.prefactor(t) * (rp * rp - rm * rm) / 6.0
    if mode == "A3":
        return c0
    u = _regular_amplitude(d, H, params.delta(t))
    return (1.0 - params.delta(t) * u) ** 2 * c0


def homoclinic_speed(H: float, params: ModelParams, mode: str = "A3prime", t: float = 0.0) -> float:
    """Speed of a single pulse on the real line with constant slope H."""
    from .amplitudes import homoclinic_amplitudes

    s = math.sqrt(H * H + 4.0)
    kappa = 1.0
    if mode != "A3":
        kappa = 1.0 - params.delta(t) * homoclinic_amplitudes(params.delta(t), H)[0]
    return kappa ** 2 * params.prefactor(t) * H * s / 6.0


def colonization_wavelength(H: float, params: ModelParams | None = None) -> float:
    """Spacing at which the lowest pulse (nothing downhill) is stationary; +inf if H <= 0."""
    if H <= 0:
        return math.inf
    s = math.sqrt(H * H + 4.0)
    target = (s - H) / 2.0

    def g(d):
        return R_plus(d, H) - target

    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            return math.inf
    lo = hi / 2.0
    while g(lo) > 0 and lo > 1e-12:
        lo /= 2.0
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-15)


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

@dataclass
class Monitor:
    """Scalar indicator evaluated at accepted steps; an event fires when it drops to <= 0."""

    name: str
    func: Callable[[float, np.ndarray, np.ndarray], float]
    terminal: bool = True
    tol: float = 1e-6


@dataclass
class Event:
    t: float
    a: float
    type: str
    positions: np.ndarray
    u0: np.ndarray
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t": self.t, "a": self.a, "type": self.type, "positions": self.positions,
                "u0": self.u0, **self.info}


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    u0: list = field(default_factory=list)
    a: list = field(default_factory=list)
    reason: str = "t_end"
    event: Optional[Event] = None

    def append(self, t, P, u, a):
        self.t.append(float(t))
        self.positions.append(np.array(P, dtype=float))
        self.u0.append(np.array(u, dtype=float))
        self.a.append(float(a))

    @property
    def final(self) -> PulseConfig:
        return PulseConfig(tuple(self.positions[-1]), tuple(self.u0[-1]), self.t[-1])

    def rows(self):
        for t, P, u, a in zip(self.t, self.positions, self.u0, self.a):
            yield [t, a, *P, *u]

    def header(self):
        N = len(self.positions[0]) if self.positions else 0
        return ["t", "a"] + [f"P{j + 1}" for j in range(N)] + [f"u0{j + 1}" for j in range(N)]


class _RHS:
    """Velocity field with a warm-started amplitude cache."""

    def __init__(self, params, terrain, domain, mode, tuning):
        self.params, self.terrain, self.domain = params, terrain, domain
        self.mode, self.tuning = mode, tuning
        self.guess = None
        self.last_u = None
        self.evals = 0

    def __call__(self, t, P):
        self.evals += 1
        if np.any(np.diff(P) <= 0):
            raise NoSolution("pulse ordering lost")
        v = velocity(P, self.params, self.terrain, self.domain, self.mode, t, self.tuning, self.guess)
        self.last_u = v.u0
        return v.dPdt

    def amplitudes(self, t, P):
        v = velocity(P, self.params, self.terrain, self.domain, self.mode, t, self.tuning, self.guess)
        return v.u0, v


def _bisect(f_ok, lo, hi, tol):
    """Largest t in [lo, hi] with f_ok(t) True, assuming f_ok(lo) and not f_ok(hi)."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f_ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def integrate(config, params: ModelParams, terrain: Terrain, domain: DomainSpec, t_span,
              monitors=(), mode: str = "A3prime", tuning: Tuning | None = None,
              max_step: float = np.inf, fixed_point_stop: bool = True) -> Trajectory:
    """Integrate pulse positions over ``t_span`` until t_end or the first event.

    Built-in events: "collision" (spacing below collision_factor*D/sqrt(m)),
    "existence" (amplitude system loses its root), "ode_fixed_point"
    (velocity below fp_detect with a constant feed rate). User monitors fire
    when their indicator drops to <= 0; the crossing time is refined by
    bisection on the dense output.
    """
    tuning = tuning or Tuning()
    t0, t1 = map(float, t_span)
    P0 = _positions(config).copy()
    rhs = _RHS(params, terrain, domain, mode, tuning)
    traj = Trajectory()
    coll = tuning.collision_factor * params.D / math.sqrt(params.m)
    span = max(t1 - t0, 1.0)
    dt_tol = tuning.dt_tol_rel * span

    try:
        u, _ = rhs.amplitudes(t0, P0)
    except NoSolution as exc:
        traj.append(t0, P0, np.full(P0.size, np.nan), params.a_at(t0))
        traj.reason = "existence"
        traj.event = Event(t0, params.a_at(t0), "existence", P0, np.full(P0.size, np.nan), {"detail": str(exc)})
        return traj
    rhs.guess = u
    traj.append(t0, P0, u, params.a_at(t0))
    prev_ind = {m.name: m.func(t0, P0, u) for m in monitors}
    for m in monitors:
        if prev_ind[m.name] <= 0 and m.terminal:
            traj.reason = m.name
            traj.event = Event(t0, params.a_at(t0), m.name, P0, u, {"indicator": prev_ind[m.name]})
            return traj

    max_step = min(max_step, span / 50.0)
    first = min(1.0, (t1 - t0) / 10.0, max_step)
    ctx = (monitors, prev_ind, span)
    try:
        solver = RK45(rhs, t0, P0, t1, rtol=tuning.ode_rtol, atol=tuning.ode_atol,
                      max_step=max_step, first_step=first)
    except NoSolution as exc:
        return _existence_event(traj, rhs, params, t0, P0, None, dt_tol, str(exc), ctx, first)
    while solver.status == "running":
        t_prev, y_prev = solver.t, solver.y.copy()
        try:
            msg = solver.step()
        except NoSolution as exc:
            # existence lost inside the step: bisect along the frozen-velocity extrapolation
            return _existence_event(traj, rhs, params, t_prev, y_prev, solver, dt_tol, str(exc), ctx)
        if solver.status == "failed":
            traj.reason = "step_underflow"
            traj.event = Event(solver.t, params.a_at(solver.t), "step_underflow", solver.y.copy(),
                               traj.u0[-1], {"detail": str(msg)})
            return traj
        t, P = solver.t, solver.y.copy()
        try:
            u, vel = rhs.amplitudes(t, P)
        except NoSolution as exc:
            return _existence_event(traj, rhs, params, t_prev, y_prev, solver, dt_tol, str(exc), ctx)
        rhs.guess = u
        dense = solver.dense_output()

        # collision
        gaps = _gaps(P, domain)
        if np.min(gaps) < coll if gaps.size else False:
            def ok(tt):
                return np.min(_gaps(dense(tt), domain)) >= coll
            lo, _ = _bisect(ok, t_prev, t, dt_tol)
            Pc = dense(lo)
            uc = _safe_amplitudes(rhs, lo, Pc, u)
            traj.append(lo, Pc, uc, params.a_at(lo))
            traj.reason = "collision"
            traj.event = Event(lo, params.a_at(lo), "collision", Pc, uc, {"min_gap": float(np.min(_gaps(Pc, domain)))})
            return traj

        fired = None
        for mon in monitors:
            val = mon.func(t, P, u)
            if val <= 0 and prev_ind[mon.name] > 0:
                def ok(tt, mon=mon):
                    Pt = dense(tt)
                    return mon.func(tt, Pt, _safe_amplitudes(rhs, tt, Pt, u)) > 0
                lo, hi = _bisect(ok, t_prev, t, max(mon.tol * span, dt_tol))
                if fired is None or hi < fired[1]:
                    fired = (mon, hi, lo)
            prev_ind[mon.name] = val
        if fired is not None and fired[0].terminal:
            mon, te, tlo = fired
            Pe = dense(te)
            ue = _safe_amplitudes(rhs, te, Pe, u)
            if not np.all(np.isfinite(ue)):
                # bracket end sits past the existence fold: report the last solvable state
                te = tlo
                Pe = dense(te)
                ue = _safe_amplitudes(rhs, te, Pe, u)
            traj.append(te, Pe, ue, params.a_at(te))
            traj.reason = mon.name
            traj.event = Event(te, params.a_at(te), mon.name, Pe, ue, {"indicator": mon.func(te, Pe, ue)})
            return traj

        traj.append(t, P, u, params.a_at(t))
        if (fixed_point_stop and domain.kind == "neumann" and params.a.constant_after() <= t
                and P.size and np.max(np.abs(vel.c)) < tuning.fp_detect):
            fp = _polish_fixed_point(P, params, terrain, domain, mode, t, tuning)
            if fp is not None:
                Q, uq, eigs = fp
                traj.append(t, Q, uq, params.a_at(t))
                traj.reason = "ode_fixed_point"
                traj.event = Event(t, params.a_at(t), "ode_fixed_point", Q, uq,
                                   {"max_c_before": float(np.max(np.abs(vel.c))),
                                    "jacobian_eigs": [float(e.real) for e in eigs]})
                return traj
    traj.reason = "t_end"
    return traj


def _safe_amplitudes(rhs, t, P, fallback):
    try:
        return rhs.amplitudes(t, P)[0]
    except NoSolution:
        return np.full(len(P), np.nan)


def _existence_event(traj, rhs, params, t_prev, y_prev, solver, dt_tol, detail, ctx, h=None):
    """Locate the last solvable time along the frozen-velocity path from the last accepted state.

    A monitor that already crossed zero before that time takes precedence.
    """
    monitors, prev_ind, span = ctx
    v = rhs(t_prev, y_prev)
    if h is None:
        h = max(solver.t - t_prev, solver.step_size or 0.0, 1e-12)
    h = max(h, dt_tol)

    def path(tt):
        return y_prev + v * (tt - t_prev)

    def ok(tt):
        try:
            rhs.amplitudes(tt, path(tt))
            return True
        except NoSolution:
            return False

    hi = t_prev + h
    while ok(hi):
        hi += h
        if hi > t_prev + 1e6 * h:
            break
    lo, hi = _bisect(ok, t_prev, hi, dt_tol)
    ue = rhs.amplitudes(lo, path(lo))[0]
    for mon in monitors:
        if prev_ind[mon.name] > 0 and mon.terminal and mon.func(lo, path(lo), ue) <= 0:
            def mok(tt, mon=mon):
                Pt = path(tt)
                return mon.func(tt, Pt, _safe_amplitudes(rhs, tt, Pt, ue)) > 0
            tlo, te = _bisect(mok, t_prev, lo, max(mon.tol * span, dt_tol))
            Pe = path(te)
            uu = _safe_amplitudes(rhs, te, Pe, ue)
            if not np.all(np.isfinite(uu)):
                te = tlo
                Pe = path(te)
                uu = _safe_amplitudes(rhs, te, Pe, ue)
            traj.append(te, Pe, uu, params.a_at(te))
            traj.reason = mon.name
            traj.event = Event(te, params.a_at(te), mon.name, Pe, uu, {"indicator": mon.func(te, Pe, uu)})
            return traj
    Pe = path(lo)
    traj.append(lo, Pe, ue, params.a_at(lo))
    traj.reason = "existence"
    traj.event = Event(lo, params.a_at(lo), "existence", Pe, ue, {"detail": detail, "t_fail": hi})
    return traj


def _polish_fixed_point(P, params, terrain, domain, mode, t, tuning):
    """Newton from a slow state to the nearby fixed point; None unless it is close and attracting."""
    try:
        Q, _ = _newton_fp(np.asarray(P, float), params, terrain, domain, mode, t, tuning)
    except (NoSolution, np.linalg.LinAlgError):
        return None
    if np.max(np.abs(Q - P)) > 0.05 * domain.L / max(len(P), 1):
        return None
    eigs = np.linalg.eigvals(velocity_jacobian(Q, params, terrain, domain, mode, t, tuning))
    if np.any(eigs.real >= 0):
        return None
    v = velocity(Q, params, terrain, domain, mode, t, tuning)
    return Q, v.u0, eigs


def _gaps(P, domain):
    P = np.asarray(P)
    g = np.diff(P)
    if domain.kind == "periodic" and P.size >= 1:
        g = np.append(g, domain.L - P[-1] + P[0])
    return g


# --------------------------------------------------------------------------
# fixed points (bounded domains)
# --------------------------------------------------------------------------

@dataclass
class FixedPointReport:
    config: PulseConfig
    max_velocity: float
    starts: list
    unique: bool
    jacobian_eigs: np.ndarray


def _c_field(P, params, terrain, domain, mode, t, tuning):
    return velocity(P, params, terrain, domain, mode, t, tuning).c


def velocity_jacobian(P, params, terrain, domain, mode="A3prime", t=0.0, tuning=None, h=1e-7):
    """Central-difference Jacobian of the O(1) velocity part c(P)."""
    tuning = tuning or Tuning()
    P = np.asarray(P, dtype=float)
    N = P.size
    J = np.empty((N, N))
    for k in range(N):
        e = np.zeros(N)
        e[k] = h
        J[:, k] = (_c_field(P + e, params, terrain, domain, mode, t, tuning)
                   - _c_field(P - e, params, terrain, domain, mode, t, tuning)) / (2 * h)
    return J


def _newton_fp(P, params, terrain, domain, mode, t, tuning):
    """Pseudo-transient continuation on dP/dt = c(P); plain Newton once tau is large."""
    L = domain.L
    c = _c_field(P, params, terrain, domain, mode, t, tuning)
    nrm = float(np.max(np.abs(c)))
    gaps = np.diff(np.r_[0.0, P, L])
    tau = 0.1 * np.min(gaps) / max(nrm, 1e-300)
    N = P.size
    for _ in range(20 * tuning.newton_max_iter):
        J = velocity_jacobian(P, params, terrain, domain, mode, t, tuning)
        newton = np.linalg.solve(J, -c)
        # weakly pinned pulses need a small step, not only a small residual
        if nrm < 1e-12 and np.max(np.abs(newton)) < 1e-10 * L:
            break
        for _ in range(60):
            step = newton if tau > 1e12 else np.linalg.solve(np.eye(N) / tau - J, c)
            trial = P + step
            ct = None
            if np.all(np.diff(trial) > 0) and trial[0] > 0 and trial[-1] < L:
                try:
                    ct = _c_field(trial, params, terrain, domain, mode, t, tuning)
                except NoSolution:
                    ct = None
            if ct is not None and (np.max(np.abs(ct)) < 2.0 * nrm or nrm < 1e-12):
                break
            tau = min(tau, 1e12) / 4.0
        else:
            raise NoSolution("fixed-point continuation stalled")
        new = float(np.max(np.abs(ct)))
        tau = tau * nrm / max(new, 1e-300)
        P, c, nrm = trial, ct, new
    else:
        raise NoSolution(f"fixed-point iteration did not converge ({nrm:.2e})")
    if nrm >= 1e-10:
        raise NoSolution(f"fixed-point Newton did not converge ({nrm:.2e})")
    return P, nrm


def fixed_point(N: int, params: ModelParams, terrain: Terrain, domain: DomainSpec,
                mode: str = "A3prime", t: float = 0.0, tuning: Tuning | None = None,
                seed: int = 0, guess=None) -> FixedPointReport:
    """Stationary configuration on a Neumann domain, with a multi-start uniqueness check."""
    if domain.kind != "neumann":
        raise ValueError("fixed points are sought on Neumann domains only")
    tuning = tuning or Tuning()
    L = domain.L
    base = (2 * np.arange(1, N + 1) - 1) * L / (2 * N) if guess is None else np.asarray(guess, float)
    P, nrm = _newton_fp(base, params, terrain, domain, mode, t, tuning)
    rng = np.random.default_rng(seed)
    starts = []
    unique = True
    for _ in range(tuning.fp_starts):
        start = np.sort(base + rng.uniform(-0.3, 0.3, N) * L / (2 * N))
        try:
            Q, _ = _newton_fp(start, params, terrain, domain, mode, t, tuning)
            starts.append(Q)
            if np.max(np.abs(Q - P)) > 1e-7:
                unique = False
        except NoSolution:
            starts.append(None)
    eigs = np.linalg.eigvals(velocity_jacobian(P, params, terrain, domain, mode, t, tuning))
    v = velocity(P, params, terrain, domain, mode, t, tuning)
    return FixedPointReport(PulseConfig(tuple(P), tuple(v.u0), t), float(np.max(np.abs(v.dPdt))),
                            starts, unique, eigs)
