"""Reference finite-difference solver for the full two-component model.

U_t = U_xx + h_x U_x + h_xx U + a - U - U V^2
V_t = D^2 V_xx - m V + U V^2

Time stepping is linearly implicit IMEX-BDF2 (backward Euler on the first
step) with one tridiagonal solve per field; the hot loop lives in
``kernels.imex_step``. Pulses are read off V as refined local maxima and
linked into tracks that can be compared against the reduced ODE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .amplitudes import amplitudes_leading, amplitudes_newton
from .model import DomainSpec, ModelParams, PulseConfig, Terrain, Tuning
from .outer import sample_field


class PDEError(RuntimeError):
    """Numerical failure of the reference solver (blow-up, positivity loss, no steady state)."""


class AssociationError(RuntimeError):
    """ODE and PDE pulses could not be paired within the gap tolerance."""


# --------------------------------------------------------------------------
# grid and fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    x: np.ndarray
    dx: float
    kind: str  # neumann | periodic
    L: float

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    def weights(self) -> np.ndarray:
        """Quadrature weights (trapezoid on Neumann nodes, uniform on the periodic ring)."""
        w = np.full(self.n, self.dx)
        if not self.periodic:
            w[0] = w[-1] = 0.5 * self.dx
        return w


def make_grid(params: ModelParams, domain: DomainSpec, dx: float | None = None) -> Grid:
    if domain.kind == "unbounded":
        raise ValueError("the PDE solver needs a bounded domain; embed the run in a Neumann box")
    width = params.pulse_width()
    target = dx if dx else min(width / 8.0, domain.L / 4096.0)
    if target > width / 8.0 * (1 + 1e-12):
        raise ValueError(f"dx={target:.3g} under-resolves pulses of width {width:.3g} (need dx <= width/8)")
    M = int(math.ceil(domain.L / target))
    if domain.kind == "periodic":
        x = np.arange(M) * (domain.L / M)
    else:
        x = np.linspace(0.0, domain.L, M + 1)
    return Grid(x, domain.L / M, domain.kind, domain.L)


@dataclass
class FieldState:
    t: float
    U: np.ndarray
    V: np.ndarray
    a: float


def _offsets(grid: Grid, p: float) -> np.ndarray:
    d = grid.x - p
    if grid.periodic:
        d = (d + 0.5 * grid.L) % grid.L - 0.5 * grid.L
    return d


def pulse_profile(grid: Grid, params: ModelParams, t: float, positions, u0) -> np.ndarray:
    """Sum of leading-order sech^2 pulses in unscaled V."""
    a = params.a_at(t)
    sm = math.sqrt(params.m)
    V = np.zeros(grid.n)
    for p, u in zip(positions, u0):
        xi = sm * _offsets(grid, p) / params.D
        V += a / (sm * params.D) * 1.5 / u / np.cosh(0.5 * xi) ** 2
    return V


def build_initial(config, params: ModelParams, terrain: Terrain, domain: DomainSpec, grid: Grid,
                  tuning: Tuning | None = None, t: float = 0.0, mode: str = "A3prime",
                  noise: float = 0.0, seed: int | None = None) -> FieldState:
    """Fields of an N-pulse state: sech^2 V-pulses and the glued outer U."""
    tuning = tuning or Tuning()
    a = params.a_at(t)
    P = np.asarray(config.P if isinstance(config, PulseConfig) else config, float)
    if P.size == 0:
        return FieldState(t, np.full(grid.n, a), np.zeros(grid.n), a)
    gaps = np.diff(P)
    if domain.kind == "periodic" and P.size > 1:
        gaps = np.append(gaps, P[0] + domain.L - P[-1])
    if gaps.size and gaps.min() < 10.0 * params.pulse_width():
        raise ValueError(f"pulses closer than {10 * params.pulse_width():.3g} overlap their inner regions")
    u0 = getattr(config, "u0", None) if isinstance(config, PulseConfig) else None
    if u0 is None or not np.all(np.isfinite(u0)):
        if mode == "A3":
            u0 = amplitudes_leading(P, terrain, domain)
        else:
            u0 = amplitudes_newton(P, params, terrain, domain, tuning, t).u0
    u0 = np.asarray(u0, float)
    w = params.delta(t) * u0 if mode != "A3" else np.zeros_like(u0)
    Uhat, _ = sample_field(P, w, terrain, domain, grid.x, tuning)
    U = a * Uhat
    V = pulse_profile(grid, params, t, P, u0)
    if noise:
        rng = np.random.default_rng(seed)
        U = U + a * noise * rng.standard_normal(grid.n)
        V = V * (1.0 + noise * rng.standard_normal(grid.n))
    return FieldState(t, np.maximum(U, 0.0), np.maximum(V, 0.0), a)


# --------------------------------------------------------------------------
# pulse extraction and tracking
# --------------------------------------------------------------------------

def extract_pulses(V, x, threshold: float, periodic: bool = False, merge_cells: float = 4.0):
    """Local maxima of V above threshold as (position, height), refined by a 3-point parabola."""
    V = np.asarray(V, float)
    x = np.asarray(x, float)
    n = V.size
    if n < 3:
        return []
    dx = x[1] - x[0]
    if periodic:
        left = np.roll(V, 1)
        right = np.roll(V, -1)
    else:
        left = np.concatenate(([V[1]], V[:-1]))
        right = np.concatenate((V[1:], [V[-2]]))
    idx = np.nonzero((V >= left) & (V > right) & (V > threshold))[0]
    found = []
    for i in idx:
        y0, y1, y2 = left[i], V[i], right[i]
        den = y0 - 2.0 * y1 + y2
        s = 0.5 * (y0 - y2) / den if den < 0 else 0.0
        s = min(max(s, -0.5), 0.5)
        pos = x[i] + s * dx
        h = y1 - 0.25 * (y0 - y2) * s
        if periodic:
            pos %= x[-1] + dx
        else:
            pos = min(max(pos, x[0]), x[-1])
        found.append((float(pos), float(h)))
    if not found:
        return []
    merged = [found[0]]
    for pos, h in found[1:]:
        if pos - merged[-1][0] < merge_cells * dx:
            if h > merged[-1][1]:
                merged[-1] = (pos, h)
        else:
            merged.append((pos, h))
    if periodic and len(merged) > 1:
        period = x[-1] + dx
        if merged[0][0] + period - merged[-1][0] < merge_cells * dx:
            last = merged.pop()
            if last[1] > merged[0][1]:
                merged[0] = last
    return merged


@dataclass
class PulseTrack:
    pulse_id: int
    t: list = field(default_factory=list)
    position: list = field(default_factory=list)
    height: list = field(default_factory=list)
    birth: float = 0.0
    death: float | None = None

    @property
    def alive(self) -> bool:
        return self.death is None


class Tracker:
    """Greedy nearest-neighbour linking of successive pulse detections."""

    def __init__(self, gap_tol: float, period: float | None = None):
        self.gap_tol = gap_tol
        self.period = period
        self.tracks: list[PulseTrack] = []
        self._next = 1

    def _dist(self, a, b):
        d = abs(a - b)
        if self.period:
            d = min(d, self.period - d)
        return d

    def seed(self, t, pulses, ids=None):
        for k, (p, h) in enumerate(pulses):
            pid = ids[k] if ids is not None else self._next
            self._next = max(self._next, pid + 1)
            self.tracks.append(PulseTrack(pid, [t], [p], [h], birth=t))

    def update(self, t, pulses):
        live = [tr for tr in self.tracks if tr.alive]
        pairs = sorted((self._dist(tr.position[-1], p), i, j)
                       for i, tr in enumerate(live) for j, (p, _) in enumerate(pulses))
        used_t, used_p = set(), set()
        for d, i, j in pairs:
            if d > self.gap_tol or i in used_t or j in used_p:
                continue
            used_t.add(i)
            used_p.add(j)
            tr = live[i]
            tr.t.append(t)
            tr.position.append(pulses[j][0])
            tr.height.append(pulses[j][1])
        for i, tr in enumerate(live):
            if i not in used_t:
                tr.death = t
        for j, (p, h) in enumerate(pulses):
            if j not in used_p:
                self.tracks.append(PulseTrack(self._next, [t], [p], [h], birth=t))
                self._next += 1


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------

@dataclass
class PDEResult:
    final: FieldState
    snapshots: list  # FieldState copies at the snapshot stride
    tracks: list  # PulseTrack
    mass: list  # rows (t, a, int U, int V, pulse count)
    steps: int
    dt: float
    extinction_threshold: float
    min_raw_V: float
    backend: str

    def survivors(self) -> list:
        return [tr for tr in self.tracks if tr.alive]

    def track_rows(self):
        for tr in self.tracks:
            for t, p, h in zip(tr.t, tr.position, tr.height):
                yield [t, tr.pulse_id, p, h]

    def snapshot_rows(self, stride: int = 1):
        for s in self.snapshots:
            for x, u, v in zip(self._x[::stride], s.U[::stride], s.V[::stride]):
                yield [s.t, x, u, v]


def _stable_dt(dt, U, V, m):
    """Largest dt (halving from ``dt``) that keeps the implicit V operator an M-matrix."""
    peak = float(np.max(U * V)) if U.size else 0.0
    while 1.0 / dt + m - peak <= 0.0:
        dt *= 0.5
    return dt


def simulate_pde(params: ModelParams, terrain: Terrain, domain: DomainSpec, initial: FieldState,
                 t_end: float, grid: Grid, tuning: Tuning | None = None, dt: float | None = None,
                 snapshot_every: float | None = None, track_every: float | None = None,
                 extinction_threshold: float | None = None, backend: str | None = None,
                 initial_ids=None, stop=None) -> PDEResult:
    """Integrate the full model from ``initial`` up to ``t_end``.

    ``stop(state, tracker)`` may return True to end the run early.
    Raises PDEError on blow-up or on a V value below -1e-14 before clipping.
    """
    tuning = tuning or Tuning()
    impl = kernels.get_backend(backend) if backend else kernels._impl
    backend_name = backend or kernels.BACKEND
    h, hx, hxx = terrain.eval(grid.x)
    hx = np.array(np.broadcast_to(hx, grid.x.shape), dtype=float)
    hxx = np.array(np.broadcast_to(hxx, grid.x.shape), dtype=float)
    dt = float(dt or tuning.pde_dt)
    span = t_end - initial.t
    snap = snapshot_every or tuning.snapshot_every or max(span / 20.0, dt)
    trk = track_every or tuning.track_every or max(span / 2000.0, dt)

    U = np.ascontiguousarray(initial.U, dtype=float)
    V = np.ascontiguousarray(initial.V, dtype=float)
    pulses0 = extract_pulses(V, grid.x, 0.0, grid.periodic)
    if extinction_threshold is None:
        mean_h = np.mean([p[1] for p in pulses0]) if pulses0 else 0.0
        extinction_threshold = tuning.extinction_frac * mean_h if mean_h > 0 else 1e-6
    gap_tol = 0.25 * min(np.diff([p[0] for p in pulses0]).min() if len(pulses0) > 1 else grid.L,
                         grid.L) if pulses0 else 0.25 * grid.L
    tracker = Tracker(max(gap_tol, 10 * grid.dx), grid.L if grid.periodic else None)
    tracker.seed(initial.t, [p for p in pulses0 if p[1] > extinction_threshold], initial_ids)

    w = grid.weights()
    t = initial.t
    a = params.a_at(t)
    mass = [[t, a, float(w @ U), float(w @ V), len(pulses0)]]
    snaps = [FieldState(t, U.copy(), V.copy(), a)]
    Uprev, Vprev = U, V
    prev_h = None
    steps = 0
    min_raw = 0.0
    next_snap = t + snap
    next_trk = t + trk
    while t < t_end - 1e-12 * max(1.0, abs(t_end)):
        h_step = _stable_dt(min(dt, t_end - t), U, V, params.m)
        # BDF2 assumes a uniform step; any change restarts with backward Euler
        first = prev_h is None or abs(h_step - prev_h) > 1e-12 * h_step
        a = params.a_at(t + h_step)
        Un, Vn, vmin = impl.imex_step(U, Uprev, V, Vprev, hx, hxx, a, h_step, grid.dx,
                                      params.m, params.D, grid.periodic, first)
        Un = np.asarray(Un)
        Vn = np.asarray(Vn)
        min_raw = min(min_raw, float(vmin))
        if vmin < -1e-14:
            raise PDEError(f"V lost positivity ({vmin:.3e}) at t={t + h_step:.6g}")
        if not (np.all(np.isfinite(Un)) and np.all(np.isfinite(Vn))) or Vn.max() > 1e8:
            raise PDEError(f"field blow-up at t={t + h_step:.6g}")
        Uprev, Vprev = U, V
        U, V = Un, Vn
        prev_h = h_step
        t += h_step
        steps += 1
        if t >= next_trk - 1e-9 or t >= t_end - 1e-12:
            found = [p for p in extract_pulses(V, grid.x, extinction_threshold, grid.periodic)]
            tracker.update(t, found)
            mass.append([t, a, float(w @ U), float(w @ V), len(found)])
            next_trk += trk
            if stop is not None and stop(FieldState(t, U, V, a), tracker):
                break
        if t >= next_snap - 1e-9:
            snaps.append(FieldState(t, U.copy(), V.copy(), a))
            next_snap += snap
    if snaps[-1].t != t:
        snaps.append(FieldState(t, U.copy(), V.copy(), a))
    res = PDEResult(FieldState(t, U, V, a), snaps, tracker.tracks, mass, steps, dt,
                    extinction_threshold, min_raw, backend_name)
    res._x = grid.x
    return res


# --------------------------------------------------------------------------
# ODE/PDE comparison
# --------------------------------------------------------------------------

def ode_series(trace) -> dict:
    """Per pulse id: (t array, position array) from a CascadeTrace or Trajectory."""
    segments = getattr(trace, "segments", None)
    if segments is None:
        segments = [(trace, list(range(1, len(trace.positions[0]) + 1)))]
    out: dict = {}
    for traj, ids in segments:
        T = np.asarray(traj.t, float)
        Pm = np.asarray(traj.positions, float)
        for k, pid in enumerate(ids):
            ts, ps = out.setdefault(pid, ([], []))
            ts.extend(T.tolist())
            ps.extend(Pm[:, k].tolist())
    return {pid: (np.asarray(ts), np.asarray(ps)) for pid, (ts, ps) in out.items()}


def compare(ode, pde: PDEResult, gap_tol: float = 0.5) -> dict:
    """Position discrepancy, annihilation offsets and survivor agreement between the two runs."""
    removed = {}
    for ev in getattr(ode, "events", []):
        for pid in ev.removed:
            removed[pid] = ev.t
    if hasattr(ode, "events"):
        final_ids = list(ode.final_ids)
    else:
        final_ids = list(range(1, len(ode.positions[0]) + 1))
    settled = getattr(ode, "terminal", None) == "ode_fixed_point"
    return compare_series(ode_series(ode), removed, final_ids, settled, pde.tracks, gap_tol)


def compare_series(series: dict, removed: dict, final_ids, settled: bool, tracks, gap_tol: float = 0.5) -> dict:
    """Core of ``compare`` on plain data: per-id (t, position) arrays, removal times and PDE tracks.

    ``settled`` marks an ODE run that ended at a fixed point; its survivors
    are held at their final positions for the rest of the PDE run.
    """
    by_id = {tr.pulse_id: tr for tr in tracks}
    per = {}
    for pid, (ts, ps) in series.items():
        tr = by_id.get(pid)
        if tr is None:
            raise AssociationError(f"pulse {pid} has no PDE track")
        order = np.argsort(ts, kind="stable")
        ts, ps = np.asarray(ts)[order], np.asarray(ps)[order]
        if abs(tr.position[0] - ps[0]) > gap_tol:
            raise AssociationError(f"pulse {pid} starts {abs(tr.position[0] - ps[0]):.3g} apart")
        tt = np.asarray(tr.t)
        alive_end = math.inf if settled and pid in final_ids else ts[-1]
        mask = (tt >= ts[0]) & (tt <= alive_end)
        err = float(np.max(np.abs(np.interp(tt[mask], ts, ps) - np.asarray(tr.position)[mask]))) \
            if mask.any() else math.nan
        per[pid] = {"sup_error": err, "ode_end": float(ts[-1]), "pde_death": tr.death}
    offsets = {pid: (by_id[pid].death - t_ode) if pid in by_id and by_id[pid].death is not None else None
               for pid, t_ode in removed.items()}
    pde_final = sorted(tr.pulse_id for tr in tracks if tr.death is None)
    agree = sorted(final_ids) == pde_final
    final_err = None
    if agree and final_ids:
        final_err = max(abs(series[pid][1][np.argmax(series[pid][0])] - by_id[pid].position[-1])
                        for pid in final_ids)
    errors = [v["sup_error"] for v in per.values() if not math.isnan(v["sup_error"])]
    return {
        "max_position_error": max(errors) if errors else math.nan,
        "per_pulse": per,
        "annihilation_offsets": offsets,
        "ode_survivors": sorted(final_ids),
        "pde_survivors": pde_final,
        "survivors_agree": agree,
        "terminal_position_error": final_err,
    }


# --------------------------------------------------------------------------
# linearized operator (oracle for the reduced spectrum)
# --------------------------------------------------------------------------

def _operators(grid: Grid, terrain: Terrain):
    n, dx = grid.n, grid.dx
    _, hx, hxx = terrain.eval(grid.x)
    hx = np.broadcast_to(hx, (n,)).astype(float)
    hxx = np.broadcast_to(hxx, (n,)).astype(float)
    main = -2.0 * np.ones(n) / dx ** 2
    lo = np.ones(n - 1) / dx ** 2
    up = np.ones(n - 1) / dx ** 2
    lap = sp.diags([lo, main, up], [-1, 0, 1], format="lil")
    grad = sp.diags([-0.5 * np.ones(n - 1) / dx, 0.5 * np.ones(n - 1) / dx], [-1, 1], format="lil")
    if grid.periodic:
        lap[0, n - 1] = lap[n - 1, 0] = 1.0 / dx ** 2
        grad[0, n - 1] = -0.5 / dx
        grad[n - 1, 0] = 0.5 / dx
    else:
        lap[0, 1] = lap[n - 1, n - 2] = 2.0 / dx ** 2
        grad[0, 1] = 0.0
        grad[n - 1, n - 2] = 0.0
    lap = lap.tocsr()
    grad = grad.tocsr()
    AU = lap + sp.diags(hx) @ grad + sp.diags(hxx - 1.0)
    return lap, AU


def _residual(U, V, a, params, lap, AU):
    UV2 = U * V * V
    return np.concatenate([AU @ U + a - UV2, params.D ** 2 * (lap @ V) - params.m * V + UV2])


def _jacobian(U, V, params, lap, AU):
    n = U.size
    return sp.bmat([[AU - sp.diags(V * V), sp.diags(-2.0 * U * V)],
                    [sp.diags(V * V), params.D ** 2 * lap + sp.diags(2.0 * U * V - params.m * np.ones(n))]],
                   format="csc")


def steady_state(state: FieldState, params: ModelParams, terrain: Terrain, grid: Grid,
                 tol: float = 1e-9, max_iter: int = 40) -> FieldState:
    """Newton on the discretized stationary problem, bordered against translation on a ring."""
    lap, AU = _operators(grid, terrain)
    U, V = state.U.copy(), state.V.copy()
    n = grid.n
    a = state.a
    flat_ring = grid.periodic and terrain.is_constant_slope
    for _ in range(max_iter):
        F = _residual(U, V, a, params, lap, AU)
        scale = max(1.0, float(np.max(np.abs(V))))
        if np.max(np.abs(F)) < tol * scale:
            return FieldState(state.t, U, V, a)
        J = _jacobian(U, V, params, lap, AU)
        if flat_ring:
            phi = np.concatenate([np.gradient(U, grid.dx), np.gradient(V, grid.dx)])
            phi /= np.linalg.norm(phi)
            J = sp.bmat([[J, sp.csc_matrix(phi[:, None])], [sp.csc_matrix(phi[None, :]), None]], format="csc")
            dz = spla.spsolve(J, np.append(-F, 0.0))[:-1]
        else:
            dz = spla.spsolve(J, -F)
        step = 1.0
        while step > 1e-4:
            Ut, Vt = U + step * dz[:n], V + step * dz[n:]
            if np.max(np.abs(_residual(Ut, Vt, a, params, lap, AU))) < np.max(np.abs(F)):
                break
            step *= 0.5
        U, V = Ut, Vt
    raise PDEError("steady state Newton did not converge")


@dataclass
class LinearizedSpectrum:
    lam: np.ndarray  # eigenvalues of the full linearization
    lam_hat: np.ndarray  # lam / m
    translational: np.ndarray  # True where V-component is odd about the pulses (position modes)
    pulses: list

    def dominant(self) -> complex:
        """Largest-real-part eigenvalue among the non-translational ones, in lam_hat units."""
        keep = ~self.translational
        if not keep.any():
            raise PDEError("no amplitude-type eigenvalue found")
        k = np.argmax(self.lam_hat.real[keep])
        return complex(self.lam_hat[keep][k])


def linearized_spectrum(state: FieldState, params: ModelParams, terrain: Terrain, grid: Grid,
                        sigma: float = 0.0, k: int = 12) -> LinearizedSpectrum:
    """Eigenvalues of the discretized linearization closest to ``sigma`` (shift-invert)."""
    lap, AU = _operators(grid, terrain)
    J = _jacobian(state.U, state.V, params, lap, AU)
    vals, vecs = spla.eigs(J, k=k, sigma=sigma, which="LM")
    pulses = extract_pulses(state.V, grid.x, 0.01 * state.V.max(), grid.periodic)
    half = 5.0 * params.pulse_width()
    odd = np.zeros(vals.size, bool)
    n = grid.n
    for i in range(vals.size):
        Vb = vecs[n:, i]
        even_part = odd_part = 0.0
        for p, _ in pulses:
            d = _offsets(grid, p)
            win = np.abs(d) < half
            dw = d[win]
            vb = Vb[win]
            order = np.argsort(dw)
            dw, vb = dw[order], vb[order]
            mirror = np.interp(-dw, dw, vb.real) + 1j * np.interp(-dw, dw, vb.imag)
            even_part += float(np.sum(np.abs(vb + mirror) ** 2))
            odd_part += float(np.sum(np.abs(vb - mirror) ** 2))
        odd[i] = odd_part > even_part
    order = np.argsort(-vals.real)
    return LinearizedSpectrum(vals[order], vals[order] / params.m, odd[order], pulses)
