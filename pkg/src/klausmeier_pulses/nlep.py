"""Quasi-steady spectrum of pulse configurations.

The inner problem V'' - (1+lam) V + 2 w V = w^2, w = (3/2) sech^2(xi/2),
defines R(lam) = int w V. Eigenvalues of an N-pulse pattern solve

    R(lam) - 3 = -nu_k(lam)/2,

where nu_k are the eigenvalues of delta*diag(u0^2)*T(lam) and T(lam) maps
the outer values rho_j to the derivative jumps of the outer eigenfunction.
Decoupled (DSP) mode replaces T by its diagonal, which gives the scalar
skeleton condition (R-3)/sqrt(lam+q) = K_j with q = (H^2+4)/(4m).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .model import DomainSpec, ModelParams, PulseConfig, Terrain, Tuning

POLES = (1.25, -0.75)


class NearPole(ValueError):
    pass


class SpectrumError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# inner problem
# --------------------------------------------------------------------------

class VinSolver:
    """Numerov discretization of the even inner problem on [0, X].

    The far-field row closes with the exact decaying mode of the discrete
    constant-coefficient recurrence, so truncation enters only through the
    sech^2 tail (below 1e-12 at X=30).
    """

    def __init__(self, n: int = 2000, X: float = 30.0, backend=None):
        if n % 2:
            n += 1
        self.n, self.X = n, X
        self.h = X / n
        self.xi = np.linspace(0.0, X, n + 1)
        self.w = 1.5 / np.cosh(self.xi / 2.0) ** 2
        self.c = self.h * self.h / 12.0
        g = self.w ** 2
        rhs = np.empty(n + 1)
        rhs[1:-1] = self.c * (g[:-2] + 10.0 * g[1:-1] + g[2:])
        rhs[0] = self.c * (10.0 * g[0] + 2.0 * g[1])
        rhs[n] = self.c * 12.0 * g[n]
        self.rhs = rhs.astype(complex)
        wts = np.ones(n + 1)
        wts[1:-1:2] = 4.0
        wts[2:-1:2] = 2.0
        self.quad = 2.0 * self.h / 3.0 * wts * self.w  # R = 2 * int_0^X w V
        self.kern = backend or kernels

    def _system(self, lam: complex):
        c, n = self.c, self.n
        f = (1.0 + lam) - 2.0 * self.w
        lo = 1.0 - c * f
        di = -2.0 * (1.0 + 5.0 * c * f)
        k2 = 1.0 + lam
        A = 1.0 - c * k2
        B = 2.0 * (1.0 + 5.0 * c * k2)
        # decaying root of A r^2 - B r + A = 0
        disc = cmath.sqrt(B * B - 4.0 * A * A)
        r1, r2 = (B + disc) / (2.0 * A), (B - disc) / (2.0 * A)
        r = r1 if abs(r1) < abs(r2) else r2
        if abs(r) >= 1.0 - 1e-14:
            r = 1.0 + 0j  # essential-spectrum edge: bounded (non-decaying) closure
        sub = np.empty(n + 1, complex)
        sup = np.empty(n + 1, complex)
        sub[1:] = lo[:-1]
        sub[0] = 0.0
        sup[:-1] = lo[1:]
        sup[0] = 2.0 * lo[1]
        sup[n] = 0.0
        diag = di.astype(complex)
        diag[n] = di[n] + A * r
        return sub, diag, sup, (A, B, r)

    def solve(self, lam: complex, derivative: bool = False):
        lam = complex(lam)
        sub, diag, sup, (A, B, r) = self._system(lam)
        V = self.kern.tridiag_solve_complex(sub, diag.copy(), sup, self.rhs.copy())
        V = np.asarray(V)
        if not derivative:
            return V, None
        c, n = self.c, self.n
        # d/dlam of the discrete system: M dV = -M_lam V
        dA, dB = -c, 10.0 * c
        dr = (dB - dA * (r + 1.0 / r)) / (A * (1.0 - 1.0 / (r * r))) if r != 1.0 else 0.0
        MV = np.empty(n + 1, complex)
        MV[1:-1] = -c * V[:-2] - 10.0 * c * V[1:-1] - c * V[2:]
        MV[0] = -10.0 * c * V[0] - 2.0 * c * V[1]
        MV[n] = -c * V[n - 1] + (-10.0 * c + dA * r + A * dr) * V[n]
        dV = self.kern.tridiag_solve_complex(sub, diag.copy(), sup, -MV)
        return V, np.asarray(dV)

    def R(self, lam: complex) -> complex:
        V, _ = self.solve(lam)
        return complex(np.dot(self.quad, V))

    def R_and_dR(self, lam: complex):
        V, dV = self.solve(lam, derivative=True)
        return complex(np.dot(self.quad, V)), complex(np.dot(self.quad, dV))

    def residual(self, lam: complex) -> float:
        """Max residual of the continuous ODE at interior nodes (4th-order differences)."""
        V, _ = self.solve(lam)
        h = self.h
        Vfull = np.concatenate([V[:0:-1], V])  # even extension
        w = np.concatenate([self.w[:0:-1], self.w])
        d2 = (-Vfull[4:] + 16 * Vfull[3:-1] - 30 * Vfull[2:-2] + 16 * Vfull[1:-3] - Vfull[:-4]) / (12 * h * h)
        res = d2 - (1 + lam) * Vfull[2:-2] + 2 * w[2:-2] * Vfull[2:-2] - w[2:-2] ** 2
        return float(np.max(np.abs(res)))


@lru_cache(maxsize=8)
def get_solver(n: int = 2000, X: float = 30.0) -> VinSolver:
    return VinSolver(n, X)


def _solver_for(tuning: Tuning | None) -> VinSolver:
    t = tuning or Tuning()
    return get_solver(int(t.vin_points), float(t.vin_length))


def pole_distance(lam: complex) -> float:
    return min(abs(complex(lam) - p) for p in POLES)


@dataclass
class NlepEvaluation:
    lam: complex
    R: complex
    C: complex
    near_pole: bool
    dR: complex | None = None


@lru_cache(maxsize=200000)
def _R_cached(re: float, im: float, n: int, X: float):
    return get_solver(n, X).R_and_dR(complex(re, im))


def R_and_dR(lam: complex, tuning: Tuning | None = None):
    t = tuning or Tuning()
    lam = complex(lam)
    return _R_cached(round(lam.real, 14), round(lam.imag, 14), int(t.vin_points), float(t.vin_length))


def R_value(lam: complex, tuning: Tuning | None = None) -> complex:
    return R_and_dR(lam, tuning)[0]


def eval_R(lam: complex, tuning: Tuning | None = None) -> NlepEvaluation:
    t = tuning or Tuning()
    R, dR = R_and_dR(lam, t)
    return NlepEvaluation(complex(lam), R, 6.0 - 2.0 * R, pole_distance(lam) < t.pole_guard, dR)


def solve_vin(lam: complex, tuning: Tuning | None = None, strict: bool = True):
    """Inner profile V_in on the full line (even extension). Refuses near poles if strict."""
    t = tuning or Tuning()
    if strict and pole_distance(lam) < t.pole_guard:
        raise NearPole(f"lambda={lam} within {t.pole_guard} of a pole")
    s = _solver_for(t)
    V, _ = s.solve(lam)
    if not np.all(np.isfinite(V)):
        raise SpectrumError("inner solve produced non-finite values")
    xi = np.concatenate([-s.xi[:0:-1], s.xi])
    return xi, np.concatenate([V[:0:-1], V])


def vin_at(lam: complex, xi, tuning: Tuning | None = None):
    """V_in sampled at arbitrary xi (zero beyond the truncation length)."""
    t = tuning or Tuning()
    s = _solver_for(t)
    V, _ = s.solve(lam)
    a = np.abs(np.asarray(xi, float))
    out = np.interp(a, s.xi, V.real) + 1j * np.interp(a, s.xi, V.imag)
    out[a > s.X] = 0.0
    return out


# --------------------------------------------------------------------------
# skeleton: F(lam) = (R-3)*s(lam) = K
# --------------------------------------------------------------------------

def m_critical(H: float = 0.0) -> float:
    return 3.0 * (1.0 + H * H / 4.0)


def _sqrt_shift(lam, q):
    return cmath.sqrt(complex(lam) + q)


@dataclass
class SkeletonCurve:
    m: float
    H: float
    q: float | None  # None: small-m form without the square-root factor
    landing: float
    K_landing: float
    interval: tuple
    branch_K: np.ndarray
    branch_lam: np.ndarray
    poles: list
    crossing: tuple | None = None  # (omega*, K*) of the branch on the imaginary axis
    _tuning: Tuning = field(default_factory=Tuning, repr=False)

    def F(self, lam):
        R, dR = R_and_dR(lam, self._tuning)
        if self.q is None:
            return R - 3.0, dR
        s = _sqrt_shift(lam, self.q)
        return (R - 3.0) / s, dR / s - (R - 3.0) / (2.0 * s ** 3)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "H": self.H, "q": self.q, "landing_point": self.landing,
            "K_landing": self.K_landing, "interval": list(self.interval), "poles": self.poles,
            "crossing": None if self.crossing is None else {"omega": self.crossing[0], "K": self.crossing[1]},
            "kstar": kstar_from(self),
        }

    def rows(self):
        for K, lam in zip(self.branch_K, self.branch_lam):
            yield [float(K), float(lam.real), float(lam.imag)]

    # ------------------------------------------------------------------
    def newton(self, lam0: complex, K: float, tol: float = 1e-12, maxit: int = 40):
        lam = complex(lam0)
        lo = self.interval[0]
        for _ in range(maxit):
            f, df = self.F(lam)
            r = f - K
            if abs(r) < tol * max(1.0, abs(K)):
                return lam
            step = -r / df
            if abs(step) > 0.2:
                step *= 0.2 / abs(step)
            lam = lam + step
            if lam.real < -1.0 or lam.real <= lo - 0.5:
                raise SpectrumError("skeleton Newton left the admissible region")
        raise SpectrumError("skeleton Newton did not converge")

    def real_roots(self, K: float):
        """Real roots of F = K (two if K > K_landing, else none)."""
        if K < self.K_landing:
            return []
        lo, hi = self.interval
        f = lambda x: self.F(x)[0].real - K
        out = []
        for side, end in (("left", lo), ("right", hi)):
            inner = self.landing
            eps = 1e-2 * abs(inner - end)
            for _ in range(40):
                probe = end + eps if side == "left" else end - eps
                if f(probe) > 0:
                    break
                eps *= 0.3
            else:
                continue
            a_, b_ = (probe, inner) if side == "left" else (inner, probe)
            if f(inner) == 0:
                out.append(inner)
                continue
            out.append(brentq(f, a_, b_, xtol=1e-14, rtol=1e-14))
        return out

    def complex_root(self, K: float):
        """Upper complex root of F = K for K < K_landing (None if outside the traced range)."""
        if K >= self.K_landing or self.branch_K.size == 0:
            return None
        Ks = self.branch_K[::-1]
        ls = self.branch_lam[::-1]
        if K < Ks[0]:
            seed = ls[0]
        else:
            seed = complex(np.interp(K, Ks, ls.real), np.interp(K, Ks, ls.imag))
        try:
            lam = self.newton(seed, K)
        except SpectrumError:
            return None
        return complex(lam.real, abs(lam.imag))

    def roots(self, K: float):
        """All eigenvalues on the skeleton for threshold value K (conjugates included)."""
        out = [complex(x) for x in self.real_roots(K)]
        if K < self.K_landing:
            lam = self.complex_root(K)
            if lam is not None:
                out += [lam, lam.conjugate()]
        return out


def _landing(F_real_deriv, lo, hi):
    xs = np.linspace(lo, hi, 80)
    v = [F_real_deriv(x) for x in xs]
    for i in range(len(xs) - 1):
        if v[i] == 0:
            return xs[i]
        if v[i] < 0 < v[i + 1]:
            return brentq(F_real_deriv, xs[i], xs[i + 1], xtol=1e-14, rtol=1e-14)
    raise SpectrumError("no landing point on the real interval")


_SKELETONS: dict = {}


def trace_skeleton(m: float, H: float = 0.0, tuning: Tuning | None = None, small_m: bool = False) -> SkeletonCurve:
    t = tuning or Tuning()
    key = (round(m, 14), round(H, 14), small_m, t.vin_points, t.vin_length)
    if key in _SKELETONS:
        return _SKELETONS[key]
    q = None if small_m else (H * H + 4.0) / (4.0 * m)
    lower = -0.75 if q is None else max(-0.75, -q)
    guard = 1e-4
    interval = (lower, 1.25)
    sk = SkeletonCurve(m, H, q, 0.0, 0.0, interval, np.array([]), np.array([], complex), [], None, t)
    sk.poles = [1.25, -0.75] if (q is None or -q <= -0.75) else [1.25, -q]
    # landing point: F'(lam) = 0 on the real interval
    sk.landing = _landing(lambda x: sk.F(x)[1].real, lower + guard, 1.25 - guard)
    sk.K_landing = sk.F(sk.landing)[0].real
    _trace_branch(sk)
    _find_crossing(sk)
    _SKELETONS[key] = sk
    return sk


def _trace_branch(sk: SkeletonCurve, n_target: int = 120):
    """Follow the complex branch of F = K from the landing point as K decreases."""
    KL = sk.K_landing
    x0 = sk.landing
    hh = 1e-4
    d2 = (sk.F(x0 + hh)[0].real - 2 * KL + sk.F(x0 - hh)[0].real) / hh ** 2
    Ks, lams = [], []
    dK = 1e-3 * abs(KL)
    K = KL - dK
    lam = complex(x0, math.sqrt(2.0 * dK / max(d2, 1e-12)))
    K_min = 0.02 * KL if KL > 0 else KL - 10.0
    step = (KL - K_min) / n_target
    while K > K_min:
        try:
            lam = sk.newton(lam, K)
        except SpectrumError:
            break
        if lam.imag <= 0 or lam.real < -0.98:
            break
        Ks.append(K)
        lams.append(lam)
        _, dF = sk.F(lam)
        dKs = min(step, max(K - K_min, 0.0)) if Ks else dK
        if dKs <= 0:
            break
        pred = lam - dKs / dF
        K -= dKs
        lam = pred if pred.imag > 0 else complex(pred.real, lam.imag)
    sk.branch_K = np.array(Ks)
    sk.branch_lam = np.array(lams, complex)


def _find_crossing(sk: SkeletonCurve):
    re = sk.branch_lam.real
    idx = np.nonzero((re[:-1] > 0) & (re[1:] <= 0))[0]
    if sk.landing <= 0 or idx.size == 0:
        sk.crossing = None
        return
    i = idx[0]
    w0, w1 = sk.branch_lam[i].imag, sk.branch_lam[i + 1].imag
    g = lambda w: sk.F(complex(0.0, w))[0].imag
    lo, hi = min(w0, w1), max(w0, w1)
    pad = 0.05 * (hi - lo) + 1e-6
    lo, hi = max(lo - pad, 1e-8), hi + pad
    if g(lo) * g(hi) > 0:
        ws = np.linspace(lo, hi, 20)
        vs = [g(w) for w in ws]
        j = next(k for k in range(19) if vs[k] * vs[k + 1] <= 0)
        lo, hi = ws[j], ws[j + 1]
    w = brentq(g, lo, hi, xtol=1e-14, rtol=1e-14)
    sk.crossing = (w, sk.F(complex(0.0, w))[0].real)


_LANDING_ON_AXIS = 1e-8


def kstar_from(sk: SkeletonCurve) -> float:
    if sk.q is None:
        return 3.0  # F(0) = R(0) - 3
    if sk.landing <= _LANDING_ON_AXIS:
        # landing at or left of the origin: the real branch crosses first, at F(0)
        return 3.0 / math.sqrt(sk.q)
    if sk.crossing is None:
        raise SpectrumError("no imaginary-axis crossing found on the complex branch")
    return float(sk.crossing[1])


def kstar(m: float, H: float = 0.0, tuning: Tuning | None = None) -> float:
    """Critical K above which a decoupled pulse is unstable."""
    if m <= m_critical(H):
        return 6.0 * math.sqrt(m / (H * H + 4.0))
    return kstar_from(trace_skeleton(m, H, tuning))


def landing_point(m: float, H: float = 0.0, tuning: Tuning | None = None) -> float:
    return trace_skeleton(m, H, tuning).landing


# --------------------------------------------------------------------------
# spectrum reports
# --------------------------------------------------------------------------

@dataclass
class Eigen:
    lam: complex
    rho: np.ndarray
    weights: np.ndarray  # |rho_j| / u0j^2, normalized to max 1
    signs: list
    dominant: int
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {"re": self.lam.real, "im": self.lam.imag, "rho": [{"re": r.real, "im": r.imag} for r in self.rho],
                "weights": self.weights, "signs": self.signs, "dominant": self.dominant,
                "residual": self.residual}


@dataclass
class SpectrumReport:
    eigen: list
    K: np.ndarray
    kstar: np.ndarray
    classification: str
    mode: str
    u0: np.ndarray
    degenerate: bool = False
    ill_conditioned: bool = False
    notes: list = field(default_factory=list)

    @property
    def eigenvalues(self):
        return [e.lam for e in self.eigen]

    @property
    def critical(self) -> Eigen | None:
        if not self.eigen:
            return None
        return max(self.eigen, key=lambda e: (e.lam.real, abs(e.lam.imag)))

    @property
    def max_real(self) -> float:
        c = self.critical
        return -math.inf if c is None else c.lam.real

    def to_dict(self) -> dict:
        c = self.critical
        return {
            "mode": self.mode, "classification": self.classification,
            "eigenvalues": [e.to_dict() | {"classification": _classify_one(e.lam)} for e in self.eigen],
            "critical": None if c is None else {"re": c.lam.real, "im": c.lam.imag, "dominant": c.dominant},
            "K": self.K, "kstar": self.kstar, "u0": self.u0,
            "degenerate": self.degenerate, "ill_conditioned": self.ill_conditioned, "notes": self.notes,
        }


def _classify_one(lam: complex, hopf_tol: float = 1e-3) -> str:
    if lam.real < 0:
        return "stable"
    return "hopf" if abs(lam.imag) > hopf_tol else "saddle-node"


def _classification(eigs, hopf_tol):
    if not eigs:
        return "stable"
    crit = max(eigs, key=lambda e: e.lam.real)
    return _classify_one(crit.lam, hopf_tol)


def _slopes(P, terrain: Terrain):
    _, hx, _ = terrain.eval(np.asarray(P, float))
    return np.broadcast_to(np.asarray(hx, float), np.shape(P)).copy()


def _signs(v, tol=1e-6):
    out = []
    for x in v:
        out.append(0 if abs(x) < tol else (1 if x > 0 else -1))
    return out


def dsp_spectrum(config, params: ModelParams, terrain: Terrain, u0=None, t: float = 0.0,
                 tuning: Tuning | None = None, domain: DomainSpec | None = None) -> SpectrumReport:
    """Decoupled spectrum: each pulse carries its own skeleton root set."""
    tuning = tuning or Tuning()
    P = np.asarray(config.P if isinstance(config, PulseConfig) else config, float)
    u0 = np.asarray(config.u0 if u0 is None else u0, float)
    N = P.size
    K = params.k_scale(t) * u0 ** 2
    Hj = _slopes(P, terrain) if not terrain.is_constant_slope else np.full(N, terrain.H)
    ks = np.array([kstar(params.m, h, tuning) for h in Hj])
    eig = []
    for n in range(N):
        sk = trace_skeleton(params.m, float(Hj[n]), tuning)
        for lam in sk.roots(float(K[n])):
            rho = np.zeros(N, complex)
            rho[n] = 1.0
            w = np.zeros(N)
            w[n] = 1.0
            eig.append(Eigen(lam, rho, w, [1 if j == n else 0 for j in range(N)], n))
    degenerate = False
    if N > 1:
        Ks = np.sort(K)
        degenerate = bool(np.any(np.diff(Ks) / Ks[1:] < 1e-3))
    rep = SpectrumReport(eig, K, ks, _classification(eig, tuning.hopf_tol), "DSP", u0, degenerate)
    return rep


def dsp_margin(K, ks) -> float:
    """min_j (K*_j - K_j)/K*_j: positive iff every decoupled pulse is stable."""
    return float(np.min((np.asarray(ks) - np.asarray(K)) / np.asarray(ks)))


# --------------------------------------------------------------------------
# coupled problem
# --------------------------------------------------------------------------

def _mu(lam: complex, m: float, H: float):
    disc = cmath.sqrt(H * H + 4.0 * (1.0 + m * lam))
    return (-H + disc) / 2.0, (-H - disc) / 2.0


def _interval_block(lam, m, H, dP):
    """Jump contributions of one interior interval: d(U_x(P_l^+))/d(rho_l, rho_r), d(U_x(P_r^-))/d(...)."""
    mp, mm = _mu(lam, m, H)
    E1 = cmath.exp(mm * dP)
    E2 = cmath.exp(-mp * dP)
    den = 1.0 - E1 * E2
    plus_l = (mm - mp * E1 * E2) / den
    plus_r = (mp - mm) * E2 / den
    minus_l = (mm - mp) * E1 / den
    minus_r = (mp - mm * E1 * E2) / den
    return plus_l, plus_r, minus_l, minus_r


def jump_operator(lam: complex, P, m: float, H: float, domain: DomainSpec) -> np.ndarray:
    """T(lam): outer derivative jumps at the pulses as a linear map of rho."""
    P = np.asarray(P, float)
    N = P.size
    T = np.zeros((N, N), complex)
    for j in range(N - 1):
        pl, pr, ml, mr = _interval_block(lam, m, H, P[j + 1] - P[j])
        T[j, j] += pl
        T[j, j + 1] += pr
        T[j + 1, j] -= ml
        T[j + 1, j + 1] -= mr
    mp, mm = _mu(lam, m, H)
    if domain.kind == "unbounded":
        T[0, 0] -= mp
        T[-1, -1] += mm
    elif domain.kind == "neumann":
        em, ep = cmath.exp(mm * P[0]), cmath.exp(-mp * P[0])
        T[0, 0] -= mp * (1.0 - ep * em) / (1.0 - mp * ep * em / mm)
        ell = domain.L - P[-1]
        em, ep = cmath.exp(mm * ell), cmath.exp(-mp * ell)
        T[-1, -1] += mm * (1.0 - em * ep) / (1.0 - mm * em * ep / mp)
    else:
        pl, pr, ml, mr = _interval_block(lam, m, H, domain.L - P[-1] + P[0])
        T[N - 1, N - 1] += pl
        T[N - 1, 0] += pr
        T[0, N - 1] -= ml
        T[0, 0] -= mr
    return T


def coupled_matrix(lam, P, u0, params: ModelParams, H, domain, t=0.0, frozen=False):
    lam_outer = 0.0 if frozen else lam
    T = jump_operator(lam_outer, P, params.m, H, domain)
    return params.delta(t) * (np.asarray(u0, float) ** 2)[:, None] * T


def _reflect(lam: complex, guard: float) -> complex:
    for p in POLES:
        d = lam - p
        if abs(d) < guard:
            lam = p + (d / abs(d) if d != 0 else 1.0) * guard
    return lam


def _null_vector(M, scale):
    U, s, Vh = np.linalg.svd(M)
    return Vh[-1].conj(), s[-1] / max(scale, 1e-300)


def _make_eigen(lam, A, C, u0, residual=None):
    scale = np.linalg.norm(A, 2) + abs(C)
    rho, rel = _null_vector(A - C * np.eye(A.shape[0]), scale)
    wts = np.abs(rho) / u0 ** 2
    k = int(np.argmax(wts))
    rho = rho * (abs(rho[k]) / rho[k])  # dominant component real positive
    wts = wts / wts[k]
    signs = _signs((rho.real / np.abs(rho[k])) * (wts > 1e-3))
    return Eigen(complex(lam), rho, wts, signs, k, rel if residual is None else residual)


def csp_spectrum(config, params: ModelParams, terrain: Terrain, domain: DomainSpec, u0=None,
                 t: float = 0.0, tuning: Tuning | None = None, frozen: bool = False) -> SpectrumReport:
    """Coupled spectrum on a constant slope.

    ``frozen`` evaluates the outer operator at lam=0 (the small-m limit).
    """
    tuning = tuning or Tuning()
    if not terrain.is_constant_slope:
        raise SpectrumError("coupled spectrum requires constant slope terrain")
    H = terrain.H
    P = np.asarray(config.P if isinstance(config, PulseConfig) else config, float)
    u0 = np.asarray(config.u0 if u0 is None else u0, float)
    N = P.size
    m = params.m
    q = (H * H + 4.0) / (4.0 * m)
    K = params.k_scale(t) * u0 ** 2

    def A_of(lam):
        return coupled_matrix(lam, P, u0, params, H, domain, t, frozen)

    nu0 = np.linalg.eigvals(A_of(0.0))
    sk = trace_skeleton(m, H, tuning, small_m=frozen)

    def phi(lam, nu_prev):
        nus = np.linalg.eigvals(A_of(lam))
        nu = nus[np.argmin(np.abs(nus - nu_prev))]
        R = R_value(lam, tuning)
        return R - 3.0 + nu / 2.0, nu

    found: list[Eigen] = []
    notes = []
    for k in range(N):
        nuk = nu0[k]
        Keff = (-nuk / 2.0).real if frozen else (-nuk / (2.0 * math.sqrt(q))).real
        if Keff <= 0:
            notes.append(f"mode {k}: non-negative outer eigenvalue, skipped")
            continue
        seeds = [s for s in sk.roots(Keff) if s.imag >= 0]
        for seed in seeds:
            scale0 = 1.0 if frozen else cmath.sqrt(seed + q) / math.sqrt(q)
            lam = _refine(phi, seed, nuk * scale0, tuning)
            if lam is None:
                notes.append(f"mode {k}: secant from {seed:.4g} failed")
                continue
            A = A_of(lam)
            C = 6.0 - 2.0 * R_value(lam, tuning)
            e = _make_eigen(lam, A, C, u0)
            if e.residual > 1e-7:
                notes.append(f"mode {k}: root at {lam:.4g} failed verification ({e.residual:.1e})")
                continue
            _add_unique(found, e, tuning.dedup_radius)
            if abs(lam.imag) > 1e-10:
                ec = _make_eigen(lam.conjugate(), A_of(lam.conjugate()), C.conjugate(), u0)
                _add_unique(found, ec, tuning.dedup_radius)
    found.sort(key=lambda e: (-e.lam.real, -e.lam.imag))
    ks = np.full(N, kstar(m, H, tuning))
    ill = any(np.max(e.weights) / max(np.min(e.weights[e.weights > 0]), 1e-300) > 1e8 for e in found)
    mode = "small-m" if frozen else "CSP"
    return SpectrumReport(found, K, ks, _classification(found, tuning.hopf_tol), mode, u0,
                          False, bool(ill), notes)


def _refine(phi, seed, nu_seed, tuning, maxit=60):
    guard = tuning.pole_guard
    x0 = _reflect(complex(seed), guard)
    f0, nu = phi(x0, nu_seed)
    h = 1e-4 * (1.0 + abs(x0))
    x1 = _reflect(x0 + h, guard)
    f1, nu = phi(x1, nu)
    for _ in range(maxit):
        if abs(f1) < 1e-11:
            return x1
        if f1 == f0:
            return None
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if abs(x2 - x1) > 0.25:
            x2 = x1 + 0.25 * (x2 - x1) / abs(x2 - x1)
        x2 = _reflect(x2, guard)
        if x2.real < -1.0:
            return None
        x0, f0 = x1, f1
        x1 = x2
        f1, nu = phi(x1, nu)
    return x1 if abs(f1) < 1e-9 else None


def _add_unique(lst, e, radius):
    for other in lst:
        if abs(other.lam - e.lam) < radius:
            return
    lst.append(e)


def small_m_spectrum(config, params, terrain, domain, u0=None, t=0.0, tuning=None) -> SpectrumReport:
    """Eigenvalues with the outer problem frozen at lam = 0."""
    return csp_spectrum(config, params, terrain, domain, u0, t, tuning, frozen=True)


def c_star(config, params, terrain, domain, u0=None, t=0.0):
    """Per-mode C* = u0j^2 * (T(0) rho)_j / rho_j, one value per outer mode."""
    P = np.asarray(config.P if isinstance(config, PulseConfig) else config, float)
    u0 = np.asarray(config.u0 if u0 is None else u0, float)
    T0 = jump_operator(0.0, P, params.m, terrain.H, domain)
    return np.sort(np.linalg.eigvals(u0[:, None] ** 2 * T0).real)


def use_coupled(params: ModelParams, terrain: Terrain) -> bool:
    return terrain.is_constant_slope and params.m < m_critical(terrain.H)


def spectrum(config, params: ModelParams, terrain: Terrain, domain: DomainSpec, mode: str = "auto",
             u0=None, t: float = 0.0, tuning: Tuning | None = None) -> SpectrumReport:
    """Dispatch on mode: "dsp", "csp", "small-m" or "auto"."""
    mode = mode.lower()
    if mode == "auto":
        mode = "csp" if use_coupled(params, terrain) else "dsp"
    if mode == "dsp":
        return dsp_spectrum(config, params, terrain, u0, t, tuning, domain)
    if mode == "csp":
        return csp_spectrum(config, params, terrain, domain, u0, t, tuning)
    if mode in ("small-m", "small_m"):
        return small_m_spectrum(config, params, terrain, domain, u0, t, tuning)
    raise ValueError(f"unknown spectrum mode {mode!r}")


# --------------------------------------------------------------------------
# eigenfunctions
# --------------------------------------------------------------------------

def eigenfunction_profile(eig: Eigen, config, params: ModelParams, terrain: Terrain,
                          domain: DomainSpec, x, u0=None, t: float = 0.0, tuning=None):
    """Sampled (U_bar, V_bar) for one eigenvalue, normalized to max |V_bar| = 1."""
    P = np.asarray(config.P if isinstance(config, PulseConfig) else config, float)
    u0 = np.asarray(config.u0 if u0 is None else u0, float)
    x = np.asarray(x, float)
    lam = eig.lam
    rho = eig.rho
    H = terrain.H if terrain.is_constant_slope else 0.0
    mp, mm = _mu(lam, params.m, H)
    Ub = np.zeros(x.size, complex)
    N = P.size

    def seg(mask, xl, xr, rl, rr):
        dP = xr - xl
        E1, E2 = cmath.exp(mm * dP), cmath.exp(-mp * dP)
        den = 1.0 - E1 * E2
        S1 = (rl - E2 * rr) / den
        S2 = (rr - E1 * rl) / den
        xs = x[mask]
        Ub[mask] = S1 * np.exp(mm * (xs - xl)) + S2 * np.exp(mp * (xs - xr))

    for j in range(N - 1):
        seg((x >= P[j]) & (x <= P[j + 1]), P[j], P[j + 1], rho[j], rho[j + 1])
    left, right = x < P[0], x > P[-1]
    if domain.kind == "periodic":
        L = domain.L
        dP = L - P[-1] + P[0]
        xx = np.where(left, x + L, x)
        E1, E2 = cmath.exp(mm * dP), cmath.exp(-mp * dP)
        den = 1.0 - E1 * E2
        S1 = (rho[-1] - E2 * rho[0]) / den
        S2 = (rho[0] - E1 * rho[-1]) / den
        msk = left | right
        Ub[msk] = S1 * np.exp(mm * (xx[msk] - P[-1])) + S2 * np.exp(mp * (xx[msk] - P[0] - L))
    elif domain.kind == "neumann":
        em, ep = cmath.exp(mm * P[0]), cmath.exp(-mp * P[0])
        B = rho[0] / (1.0 - mp * ep * em / mm)
        A = -mp * ep * B / mm
        Ub[left] = A * np.exp(mm * x[left]) + B * np.exp(mp * (x[left] - P[0]))
        ell = domain.L - P[-1]
        em, ep = cmath.exp(mm * ell), cmath.exp(-mp * ell)
        A = rho[-1] / (1.0 - mm * em * ep / mp)
        B = -mm * em * A / mp
        Ub[right] = A * np.exp(mm * (x[right] - P[-1])) + B * np.exp(mp * (x[right] - domain.L))
    else:
        Ub[left] = rho[0] * np.exp(mp * (x[left] - P[0]))
        Ub[right] = rho[-1] * np.exp(mm * (x[right] - P[-1]))
    Vb = np.zeros(x.size, complex)
    scale = math.sqrt(params.m) / params.D
    for j in range(N):
        if eig.weights[j] == 0:
            continue
        Vb += (rho[j] / u0[j] ** 2) * vin_at(lam, (x - P[j]) * scale, tuning)
    norm = np.max(np.abs(Vb))
    if norm > 0:
        Ub, Vb = Ub / norm, Vb / norm
    return Ub, Vb
