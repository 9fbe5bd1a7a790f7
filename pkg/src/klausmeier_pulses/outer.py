"""Outer (slow) water field between pulses.

Between pulses the scaled water field solves

    0 = U'' + h_x U' + h_xx U + 1 - U

with U(P_j) = w_j (w_j = delta*u0j under the weak feed-rate assumption,
0 in the strict one). Everything the pulse dynamics needs is the pair of
one-sided derivatives at each pulse, which is affine in the values w.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve

from .model import DomainSpec, Terrain


class OuterSolveError(RuntimeError):
    pass


def _s(H: float) -> float:
    return math.sqrt(H * H + 4.0)


# --------------------------------------------------------------------------
# constant slope closed forms
# --------------------------------------------------------------------------

def _ratios(dP, H):
    """Return coth(s dP/2), e^{H dP/2}/sinh(s dP/2), e^{-H dP/2}/sinh(s dP/2) without overflow."""
    s = _s(H)
    dP = np.asarray(dP, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        E = np.exp(-s * dP)
        one_m = -np.expm1(-s * dP)
        coth = (1.0 + E) / one_m
        ep = 2.0 * np.exp((H - s) * dP / 2.0) / one_m
        em = 2.0 * np.exp(-(H + s) * dP / 2.0) / one_m
    return coth, ep, em


def edge_derivatives_constant_slope(dP, H: float, kappa_left=1.0, kappa_right=1.0):
    """Derivatives of the outer field on one interval of length ``dP``.

    Returns (U_x just right of the left pulse, U_x just left of the right
    pulse) for kappa = 1 - U(P) at the two ends. ``dP`` may be ``inf``.
    """
    dP_arr = np.asarray(dP, dtype=float)
    if np.any(dP_arr <= 0):
        raise ValueError("interval length must be positive")
    s = _s(H)
    coth, ep, em = _ratios(dP_arr, H)
    kl = np.asarray(kappa_left, dtype=float)
    kr = np.asarray(kappa_right, dtype=float)
    right_of_left = kl * H / 2 - (s / 2) * (kr * ep - kl * coth)
    left_of_right = kr * H / 2 + (s / 2) * (kl * em - kr * coth)
    if np.ndim(right_of_left) == 0:
        return float(right_of_left), float(left_of_right)
    return right_of_left, left_of_right


def R_plus(k, H: float):
    """U_x just right of a pulse whose right neighbour sits at distance k (strict mode)."""
    return edge_derivatives_constant_slope(k, H)[0]


def R_minus(k, H: float):
    """U_x just left of a pulse whose left neighbour sits at distance k (strict mode)."""
    return edge_derivatives_constant_slope(k, H)[1]


def neumann_left_derivative(P1: float, H: float, kappa: float = 1.0) -> float:
    """U_x(P1^-) for the boundary interval [0, P1] with U_x(0)=0."""
    s = _s(H)
    coth = _ratios(P1, H)[0]
    return float(-kappa * 2.0 / (H + s * coth))


def neumann_right_derivative(PN: float, L: float, H: float, kappa: float = 1.0) -> float:
    """U_x(P_N^+) for the boundary interval [P_N, L] with U_x(L)=0."""
    s = _s(H)
    coth = _ratios(L - PN, H)[0]
    return float(kappa * 2.0 / (-H + s * coth))


# --------------------------------------------------------------------------
# affine edge map
# --------------------------------------------------------------------------

@dataclass
class EdgeMap:
    """One-sided derivatives as affine functions of the pulse values w.

    U_x(P_j^+) = rp0[j] + rpa[j] w_j + rpb[j] w_{right(j)}
    U_x(P_j^-) = lm0[j] + lma[j] w_{left(j)} + lmb[j] w_j
    Missing neighbours (boundary intervals) carry index -1 and zero weight.
    """

    rp0: np.ndarray
    rpa: np.ndarray
    rpb: np.ndarray
    right: np.ndarray
    lm0: np.ndarray
    lma: np.ndarray
    lmb: np.ndarray
    left: np.ndarray

    def derivatives(self, w) -> tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        wz = np.append(w, 0.0)  # index -1 -> 0
        plus = self.rp0 + self.rpa * w + self.rpb * wz[self.right]
        minus = self.lm0 + self.lma * wz[self.left] + self.lmb * w
        return plus, minus

    def jump_matrix(self) -> np.ndarray:
        """d(U_x^+ - U_x^-)/dw as a dense matrix."""
        N = self.rp0.size
        J = np.zeros((N, N))
        for j in range(N):
            J[j, j] += self.rpa[j] - self.lmb[j]
            if self.right[j] >= 0:
                J[j, self.right[j]] += self.rpb[j]
            if self.left[j] >= 0:
                J[j, self.left[j]] -= self.lma[j]
        return J


def _interval_coeffs_constant(dP, H):
    """Affine coefficients of the two edge derivatives in (w_l, w_r)."""
    s = _s(H)
    coth, ep, em = _ratios(dP, H)
    alpha = H / 2 + (s / 2) * coth
    beta = (s / 2) * ep
    gamma = (s / 2) * em
    # right_of_left = alpha*kl - beta*kr ; left_of_right = (H/2 - s/2 coth)*kr + gamma*kl
    zeta = H / 2 - (s / 2) * coth
    rp = (alpha - beta, -alpha, beta)
    lm = (zeta + gamma, -gamma, -zeta)
    return rp, lm


def edge_map(positions, terrain: Terrain, domain: DomainSpec, tuning=None) -> EdgeMap:
    P = np.asarray(positions, dtype=float)
    N = P.size
    if N == 0:
        raise ValueError("no pulses")
    if terrain.is_constant_slope:
        return _edge_map_constant(P, terrain.H, domain)
    return _edge_map_general(P, terrain, domain, tuning)


def _edge_map_constant(P, H, domain):
    N = P.size
    s = _s(H)
    rp0 = np.zeros(N); rpa = np.zeros(N); rpb = np.zeros(N); right = -np.ones(N, int)
    lm0 = np.zeros(N); lma = np.zeros(N); lmb = np.zeros(N); left = -np.ones(N, int)
    if N > 1:
        d = np.diff(P)
        (r0, ra, rb), (l0, la, lb) = _interval_coeffs_constant(d, H)
        rp0[:-1], rpa[:-1], rpb[:-1] = r0, ra, rb
        right[:-1] = np.arange(1, N)
        lm0[1:], lma[1:], lmb[1:] = l0, la, lb
        left[1:] = np.arange(0, N - 1)
    if domain.kind == "unbounded":
        # bounded decaying tails: kappa*(H+s)/2 on the right, kappa*(H-s)/2 on the left
        rp0[-1], rpa[-1] = (H + s) / 2, -(H + s) / 2
        lm0[0], lmb[0] = (H - s) / 2, -(H - s) / 2
    elif domain.kind == "neumann":
        cl = neumann_left_derivative(P[0], H)
        cr = neumann_right_derivative(P[-1], domain.L, H)
        lm0[0], lmb[0] = cl, -cl
        rp0[-1], rpa[-1] = cr, -cr
    else:
        dwrap = domain.L - P[-1] + P[0]
        (r0, ra, rb), (l0, la, lb) = _interval_coeffs_constant(np.array([dwrap]), H)
        if N == 1:
            # both ends of the wrap interval are the same pulse
            rp0[0] = r0[0]; rpa[0] = ra[0] + rb[0]
            lm0[0] = l0[0]; lmb[0] = la[0] + lb[0]
        else:
            rp0[-1], rpa[-1], rpb[-1], right[-1] = r0[0], ra[0], rb[0], 0
            lm0[0], lma[0], lmb[0], left[0] = l0[0], la[0], lb[0], N - 1
    return EdgeMap(rp0, rpa, rpb, right, lm0, lma, lmb, left)


# --------------------------------------------------------------------------
# general terrain: Chebyshev collocation
# --------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _cheb(n: int):
    """Chebyshev points on [-1, 1] (descending) and differentiation matrix."""
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** k
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    Dm = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    Dm -= np.diag(Dm.sum(axis=1))
    return x, Dm


@dataclass
class OuterSolution:
    """Sampled outer solution on one interval (ascending x)."""

    x: np.ndarray
    U: np.ndarray
    Ux: np.ndarray
    left_derivative: float
    right_derivative: float
    residual: float
    nodes: int

    def to_rows(self):
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.x, self.U, self.Ux)]


def _terrain_on(terrain: Terrain, x, domain: DomainSpec | None):
    if domain is not None and domain.kind == "periodic" and not terrain.is_constant_slope:
        x = np.mod(x, domain.L)
    _, hx, hxx = terrain.eval(x)
    return np.asarray(hx, float), np.asarray(hxx, float)


def _far_rates(hx: float, hxx: float):
    disc = math.sqrt(hx * hx + 4.0 * (1.0 - hxx))
    return (-hx + disc) / 2.0, (-hx - disc) / 2.0, 1.0 / (1.0 - hxx)


def _collocate(terrain, xl, xr, n, bcs, domain):
    """Solve particular + homogeneous problems on [xl, xr] with n+1 Chebyshev nodes.

    ``bcs`` = (left, right), each one of ("dirichlet",), ("neumann",),
    ("robin", rate, u_eq). Returns nodes (ascending), solution matrix with
    columns [particular, phi_left, phi_right] and derivative matrix.
    """
    t, Dm = _cheb(n)
    t = t[::-1]
    Dm = Dm[::-1, ::-1]
    half = (xr - xl) / 2.0
    x = xl + (t + 1.0) * half
    D1 = Dm / half
    D2 = D1 @ D1
    hx, hxx = _terrain_on(terrain, x, domain)
    A = D2 + hx[:, None] * D1 + np.diag(hxx - 1.0)
    rhs = np.zeros((n + 1, 3))
    rhs[:, 0] = -1.0
    for row, bc, col in ((0, bcs[0], 1), (n, bcs[1], 2)):
        rhs[row, :] = 0.0
        kind = bc[0]
        if kind == "dirichlet":
            A[row, :] = 0.0
            A[row, row] = 1.0
            rhs[row, col] = 1.0
        elif kind == "neumann":
            A[row, :] = D1[row, :]
        else:
            rate, ueq = bc[1], bc[2]
            A[row, :] = D1[row, :]
            A[row, row] -= rate
            rhs[row, 0] = -rate * ueq
    lu = lu_factor(A)
    Y = lu_solve(lu, rhs)
    Yx = D1 @ Y
    interior = slice(1, n)
    res = (D2 @ Y + hx[:, None] * Yx + (hxx - 1.0)[:, None] * Y)
    res[:, 0] += 1.0
    resid = float(np.max(np.abs(res[interior])))
    return x, Y, Yx, resid


def _solve_interval(terrain, xl, xr, bcs, domain, tuning):
    n = max(64, getattr(tuning, "bvp_min_nodes", 64) if tuning is not None else 64)
    tol = getattr(tuning, "bvp_tol", 1e-10) if tuning is not None else 1e-10
    prev = None
    for _ in range(6):
        x, Y, Yx, resid = _collocate(terrain, xl, xr, n, bcs, domain)
        ends = np.array([Yx[0], Yx[-1]])
        if prev is not None and np.max(np.abs(ends - prev)) < tol * max(1.0, np.max(np.abs(ends))):
            return x, Y, Yx, resid, n
        prev = ends
        n *= 2
    raise OuterSolveError(f"outer collocation on [{xl}, {xr}] did not converge")


def solve_outer_bvp(terrain: Terrain, interval, boundary_values=(0.0, 0.0), tuning=None,
                    left_bc: str = "dirichlet", right_bc: str = "dirichlet",
                    domain: DomainSpec | None = None) -> OuterSolution:
    """Solve the outer problem on one interval.

    ``left_bc``/``right_bc`` are "dirichlet" (value from ``boundary_values``),
    "neumann" (zero slope) or "robin" (decay toward the local equilibrium).
    """
    xl, xr = map(float, interval)
    if not xl < xr:
        raise ValueError("interval must have x_l < x_r")

    def bc(kind, at, side):
        if kind in ("dirichlet", "neumann"):
            return (kind,)
        hx, hxx = _terrain_on(terrain, np.array([at]), domain)
        grow, decay, ueq = _far_rates(float(hx[0]), float(hxx[0]))
        return ("robin", grow if side == "left" else decay, ueq)

    bcs = (bc(left_bc, xl, "left"), bc(right_bc, xr, "right"))
    x, Y, Yx, resid, n = _solve_interval(terrain, xl, xr, bcs, domain, tuning)
    wl = boundary_values[0] if left_bc == "dirichlet" else 0.0
    wr = boundary_values[1] if right_bc == "dirichlet" else 0.0
    U = Y[:, 0] + wl * Y[:, 1] + wr * Y[:, 2]
    Ux = Yx[:, 0] + wl * Yx[:, 1] + wr * Yx[:, 2]
    return OuterSolution(x, U, Ux, float(Ux[0]), float(Ux[-1]), resid, n)


def _edge_map_general(P, terrain, domain, tuning):
    N = P.size
    far = getattr(tuning, "far_field", 40.0) if tuning is not None else 40.0
    rp0 = np.zeros(N); rpa = np.zeros(N); rpb = np.zeros(N); right = -np.ones(N, int)
    lm0 = np.zeros(N); lma = np.zeros(N); lmb = np.zeros(N); left = -np.ones(N, int)

    def solve(xl, xr, lk, rk):
        sol = solve_outer_bvp(terrain, (xl, xr), (1.0, 1.0), tuning, lk, rk, domain)
        return sol

    def columns(xl, xr, lk, rk):
        bcs = []
        for kind, at, side in ((lk, xl, "left"), (rk, xr, "right")):
            if kind == "robin":
                hx, hxx = _terrain_on(terrain, np.array([at]), domain)
                g, dcy, ueq = _far_rates(float(hx[0]), float(hxx[0]))
                bcs.append(("robin", g if side == "left" else dcy, ueq))
            else:
                bcs.append((kind,))
        x, Y, Yx, resid, n = _solve_interval(terrain, xl, xr, tuple(bcs), domain, tuning)
        return Yx[0], Yx[-1]

    for j in range(N - 1):
        a0, a1 = columns(P[j], P[j + 1], "dirichlet", "dirichlet")
        rp0[j], rpa[j], rpb[j], right[j] = a0[0], a0[1], a0[2], j + 1
        lm0[j + 1], lma[j + 1], lmb[j + 1], left[j + 1] = a1[0], a1[1], a1[2], j
    if domain.kind == "unbounded":
        a0, a1 = columns(P[0] - far, P[0], "robin", "dirichlet")
        lm0[0], lmb[0] = a1[0], a1[2]
        a0, a1 = columns(P[-1], P[-1] + far, "dirichlet", "robin")
        rp0[-1], rpa[-1] = a0[0], a0[1]
    elif domain.kind == "neumann":
        a0, a1 = columns(0.0, P[0], "neumann", "dirichlet")
        lm0[0], lmb[0] = a1[0], a1[2]
        a0, a1 = columns(P[-1], domain.L, "dirichlet", "neumann")
        rp0[-1], rpa[-1] = a0[0], a0[1]
    else:
        a0, a1 = columns(P[-1], P[0] + domain.L, "dirichlet", "dirichlet")
        if N == 1:
            rp0[0], rpa[0] = a0[0], a0[1] + a0[2]
            lm0[0], lmb[0] = a1[0], a1[1] + a1[2]
        else:
            rp0[-1], rpa[-1], rpb[-1], right[-1] = a0[0], a0[1], a0[2], 0
            lm0[0], lma[0], lmb[0], left[0] = a1[0], a1[1], a1[2], N - 1
    return EdgeMap(rp0, rpa, rpb, right, lm0, lma, lmb, left)


# --------------------------------------------------------------------------
# auxiliary positions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AuxiliaryPositions:
    P0: float
    PN1: float


def _neumann_extension_const(P1: float, H: float):
    """Extended boundary solution U(x) for x <= P1 with U'(0)=0, U(P1)=0."""
    s = _s(H)
    D1, D2 = (-H + s) / 2, (-H - s) / 2

    def U(x):
        # g(x)/g(P1) with g = D2 e^{D1 x} - D1 e^{D2 x}, scaled by e^{-D2 x} to stay finite for x<0
        num = D2 * math.exp((D1 - D2) * x) - D1
        den = D2 * math.exp(D1 * P1 - D2 * x) - D1 * math.exp(D2 * P1 - D2 * x)
        return 1.0 - num / den

    return U


def _bisect_zero(f, lo_start: float, limit: float):
    """Find x < 0 with f(x) = 0, f(0) > 0, growing the bracket geometrically."""
    hi = 0.0
    if f(hi) <= 0:
        raise OuterSolveError("extended boundary solution not positive at the wall")
    width = max(abs(lo_start), 1e-3)
    lo = -width
    while f(lo) > 0:
        hi = lo
        width *= 2.0
        if width > limit:
            raise OuterSolveError("auxiliary position bracket exceeded 10 L")
        lo = -width
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-14 * max(1.0, abs(lo)):
            break
    return 0.5 * (lo + hi)


def auxiliary_positions(domain: DomainSpec, P1: float, PN: float, H: float = 0.0,
                        terrain: Terrain | None = None) -> AuxiliaryPositions:
    if domain.kind == "unbounded":
        return AuxiliaryPositions(-math.inf, math.inf)
    L = domain.L
    if domain.kind == "periodic":
        return AuxiliaryPositions(PN - L, L + P1)
    if terrain is not None and not terrain.is_constant_slope:
        return _aux_general(terrain, domain, P1, PN)
    if H == 0.0:
        return AuxiliaryPositions(-P1, 2 * L - PN)
    f_left = _neumann_extension_const(P1, H)
    P0 = _bisect_zero(f_left, P1, 10 * L)
    f_right = _neumann_extension_const(L - PN, -H)
    y0 = _bisect_zero(f_right, L - PN, 10 * L)
    return AuxiliaryPositions(P0, L - y0)


def _aux_general(terrain, domain, P1, PN):
    L = domain.L

    def extend(xl, xr, wall_left):
        if wall_left:
            sol = solve_outer_bvp(terrain, (xl, xr), (0.0, 0.0), None, "neumann", "dirichlet")
            x0, u0, ux0, direction = xl, sol.U[0], sol.Ux[0], -1.0
        else:
            sol = solve_outer_bvp(terrain, (xl, xr), (0.0, 0.0), None, "dirichlet", "neumann")
            x0, u0, ux0, direction = xr, sol.U[-1], sol.Ux[-1], 1.0

        def rhs(x, y):
            _, hx, hxx = terrain.eval(x)
            return [y[1], -hx * y[1] - hxx * y[0] - 1.0 + y[0]]

        def hit(x, y):
            return y[0]

        hit.terminal = True
        out = solve_ivp(rhs, (x0, x0 + direction * 10 * L), [u0, ux0], events=hit, rtol=1e-12, atol=1e-14)
        if not out.t_events[0].size:
            raise OuterSolveError("auxiliary position not found within 10 L")
        return float(out.t_events[0][0])

    return AuxiliaryPositions(extend(0.0, P1, True), extend(PN, L, False))


# --------------------------------------------------------------------------
# field sampling
# --------------------------------------------------------------------------

def _interval_field_const(y, dP, H, kl, kr):
    """U and U_x on one interval in local coordinate y in [0, dP]."""
    s = _s(H)
    D1, D2 = (-H + s) / 2, (-H - s) / 2
    if math.isinf(dP):
        W = kl * np.exp(D2 * y)
        Wy = D2 * W
        return 1.0 - W, -Wy
    eg = math.exp(-D1 * dP)
    ed = math.exp(D2 * dP)
    M = np.array([[eg, 1.0], [1.0, ed]])
    c1, c2 = np.linalg.solve(M, [kl, kr])
    t1 = c1 * np.exp(D1 * (y - dP))
    t2 = c2 * np.exp(D2 * y)
    return 1.0 - (t1 + t2), -(D1 * t1 + D2 * t2)


def sample_field(positions, w, terrain: Terrain, domain: DomainSpec, x, tuning=None):
    """Sample U and U_x of the glued outer field at points x."""
    P = np.asarray(positions, dtype=float)
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    U = np.empty_like(x)
    Ux = np.empty_like(x)
    N = P.size
    if N == 0:
        raise ValueError("no pulses")

    def fill(mask, xl, xr, wl, wr, lk="dirichlet", rk="dirichlet", shift=0.0):
        if not np.any(mask):
            return
        xs = x[mask] + shift
        if terrain.is_constant_slope:
            H = terrain.H
            if lk == "neumann":
                u_vals, ux_vals = _neumann_field_const(xs, xr, H, 1.0 - wr)
            elif rk == "neumann":
                u_vals, ux_vals = _neumann_field_const(domain.L - xs, domain.L - xl, -H, 1.0 - wl)
                ux_vals = -ux_vals
            elif lk == "robin":
                u_vals, ux_vals = _interval_field_const(xr - xs, math.inf, -H, 1.0 - wr, 0.0)
                ux_vals = -ux_vals
            else:
                u_vals, ux_vals = _interval_field_const(xs - xl, xr - xl, H, 1.0 - wl, 1.0 - wr)
        else:
            sol = solve_outer_bvp(terrain, (xl, xr), (wl, wr), tuning, lk, rk, domain)
            u_vals = np.interp(xs, sol.x, sol.U)
            ux_vals = np.interp(xs, sol.x, sol.Ux)
        U[mask] = u_vals
        Ux[mask] = ux_vals

    for j in range(N - 1):
        fill((x >= P[j]) & (x <= P[j + 1]), P[j], P[j + 1], w[j], w[j + 1])
    if domain.kind == "neumann":
        fill(x < P[0], 0.0, P[0], 0.0, w[0], "neumann")
        fill(x > P[-1], P[-1], domain.L, w[-1], 0.0, "dirichlet", "neumann")
    elif domain.kind == "periodic":
        L = domain.L
        fill(x > P[-1], P[-1], P[0] + L, w[-1], w[0])
        fill(x < P[0], P[-1], P[0] + L, w[-1], w[0], shift=L)
    else:
        far = 40.0
        fill(x < P[0], P[0] - far, P[0], 0.0, w[0], "robin")
        if terrain.is_constant_slope:
            m = x > P[-1]
            u_vals, ux_vals = _interval_field_const(x[m] - P[-1], math.inf, terrain.H, 1.0 - w[-1], 0.0)
            U[m], Ux[m] = u_vals, ux_vals
        else:
            fill(x > P[-1], P[-1], P[-1] + far, w[-1], 0.0, "dirichlet", "robin")
    return U, Ux


def _neumann_field_const(xs, P1, H, kappa):
    s = _s(H)
    D1, D2 = (-H + s) / 2, (-H - s) / 2
    num = D2 * np.exp(D1 * (xs - P1)) - D1 * np.exp(D2 * xs - D1 * P1)
    den = D2 - D1 * math.exp((D2 - D1) * P1)
    dnum = D1 * D2 * (np.exp(D1 * (xs - P1)) - np.exp(D2 * xs - D1 * P1))
    return 1.0 - kappa * num / den, -kappa * dnum / den


def dump_field_csv(path, x, U, Ux) -> None:
    from .io import write_csv

    write_csv(path, ["x", "U", "Ux"], zip(np.asarray(x), np.asarray(U), np.asarray(Ux)))
