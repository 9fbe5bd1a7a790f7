import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_bvp, solve_ivp

from klausmeier_pulses.model import DomainSpec, Terrain, Tuning
from klausmeier_pulses.outer import (R_minus, R_plus, auxiliary_positions, edge_derivatives_constant_slope,
                                     edge_map, neumann_left_derivative, sample_field, solve_outer_bvp)


def shoot(H, dP, kl=1.0, kr=1.0):
    """U'' + H U' + 1 - U = 0 with U(0) = 1 - kl, U(dP) = 1 - kr, by linear superposition of two shots."""
    def end(slope):
        sol = solve_ivp(lambda x, y: [y[1], -H * y[1] - 1.0 + y[0]], (0, dP), [1 - kl, slope],
                        rtol=1e-12, atol=1e-13, dense_output=True)
        return sol
    a, b = end(0.0), end(1.0)
    ua, ub = a.y[0, -1], b.y[0, -1]
    s = ((1 - kr) - ua) / (ub - ua)
    sol = end(s)
    return s, sol.y[1, -1]


def test_flat_limits():
    assert edge_derivatives_constant_slope(np.inf, 0.0) == pytest.approx((1.0, -1.0))
    assert edge_derivatives_constant_slope(2.0, 0.0) == pytest.approx((math.tanh(1), -math.tanh(1)), abs=1e-14)


@pytest.mark.parametrize("H,dP", [(2.0, 1.0), (1.0, 3.0), (-1.5, 0.7), (0.3, 6.0)])
def test_closed_form_matches_shooting(H, dP):
    assert edge_derivatives_constant_slope(dP, H) == pytest.approx(shoot(H, dP), abs=1e-8)


@given(H=st.floats(-2, 2), dP=st.floats(0.2, 8.0), kl=st.floats(0.5, 1.0), kr=st.floats(0.5, 1.0))
def test_closed_form_with_pulse_values_matches_shooting(H, dP, kl, kr):
    got = edge_derivatives_constant_slope(dP, H, kl, kr)
    assert got == pytest.approx(shoot(H, dP, kl, kr), abs=1e-7)


@pytest.mark.parametrize("H", [0.0, 1.0, -2.0])
def test_collocation_matches_closed_form(H):
    sol = solve_outer_bvp(Terrain.slope(H), (2.0, 5.0))
    assert (sol.left_derivative, sol.right_derivative) == pytest.approx(
        edge_derivatives_constant_slope(3.0, H), abs=1e-8)
    s = math.sqrt(H * H + 4)
    lam1, lam2 = (-H + s) / 2, (-H - s) / 2
    y = sol.x - 2.0
    M = np.array([[1, 1], [math.exp(lam1 * 3), math.exp(lam2 * 3)]])
    c = np.linalg.solve(M, [-1.0, -1.0])
    exact = 1 + c[0] * np.exp(lam1 * y) + c[1] * np.exp(lam2 * y)
    assert np.max(np.abs(sol.U - exact)) < 1e-8


def test_flat_symmetric_interval_has_flat_midpoint():
    sol = solve_outer_bvp(Terrain.flat(), (-2.0, 2.0))
    mid = np.argmin(np.abs(sol.x))
    assert abs(np.interp(0.0, sol.x, sol.Ux)) < 1e-10 and abs(sol.x[mid]) < 0.1


def test_gaussian_hill_matches_scipy_bvp():
    ter = Terrain.gaussian(0.75, 5.0)
    sol = solve_outer_bvp(ter, (3.0, 6.5), (0.1, 0.2))

    def rhs(x, y):
        _, hx, hxx = ter.eval(x)
        return np.vstack([y[1], -hx * y[1] - hxx * y[0] - 1 + y[0]])

    xs = np.linspace(3.0, 6.5, 400)
    ref = solve_bvp(rhs, lambda ya, yb: [ya[0] - 0.1, yb[0] - 0.2], xs, np.zeros((2, xs.size)),
                    tol=1e-10, max_nodes=100000)
    assert ref.success
    assert sol.left_derivative == pytest.approx(ref.sol(3.0)[1], abs=1e-6)
    assert sol.right_derivative == pytest.approx(ref.sol(6.5)[1], abs=1e-6)


def test_auxiliary_positions():
    a = auxiliary_positions(DomainSpec("neumann", 10), 1.0, 8.0, 0.0)
    assert (a.P0, a.PN1) == (-1.0, 12.0)
    b = auxiliary_positions(DomainSpec("periodic", 10), 1.0, 8.0, 0.0)
    assert (b.P0, b.PN1) == (-2.0, 11.0)


def test_sloped_neumann_auxiliary_position_is_a_zero_of_the_extension():
    H, P1 = 1.0, 2.0
    P0 = auxiliary_positions(DomainSpec("neumann", 10), P1, 8.0, H).P0
    s = math.sqrt(H * H + 4)
    lam1, lam2 = (-H + s) / 2, (-H - s) / 2
    # U = 1 + c1 e^{lam1 x} + c2 e^{lam2 x}, U'(0)=0, U(P1)=0
    M = np.array([[lam1, lam2], [math.exp(lam1 * P1), math.exp(lam2 * P1)]])
    c = np.linalg.solve(M, [0.0, -1.0])
    assert abs(1 + c[0] * math.exp(lam1 * P0) + c[1] * math.exp(lam2 * P0)) < 1e-10
    # the reflected interval reproduces the wall derivative
    assert R_minus(P1 - P0, H) == pytest.approx(neumann_left_derivative(P1, H), abs=1e-10)


def test_general_edge_map_agrees_with_closed_form_on_a_slope():
    P = np.array([1.0, 3.0, 4.0, 5.6, 8.0])
    dom = DomainSpec("neumann", 10)
    ter = Terrain.slope(0.7)
    closed = edge_map(P, ter, dom)
    # route the same slope through the collocation path
    general = edge_map(P, Terrain.analytic(lambda x: 0.7 * x, lambda x: 0.7 + 0 * x, lambda x: 0 * x), dom,
                       Tuning())
    w = np.full(5, 0.03)
    for a, b in zip(closed.derivatives(w), general.derivatives(w)):
        assert a == pytest.approx(b, abs=1e-8)


def test_sampled_field_vanishes_at_pulses_and_is_continuous():
    P = [2.0, 5.0, 7.5]
    x = np.linspace(0, 10, 20001)
    U, Ux = sample_field(P, np.zeros(3), Terrain.slope(0.5), DomainSpec("neumann", 10), x)
    for p in P:
        assert abs(np.interp(p, x, U)) < 1e-6
    assert np.max(np.abs(np.diff(U))) < 1e-3
    assert abs(Ux[0]) < 1e-8 and abs(Ux[-1]) < 1e-8


def test_outer_derivative_values_at_known_spacings():
    assert R_plus(2.0, 0.0) == pytest.approx(math.tanh(1.0), abs=1e-14)
    assert R_minus(2.0, 0.0) == pytest.approx(-math.tanh(1.0), abs=1e-14)
