import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klausmeier_pulses.amplitudes import homoclinic_amplitudes
from klausmeier_pulses.model import DomainSpec, ModelParams, Schedule, Terrain
from klausmeier_pulses.outer import R_minus, R_plus
from klausmeier_pulses.pulse_ode import (Monitor, colonization_wavelength, fixed_point, homoclinic_speed,
                                         integrate, regular_speed, velocity)

P05 = ModelParams.make(0.5, 0.45, 0.01)
BOX = DomainSpec("neumann", 10)


@pytest.mark.parametrize("N", [1, 3, 6])
def test_regular_flat_periodic_pattern_is_stationary(N):
    d = 10 / N
    v = velocity(np.arange(N) * d + 0.3, P05, Terrain.flat(), DomainSpec("periodic", 10)).dPdt
    assert np.max(np.abs(v)) < 1e-14


def test_symmetric_pair_moves_symmetrically():
    v = velocity([3.1, 6.9], P05, Terrain.flat(), BOX).dPdt
    assert v[0] == pytest.approx(-v[1], abs=1e-15) and v[0] != 0


@pytest.mark.parametrize("H", [0.5, 1.0, -2.0])
def test_single_pulse_on_the_line_moves_at_homoclinic_speed(H):
    v = velocity([0.0], P05, Terrain.slope(H), DomainSpec("unbounded")).dPdt[0]
    u = homoclinic_amplitudes(P05.delta(), H)[0]
    expected = (1 - P05.delta() * u) ** 2 * P05.prefactor() * H * math.sqrt(H * H + 4) / 6
    assert v == pytest.approx(expected, rel=1e-10)
    assert homoclinic_speed(H, P05) == pytest.approx(expected, rel=1e-12)


def test_prefactor_value():
    assert P05.prefactor() == pytest.approx(0.01 * 0.25 / (0.45 * math.sqrt(0.45)), rel=1e-14)


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_flat_neumann_fixed_point_is_evenly_spread(N):
    rep = fixed_point(N, P05, Terrain.flat(), BOX, "A3")
    expected = (2 * np.arange(1, N + 1) - 1) * 10 / (2 * N)
    assert rep.config.P == pytest.approx(expected, abs=1e-9)
    assert rep.unique and np.all(np.real(rep.jacobian_eigs) < 0)


def test_two_pulse_fixed_point():
    assert fixed_point(2, P05, Terrain.flat(), BOX).config.P == pytest.approx([2.5, 7.5], abs=1e-9)


def test_sloped_fixed_point_moves_uphill_with_slope():
    xs = [fixed_point(1, P05, Terrain.slope(H), BOX).config.P[0] for H in (0.0, 0.5, 1.0, 2.0)]
    assert xs[0] == pytest.approx(5.0, abs=1e-9)
    assert np.all(np.diff(xs) > 0) and xs[-1] < 10


def test_single_flat_pulse_settles_in_the_middle():
    tr = integrate([2.0], P05, Terrain.flat(), BOX, (0.0, 1e6))
    assert tr.reason == "ode_fixed_point"
    assert tr.positions[-1][0] == pytest.approx(5.0, abs=1e-6)


def test_regular_speed_limits():
    assert regular_speed(3.0, 0.0, P05) == 0.0
    assert regular_speed(60.0, 1.0, P05) == pytest.approx(homoclinic_speed(1.0, P05), rel=1e-12)


def test_regular_speed_matches_an_explicit_periodic_pattern():
    P = np.arange(4) * 2.0
    v = velocity(P, P05, Terrain.slope(2.0), DomainSpec("periodic", 8.0), "A3").dPdt
    assert v == pytest.approx(np.full(4, regular_speed(2.0, 2.0, P05, "A3")), abs=1e-12)


def test_colonization_wavelength():
    assert math.isinf(colonization_wavelength(0.0))
    Hs = np.linspace(0.2, 2.0, 19)
    dc = np.array([colonization_wavelength(H) for H in Hs])
    assert np.all(np.diff(dc) < 0)
    for H, d in zip(Hs[::6], dc[::6]):
        v = velocity([0.0, d], P05, Terrain.slope(H), DomainSpec("unbounded"), "A3")
        assert abs(v.c[0]) < 1e-10
        assert R_plus(d, H) == pytest.approx(-R_minus(np.inf, H), abs=1e-12)


def test_ramped_rainfall_stops_at_existence_fold():
    p = ModelParams.make(Schedule.linear(0.25, -1e-4), 0.45, 0.01)
    tr = integrate([5.0], p, Terrain.flat(), BOX, (0.0, 2000.0))
    assert tr.reason == "existence"
    # the event state is the last solvable one
    assert np.all(np.isfinite(tr.event.u0))
    assert 0.05 < tr.event.a < 0.25


def test_monitor_fires_with_bisected_time():
    mon = Monitor("clock", lambda t, P, u: 37.25 - t, tol=1e-9)
    tr = integrate([2.0, 5.0], P05, Terrain.flat(), BOX, (0.0, 100.0), [mon])
    assert tr.reason == "clock"
    assert tr.event.t == pytest.approx(37.25, abs=1e-4)


@settings(max_examples=30)
@given(gaps=st.lists(st.floats(0.6, 3.0), min_size=1, max_size=4), H=st.floats(-1.5, 1.5))
def test_leading_order_velocity_is_the_jump_formula(gaps, H):
    P = np.cumsum(np.r_[0.0, gaps])
    v = velocity(P, P05, Terrain.slope(H), DomainSpec("unbounded"), "A3")
    plus = np.r_[R_plus(np.diff(P), H), R_plus(np.inf, H)]
    minus = np.r_[R_minus(np.inf, H), R_minus(np.diff(P), H)]
    assert v.c == pytest.approx((plus ** 2 - minus ** 2) / 6, abs=1e-13)
