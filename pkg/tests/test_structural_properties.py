"""Fixed-point and spreading theorems for constant-slope terrain, leading-order amplitudes.

Every property runs over at least 100 derandomized hypothesis examples.
"""
import itertools

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from klausmeier_pulses.model import DomainSpec, ModelParams, Terrain, Tuning
from klausmeier_pulses.outer import R_minus, R_plus
from klausmeier_pulses.pulse_ode import (fixed_point, integrate, regular_speed, velocity,
                                         velocity_jacobian)

PARAMS = ModelParams.make(0.5, 0.45, 0.01)
slopes = st.floats(-2.0, 2.0, allow_nan=False)
TRIALS = settings(max_examples=100)


def _gaps(P, L):
    return np.diff(np.append(P, P[0] + L))


@TRIALS
@given(N=st.integers(1, 4), H=slopes, L=st.floats(4.0, 15.0), seed=st.integers(0, 2 ** 16))
def test_neumann_fixed_point_unique(N, H, L, seed):
    rep = fixed_point(N, PARAMS, Terrain.slope(H), DomainSpec("neumann", L), "A3",
                      tuning=Tuning(), seed=seed)
    found = [rep.config.P] + list(rep.starts)
    assert all(q is not None for q in found)
    for p, q in itertools.combinations(found, 2):
        assert np.max(np.abs(p - q)) < 1e-6
    assert rep.max_velocity < 1e-10


@TRIALS
@given(N=st.integers(1, 4), H=slopes, L=st.floats(4.0, 15.0))
def test_neumann_fixed_point_linearly_stable(N, H, L):
    rep = fixed_point(N, PARAMS, Terrain.slope(H), DomainSpec("neumann", L), "A3")
    assert np.all(np.real(rep.jacobian_eigs) < 0)


@TRIALS
@given(N=st.integers(2, 5), d=st.floats(0.8, 4.0),
       kick=st.lists(st.floats(-0.3, 0.3), min_size=5, max_size=5))
def test_periodic_flat_relaxes_to_regular(N, d, kick):
    L = N * d
    dom = DomainSpec("periodic", L)
    regular = (np.arange(N) + 0.5) * d
    P0 = regular + np.array(kick[:N]) * d / 2
    dev0 = np.max(np.abs(_gaps(P0, L) - d))
    J = velocity_jacobian(regular, PARAMS, Terrain.flat(), dom, "A3") * PARAMS.prefactor()
    ev = np.sort(np.linalg.eigvals(J).real)
    # one zero mode (translation); everything else strictly decays
    assert abs(ev[-1]) < 1e-9 and ev[-2] < 0
    if dev0 < 1e-6:
        return
    T = 3.0 / -ev[-2]
    tr = integrate(P0, PARAMS, Terrain.flat(), dom, (0.0, T), mode="A3")
    assert tr.reason == "t_end"
    devs = [np.max(np.abs(_gaps(P, L) - d)) for P in tr.positions]
    assert devs[-1] < 0.25 * dev0


@TRIALS
@given(N=st.integers(1, 6), d=st.floats(0.5, 4.0), H=slopes, shift=st.floats(0.0, 1.0),
       mode=st.sampled_from(["A3", "A3prime"]))
def test_periodic_regular_pattern_translates(N, d, H, shift, mode):
    # with finite delta, close regular patterns sit past the alternating amplitude fold
    assume(mode == "A3" or d >= 1.0)
    L = N * d
    P = (np.arange(N) + shift) * d
    v = velocity(P, PARAMS, Terrain.slope(H), DomainSpec("periodic", L), mode).dPdt
    assert np.max(np.abs(v - regular_speed(d, H, PARAMS, mode))) < 1e-10


@TRIALS
@given(H=slopes, gaps=st.lists(st.floats(0.5, 3.0), min_size=1, max_size=4))
def test_unbounded_outer_spread_grows(H, gaps):
    P0 = np.cumsum(np.r_[0.0, gaps])
    dom = DomainSpec("unbounded")
    T = 100.0 / PARAMS.prefactor()
    tr = integrate(P0, PARAMS, Terrain.slope(H), dom, (0.0, T), mode="A3")
    assert tr.reason == "t_end"
    Ps = np.array(tr.positions)
    spread = Ps[:, -1] - Ps[:, 0]
    assert np.all(np.diff(spread) > 0)
    for P in Ps[:: max(1, len(Ps) // 5)]:
        v = velocity(P, PARAMS, Terrain.slope(H), dom, "A3").dPdt
        assert v[-1] - v[0] > 0


@TRIALS
@given(H=st.one_of(st.sampled_from([0.0, 1.0, -1.0, 2.0, -2.0]), slopes))
def test_outer_derivatives_monotone(H):
    s = np.sqrt(H * H + 4.0)
    k = np.linspace(1e-3, 12.0, 4000)
    rp, rm = R_plus(k, H), R_minus(k, H)
    assert np.all(np.diff(rp) > 0) and np.all(np.diff(rm) < 0)
    assert abs(rp[0]) < 0.01 and abs(rm[0]) < 0.01
    top, bottom = (H + s) / 2, (H - s) / 2
    assert abs(R_plus(np.inf, H) - top) < 1e-14 and abs(R_minus(np.inf, H) - bottom) < 1e-14
    assert np.all(rp < top) and np.all(rm > bottom)
    assert np.all(np.diff(rp ** 2) > 0) and np.all(np.diff(rm ** 2) > 0)
    net = rp ** 2 - rm ** 2
    # net drift scales with H, so its sign is only resolvable away from roundoff
    if H >= 1e-6:
        assert np.all(net > 0)
    elif H <= -1e-6:
        assert np.all(net < 0)
    else:
        assert np.max(np.abs(net)) < 1e-5


PROPERTIES = [
    test_neumann_fixed_point_unique,
    test_neumann_fixed_point_linearly_stable,
    test_periodic_flat_relaxes_to_regular,
    test_periodic_regular_pattern_translates,
    test_unbounded_outer_spread_grows,
    test_outer_derivatives_monotone,
]
