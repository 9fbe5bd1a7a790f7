import numpy as np
import pytest

from klausmeier_pulses.amplitudes import amplitudes_newton
from klausmeier_pulses.cascade import classify_pattern, run_cascade, select_removal
from klausmeier_pulses.model import DomainSpec, ModelParams, Schedule, Terrain
from klausmeier_pulses.nlep import Eigen, SpectrumReport, dsp_spectrum

FLAT = Terrain.flat()
BOX = DomainSpec("neumann", 10)


def report(K, lams, signs):
    eig = [Eigen(complex(l), np.ones(len(K)), np.ones(len(K)), list(s), 0) for l, s in zip(lams, signs)]
    K = np.asarray(K, float)
    return SpectrumReport(eig, K, np.full(K.size, 3.0), "saddle-node", "CSP", 1 / K)


def K_of(P, a=0.5):
    p = ModelParams.make(a, 0.45, 0.01)
    u = amplitudes_newton(P, p, FLAT, BOX).u0
    return dsp_spectrum(P, p, FLAT, u).K


def test_equal_spacings_are_regular():
    K = K_of(np.arange(5) * 2.0 + 1.0)
    rep = report(K, [0.01, 0.0095], [[1, -1, 1, -1, 1], [1, 1, 1, 1, 1]])
    assert classify_pattern(K, rep) == "regular"
    assert classify_pattern(K, None) == "regular"


def test_uneven_spacings_are_irregular():
    P = np.cumsum([1.0, 2.0, 1.0, 1.6, 2.4])
    assert classify_pattern(K_of(P), None) == "irregular"


def test_irregular_removal_takes_the_largest_K():
    rep = report([1.8, 2.4, 1.9], [0.01], [[1, 1, 1]])
    assert select_removal(rep, "irregular") == ("single", [1], False)


@pytest.mark.parametrize("parity,expected", [("even", [1, 3, 5]), ("odd", [0, 2, 4])])
def test_alternating_mode_halves_the_pattern(parity, expected):
    rep = report([2.0] * 6, [0.01], [[1, -1, 1, -1, 1, -1]])
    kind, idx, amb = select_removal(rep, "regular", parity)
    assert kind == "period_doubling" and idx == expected and amb


def test_single_signed_regular_mode_collapses_everything():
    rep = report([2.0] * 4, [0.01], [[1, 1, 1, 1]])
    assert select_removal(rep, "regular") == ("full_collapse", [0, 1, 2, 3], False)


def test_single_pulse_cascade_ends_extinct_at_the_fold():
    p = ModelParams.make(Schedule.linear(0.25, -1e-4), 0.45, 0.01)
    tr = run_cascade([5.0], p, FLAT, BOX, 2000.0)
    assert tr.terminal == "extinct" and len(tr.events) == 1
    ev = tr.events[0]
    assert ev.removed == [1] and ev.bifurcation == "saddle-node"
    assert 0.185 < ev.a < 0.195


def test_stable_static_rainfall_reaches_a_fixed_point():
    p = ModelParams.make(0.5, 0.45, 0.01)
    tr = run_cascade([2.0, 3.5, 7.0], p, FLAT, BOX, 1e7)
    assert tr.terminal == "ode_fixed_point" and not tr.events
    assert tr.final.positions == pytest.approx([10 / 6, 5.0, 50 / 6], abs=1e-6)
    assert tr.final_ids == [1, 2, 3]
