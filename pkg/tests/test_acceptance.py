"""Acceptance criteria 1-12, one test each.

The terminal summary prints one PASS/FAIL line per criterion together with
the measured quantity. PDE reproductions take a few minutes in total.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from klausmeier_pulses import nlep
from klausmeier_pulses.amplitudes import NoSolution, amplitudes_newton, homoclinic_delta_c
from klausmeier_pulses.cascade import run_cascade
from klausmeier_pulses.cli import parse_config
from klausmeier_pulses.model import DomainSpec, ModelParams, Terrain, Tuning
from klausmeier_pulses.nlep import csp_spectrum, kstar, landing_point, m_critical
from klausmeier_pulses.pde import (build_initial, compare, linearized_spectrum, make_grid,
                                   simulate_pde)
from klausmeier_pulses.pulse_ode import colonization_wavelength, homoclinic_speed, regular_speed

import test_structural_properties

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(name):
    return parse_config(SCENARIOS / f"{name}.json")


def cascade_of(s, **kw):
    return run_cascade(s.pulses.P, s.params, s.terrain, s.domain, s.t_end, s.spectrum_mode, s.parity,
                       s.tuning, amplitude_mode=s.amplitude_mode, **kw)


def pde_of(s):
    grid = make_grid(s.params, s.domain, s.tuning.pde_dx or None)
    init = build_initial(s.pulses, s.params, s.terrain, s.domain, grid, s.tuning, 0.0, s.amplitude_mode,
                         noise=s.tuning.noise, seed=s.seed)
    return simulate_pde(s.params, s.terrain, s.domain, init, s.t_end, grid, s.tuning)


def rel(x, ref):
    return abs(x - ref) / abs(ref)


def test_criterion_01_nlep_identities(detail):
    nlep._R_cached.cache_clear()
    t0 = time.perf_counter()
    R0 = nlep.R_value(0.0).real
    Rm1 = nlep.R_value(-1.0).real
    h = 1e-4
    dR0 = ((nlep.R_value(h) - nlep.R_value(-h)) / (2 * h)).real
    blowup = {}
    for pole in nlep.POLES:
        near = [abs(nlep.eval_R(pole + s * e).C) for e in (1e-3, 1e-5) for s in (1, -1)]
        blowup[pole] = min(near[2:]) / max(near[:2])
    wall = time.perf_counter() - t0
    detail(f"R(0)={R0:.7f} R(-1)={Rm1:.6f} R'(0)={dR0:.6f} growth {blowup} in {wall:.2f}s")
    assert abs(R0 - 6) < 1e-4
    assert abs(Rm1 - 3) < 1e-3
    assert abs(dR0 - 4.5) < 1e-3
    # 100-fold closer to the pole gives ~100-fold larger |C|
    assert all(g > 50 for g in blowup.values())
    assert nlep.eval_R(1.25 + 1e-3).near_pole and nlep.eval_R(-0.75 - 1e-3).near_pole
    assert wall < 5.0


def test_criterion_02_bogdanov_takens_locus(detail):
    below0, above0 = landing_point(2.95, 0.0), landing_point(3.05, 0.0)
    out = [f"H=0: {below0:.2e}/{above0:.2e}"]
    ok = below0 < 0 < above0
    for H in (1.0, 2.0):
        mc = 3.0 * (1 + H * H / 4)
        lo, hi = landing_point(0.98 * mc, H), landing_point(1.02 * mc, H)
        out.append(f"H={H:g}: {lo:.2e}/{hi:.2e}")
        ok = ok and lo < 0 < hi
    detail("landing below/above m_c " + ", ".join(out))
    assert ok


def test_criterion_03_kstar_values(detail):
    k_mc = kstar(m_critical(0.0), 0.0)
    k_small = kstar(0.45, 0.0)
    k10 = kstar(10.0, 0.0)
    k10_fine = kstar(10.0, 0.0, Tuning(vin_points=4000))
    detail(f"K*(m_c)={k_mc:.9f} K*(0.45)={k_small:.9f} K*(10)={k10:.7f} refined diff {abs(k10 - k10_fine):.1e} "
           f"literal 2.01246 off by {abs(k_small - 2.01246):.1e}")
    assert abs(k_mc - 3 * math.sqrt(3)) < 1e-6
    # exact branch value 6 sqrt(m/4); 2.01246 is its 6-digit rounding
    assert abs(k_small - 6 * math.sqrt(0.45 / 4)) < 1e-6
    assert round(k_small, 5) == 2.01246
    assert k10 < 6 * math.sqrt(10 / 4)
    assert abs(k10 - k10_fine) < 1e-4


def _newton_boundary(H):
    def ok(delta):
        try:
            amplitudes_newton([0.0], delta, Terrain.slope(H), DomainSpec("unbounded"))
            return True
        except NoSolution:
            return False
    lo, hi = 0.0, 0.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def test_criterion_04_homoclinic_fold(detail):
    closed = homoclinic_delta_c(0.0)
    newton0 = _newton_boundary(0.0)
    errs = {H: abs(_newton_boundary(H) - math.sqrt(H * H + 4) / 24) for H in (1.0, 2.0)}
    detail(f"closed {closed:.12f}, Newton boundary {newton0:.12f}, H=1,2 errors {errs}")
    assert abs(closed - 1 / 12) < 1e-10
    assert abs(newton0 - 1 / 12) < 1e-4
    assert all(abs(homoclinic_delta_c(H) - math.sqrt(H * H + 4) / 24) < 1e-6 for H in (1.0, 2.0))
    assert all(e < 1e-6 for e in errs.values())


def test_criterion_05_single_pulse_events(detail):
    sn = cascade_of(scenario("single_m045"), max_events=1).events[0]
    hopf = cascade_of(scenario("single_m10"), max_events=1).events[0]
    detail(f"m=0.45 {sn.bifurcation} a={sn.a:.5f}; m=10 {hopf.bifurcation} a={hopf.a:.5f} Im={hopf.lam.imag:.4f}")
    assert sn.bifurcation == "saddle-node" and rel(sn.a, 0.19032) < 0.05
    assert hopf.bifurcation == "hopf" and rel(hopf.a, 2.1065) < 0.05 and abs(hopf.lam.imag) > 0.1


def test_criterion_06_irregular_and_periodic_benchmarks(detail):
    irregular5 = scenario("irregular5_m045")
    first = cascade_of(irregular5, max_events=1).events[0]
    # V peak height scales as 1/u0, so the lowest pulse carries the largest amplitude
    u_ev = amplitudes_newton(first.positions, irregular5.params, irregular5.terrain, irregular5.domain, t=first.t).u0
    lowest_v = int(np.argmax(u_ev)) + 1
    hopf = cascade_of(scenario("hopf_irregular_m10"), max_events=1).events[0]
    s = scenario("regular2_periodic")
    u = amplitudes_newton(s.pulses.P, s.params, s.terrain, s.domain).u0
    rep = csp_spectrum(s.pulses.P, s.params, s.terrain, s.domain, u)
    lead = sorted(rep.eigen, key=lambda e: -e.lam.real)[:2]
    by_pattern = {("alternating" if e.signs[0] == -e.signs[1] else "in-phase"): e.lam.real for e in lead}
    detail(f"irregular5 a={first.a:.4f} removed {first.removed}; hopf a={hopf.a:.4f} Im={hopf.lam.imag:.4f} "
           f"removed {hopf.removed}; lowest V pulse {lowest_v}; periodic {by_pattern}")
    assert rel(first.a, 0.296) < 0.10 and first.removed == [3] and lowest_v == 3
    assert rel(hopf.a, 2.96) < 0.10 and rel(abs(hopf.lam.imag), 0.472) < 0.15
    assert set(by_pattern) == {"in-phase", "alternating"}
    assert rel(by_pattern["in-phase"], -0.087) < 0.15
    assert rel(by_pattern["alternating"], -0.063) < 0.15


def test_criterion_07_regular_period_doubling(detail):
    s = scenario("regular10")
    ev = cascade_of(s, max_events=1).events[0]
    u = amplitudes_newton(ev.positions, s.params, s.terrain, s.domain, t=ev.t).u0
    crit = csp_spectrum(np.array(ev.positions), s.params, s.terrain, s.domain, u, ev.t).critical
    alternating = all(crit.signs[i] == -crit.signs[i + 1] != 0 for i in range(len(crit.signs) - 1))
    detail(f"a={ev.a:.5f} {ev.bifurcation}/{ev.removal} removed {ev.removed} signs {crit.signs} "
           f"Im={crit.lam.imag:.1e}")
    assert rel(ev.a, 0.226) < 0.10
    assert ev.removal == "period_doubling" and alternating
    assert ev.bifurcation == "saddle-node" and abs(crit.lam.imag) < 1e-3


@pytest.mark.slow
def test_criterion_08_hill_cascade_and_pde(detail):
    s = scenario("hill_slope")
    ode = cascade_of(s)
    pde = pde_of(s)
    m = compare(ode, pde)
    pde_pos = sorted(tr.position[-1] for tr in pde.survivors())
    ode_pos = sorted(ode.final.positions)
    worst = max((abs(a - b) for a, b in zip(ode_pos, pde_pos)), default=math.inf)
    detail(f"{len(ode.events)} ODE events {[e.removed for e in ode.events]}, terminal {ode.terminal}; "
           f"ODE {np.round(ode_pos, 4).tolist()} PDE {np.round(pde_pos, 4).tolist()} max diff {worst:.3f}")
    assert len(ode.events) == 3 and all(e.removal == "single" and len(e.removed) == 1 for e in ode.events)
    assert ode.terminal == "ode_fixed_point" and len(ode_pos) == 2
    assert len(pde_pos) == 2 and m["survivors_agree"]
    assert worst < 0.2


@pytest.mark.slow
def test_criterion_09_flat_trajectory_agreement(detail):
    s = scenario("flat_irr_to_reg")
    L = s.domain.L
    ode = cascade_of(s)
    pde = pde_of(s)
    m = compare(ode, pde)
    target = L / 7

    def spacing_err(P):
        P = np.sort(np.asarray(P))
        cells = np.r_[2 * P[0], np.diff(P), 2 * (L - P[-1])]
        return float(np.max(np.abs(cells - target)) / target)

    e_ode = spacing_err(ode.final.positions)
    e_pde = spacing_err([tr.position[-1] for tr in pde.survivors()])
    detail(f"sup position error {m['max_position_error']:.4f} (limit {0.02 * L:g}); "
           f"spacing error ODE {e_ode:.4f} PDE {e_pde:.4f}")
    assert not ode.events and m["survivors_agree"]
    assert m["max_position_error"] < 0.02 * L
    assert e_ode < 0.02 and e_pde < 0.02


def test_criterion_10_fixed_point_theorems(detail):
    failed = []
    for prop in test_structural_properties.PROPERTIES:
        try:
            prop()
        except Exception as exc:  # noqa: BLE001 - collect every failing property
            failed.append(f"{prop.__name__}: {type(exc).__name__}")
    detail(f"{len(test_structural_properties.PROPERTIES) - len(failed)}/{len(test_structural_properties.PROPERTIES)} properties "
           f"over 100 trials each" + (f"; failed {failed}" if failed else ""))
    assert not failed


def test_criterion_11_speed_limits_and_colonization(detail):
    p = ModelParams.make(0.5, 0.45, 0.01)
    ds = np.linspace(0.5, 50.0, 100)
    gaps = {}
    for H in (0.5, 1.0, 2.0):
        for mode in ("A3", "A3prime"):
            c = np.array([regular_speed(d, H, p, mode) for d in ds])
            ch = homoclinic_speed(H, p, mode)
            # once c(d) reaches c_h to the last bits the increment is below one ulp
            resolved = ch - c[1:] > 4 * np.spacing(ch)
            inc = np.diff(c)
            assert np.all(inc[resolved] > 0) and np.all(inc >= 0), (H, mode)
            gaps[(H, mode)] = abs(c[-1] - ch)
    Hs = np.linspace(0.2, 2.0, 37)
    dc = np.array([colonization_wavelength(H, p) for H in Hs])
    detail(f"max |c(50)-c_h| {max(gaps.values()):.1e}; d_c from {dc[0]:.3f} to {dc[-1]:.3f}")
    assert max(gaps.values()) < 1e-6
    assert np.all(np.isfinite(dc)) and np.all(np.diff(dc) < 0)


def test_criterion_12_linearized_operator_oracle(detail):
    s = scenario("regular2_periodic")
    t0 = time.perf_counter()
    grid = make_grid(s.params, s.domain)
    frozen = build_initial(s.pulses, s.params, s.terrain, s.domain, grid)
    direct = linearized_spectrum(frozen, s.params, s.terrain, grid, sigma=-0.02, k=12).dominant()
    wall = time.perf_counter() - t0
    u = amplitudes_newton(s.pulses.P, s.params, s.terrain, s.domain).u0
    ref = csp_spectrum(s.pulses.P, s.params, s.terrain, s.domain, u).critical.lam
    err = abs(direct - ref) / abs(ref)
    detail(f"direct {direct.real:.4f}{direct.imag:+.4f}i vs coupled {ref.real:.4f}{ref.imag:+.4f}i, "
           f"rel err {err:.3f}, dx={grid.dx:.3e}, {wall:.1f}s")
    assert wall < 60.0
    assert err < 0.05
