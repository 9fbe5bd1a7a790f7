import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from klausmeier_pulses.model import (DomainSpec, ModelParams, PulseConfig, Schedule, Terrain, Tuning,
                                     ValidationError, apply_overrides, check_assumptions,
                                     scenario_from_dict)

FIG2 = {
    "params": {"a_schedule": {"type": "linear", "a0": 0.5, "rate": -5e-4}, "m": 0.45, "D": 0.01},
    "terrain": {"type": "constant_slope", "H": 0.0},
    "domain": {"type": "neumann", "L": 10},
    "pulses": {"positions": [1, 3, 4, 5.6, 8]},
    "run": {"t_end": 990},
}


def test_delta_and_assumption_verdicts():
    p = ModelParams.make(0.5, 0.45, 0.01)
    rep = check_assumptions(p, Terrain.flat())
    expected = 0.45 ** 1.5 * 0.01 / 0.25
    assert p.delta() == pytest.approx(expected, rel=1e-14)
    # 0.45**1.5 = 0.3018692..., so delta = 0.0120748 (not 0.012076)
    assert expected == pytest.approx(0.0120748, abs=1e-7)
    assert rep.verdicts["A3"] == "holds"
    assert rep.ratios["A1"] == pytest.approx(0.25 / 0.45 ** 2)
    assert rep.verdicts["A1"] == "violated"


def test_large_rainfall_satisfies_everything():
    rep = check_assumptions(ModelParams.make(1e4, 0.45, 0.01), Terrain.slope(1.0))
    for key in ("A3", "A4", "A5_hx", "A5_hxx", "A6"):
        assert rep.verdicts[key] == "holds"


def test_terrain_values():
    assert Terrain.slope(1.0).eval(2.0) == (2.0, 1.0, 0.0)
    h, hx, hxx = Terrain.gaussian(0.25, 5.0).eval(5.0)
    assert (h, hx, hxx) == pytest.approx((1.0, 0.0, -0.5))
    assert Terrain.flat().eval(3.7) == (0.0, 0.0, 0.0)


@given(B=st.floats(0.05, 2.0), x=st.floats(-5.0, 15.0))
def test_gaussian_derivatives_match_differences(B, x):
    ter = Terrain.gaussian(B, 5.0)
    h = 1e-5
    _, hx, hxx = ter.eval(x)
    fp, fm = ter.eval(x + h), ter.eval(x - h)
    assert hx == pytest.approx((fp[0] - fm[0]) / (2 * h), abs=1e-7)
    assert hxx == pytest.approx((fp[1] - fm[1]) / (2 * h), abs=1e-7)


def test_tabulated_terrain_rejects_extrapolation():
    ter = Terrain.tabulated([(0, 0), (1, 1), (2, 4), (3, 9)])
    assert ter.eval(1.5)[0] == pytest.approx(2.25)
    with pytest.raises(ValueError):
        ter.eval(3.5)


def test_schedule_shapes():
    lin = Schedule.linear(0.5, -1e-3, t_stop=100.0)
    assert lin(50.0) == pytest.approx(0.45)
    assert lin(500.0) == pytest.approx(0.4)
    assert lin.constant_after() == 100.0
    pw = Schedule.piecewise([(0, 1.0), (10, 0.5)])
    assert pw(5.0) == pytest.approx(0.75) and pw(20.0) == 0.5
    with pytest.raises(ValueError):
        Schedule.linear(0.5, 1e-3)
    with pytest.raises(ValueError):
        Schedule.linear(0.1, -1.0)(1.0)


def test_pulse_config_checks():
    with pytest.raises(ValueError):
        PulseConfig((1.0, 1.0))
    with pytest.raises(ValueError):
        PulseConfig((1.0, 2.0), (1.0,))
    with pytest.raises(ValueError):
        PulseConfig((0.0, 2.0)).check_domain(DomainSpec("neumann", 10))
    PulseConfig((0.0, 2.0)).check_domain(DomainSpec("periodic", 10))


def test_irregular_scenario_is_valid():
    s = scenario_from_dict(FIG2)
    assert s.pulses.positions == (1, 3, 4, 5.6, 8)
    assert s.params.a_at(100.0) == pytest.approx(0.45)
    assert s.domain == DomainSpec("neumann", 10)


def test_validation_collects_every_error():
    raw = apply_overrides(FIG2, ["params.m=-1", "run.parity=both", "domain.colour=red", "tuning.nope=1"])
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(raw)
    text = " | ".join(exc.value.errors)
    assert len(exc.value.errors) >= 4
    for frag in ("params.m", "parity", "domain.colour", "nope"):
        assert frag in text


def test_rainfall_must_stay_positive_over_the_run():
    raw = apply_overrides(FIG2, ["run.t_end=2000"])
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(raw)
    assert any("positive" in e for e in exc.value.errors)


def test_override_merges_into_base():
    s = scenario_from_dict(apply_overrides(FIG2, ["params.m=10", "tuning.pde_dt=0.05"]))
    assert s.params.m == 10 and s.params.D == 0.01
    assert s.tuning.pde_dt == 0.05 and s.tuning.noise == Tuning().noise


def test_scenario_round_trip():
    s = scenario_from_dict(FIG2)
    again = scenario_from_dict(s.to_dict())
    assert again == s


def test_unbounded_domain_has_infinite_length():
    d = DomainSpec("unbounded")
    assert not d.bounded and math.isinf(d.L)
    with pytest.raises(ValueError):
        DomainSpec("neumann", np.inf)
