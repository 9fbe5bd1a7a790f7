"""Model parameters, terrain, domain geometry, pulse configurations and scenarios.

The model is

    U_t = U_xx + h_x U_x + h_xx U + a - U - U V^2
    V_t = D^2 V_xx - m V + U V^2

with rainfall ``a`` (possibly slowly decreasing in time), mortality ``m``,
diffusion ratio ``D`` and terrain height ``h(x)``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline


class ValidationError(ValueError):
    """Raised with every problem found in a scenario, not just the first."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# rainfall schedule and parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Rainfall a(t): constant, linear ramp, or piecewise linear breakpoints.

    Linear ramps may carry ``t_stop`` after which a is held; piecewise
    schedules are clamped at both ends. Nothing is ever extrapolated.
    """

    kind: str = "constant"
    a0: float = 0.5
    rate: float = 0.0
    t_stop: float | None = None
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "piecewise"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "linear" and self.rate > 0:
            raise ValueError("linear schedule rate must be <= 0")
        if self.kind == "piecewise":
            if len(self.breakpoints) < 1:
                raise ValueError("piecewise schedule needs breakpoints")
            ts = [b[0] for b in self.breakpoints]
            vals = [b[1] for b in self.breakpoints]
            if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
                raise ValueError("schedule breakpoints must have increasing t")
            if any(v1 > v0 for v0, v1 in zip(vals, vals[1:])):
                raise ValueError("schedule must be non-increasing in t")

    @classmethod
    def constant(cls, a: float) -> "Schedule":
        return cls("constant", a0=float(a))

    @classmethod
    def linear(cls, a0: float, rate: float, t_stop: float | None = None) -> "Schedule":
        return cls("linear", a0=float(a0), rate=float(rate), t_stop=t_stop)

    @classmethod
    def piecewise(cls, points: Sequence[Sequence[float]]) -> "Schedule":
        bps = tuple((float(t), float(a)) for t, a in points)
        return cls("piecewise", a0=bps[0][1], breakpoints=bps)

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "linear":
            return self.rate == 0.0
        return len({b[1] for b in self.breakpoints}) == 1

    def constant_after(self) -> float:
        """Time after which a(t) no longer changes (inf if never)."""
        if self.is_constant:
            return -math.inf
        if self.kind == "linear":
            return math.inf if self.t_stop is None else self.t_stop
        return self.breakpoints[-1][0]

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            val = self.a0
        elif self.kind == "linear":
            tt = t if self.t_stop is None else min(t, self.t_stop)
            val = self.a0 + self.rate * tt
        else:
            ts = [b[0] for b in self.breakpoints]
            vals = [b[1] for b in self.breakpoints]
            val = float(np.interp(t, ts, vals))
        if val <= 0:
            raise ValueError(f"rainfall a({t}) = {val} is not positive")
        return val

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"type": "constant", "a0": self.a0}
        if self.kind == "linear":
            d = {"type": "linear", "a0": self.a0, "rate": self.rate}
            if self.t_stop is not None:
                d["t_stop"] = self.t_stop
            return d
        return {"type": "piecewise", "points": [list(b) for b in self.breakpoints]}


@dataclass(frozen=True)
class ModelParams:
    a: Schedule
    m: float
    D: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not 0 < self.D < 1:
            raise ValueError("D must lie in (0, 1)")

    @classmethod
    def make(cls, a: float | Schedule, m: float, D: float) -> "ModelParams":
        sched = a if isinstance(a, Schedule) else Schedule.constant(a)
        return cls(sched, float(m), float(D))

    def a_at(self, t: float = 0.0) -> float:
        return self.a(t)

    def delta(self, t: float = 0.0) -> float:
        """Feed-rate ratio m^{3/2} D / a^2."""
        return self.m ** 1.5 * self.D / self.a(t) ** 2

    def prefactor(self, t: float = 0.0) -> float:
        """Velocity scale D a^2 / (m sqrt m)."""
        return self.D * self.a(t) ** 2 / self.m ** 1.5

    def k_scale(self, t: float = 0.0) -> float:
        """m^2 D / a^2, so that K_j = k_scale * u0j^2."""
        return self.m ** 2 * self.D / self.a(t) ** 2

    def pulse_width(self) -> float:
        return self.D / math.sqrt(self.m)


# --------------------------------------------------------------------------
# terrain
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Terrain:
    """Height function h with first and second derivatives.

    ``kind`` is one of ``constant_slope`` (h = H x), ``gaussian``
    (h = A exp(-B (x - c)^2)), ``analytic`` (user callables) or
    ``tabulated`` (C^2 cubic spline through samples).
    """

    kind: str = "constant_slope"
    H: float = 0.0
    B: float = 0.0
    center: float = 0.0
    amplitude: float = 1.0
    table: tuple[tuple[float, float], ...] = ()
    funcs: tuple[Callable, Callable, Callable] | None = field(default=None, compare=False)
    _spline: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "tabulated":
            xs = np.array([p[0] for p in self.table], dtype=float)
            hs = np.array([p[1] for p in self.table], dtype=float)
            if xs.size < 4 or np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated terrain needs >= 4 samples with increasing x")
            object.__setattr__(self, "_spline", CubicSpline(xs, hs, bc_type="not-a-knot"))
        elif self.kind == "analytic":
            if self.funcs is None:
                raise ValueError("analytic terrain needs (h, h_x, h_xx) callables")
        elif self.kind not in ("constant_slope", "gaussian"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")

    @classmethod
    def flat(cls) -> "Terrain":
        return cls("constant_slope", H=0.0)

    @classmethod
    def slope(cls, H: float) -> "Terrain":
        return cls("constant_slope", H=float(H))

    @classmethod
    def gaussian(cls, B: float, center: float, amplitude: float = 1.0) -> "Terrain":
        return cls("gaussian", B=float(B), center=float(center), amplitude=float(amplitude))

    @classmethod
    def tabulated(cls, points: Sequence[Sequence[float]]) -> "Terrain":
        return cls("tabulated", table=tuple((float(x), float(h)) for x, h in points))

    @classmethod
    def analytic(cls, h: Callable, hx: Callable, hxx: Callable) -> "Terrain":
        return cls("analytic", funcs=(h, hx, hxx))

    @property
    def is_constant_slope(self) -> bool:
        return self.kind == "constant_slope"

    def eval(self, x):
        """Return (h, h_x, h_xx) at x (scalar or array)."""
        xa = np.asarray(x, dtype=float)
        if self.kind == "constant_slope":
            out = (self.H * xa, np.full_like(xa, self.H), np.zeros_like(xa))
        elif self.kind == "gaussian":
            y = xa - self.center
            g = self.amplitude * np.exp(-self.B * y * y)
            out = (g, -2 * self.B * y * g, (4 * self.B ** 2 * y * y - 2 * self.B) * g)
        elif self.kind == "tabulated":
            lo, hi = self.table[0][0], self.table[-1][0]
            if np.any(xa < lo - 1e-12) or np.any(xa > hi + 1e-12):
                raise ValueError(f"x outside tabulated terrain range [{lo}, {hi}]")
            s = self._spline
            out = (s(xa), s(xa, 1), s(xa, 2))
        else:
            h, hx, hxx = self.funcs
            out = (np.asarray(h(xa), float), np.asarray(hx(xa), float), np.asarray(hxx(xa), float))
        if np.ndim(x) == 0:
            return tuple(float(v) for v in out)
        return out

    def to_dict(self) -> dict:
        if self.kind == "constant_slope":
            return {"type": "constant_slope", "H": self.H}
        if self.kind == "gaussian":
            return {"type": "gaussian", "B": self.B, "center": self.center, "amplitude": self.amplitude}
        if self.kind == "tabulated":
            return {"type": "tabulated", "table": [list(p) for p in self.table]}
        return {"type": "analytic"}


def eval_terrain(terrain: Terrain, x):
    return terrain.eval(x)


# --------------------------------------------------------------------------
# domain and pulse configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    kind: str = "neumann"
    L: float = math.inf

    def __post_init__(self):
        if self.kind not in ("unbounded", "periodic", "neumann"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind != "unbounded" and not (0 < self.L < math.inf):
            raise ValueError("bounded domains need a finite L > 0")

    @property
    def bounded(self) -> bool:
        return self.kind != "unbounded"

    def to_dict(self) -> dict:
        d = {"type": self.kind}
        if self.bounded:
            d["L"] = self.L
        return d


@dataclass(frozen=True)
class PulseConfig:
    positions: tuple[float, ...]
    amplitudes: tuple[float, ...] | None = None
    t: float = 0.0

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError(f"pulse positions must be strictly increasing: {pos}")
        if self.amplitudes is not None:
            amps = tuple(float(u) for u in self.amplitudes)
            if len(amps) != len(pos):
                raise ValueError("one amplitude per pulse required")
            if any(u <= 0 for u in amps):
                raise ValueError("amplitudes must be positive")
            object.__setattr__(self, "amplitudes", amps)

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def P(self) -> np.ndarray:
        return np.array(self.positions)

    @property
    def u0(self) -> np.ndarray | None:
        return None if self.amplitudes is None else np.array(self.amplitudes)

    def check_domain(self, domain: DomainSpec) -> None:
        if not domain.bounded or not self.positions:
            return
        if domain.kind == "periodic":
            ok = self.positions[0] >= 0 and self.positions[-1] < domain.L
        else:
            ok = self.positions[0] > 0 and self.positions[-1] < domain.L
        if not ok:
            raise ValueError(f"pulses {self.positions} not inside domain of length {domain.L}")

    def with_amplitudes(self, u) -> "PulseConfig":
        return replace(self, amplitudes=tuple(float(v) for v in u))

    def spacings(self) -> np.ndarray:
        return np.diff(self.P)


# --------------------------------------------------------------------------
# size assumptions
# --------------------------------------------------------------------------

def verdict(ratio: float, threshold: float = 0.1) -> str:
    r = abs(ratio)
    if r < threshold:
        return "holds"
    if r <= 1.0:
        return "marginal"
    return "violated"


@dataclass(frozen=True)
class AssumptionReport:
    ratios: dict
    verdicts: dict
    delta: float
    mode: str

    def to_dict(self) -> dict:
        return {"ratios": self.ratios, "verdicts": self.verdicts, "delta": self.delta, "mode": self.mode}


def _terrain_extremes(terrain: Terrain, domain: DomainSpec | None, positions=()) -> tuple[float, float]:
    if terrain.is_constant_slope:
        return abs(terrain.H), 0.0
    if domain is not None and domain.bounded:
        xs = np.linspace(0.0, domain.L, 2001)
    elif terrain.kind == "tabulated":
        xs = np.linspace(terrain.table[0][0], terrain.table[-1][0], 2001)
    else:
        lo = min(positions, default=0.0) - 40.0
        hi = max(positions, default=0.0) + 40.0
        xs = np.linspace(lo, hi, 4001)
    _, hx, hxx = terrain.eval(xs)
    return float(np.max(np.abs(hx))), float(np.max(np.abs(hxx)))


def check_assumptions(params: ModelParams, terrain: Terrain, t: float = 0.0,
                      domain: DomainSpec | None = None) -> AssumptionReport:
    a, m, D = params.a(t), params.m, params.D
    delta = m ** 1.5 * D / a ** 2
    k = m ** 2 * D / a ** 2
    hx, hxx = _terrain_extremes(terrain, domain)
    ratios = {
        "A1": a ** 2 / m ** 2,
        "A2": D * a ** 2 / m ** 1.5,
        "A3": delta,
        "A4": k,
        "A5_hx": delta * hx,
        "A5_hxx": a ** 2 / m ** 2 * delta ** 2 * hxx,
        "A6": k * hx,
    }
    verdicts = {key: verdict(val) for key, val in ratios.items()}
    mode = "A3-strict" if verdicts["A3"] == "holds" else "A3prime"
    return AssumptionReport(ratios, verdicts, delta, mode)


# --------------------------------------------------------------------------
# tuning and scenarios
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tuning:
    newton_tol: float = 1e-11
    newton_max_iter: int = 60
    newton_halvings: int = 8
    fd_step: float = 1e-6
    ode_rtol: float = 1e-8
    ode_atol: float = 1e-10
    collision_factor: float = 10.0
    fp_tol: float = 1e-10
    fp_detect: float = 1e-4
    fp_starts: int = 5
    bvp_tol: float = 1e-10
    bvp_min_nodes: int = 64
    far_field: float = 40.0
    pole_guard: float = 1e-2
    dedup_radius: float = 1e-4
    vin_points: int = 2000
    vin_length: float = 30.0
    hopf_tol: float = 1e-3
    regularity_tol: float = 0.05
    cluster_tol: float = 0.10
    dt_tol_rel: float = 1e-6
    dt_guard_rel: float = 0.01
    pde_dt: float = 0.1
    pde_dx: float = 0.0
    extinction_frac: float = 0.01
    noise: float = 1e-6
    snapshot_every: float = 0.0
    snapshot_stride: int = 4
    track_every: float = 1.0

    def merged(self, overrides: Mapping[str, Any]) -> "Tuning":
        known = {f.name: f.type for f in fields(self)}
        bad = [k for k in overrides if k not in known]
        if bad:
            raise ValidationError([f"unknown tuning key {k!r}" for k in bad])
        cast = {k: type(getattr(self, k))(v) for k, v in overrides.items()}
        return replace(self, **cast)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Scenario:
    params: ModelParams
    terrain: Terrain
    domain: DomainSpec
    pulses: PulseConfig
    t_end: float = 1000.0
    amplitude_mode: str = "A3prime"
    spectrum_mode: str = "auto"
    parity: str = "even"
    seed: int = 0
    tuning: Tuning = field(default_factory=Tuning)
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        a = self.params.a
        params = {"m": self.params.m, "D": self.params.D}
        if a.kind == "constant":
            params["a"] = a.a0
        else:
            params["a_schedule"] = a.to_dict()
        return {
            "params": params,
            "terrain": self.terrain.to_dict(),
            "domain": self.domain.to_dict(),
            "pulses": {"positions": list(self.pulses.positions)},
            "run": {
                "t_end": self.t_end,
                "amplitude_mode": self.amplitude_mode,
                "spectrum_mode": self.spectrum_mode,
                "parity": self.parity,
                "seed": self.seed,
            },
            "tuning": self.tuning.to_dict(),
        }


_TOP_KEYS = {"params", "terrain", "domain", "pulses", "run", "tuning"}
_PARAM_KEYS = {"a", "a_schedule", "m", "D"}
_TERRAIN_KEYS = {"type", "H", "B", "center", "amplitude", "table"}
_DOMAIN_KEYS = {"type", "L"}
_PULSE_KEYS = {"positions"}
_RUN_KEYS = {"t_end", "amplitude_mode", "spectrum_mode", "parity", "seed"}


def _parse_value(text: str):
    import json

    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(raw: Mapping[str, Any], overrides: Sequence[str]) -> dict:
    """Apply dotted ``key=value`` overrides (values parsed as JSON when possible)."""
    out = copy.deepcopy(dict(raw))
    for item in overrides:
        if "=" not in item:
            raise ValidationError([f"override {item!r} is not key=value"])
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError([f"override {key!r} descends into a non-mapping"])
        node[parts[-1]] = _parse_value(val)
    return out


def _num(errors, where, val, positive=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errors.append(f"{where} must be a number, got {val!r}")
        return None
    if positive and not val > 0:
        errors.append(f"{where} must be positive, got {val!r}")
        return None
    return float(val)


def scenario_from_dict(raw: Mapping[str, Any]) -> Scenario:
    """Validate a config mapping, collecting every error before raising."""
    errors: list[str] = []
    for k in raw:
        if k not in _TOP_KEYS:
            errors.append(f"unknown top-level key {k!r}")

    def unknown(section, allowed):
        sec = raw.get(section, {})
        if not isinstance(sec, Mapping):
            errors.append(f"{section} must be a mapping")
            return {}
        for k in sec:
            if k not in allowed:
                errors.append(f"unknown key {section}.{k}")
        return sec

    p = unknown("params", _PARAM_KEYS)
    t = unknown("terrain", _TERRAIN_KEYS)
    d = unknown("domain", _DOMAIN_KEYS)
    pu = unknown("pulses", _PULSE_KEYS)
    run = unknown("run", _RUN_KEYS)
    tun = raw.get("tuning", {})

    m = _num(errors, "params.m", p.get("m"), positive=True) if "m" in p else errors.append("params.m missing")
    D = _num(errors, "params.D", p.get("D"), positive=True) if "D" in p else errors.append("params.D missing")
    if D is not None and not D < 1:
        errors.append("params.D must be < 1")
        D = None

    sched = None
    if "a" in p and "a_schedule" in p:
        errors.append("give either params.a or params.a_schedule, not both")
    elif "a" in p:
        a = _num(errors, "params.a", p["a"], positive=True)
        sched = Schedule.constant(a) if a is not None else None
    elif "a_schedule" in p:
        s = p["a_schedule"]
        try:
            if isinstance(s, Mapping):
                kind = s.get("type", "linear")
                if kind == "linear":
                    sched = Schedule.linear(s["a0"], s.get("rate", 0.0), s.get("t_stop"))
                elif kind == "constant":
                    sched = Schedule.constant(s["a0"])
                elif kind == "piecewise":
                    sched = Schedule.piecewise(s["points"])
                else:
                    errors.append(f"unknown a_schedule type {kind!r}")
            elif isinstance(s, Sequence) and len(s) == 2:
                sched = Schedule.linear(s[0], s[1])
            else:
                errors.append("a_schedule must be a mapping or [a0, rate]")
            if sched is not None and sched.a0 <= 0:
                errors.append("a_schedule must start positive")
                sched = None
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"bad a_schedule: {exc}")
    else:
        errors.append("params.a or params.a_schedule missing")

    domain = None
    try:
        dkind = d.get("type", "neumann")
        domain = DomainSpec(dkind, float(d["L"]) if "L" in d else math.inf)
    except (ValueError, TypeError) as exc:
        errors.append(f"domain: {exc}")

    terrain = None
    try:
        tkind = t.get("type", "constant_slope")
        if tkind in ("flat",):
            terrain = Terrain.flat()
        elif tkind == "constant_slope":
            terrain = Terrain.slope(float(t.get("H", 0.0)))
        elif tkind == "gaussian":
            if "B" not in t:
                errors.append("terrain.B missing for gaussian terrain")
            else:
                center = t.get("center")
                if center is None:
                    if domain is None or not domain.bounded:
                        errors.append("gaussian terrain on unbounded domain needs terrain.center")
                        center = 0.0
                    else:
                        center = domain.L / 2
                terrain = Terrain.gaussian(float(t["B"]), float(center), float(t.get("amplitude", 1.0)))
        elif tkind == "tabulated":
            terrain = Terrain.tabulated(t.get("table", []))
        else:
            errors.append(f"unknown terrain type {tkind!r}")
    except (ValueError, TypeError) as exc:
        errors.append(f"terrain: {exc}")

    pulses = None
    pos = pu.get("positions")
    if pos is None:
        errors.append("pulses.positions missing")
    else:
        try:
            pulses = PulseConfig(tuple(float(x) for x in pos))
            if domain is not None:
                pulses.check_domain(domain)
        except (ValueError, TypeError) as exc:
            errors.append(f"pulses: {exc}")

    t_end = run.get("t_end", 1000.0)
    if _num(errors, "run.t_end", t_end, positive=True) is None:
        t_end = None
    amode = run.get("amplitude_mode", "A3prime")
    if amode not in ("A3", "A3prime"):
        errors.append(f"run.amplitude_mode must be A3 or A3prime, got {amode!r}")
    smode = run.get("spectrum_mode", "auto")
    if smode not in ("dsp", "csp", "auto", "small-m"):
        errors.append(f"run.spectrum_mode must be dsp, csp, auto or small-m, got {smode!r}")
    parity = run.get("parity", "even")
    if parity not in ("even", "odd"):
        errors.append(f"run.parity must be even or odd, got {parity!r}")
    seed = run.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append("run.seed must be an integer")

    tuning = Tuning()
    if not isinstance(tun, Mapping):
        errors.append("tuning must be a mapping")
    else:
        try:
            tuning = tuning.merged(tun)
        except ValidationError as exc:
            errors.extend(exc.errors)
        except (TypeError, ValueError) as exc:
            errors.append(f"tuning: {exc}")

    if sched is not None and t_end is not None:
        probe = np.linspace(0.0, float(t_end), 1001)
        if sched.kind == "piecewise":
            probe = np.concatenate([probe, [b[0] for b in sched.breakpoints if 0 <= b[0] <= t_end]])
        try:
            for tt in probe:
                sched(float(tt))
        except ValueError:
            errors.append(f"rainfall a(t) must stay positive on [0, {t_end}] (fails at t={tt:.6g})")

    params = None
    if not errors:
        try:
            params = ModelParams(sched, m, D)
        except ValueError as exc:
            errors.append(f"params: {exc}")
    if errors:
        raise ValidationError(errors)
    return Scenario(params, terrain, domain, pulses, float(t_end), amode, smode, parity, int(seed), tuning, dict(raw))
