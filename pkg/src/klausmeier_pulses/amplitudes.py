"""Pulse amplitudes u0 from the jump conditions across each pulse.

Each pulse imposes U_x(P_j^+) - U_x(P_j^-) = 6/u0j. In the strict mode the
outer field vanishes at the pulses and u0 follows in closed form; in the
weak mode U(P_j) = delta*u0j and the system is solved by damped Newton.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import DomainSpec, ModelParams, PulseConfig, Terrain, Tuning
from .outer import EdgeMap, edge_map


class NoSolution(RuntimeError):
    """The jump system has no root near the requested branch (past the existence fold)."""


@dataclass
class AmplitudeSolve:
    u0: np.ndarray
    residual: float
    jacobian_det_margin: float
    branch: str = "minus"
    iterations: int = 0
    delta: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "u0": [float(v) for v in self.u0],
            "residual": self.residual,
            "margin": self.jacobian_det_margin,
            "branch": self.branch,
            "iterations": self.iterations,
            "delta": self.delta,
        }


def _emap(config, terrain, domain, tuning, emap):
    if emap is not None:
        return emap
    positions = config.P if isinstance(config, PulseConfig) else np.asarray(config, float)
    return edge_map(positions, terrain, domain, tuning)


def amplitudes_leading(config, H: float | Terrain = 0.0, domain: DomainSpec | None = None,
                       emap: EdgeMap | None = None, tuning=None) -> np.ndarray:
    """Strict-mode amplitudes: 6/u0j equals the derivative jump with U(P_j)=0."""
    terrain = H if isinstance(H, Terrain) else Terrain.slope(float(H))
    domain = domain or DomainSpec("unbounded")
    em = _emap(config, terrain, domain, tuning, emap)
    plus, minus = em.derivatives(np.zeros(em.rp0.size))
    jump = plus - minus
    if np.any(jump <= 0):
        raise NoSolution("non-positive derivative jump in strict mode")
    return 6.0 / jump


def jump_residual(u, em: EdgeMap, delta: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    plus, minus = em.derivatives(delta * u)
    return plus - minus - 6.0 / u


def _jacobian(u, em, delta, fd_step=None):
    if fd_step is None:
        return delta * em.jump_matrix() + np.diag(6.0 / (u * u))
    N = u.size
    F0 = jump_residual(u, em, delta)
    J = np.empty((N, N))
    for k in range(N):
        h = fd_step * max(1.0, abs(u[k]))
        up = u.copy()
        up[k] += h
        J[:, k] = (jump_residual(up, em, delta) - F0) / h
    return J


def amplitudes_newton(config, params: ModelParams | float, terrain: Terrain, domain: DomainSpec,
                      tuning: Tuning | None = None, t: float = 0.0, guess=None,
                      branch: str = "minus", emap: EdgeMap | None = None,
                      jacobian: str = "exact") -> AmplitudeSolve:
    """Weak-mode amplitudes by damped Newton.

    ``params`` may be a ModelParams (delta taken at time t) or delta itself.
    ``jacobian`` is "exact" (the map is affine in u, so J is available in
    closed form) or "fd" (forward differences with step fd_step*max(1,|u|)).
    """
    tuning = tuning or Tuning()
    delta = params.delta(t) if isinstance(params, ModelParams) else float(params)
    em = _emap(config, terrain, domain, tuning, emap)
    lead = amplitudes_leading(config, terrain, domain, emap=em)
    if guess is not None:
        u = np.array(guess, dtype=float)
    elif branch == "plus":
        if delta <= 0:
            raise NoSolution("plus branch requires delta > 0")
        u = 1.0 / delta - lead
    else:
        u = lead.copy()
    if delta == 0.0:
        return AmplitudeSolve(lead, 0.0, 1.0, "minus", 0, 0.0)
    det0 = float(np.prod(6.0 / lead ** 2))
    fd = tuning.fd_step if jacobian == "fd" else None
    F = jump_residual(u, em, delta)
    norm = float(np.max(np.abs(F)))
    history = [norm]
    for it in range(1, tuning.newton_max_iter + 1):
        J = _jacobian(u, em, delta, fd)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NoSolution("singular jacobian") from exc
        lam = 1.0
        for _ in range(tuning.newton_halvings + 1):
            trial = u + lam * step
            if np.all(trial > 0):
                Ft = jump_residual(trial, em, delta)
                nt = float(np.max(np.abs(Ft)))
                if nt < norm or nt < tuning.newton_tol:
                    break
            lam *= 0.5
        else:
            raise NoSolution(f"damped Newton stalled at residual {norm:.3e}")
        u, F, norm = trial, Ft, nt
        history.append(norm)
        if norm < tuning.newton_tol:
            break
    else:
        raise NoSolution(f"Newton did not converge (residual {norm:.3e})")
    Jf = _jacobian(u, em, delta)
    det = float(np.linalg.det(Jf))
    got = "minus" if (det > 0 and np.all(delta * u < 1.0)) else "plus"
    if branch == "minus" and got != "minus":
        raise NoSolution("Newton left the stable existence branch")
    return AmplitudeSolve(u, norm, abs(det) / det0, got, it, delta, history)


def saddle_node_margin(solve: AmplitudeSolve) -> float:
    return float(solve.jacobian_det_margin)


def homoclinic_amplitudes(delta: float, H: float = 0.0) -> tuple[float, float]:
    """Closed-form (minus, plus) amplitudes of a single pulse on the real line."""
    s = math.sqrt(H * H + 4.0)
    if delta == 0:
        return 6.0 / s, math.inf
    disc = 1.0 - 24.0 * delta / s
    if disc < 0:
        raise NoSolution("delta beyond the existence fold")
    r = math.sqrt(disc)
    # minus root in cancellation-free form
    return 12.0 / (s * (1.0 + r)), (1.0 + r) / (2.0 * delta)


def homoclinic_delta_c(H: float = 0.0) -> float:
    return math.sqrt(H * H + 4.0) / 24.0


def solve_amplitudes(config, params: ModelParams, terrain: Terrain, domain: DomainSpec,
                     mode: str = "A3prime", tuning: Tuning | None = None, t: float = 0.0,
                     guess=None, emap: EdgeMap | None = None) -> np.ndarray:
    """Amplitudes for either mode; "A3" uses the closed form, "A3prime" Newton."""
    if mode == "A3":
        return amplitudes_leading(config, terrain, domain, emap=emap)
    return amplitudes_newton(config, params, terrain, domain, tuning, t, guess, emap=emap).u0
