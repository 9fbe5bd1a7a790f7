"""NumPy/SciPy fallback with the same signatures as the compiled ``_kernels``."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def _banded(sub, diag, sup):
    n = diag.shape[0]
    ab = np.zeros((3, n), dtype=np.result_type(sub, diag, sup))
    ab[0, 1:] = sup[:-1]
    ab[1] = diag
    ab[2, :-1] = sub[1:]
    return ab


def tridiag_solve(sub, diag, sup, rhs):
    return solve_banded((1, 1), _banded(sub, diag, sup), rhs, check_finite=False)


def tridiag_solve_complex(sub, diag, sup, rhs):
    return solve_banded((1, 1), _banded(sub, diag, sup), rhs, check_finite=False)


def cyclic_solve(sub, diag, sup, rhs):
    n = diag.shape[0]
    beta = sub[0]
    alpha = sup[n - 1]
    gamma = -diag[0]
    d = np.array(diag, dtype=float, copy=True)
    d[0] -= gamma
    d[n - 1] -= alpha * beta / gamma
    ab = _banded(sub, d, sup)
    u = np.zeros(n)
    u[0] = gamma
    u[n - 1] = alpha
    xz = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=False)
    x, z = xz[:, 0], xz[:, 1]
    fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma)
    return x - fact * z


def imex_step(U0, U1, V0, V1, hx, hxx, a, dt, dx, m, D, periodic, first):
    idx2 = 1.0 / (dx * dx)
    i2dx = 0.5 / dx
    D2 = D * D * idx2
    c0 = 1.0 / dt if first else 1.5 / dt
    vstar = V0 if first else 2.0 * V0 - V1
    vstar = np.maximum(vstar, 0.0)

    sub = -(idx2 - hx * i2dx)
    sup = -(idx2 + hx * i2dx)
    diag = c0 + 2.0 * idx2 - hxx + 1.0 + vstar * vstar
    rhs = U0 / dt + a if first else (4.0 * U0 - U1) / (2.0 * dt) + a
    if periodic:
        U = cyclic_solve(sub, diag, sup, rhs)
    else:
        sub = sub.copy()
        sup = sup.copy()
        sup[0] += sub[0]
        sub[0] = 0.0
        sub[-1] += sup[-1]
        sup[-1] = 0.0
        U = tridiag_solve(sub, diag, sup, rhs)
    U = np.maximum(U, 0.0)

    n = U0.shape[0]
    sub = np.full(n, -D2)
    sup = np.full(n, -D2)
    diag = c0 + 2.0 * D2 + m - U * vstar
    rhs = V0 / dt if first else (4.0 * V0 - V1) / (2.0 * dt)
    if periodic:
        V = cyclic_solve(sub, diag, sup, rhs)
    else:
        sup[0] = -2.0 * D2
        sub[0] = 0.0
        sub[-1] = -2.0 * D2
        sup[-1] = 0.0
        V = tridiag_solve(sub, diag, sup, rhs)
    vmin = min(0.0, float(V.min()))
    return U, np.maximum(V, 0.0), vmin
