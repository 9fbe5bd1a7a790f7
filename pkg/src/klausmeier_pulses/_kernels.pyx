# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: tridiagonal solves and the fused IMEX-BDF2 step.

Every function here has a NumPy twin in ``_kernels_py`` with identical
arithmetic; ``kernels`` picks one at import time.
"""
import numpy as np

ctypedef double complex cplx


cdef void _thomas(const double[::1] sub, const double[::1] diag, const double[::1] sup,
                  const double[::1] rhs, double[::1] x, double[::1] cp) noexcept nogil:
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double inv
    inv = 1.0 / diag[0]
    cp[0] = sup[0] * inv
    x[0] = rhs[0] * inv
    for i in range(1, n):
        inv = 1.0 / (diag[i] - sub[i] * cp[i - 1])
        cp[i] = sup[i] * inv
        x[i] = (rhs[i] - sub[i] * x[i - 1]) * inv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]


cdef void _thomas_c(const cplx[::1] sub, const cplx[::1] diag, const cplx[::1] sup,
                    const cplx[::1] rhs, cplx[::1] x, cplx[::1] cp) noexcept nogil:
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef cplx inv
    inv = 1.0 / diag[0]
    cp[0] = sup[0] * inv
    x[0] = rhs[0] * inv
    for i in range(1, n):
        inv = 1.0 / (diag[i] - sub[i] * cp[i - 1])
        cp[i] = sup[i] * inv
        x[i] = (rhs[i] - sub[i] * x[i - 1]) * inv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]


cdef void _cyclic(const double[::1] sub, double[::1] diag, const double[::1] sup,
                  const double[::1] rhs, double[::1] x, double[::1] z,
                  double[::1] u, double[::1] cp) noexcept nogil:
    # sub[0] couples row 0 to x[n-1]; sup[n-1] couples row n-1 to x[0]
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double beta = sub[0]
    cdef double alpha = sup[n - 1]
    cdef double gamma = -diag[0]
    cdef double d0 = diag[0]
    cdef double dn = diag[n - 1]
    cdef double fact
    diag[0] = d0 - gamma
    diag[n - 1] = dn - alpha * beta / gamma
    _thomas(sub, diag, sup, rhs, x, cp)
    for i in range(n):
        u[i] = 0.0
    u[0] = gamma
    u[n - 1] = alpha
    _thomas(sub, diag, sup, u, z, cp)
    fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma)
    for i in range(n):
        x[i] -= fact * z[i]
    diag[0] = d0
    diag[n - 1] = dn


def tridiag_solve(double[::1] sub, double[::1] diag, double[::1] sup, double[::1] rhs):
    """Solve a real tridiagonal system; ``sub[0]`` and ``sup[-1]`` are ignored."""
    cdef Py_ssize_t n = diag.shape[0]
    x = np.empty(n)
    cp = np.empty(n)
    cdef double[::1] xv = x
    cdef double[::1] cpv = cp
    with nogil:
        _thomas(sub, diag, sup, rhs, xv, cpv)
    return x


def tridiag_solve_complex(cplx[::1] sub, cplx[::1] diag, cplx[::1] sup, cplx[::1] rhs):
    """Complex twin of :func:`tridiag_solve`."""
    cdef Py_ssize_t n = diag.shape[0]
    x = np.empty(n, dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] xv = x
    cdef cplx[::1] cpv = cp
    with nogil:
        _thomas_c(sub, diag, sup, rhs, xv, cpv)
    return x


def cyclic_solve(double[::1] sub, double[::1] diag, double[::1] sup, double[::1] rhs):
    """Solve a periodic tridiagonal system (Sherman-Morrison)."""
    cdef Py_ssize_t n = diag.shape[0]
    d = np.array(diag, copy=True)
    x = np.empty(n)
    z = np.empty(n)
    u = np.empty(n)
    cp = np.empty(n)
    cdef double[::1] dv = d, xv = x, zv = z, uv = u, cpv = cp
    with nogil:
        _cyclic(sub, dv, sup, rhs, xv, zv, uv, cpv)
    return x


def imex_step(double[::1] U0, double[::1] U1, double[::1] V0, double[::1] V1,
              double[::1] hx, double[::1] hxx, double a, double dt, double dx,
              double m, double D, bint periodic, bint first):
    """One linearly implicit IMEX step (BDF2, or backward Euler if ``first``).

    ``U0``/``V0`` hold level n and ``U1``/``V1`` level n-1 (ignored when
    ``first``). Returns the new ``(U, V)`` with negatives clipped to zero and
    the most negative pre-clip value of V.
    """
    cdef Py_ssize_t n = U0.shape[0]
    cdef Py_ssize_t i
    cdef double idx2 = 1.0 / (dx * dx)
    cdef double i2dx = 0.5 / dx
    cdef double D2 = D * D * idx2
    cdef double c0, vstar, vmin = 0.0
    sub = np.empty(n); diag = np.empty(n); sup = np.empty(n); rhs = np.empty(n)
    vs = np.empty(n)
    Un = np.empty(n); Vn = np.empty(n)
    z = np.empty(n); u = np.empty(n); cp = np.empty(n)
    cdef double[::1] sb = sub, dg = diag, sp = sup, r = rhs, vv = vs
    cdef double[::1] Uo = Un, Vo = Vn, zv = z, uv = u, cpv = cp
    with nogil:
        c0 = 1.0 / dt if first else 1.5 / dt
        for i in range(n):
            vstar = V0[i] if first else 2.0 * V0[i] - V1[i]
            if vstar < 0.0:
                vstar = 0.0
            vv[i] = vstar
            sb[i] = -(idx2 - hx[i] * i2dx)
            sp[i] = -(idx2 + hx[i] * i2dx)
            dg[i] = c0 + 2.0 * idx2 - hxx[i] + 1.0 + vstar * vstar
            if first:
                r[i] = U0[i] / dt + a
            else:
                r[i] = (4.0 * U0[i] - U1[i]) / (2.0 * dt) + a
        if periodic:
            _cyclic(sb, dg, sp, r, Uo, zv, uv, cpv)
        else:
            sp[0] = sp[0] + sb[0]
            sb[0] = 0.0
            sb[n - 1] = sb[n - 1] + sp[n - 1]
            sp[n - 1] = 0.0
            _thomas(sb, dg, sp, r, Uo, cpv)
        for i in range(n):
            if Uo[i] < 0.0:
                Uo[i] = 0.0
            sb[i] = -D2
            sp[i] = -D2
            dg[i] = c0 + 2.0 * D2 + m - Uo[i] * vv[i]
            if first:
                r[i] = V0[i] / dt
            else:
                r[i] = (4.0 * V0[i] - V1[i]) / (2.0 * dt)
        if periodic:
            _cyclic(sb, dg, sp, r, Vo, zv, uv, cpv)
        else:
            sp[0] = -2.0 * D2
            sb[0] = 0.0
            sb[n - 1] = -2.0 * D2
            sp[n - 1] = 0.0
            _thomas(sb, dg, sp, r, Vo, cpv)
        for i in range(n):
            if Vo[i] < vmin:
                vmin = Vo[i]
            if Vo[i] < 0.0:
                Vo[i] = 0.0
    return Un, Vn, vmin
