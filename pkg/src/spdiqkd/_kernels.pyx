# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loop: qubit blocks of squeezed-displaced photodetection POVMs.

For each setting the two Fock vectors D(alpha)^dag S(xi)^dag |n>, n = 0, 1,
are propagated together with a Taylor series of the banded generators, and
the 2x2 block of S D (1 - eta)^n D^dag S^dag is accumulated from them.
Vectors are stored as separate real and imaginary parts with two zero
entries of padding on each side so that the band loops need no branches.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs
from libc.stdlib cimport calloc, free

cnp.import_array()

DEF MAX_TERMS = 400
DEF TERM_TOL = 1e-17
DEF PAD = 2
DEF NVEC = 2


cdef void _expm_apply(int kind, double zr, double zi, double* vr, double* vi,
                      int dim, int stride, int* hi, const double* c1,
                      const double* c2, double* tr, double* ti,
                      double* nr, double* ni) noexcept nogil:
    # kind 0: v <- exp(z a^dag - conj(z) a) v
    # kind 1: v <- exp((conj(z) a^2 - z a^dag^2) / 2) v
    # vectors j = 0..NVEC-1 live at offset j * stride + PAD
    cdef int j, k, n, top, grow, base
    cdef double inv, tmax, a, b, pr, pi_, qr, qi
    if zr == 0.0 and zi == 0.0:
        return
    grow = 1 if kind == 0 else 2
    for j in range(NVEC):
        base = j * stride
        for k in range(stride):
            tr[base + k] = vr[base + k]
            ti[base + k] = vi[base + k]
    top = hi[0]
    for n in range(1, MAX_TERMS):
        top = top + grow
        if top > dim:
            top = dim
        inv = 1.0 / n
        tmax = 0.0
        for j in range(NVEC):
            base = j * stride + PAD
            if kind == 0:
                # out[k] = z c1[k] t[k-1] - conj(z) c1[k+1] t[k+1], c1[k] = sqrt(k)
                for k in range(top):
                    pr = c1[k] * tr[base + k - 1]
                    pi_ = c1[k] * ti[base + k - 1]
                    qr = c1[k + 1] * tr[base + k + 1]
                    qi = c1[k + 1] * ti[base + k + 1]
                    nr[base + k] = (zr * pr - zi * pi_ - (zr * qr + zi * qi)) * inv
                    ni[base + k] = (zr * pi_ + zi * pr - (zr * qi - zi * qr)) * inv
            else:
                # out[k] = (conj(z) c2[k] t[k+2] - z c2[k-2] t[k-2]) / 2,
                # c2[k] = sqrt((k+1)(k+2))
                for k in range(top):
                    qr = 0.5 * c2[k] * tr[base + k + 2]
                    qi = 0.5 * c2[k] * ti[base + k + 2]
                    pr = 0.5 * c2[k - 2] * tr[base + k - 2]
                    pi_ = 0.5 * c2[k - 2] * ti[base + k - 2]
                    nr[base + k] = (zr * qr + zi * qi - (zr * pr - zi * pi_)) * inv
                    ni[base + k] = (zr * qi - zi * qr - (zr * pi_ + zi * pr)) * inv
            for k in range(top):
                a = nr[base + k]
                b = ni[base + k]
                tr[base + k] = a
                ti[base + k] = b
                vr[base + k] += a
                vi[base + k] += b
                a = fabs(a) + fabs(b)
                if a > tmax:
                    tmax = a
        if tmax < TERM_TOL:
            break
    hi[0] = top


def noclick_blocks(double[:, ::1] params, double[::1] lam, int cutoff):
    """Qubit blocks of the no-click operators, shape (k, 2, 2).

    ``params`` rows hold (xi_amp, xi_phase, alpha_amp, alpha_phase); ``lam``
    holds 1 - eta_D per row.
    """
    cdef Py_ssize_t nset = params.shape[0]
    cdef int dim = cutoff + 1
    if dim < 2:
        raise ValueError("cutoff must be >= 1")
    if lam.shape[0] != nset:
        raise ValueError("lam length must match params rows")
    out = np.zeros((nset, 2, 2), dtype=np.complex128)
    cdef double complex[:, :, ::1] res = out
    cdef int stride = dim + 2 * PAD
    cdef int size = NVEC * stride
    # coefficient arrays are padded too; entries outside 0..dim-1 stay zero
    cdef double* coef = <double*>calloc(2 * stride + 6 * size, sizeof(double))
    if coef == NULL:
        raise MemoryError()
    cdef double* c1 = coef + PAD
    cdef double* c2 = coef + stride + PAD
    cdef double* vr = coef + 2 * stride
    cdef double* vi = vr + size
    cdef double* tr = vi + size
    cdef double* ti = tr + size
    cdef double* nr = ti + size
    cdef double* ni = nr + size
    cdef Py_ssize_t i
    cdef int k, hi
    cdef double xr, xim, ar, aim, weight, l
    cdef double s00, s11, s01r, s01i, ur, ui, wr, wi
    try:
        with nogil:
            for k in range(dim):
                c1[k] = sqrt(<double>k)
                if k + 2 < dim:
                    c2[k] = sqrt(<double>(k + 1) * (k + 2))
            for i in range(nset):
                xr = params[i, 0] * cos(params[i, 1])
                xim = params[i, 0] * sin(params[i, 1])
                ar = params[i, 2] * cos(params[i, 3])
                aim = params[i, 2] * sin(params[i, 3])
                for k in range(6 * size):
                    vr[k] = 0.0
                vr[PAD] = 1.0
                vr[stride + PAD + 1] = 1.0
                hi = 2
                # S^dag = exp(G_S(-xi)), D^dag = exp(G_D(-alpha))
                _expm_apply(1, -xr, -xim, vr, vi, dim, stride, &hi, c1, c2, tr, ti, nr, ni)
                hi = dim
                _expm_apply(0, -ar, -aim, vr, vi, dim, stride, &hi, c1, c2, tr, ti, nr, ni)
                l = lam[i]
                weight = 1.0
                s00 = 0.0
                s11 = 0.0
                s01r = 0.0
                s01i = 0.0
                for k in range(dim):
                    ur = vr[PAD + k]
                    ui = vi[PAD + k]
                    wr = vr[stride + PAD + k]
                    wi = vi[stride + PAD + k]
                    s00 += weight * (ur * ur + ui * ui)
                    s11 += weight * (wr * wr + wi * wi)
                    s01r += weight * (ur * wr + ui * wi)
                    s01i += weight * (ur * wi - ui * wr)
                    weight = weight * l
                res[i, 0, 0] = s00
                res[i, 0, 1] = s01r + 1j * s01i
                res[i, 1, 0] = s01r - 1j * s01i
                res[i, 1, 1] = s11
    finally:
        free(coef)
    return out
