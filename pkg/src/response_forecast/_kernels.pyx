# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama core.

Potentials and perturbations arrive as packed term sums (see
``TermSum.packed``): a quadratic form, a linear term, Gaussian bumps and
cosine waves. The arithmetic mirrors ``_fallback.em_integrate`` term by
term so both backends agree to rounding.
"""

from libc.math cimport exp, cos, sin, fabs, isfinite

import numpy as np


cdef struct Terms:
    Py_ssize_t dim
    Py_ssize_t ng
    Py_ssize_t nc
    const double* A
    const double* b
    const double* gc
    const double* gw
    const double* gm
    const double* cc
    const double* cw
    const double* cph


cdef inline void _grad(const Terms* t, const double* x, double* out) noexcept nogil:
    cdef Py_ssize_t i, j, k, d = t.dim
    cdef double s, r, dx, e, ph
    for i in range(d):
        s = 0.0
        for j in range(d):
            s = s + t.A[i * d + j] * x[j]
        out[i] = s + t.b[i]
    for k in range(t.ng):
        r = 0.0
        for j in range(d):
            dx = x[j] - t.gm[k * d + j]
            r = r + t.gw[k * d + j] * dx * dx
        e = t.gc[k] * exp(-r)
        for j in range(d):
            out[j] = out[j] - 2.0 * e * t.gw[k * d + j] * (x[j] - t.gm[k * d + j])
    for k in range(t.nc):
        ph = t.cph[k]
        for j in range(d):
            ph = ph + t.cw[k * d + j] * x[j]
        e = -t.cc[k] * sin(ph)
        for j in range(d):
            out[j] = out[j] + e * t.cw[k * d + j]


cdef Terms _unpack(tuple packed, list keep):
    cdef Terms t
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in packed[:8]]
    keep.extend(arrs)
    cdef const double[::1] A = arrs[0].ravel()
    cdef const double[::1] b = arrs[1].ravel()
    cdef const double[::1] gc = arrs[2].ravel()
    cdef const double[::1] gw = arrs[3].ravel()
    cdef const double[::1] gm = arrs[4].ravel()
    cdef const double[::1] cc = arrs[5].ravel()
    cdef const double[::1] cw = arrs[6].ravel()
    cdef const double[::1] cph = arrs[7].ravel()
    t.dim = arrs[1].shape[0]
    t.ng = packed[8]
    t.nc = packed[9]
    t.A = &A[0]
    t.b = &b[0]
    t.gc = &gc[0]
    t.gw = &gw[0]
    t.gm = &gm[0]
    t.cc = &cc[0]
    t.cw = &cw[0]
    t.cph = &cph[0]
    return t


def em_integrate(double[:, ::1] x, const double[:, :, ::1] gauss, double dt,
                 double noise_amp, tuple upack, tuple vpack,
                 const Py_ssize_t[::1] proj, double eps, Py_ssize_t record_every,
                 double[:, :, ::1] out, Py_ssize_t rec_offset, double bound):
    """Advance every replicate in ``x`` through ``gauss.shape[1]`` steps.

    Returns the index of the first replicate that left ``|x_i| <= bound``,
    or -1.
    """
    cdef list keep = []
    cdef Terms ut = _unpack(upack, keep)
    cdef Terms vt = _unpack(vpack, keep)
    cdef Py_ssize_t nb = x.shape[0], d = x.shape[1], steps = gauss.shape[1]
    cdef Py_ssize_t m = proj.shape[0]
    cdef Py_ssize_t rb, s, j, c, rec
    cdef bint use_v = eps != 0.0
    cdef int bad = -1
    gbuf = np.empty(max(d, 1), dtype=np.float64)
    vbuf = np.empty(max(m, 1), dtype=np.float64)
    ybuf = np.empty(max(m, 1), dtype=np.float64)
    dbuf = np.empty(max(d, 1), dtype=np.float64)
    cdef double[::1] g = gbuf
    cdef double[::1] gv = vbuf
    cdef double[::1] y = ybuf
    cdef double[::1] drift = dbuf
    cdef double xv
    with nogil:
        for rb in range(nb):
            for s in range(steps):
                _grad(&ut, &x[rb, 0], &g[0])
                for j in range(d):
                    drift[j] = -g[j]
                if use_v:
                    for c in range(m):
                        y[c] = x[rb, proj[c]]
                    _grad(&vt, &y[0], &gv[0])
                    for c in range(m):
                        drift[proj[c]] = drift[proj[c]] + eps * gv[c]
                for j in range(d):
                    xv = x[rb, j] + drift[j] * dt + noise_amp * gauss[rb, s, j]
                    x[rb, j] = xv
                    if not isfinite(xv) or fabs(xv) > bound:
                        bad = <int>rb
                if bad >= 0:
                    break
                if record_every > 0 and (s + 1) % record_every == 0:
                    rec = rec_offset + (s + 1) // record_every - 1
                    for c in range(m):
                        out[rb, rec, c] = x[rb, proj[c]]
            if bad >= 0:
                break
    return bad
