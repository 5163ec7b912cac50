# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels (hot loops of the time stepper).

Byte-for-byte the same contract as ``fallback``: ghost-cell reflection
via index clamping, flux-form upwind transport with zero boundary flux.
"""

import numpy as np

from libc.math cimport pow, sqrt

BACKEND = "compiled"


# ---------------------------------------------------------------- laplacian

cdef void _lap1(double[::1] f, double[::1] out, double hx) noexcept nogil:
    cdef Py_ssize_t n = f.shape[0], i, im, ip
    cdef double ih = 1.0 / (hx * hx)
    for i in range(n):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < n - 1 else n - 1
        out[i] = (f[ip] - 2.0 * f[i] + f[im]) * ih


cdef void _lap2(double[:, ::1] f, double[:, ::1] out, double hx, double hy) noexcept nogil:
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], i, j, im, ip, jm, jp
    cdef double ihx = 1.0 / (hx * hx), ihy = 1.0 / (hy * hy)
    for i in range(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            out[i, j] = (f[ip, j] - 2.0 * f[i, j] + f[im, j]) * ihx \
                      + (f[i, jp] - 2.0 * f[i, j] + f[i, jm]) * ihy


cdef void _lap3(double[:, :, ::1] f, double[:, :, ::1] out,
                double hx, double hy, double hz) noexcept nogil:
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nz = f.shape[2]
    cdef Py_ssize_t i, j, k, im, ip, jm, jp, km, kp
    cdef double ihx = 1.0 / (hx * hx), ihy = 1.0 / (hy * hy), ihz = 1.0 / (hz * hz)
    for i in range(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            for k in range(nz):
                km = k - 1 if k > 0 else 0
                kp = k + 1 if k < nz - 1 else nz - 1
                out[i, j, k] = (f[ip, j, k] - 2.0 * f[i, j, k] + f[im, j, k]) * ihx \
                             + (f[i, jp, k] - 2.0 * f[i, j, k] + f[i, jm, k]) * ihy \
                             + (f[i, j, kp] - 2.0 * f[i, j, k] + f[i, j, km]) * ihz


def laplacian(f, hs):
    f = np.ascontiguousarray(f, dtype=np.float64)
    out = np.empty_like(f)
    if f.ndim == 1:
        _lap1(f, out, hs[0])
    elif f.ndim == 2:
        _lap2(f, out, hs[0], hs[1])
    else:
        _lap3(f, out, hs[0], hs[1], hs[2])
    return out


# ----------------------------------------------------------------- gradient

cdef void _grad1(double[::1] f, double[::1] out, double hx) noexcept nogil:
    cdef Py_ssize_t n = f.shape[0], i, im, ip
    cdef double ih = 0.5 / hx
    for i in range(n):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < n - 1 else n - 1
        out[i] = (f[ip] - f[im]) * ih


cdef void _grad2(double[:, ::1] f, double[:, ::1] gx, double[:, ::1] gy,
                 double hx, double hy) noexcept nogil:
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], i, j, im, ip, jm, jp
    cdef double ihx = 0.5 / hx, ihy = 0.5 / hy
    for i in range(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            gx[i, j] = (f[ip, j] - f[im, j]) * ihx
            gy[i, j] = (f[i, jp] - f[i, jm]) * ihy


cdef void _grad3(double[:, :, ::1] f, double[:, :, ::1] gx, double[:, :, ::1] gy,
                 double[:, :, ::1] gz, double hx, double hy, double hz) noexcept nogil:
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nz = f.shape[2]
    cdef Py_ssize_t i, j, k, im, ip, jm, jp, km, kp
    cdef double ihx = 0.5 / hx, ihy = 0.5 / hy, ihz = 0.5 / hz
    for i in range(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            for k in range(nz):
                km = k - 1 if k > 0 else 0
                kp = k + 1 if k < nz - 1 else nz - 1
                gx[i, j, k] = (f[ip, j, k] - f[im, j, k]) * ihx
                gy[i, j, k] = (f[i, jp, k] - f[i, jm, k]) * ihy
                gz[i, j, k] = (f[i, j, kp] - f[i, j, km]) * ihz


def gradient(f, hs):
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.ndim == 1:
        gx = np.empty_like(f)
        _grad1(f, gx, hs[0])
        return (gx,)
    if f.ndim == 2:
        gx = np.empty_like(f)
        gy = np.empty_like(f)
        _grad2(f, gx, gy, hs[0], hs[1])
        return (gx, gy)
    gx = np.empty_like(f)
    gy = np.empty_like(f)
    gz = np.empty_like(f)
    _grad3(f, gx, gy, gz, hs[0], hs[1], hs[2])
    return (gx, gy, gz)


# ------------------------------------------------------- upwind chemotaxis

cdef inline double _face(double ul, double ur, double vl, double vr, double ih) noexcept nogil:
    cdef double g = (vr - vl) * ih
    return (ul if g > 0.0 else ur) * g


cdef void _div1(double[::1] u, double[::1] v, double[::1] out, double hx) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], i
    cdef double ih = 1.0 / hx, fr, fl
    for i in range(n):
        fr = _face(u[i], u[i + 1], v[i], v[i + 1], ih) if i < n - 1 else 0.0
        fl = _face(u[i - 1], u[i], v[i - 1], v[i], ih) if i > 0 else 0.0
        out[i] = (fr - fl) * ih


cdef void _div2(double[:, ::1] u, double[:, ::1] v, double[:, ::1] out,
                double hx, double hy) noexcept nogil:
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], i, j
    cdef double ihx = 1.0 / hx, ihy = 1.0 / hy, fr, fl, acc
    for i in range(nx):
        for j in range(ny):
            fr = _face(u[i, j], u[i + 1, j], v[i, j], v[i + 1, j], ihx) if i < nx - 1 else 0.0
            fl = _face(u[i - 1, j], u[i, j], v[i - 1, j], v[i, j], ihx) if i > 0 else 0.0
            acc = (fr - fl) * ihx
            fr = _face(u[i, j], u[i, j + 1], v[i, j], v[i, j + 1], ihy) if j < ny - 1 else 0.0
            fl = _face(u[i, j - 1], u[i, j], v[i, j - 1], v[i, j], ihy) if j > 0 else 0.0
            out[i, j] = acc + (fr - fl) * ihy


cdef void _div3(double[:, :, ::1] u, double[:, :, ::1] v, double[:, :, ::1] out,
                double hx, double hy, double hz) noexcept nogil:
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], nz = u.shape[2], i, j, k
    cdef double ihx = 1.0 / hx, ihy = 1.0 / hy, ihz = 1.0 / hz, fr, fl, acc
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                fr = _face(u[i, j, k], u[i + 1, j, k], v[i, j, k], v[i + 1, j, k], ihx) \
                    if i < nx - 1 else 0.0
                fl = _face(u[i - 1, j, k], u[i, j, k], v[i - 1, j, k], v[i, j, k], ihx) \
                    if i > 0 else 0.0
                acc = (fr - fl) * ihx
                fr = _face(u[i, j, k], u[i, j + 1, k], v[i, j, k], v[i, j + 1, k], ihy) \
                    if j < ny - 1 else 0.0
                fl = _face(u[i, j - 1, k], u[i, j, k], v[i, j - 1, k], v[i, j, k], ihy) \
                    if j > 0 else 0.0
                acc += (fr - fl) * ihy
                fr = _face(u[i, j, k], u[i, j, k + 1], v[i, j, k], v[i, j, k + 1], ihz) \
                    if k < nz - 1 else 0.0
                fl = _face(u[i, j, k - 1], u[i, j, k], v[i, j, k - 1], v[i, j, k], ihz) \
                    if k > 0 else 0.0
                out[i, j, k] = acc + (fr - fl) * ihz


def upwind_flux_div(u, v, hs):
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty_like(u)
    if u.ndim == 1:
        _div1(u, v, out, hs[0])
    elif u.ndim == 2:
        _div2(u, v, out, hs[0], hs[1])
    else:
        _div3(u, v, out, hs[0], hs[1], hs[2])
    return out


# ------------------------------------------------------------ fused stage

cdef void _stage(double[::1] u, double[::1] div, double[::1] out, Py_ssize_t n,
                 double dt, double kappa, double mu, double eps, double theta) noexcept nogil:
    cdef Py_ssize_t i
    cdef double ui, up
    if eps != 0.0:
        for i in range(n):
            ui = u[i]
            # fractional theta on a (tolerated) negative undershoot would NaN;
            # the damping acts on the nonnegative part
            up = ui if ui > 0.0 else 0.0
            out[i] = ui + dt * (kappa * ui - mu * ui * ui - eps * pow(up, theta) - div[i])
    else:
        for i in range(n):
            ui = u[i]
            out[i] = ui + dt * (kappa * ui - mu * ui * ui - div[i])


def explicit_stage(u, v, hs, dt, kappa, mu, eps, theta):
    u = np.ascontiguousarray(u, dtype=np.float64)
    div = upwind_flux_div(u, v, hs)
    out = np.empty_like(u)
    _stage(u.reshape(-1), div.reshape(-1), out.reshape(-1), u.size,
           dt, kappa, mu, eps, theta)
    return out


# ------------------------------------------------------------- reductions

def max_grad_mag(v, hs):
    v = np.ascontiguousarray(v, dtype=np.float64)
    comps = gradient(v, hs)
    if v.ndim == 1:
        return float(np.abs(comps[0]).max(initial=0.0))
    mag2 = comps[0] * comps[0]
    for c in comps[1:]:
        mag2 += c * c
    return float(sqrt(mag2.max(initial=0.0)))
