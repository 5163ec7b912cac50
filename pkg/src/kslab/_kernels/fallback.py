"""Pure-numpy stencil kernels.

Same contract as the compiled core in ``_stencil_core``: uniform
cell-centered tensor grids, homogeneous Neumann walls encoded by
ghost-cell reflection (edge replication, so boundary-face differences
vanish), flux-form transport.  Arrays are C-contiguous float64 shaped
``cells``; ``hs`` is the per-axis spacing tuple.
"""

from __future__ import annotations

import numpy as np

BACKEND = "fallback"


def _sl(nd, axis, s):
    out = [slice(None)] * nd
    out[axis] = s
    return tuple(out)


def _pad(f, axis):
    width = [(0, 0)] * f.ndim
    width[axis] = (1, 1)
    return np.pad(f, width, mode="edge")


def laplacian(f, hs):
    """Compact (2*dim+1)-point Neumann laplacian."""
    out = np.zeros_like(f)
    nd = f.ndim
    for a, h in enumerate(hs):
        p = _pad(f, a)
        mid = p[_sl(nd, a, slice(1, -1))]
        up = p[_sl(nd, a, slice(2, None))]
        dn = p[_sl(nd, a, slice(None, -2))]
        out += (up - 2.0 * mid + dn) / (h * h)
    return out


def gradient(f, hs):
    """Cell-centered centered-difference gradient components."""
    nd = f.ndim
    comps = []
    for a, h in enumerate(hs):
        p = _pad(f, a)
        up = p[_sl(nd, a, slice(2, None))]
        dn = p[_sl(nd, a, slice(None, -2))]
        comps.append((up - dn) / (2.0 * h))
    return tuple(comps)


def upwind_flux_div(u, v, hs):
    """Flux-form divergence of the upwinded chemotaxis flux u * grad(v).

    Face flux along axis a at an interior face is g * donor(u) with
    g the face gradient of v and the donor cell picked by sign(g);
    boundary faces carry zero flux, so the total telescopes to zero.
    """
    nd = u.ndim
    out = np.zeros_like(u)
    for a, h in enumerate(hs):
        g = np.diff(v, axis=a) / h
        lo = u[_sl(nd, a, slice(None, -1))]
        hi = u[_sl(nd, a, slice(1, None))]
        flux = np.where(g > 0.0, lo, hi) * g
        width = [(0, 0)] * nd
        width[a] = (1, 1)
        padded = np.pad(flux, width, mode="constant")
        out += np.diff(padded, axis=a) / h
    return out


def explicit_stage(u, v, hs, dt, kappa, mu, eps, theta):
    """One explicit half-step: u + dt*(-div(u grad v) + kappa*u - mu*u^2 - eps*u^theta)."""
    w = u + dt * (kappa * u - mu * u * u - upwind_flux_div(u, v, hs))
    if eps != 0.0:
        # fractional theta on a (tolerated) negative undershoot would NaN;
        # the damping acts on the nonnegative part
        w = w - (dt * eps) * np.power(np.maximum(u, 0.0), theta)
    return w


def max_grad_mag(v, hs):
    """Max over cells of the centered-difference gradient magnitude."""
    comps = gradient(v, hs)
    mag2 = comps[0] * comps[0]
    for c in comps[1:]:
        mag2 = mag2 + c * c
    return float(np.sqrt(mag2.max(initial=0.0)))
