"""Functional monitoring, a-priori bound checks, and weak-form residuals.

A trace is a time series of scalar functionals of the solution pair,
sampled at a fixed cadence, optionally with field snapshots riding along.
Bound verification replays the integral estimates that the functionals
are known to satisfy and reports margins; it never aborts a run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import _kernels
from .grid import Field, Grid
from .solver import ModelParams, State

_ABS_FLOOR = 1e-9


@dataclass(frozen=True)
class FunctionalRecord:
    """Scalar functionals of one state.  Field order is the CSV schema."""

    t: float
    mass_u: float
    mass_v: float
    u_l2sq: float
    v_l2sq: float
    grad_v_l2sq: float
    lap_v_l2sq: float
    grad_v_l4: float
    grad_v_l6: float
    y: float
    entropy: float
    dissipation: float
    u2log: float
    eps_theta: float
    eps_theta_log: float
    sup_u: float
    sup_v: float
    sup_grad_v: float
    energy: float


RECORD_FIELDS = tuple(f.name for f in dc_fields(FunctionalRecord))


def compute_record(s: State) -> FunctionalRecord:
    """Evaluate the monitored functionals at one state.

    grad_v_l2sq is the face-based Dirichlet energy (exact under
    summation-by-parts); the pointwise gradient norms use the
    cell-centered gradient.  grad_v_l6 is tracked in 3D only.
    """
    g = s.grid
    p = s.params
    vol = g.cell_volume
    u = s.u.values
    v = s.v.values

    mass_u = float(u.sum()) * vol
    mass_v = float(v.sum()) * vol
    u_l2sq = float((u * u).sum()) * vol
    v_l2sq = float((v * v).sum()) * vol

    lap_v = _kernels.laplacian(v, g.h)
    grad_v_l2sq = -float((v * lap_v).sum()) * vol
    lap_v_l2sq = float((lap_v * lap_v).sum()) * vol

    gv = _kernels.gradient(v, g.h)
    mag2 = gv[0] * gv[0]
    for c in gv[1:]:
        mag2 = mag2 + c * c
    grad_v_l4 = float((mag2 * mag2).sum()) * vol
    grad_v_l6 = float((mag2 ** 3).sum()) * vol if g.dim == 3 else math.nan
    sup_grad_v = math.sqrt(float(mag2.max(initial=0.0)))

    up = np.maximum(u, 0.0)
    log1u = np.log1p(up)
    entropy = float(((1.0 + up) * log1u).sum()) * vol
    u2log = float((up * up * log1u).sum()) * vol
    if p.eps > 0.0:
        uth = np.power(up, p.theta)
        eps_theta = p.eps * float(uth.sum()) * vol
        eps_theta_log = p.eps * float((uth * log1u).sum()) * vol
    else:
        eps_theta = 0.0
        eps_theta_log = 0.0

    gu = _kernels.gradient(u, g.h)
    du2 = gu[0] * gu[0]
    for c in gu[1:]:
        du2 = du2 + c * c
    dissipation = float((du2 / (1.0 + up)).sum()) * vol

    return FunctionalRecord(
        t=s.t,
        mass_u=mass_u,
        mass_v=mass_v,
        u_l2sq=u_l2sq,
        v_l2sq=v_l2sq,
        grad_v_l2sq=grad_v_l2sq,
        lap_v_l2sq=lap_v_l2sq,
        grad_v_l4=grad_v_l4,
        grad_v_l6=grad_v_l6,
        y=u_l2sq + grad_v_l4,
        entropy=entropy,
        dissipation=dissipation,
        u2log=u2log,
        eps_theta=eps_theta,
        eps_theta_log=eps_theta_log,
        sup_u=float(u.max()),
        sup_v=float(v.max()),
        sup_grad_v=sup_grad_v,
        energy=grad_v_l2sq + mass_u / p.mu,
    )


class Trace:
    """Sampled functional records, plus optional snapshot fields."""

    def __init__(self, grid: Grid, params: ModelParams):
        self.grid = grid
        self.params = params
        self.records: list[FunctionalRecord] = []
        self.snap_times: list[float] = []
        self.snap_u: list[np.ndarray] = []
        self.snap_v: list[np.ndarray] = []
        self.meta: dict = {}

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    @property
    def has_snapshots(self) -> bool:
        return len(self.snap_times) >= 2

    def append(self, s: State, snapshot: bool) -> None:
        self.records.append(compute_record(s))
        if snapshot:
            self.snap_times.append(s.t)
            self.snap_u.append(s.u.values.copy())
            self.snap_v.append(s.v.values.copy())


class Recorder:
    """run() observer that fills a Trace; snapshots every snap_stride calls."""

    def __init__(self, grid: Grid, params: ModelParams, snap_stride: int = 0):
        self.trace = Trace(grid, params)
        self.snap_stride = int(snap_stride)
        self._calls = 0

    def __call__(self, s: State) -> None:
        snap = self.snap_stride > 0 and self._calls % self.snap_stride == 0
        self.trace.append(s, snapshot=snap)
        self._calls += 1


# ------------------------------------------------------------- csv / meta

def _fmt(x: float) -> str:
    return repr(float(x))


def trace_to_csv(trace: Trace, path) -> None:
    """One row per record, header exactly the FunctionalRecord fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in trace.records:
            w.writerow([_fmt(getattr(r, name)) for name in RECORD_FIELDS])


def records_from_csv(path) -> list[FunctionalRecord]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        return [FunctionalRecord(*[float(x) for x in row]) for row in rd]


def meta_to_json(trace: Trace, path) -> None:
    g = trace.grid
    p = trace.params
    payload = {
        "schema": "kslab-trace-meta-v1",
        "grid": {"dim": g.dim, "extents": list(g.extents), "cells": list(g.cells)},
        "params": {"kappa": p.kappa, "mu": p.mu, "eps": p.eps, "theta": p.theta},
        "records": len(trace.records),
        "snapshots": len(trace.snap_times),
    }
    payload.update(trace.meta)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def trace_from_csv(csv_path, meta_path) -> Trace:
    meta = json.loads(Path(meta_path).read_text())
    g = Grid(meta["grid"]["dim"], tuple(meta["grid"]["extents"]),
             tuple(meta["grid"]["cells"]))
    pm = meta["params"]
    params = ModelParams(pm["kappa"], pm["mu"], pm["eps"], pm.get("theta"))
    trace = Trace(g, params.resolved(g.dim))
    trace.records = records_from_csv(csv_path)
    trace.meta = meta
    return trace


# ------------------------------------------------------- a-priori bounds

@dataclass(frozen=True)
class BoundReport:
    """Outcome of one bound check: margin = theoretical - observed worst case."""

    name: str
    theoretical: float
    observed: float
    margin: float
    tolerance: float
    passed: bool
    note: str = ""


def _report(name, theoretical, observed, tol_rel, note="") -> BoundReport:
    tol = tol_rel * max(abs(theoretical), _ABS_FLOOR)
    margin = theoretical - observed
    return BoundReport(name=name, theoretical=float(theoretical),
                       observed=float(observed), margin=float(margin),
                       tolerance=float(tol), passed=bool(margin >= -tol),
                       note=note)


def _worst(threshold: np.ndarray, observed: np.ndarray):
    """Index of the worst (smallest) margin along a time series."""
    return int(np.argmin(threshold - observed))


def verify_apriori_bounds(trace: Trace, tol: float = 0.05) -> list[BoundReport]:
    """Check the integral bounds (a)-(g) at a relative tolerance.

    Thresholds are assembled from the initial record and the model
    constants only; observed values come from the trace, with trapezoid
    rule for the time integrals.  M0 = max(initial mass, kappa_+ |Omega| / mu).
    """
    if len(trace.records) < 2:
        raise ValueError("bound verification needs at least two records")
    p = trace.params
    vol_om = trace.grid.volume
    t = trace.times
    t0 = t[0]
    first = trace.records[0]
    m0 = max(first.mass_u, p.kappa_plus * vol_om / p.mu)
    out = []

    # (a) mass of u never exceeds M0 (pure decay when kappa <= 0)
    mass_u = trace.column("mass_u")
    i = _worst(np.full_like(t, m0), mass_u)
    out.append(_report("a_mass_u", m0, mass_u[i], tol))

    # (b) time-integrated L2 of u plus damping budget
    u_l2sq = trace.column("u_l2sq")
    eps_th = trace.column("eps_theta")
    lhs_b = trapezoid(u_l2sq, t) + trapezoid(eps_th, t) / p.mu
    big_t = t[-1] - t0
    thr_b = (p.kappa_plus / p.mu) * m0 * big_t + first.mass_u / p.mu
    out.append(_report("b_u_l2_time", thr_b, lhs_b, tol))

    # (c) mass of v
    mass_v = trace.column("mass_v")
    thr_c = max(m0, first.mass_v)
    i = _worst(np.full_like(t, thr_c), mass_v)
    out.append(_report("c_mass_v", thr_c, mass_v[i], tol))

    # (d) pointwise-in-time L2 of v plus its running time integral
    v_l2sq = trace.column("v_l2sq")
    cum_v = _cumtrapz(v_l2sq, t)
    lhs_d = v_l2sq + cum_v
    thr_d = (p.kappa_plus / p.mu) * m0 * (t - t0) + first.mass_u / p.mu \
        + first.v_l2sq
    i = _worst(thr_d, lhs_d)
    out.append(_report("d_v_l2", thr_d[i], lhs_d[i], tol))

    # (e) energy functional stays under its initial/forced level
    energy = trace.column("energy")
    thr_e = max(first.energy, (p.kappa_plus + 1.0) * m0 / p.mu)
    i = _worst(np.full_like(t, thr_e), energy)
    out.append(_report("e_energy", thr_e, energy[i], tol))

    # (f) running time integral of |lap v|^2
    lap_v = trace.column("lap_v_l2sq")
    cum_lap = _cumtrapz(lap_v, t)
    thr_f = (p.kappa_plus / p.mu) * m0 * (t - t0) + first.energy
    i = _worst(thr_f, cum_lap)
    out.append(_report("f_lap_v_time", thr_f[i], cum_lap[i], tol))

    # (g) entropy balance: dissipation + weighted-log production stay under
    # the constant assembled from the initial data
    diss = trace.column("dissipation")
    u2log = trace.column("u2log")
    eps_log = trace.column("eps_theta_log")
    lhs_g = 0.5 * trapezoid(diss, t) + p.mu * trapezoid(u2log, t) \
        + trapezoid(eps_log, t)
    thr_g = (p.kappa_plus + 0.5) / p.mu * (p.kappa_plus * m0 * big_t + first.mass_u) \
        + m0 \
        + 0.5 * ((p.kappa_plus / p.mu) * m0 * big_t + first.energy) \
        + 0.5 * big_t * max(first.energy, (p.kappa_plus + 1.0) * m0 / p.mu) \
        + first.entropy
    out.append(_report("g_entropy_balance", thr_g, lhs_g, tol))
    return out


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def bounds_to_csv(reports: list[BoundReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "theoretical", "observed", "margin", "tolerance",
                    "passed", "note"])
        for r in reports:
            w.writerow([r.name, _fmt(r.theoretical), _fmt(r.observed),
                        _fmt(r.margin), _fmt(r.tolerance), str(r.passed), r.note])


# ------------------------------------------------------ weak-form residual

class SpaceTimeTestFunction:
    """Closed-form test function with analytic time/space derivatives.

    Separable: phi(x, t) = chi(t) * psi(x) with psi a Neumann-compatible
    cosine profile (offset + product of axis cosines) and chi a polynomial
    vanishing at the final time.
    """

    def __init__(self, g: Grid, t_final: float, modes=None, offset: float = 1.0,
                 chi_power: int = 1):
        if t_final <= 0.0:
            raise ValueError("t_final must be positive")
        self.grid = g
        self.t_final = float(t_final)
        self.chi_power = int(chi_power)
        modes = tuple(modes) if modes is not None else (1,) * g.dim
        if len(modes) != g.dim:
            raise ValueError("one mode index per axis")
        self.offset = float(offset)
        mesh = g.mesh()
        self._cos = []
        self._sin = []
        self._w = []
        for a in range(g.dim):
            w = modes[a] * math.pi / g.extents[a]
            self._w.append(w)
            self._cos.append(np.cos(w * mesh[a]))
            self._sin.append(np.sin(w * mesh[a]))
        prod = np.ones(g.shape)
        for c in self._cos:
            prod = prod * c
        self._prod = prod
        self.psi = self.offset + prod
        self.psi_lap = -sum(w * w for w in self._w) * prod
        comps = []
        for a in range(g.dim):
            comp = -self._w[a] * self._sin[a]
            for b in range(g.dim):
                if b != a:
                    comp = comp * self._cos[b]
            comps.append(comp)
        self.psi_grad = tuple(comps)

    def chi(self, t: float) -> float:
        s = 1.0 - t / self.t_final
        return s ** self.chi_power

    def chi_dt(self, t: float) -> float:
        s = 1.0 - t / self.t_final
        return -self.chi_power / self.t_final * s ** (self.chi_power - 1)


def weak_residual(trace: Trace, tf: SpaceTimeTestFunction) -> tuple[float, float]:
    """Residuals of the two weak-form identities over the trace window.

    Space integrals by midpoint rule on the snapshots, time integrals by
    trapezoid over the snapshot times; the test function must vanish at
    the final snapshot time.  Returns (r_u, r_v).
    """
    if not trace.has_snapshots:
        raise ValueError("weak residual needs a trace with snapshots")
    g = trace.grid
    if tf.grid != g:
        raise ValueError("test function lives on a different grid")
    times = np.array(trace.snap_times)
    if abs(tf.chi(times[-1])) > 1e-12:
        raise ValueError("test function must vanish at the final snapshot time")
    vol = g.cell_volume
    p = trace.params
    kappa, mu = p.kappa, p.mu

    n = len(times)
    w = np.zeros(n)
    dts = np.diff(times)
    w[:-1] += 0.5 * dts
    w[1:] += 0.5 * dts

    acc_u = 0.0
    acc_v = 0.0
    for k in range(n):
        u = trace.snap_u[k]
        v = trace.snap_v[k]
        chi = tf.chi(times[k])
        chid = tf.chi_dt(times[k])
        int_u_psi = float((u * tf.psi).sum()) * vol
        int_v_psi = float((v * tf.psi).sum()) * vol
        int_u_lap = float((u * tf.psi_lap).sum()) * vol
        int_u2_psi = float((u * u * tf.psi).sum()) * vol
        gv = _kernels.gradient(v, g.h)
        gvg = gv[0] * tf.psi_grad[0]
        for a in range(1, g.dim):
            gvg = gvg + gv[a] * tf.psi_grad[a]
        int_ugv_gphi = float((u * gvg).sum()) * vol
        int_gv_gphi = float(gvg.sum()) * vol
        # u equation: -u phi_t - [u lap phi - u grad v . grad phi
        #                          + kappa u phi - mu u^2 phi]
        acc_u += w[k] * (-int_u_psi * chid
                         - chi * (int_u_lap - int_ugv_gphi
                                  + kappa * int_u_psi - mu * int_u2_psi))
        # v equation: -v phi_t - [-grad v . grad phi - v phi + u phi]
        acc_v += w[k] * (-int_v_psi * chid
                         - chi * (-int_gv_gphi - int_v_psi + int_u_psi))
    chi0 = tf.chi(times[0])
    init_u = float((trace.snap_u[0] * tf.psi).sum()) * vol * chi0
    init_v = float((trace.snap_v[0] * tf.psi).sum()) * vol * chi0
    return abs(acc_u - init_u), abs(acc_v - init_v)