"""Scalar comparison layer for the squared-density functional.

Everything the integral estimates produce is funneled into one cubic,

    p(x) = nu - eta x + a_const (1 + 1/(4 nu)) x^3
           + 4 kappa_hat^2 |Omega| / (c_p mu^2),

whose largest positive root, when it exists, acts as a barrier for
y(t) = int u^2 + int |grad v|^4 along trajectories.  This module
evaluates the cubic, selects the thresholds (nu0, eta, kappa_tilde,
kappa0) that guarantee the root, fits the interpolation constants
feeding the coefficient a_const, integrates comparison trajectories of
y' = p(y), and re-checks the chain of differential inequalities along
recorded runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from .functionals import BoundReport, Trace, _fmt, _report
from .grid import Field, Grid, face_grad_l2sq, gradient, lp_norm, random_low_mode_field

__all__ = [
    "OdiPolynomial", "ThresholdSet", "ComparisonPath", "InterpolationFit",
    "ConstantChain", "p_eval", "p_prime", "local_min", "upper_bracket",
    "largest_root", "select_thresholds", "comparison_solve",
    "fit_interpolation_constants", "young_constant", "sixth_power_constant",
    "assemble_constants", "empirical_smallness_time", "window_constant",
    "averaging_window", "odi_ledger_check", "thresholds_to_csv",
]


# ---------------------------------------------------------------- the cubic

@dataclass(frozen=True)
class OdiPolynomial:
    """Coefficient bundle; immutable so threshold sets can cache roots."""

    nu: float
    eta: float
    a_const: float
    kappa_hat: float
    c_p: float
    mu: float
    omega_vol: float

    def __post_init__(self):
        for name in ("nu", "a_const", "c_p", "mu", "omega_vol"):
            x = getattr(self, name)
            if not (x > 0 and math.isfinite(x)):
                raise ValueError(f"{name} must be positive and finite, got {x}")
        if not (0 < self.eta <= 4):
            raise ValueError(f"eta must lie in (0, 4], got {self.eta}")
        if not (self.kappa_hat >= 0 and math.isfinite(self.kappa_hat)):
            raise ValueError(f"kappa_hat must be >= 0, got {self.kappa_hat}")

    @property
    def cubic(self) -> float:
        return self.a_const * (1.0 + 0.25 / self.nu)

    @property
    def offset(self) -> float:
        return self.nu + 4.0 * self.kappa_hat ** 2 * self.omega_vol / (self.c_p * self.mu ** 2)


def p_eval(p: OdiPolynomial, x: float) -> float:
    return p.offset - p.eta * x + p.cubic * x ** 3


def p_prime(p: OdiPolynomial, x: float) -> float:
    return -p.eta + 3.0 * p.cubic * x ** 2


def local_min(p: OdiPolynomial) -> float:
    """Abscissa of the local minimum on x > 0."""
    return math.sqrt(p.eta / (3.0 * p.cubic))


def upper_bracket(p: OdiPolynomial) -> float:
    """Upper end of the root bracket; p > 0 beyond it since eta <= 4."""
    return math.sqrt(4.0 / p.cubic)


def largest_root(p: OdiPolynomial):
    """Largest positive root of p, or None when the minimum fails to dip.

    Bisection on [x_m, upper] to 1e-12 absolute width.  |p'| <= 12 on the
    bracket, so the returned point carries |p(root)| <= 1.2e-11 and is
    certified to satisfy |p(root)| <= 1e-10 and p'(root) > 0 before
    return.
    """
    xm = local_min(p)
    if p_eval(p, xm) >= 0:
        return None
    lo, hi = xm, upper_bracket(p)
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if p_eval(p, mid) < 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    if abs(p_eval(p, root)) > 1e-10 or p_prime(p, root) <= 0:
        raise RuntimeError(f"root certification failed at {root}")
    return root


# ------------------------------------------------------------- thresholds

@dataclass(frozen=True)
class ThresholdSet:
    """Selected thresholds plus the inputs they were computed from."""

    nu0: float
    eta: float
    kappa_tilde: float
    kappa0: float
    delta: float
    x_m: float
    upper: float
    a_const: float
    c_p: float
    c_omega: float
    omega_vol: float
    mu: float

    def polynomial(self, kappa_hat: float | None = None) -> OdiPolynomial:
        """The cubic at a given kappa_hat (default: kappa_tilde)."""
        if kappa_hat is None:
            kappa_hat = self.kappa_tilde
        if not 0 <= kappa_hat <= self.kappa_tilde:
            raise ValueError(f"kappa_hat must lie in [0, {self.kappa_tilde}]")
        return OdiPolynomial(self.nu0, self.eta, self.a_const, kappa_hat,
                             self.c_p, self.mu, self.omega_vol)


def _root_condition(nu, a_const, c_p, omega_vol, mu, kappa_hat) -> float:
    """Negative iff the squared-offset criterion admits a root at kappa_hat."""
    lhs = (nu + 4.0 * omega_vol * kappa_hat ** 2 / (mu ** 2 * c_p)) ** 2
    cap = min((1.0 / c_p - 2.0 * kappa_hat) ** 3, 64.0)
    return lhs - 4.0 * cap / (27.0 * a_const * (1.0 + 0.25 / nu))


def select_thresholds(a_const: float, c_p: float, c_omega: float,
                      omega_vol: float, mu: float) -> ThresholdSet:
    """Pick nu0, kappa_tilde, eta, delta and kappa0 for the given constants.

    nu0 is half the positive solution of nu^2 + nu/4 = min{4/(27 a c_p^3),
    256/(27 a)}, which makes the root criterion hold strictly at
    kappa_hat = 0; kappa_tilde is the largest kappa_hat in (0, 1/(2 c_p))
    still satisfying it, found by bisection and re-checked strictly at
    the returned value; eta = min{4, 1/c_p - 2 kappa_tilde}; delta is the
    largest root at kappa_hat = kappa_tilde; kappa0 takes a 0.9 safety
    factor inside its min since the admissible range is open.
    """
    for name, x in (("a_const", a_const), ("c_p", c_p), ("c_omega", c_omega),
                    ("omega_vol", omega_vol), ("mu", mu)):
        if not (x > 0 and math.isfinite(x)):
            raise ValueError(f"{name} must be positive and finite, got {x}")

    rhs = min(4.0 / (27.0 * a_const * c_p ** 3), 256.0 / (27.0 * a_const))
    # positive root of nu^2 + nu/4 = rhs, then halved for strict margin
    nu0 = 0.25 * (-0.25 + math.sqrt(0.0625 + 4.0 * rhs))
    if not nu0 > 0:
        raise RuntimeError("no positive nu0 for these constants")
    if _root_condition(nu0, a_const, c_p, omega_vol, mu, 0.0) >= 0:
        raise RuntimeError("root criterion fails at kappa_hat = 0")

    lo, hi = 0.0, 0.5 / c_p
    for _ in range(200):
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
        mid = 0.5 * (lo + hi)
        if _root_condition(nu0, a_const, c_p, omega_vol, mu, mid) < 0:
            lo = mid
        else:
            hi = mid
    kappa_tilde = lo
    # re-evaluated, not assumed
    if not (kappa_tilde > 0
            and _root_condition(nu0, a_const, c_p, omega_vol, mu, kappa_tilde) < 0):
        raise RuntimeError("kappa_tilde certification failed")

    eta = min(4.0, 1.0 / c_p - 2.0 * kappa_tilde)
    poly = OdiPolynomial(nu0, eta, a_const, kappa_tilde, c_p, mu, omega_vol)
    delta = largest_root(poly)
    if delta is None:
        raise RuntimeError("no root at kappa_tilde; constant assembly is wrong")

    kappa0 = 0.9 * min(kappa_tilde,
                       math.sqrt(delta * mu ** 2 / ((4.0 + 8.0 * c_omega) * omega_vol)),
                       0.125)
    return ThresholdSet(nu0=nu0, eta=eta, kappa_tilde=kappa_tilde, kappa0=kappa0,
                        delta=delta, x_m=local_min(poly), upper=upper_bracket(poly),
                        a_const=a_const, c_p=c_p, c_omega=c_omega,
                        omega_vol=omega_vol, mu=mu)


def thresholds_to_csv(rows, path) -> None:
    """One row per (ThresholdSet, ConstantChain) pair."""
    names = [f.name for f in dc_fields(ThresholdSet)]
    chain_names = ["c1", "c2", "c_split", "a_half", "c_mixed", "c_eighth", "a_root"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + chain_names)
        for ts, chain in rows:
            row = [_fmt(getattr(ts, n)) for n in names]
            row += [_fmt(x) for x in (chain.fit.c1, chain.fit.c2, chain.c_split,
                                      chain.a_half, chain.c_mixed, chain.c_eighth,
                                      chain.a_root)]
            w.writerow(row)


# ------------------------------------------------------ comparison solving

@dataclass(frozen=True)
class ComparisonPath:
    times: np.ndarray
    values: np.ndarray
    escaped: bool


def comparison_solve(p: OdiPolynomial, y0: float, t_end: float,
                     dt: float | None = None) -> ComparisonPath:
    """Integrate y' = p(y) with the classical 4th-order one-step scheme.

    The default step is 1e-3 over a Lipschitz bound for p on the reach
    of the trajectory, so the scheme resolves the fastest local rate by
    three orders of magnitude.  Trajectories that exceed ten times the
    root bracket are truncated and flagged as escaped.
    """
    if y0 < 0:
        raise ValueError(f"y0 must be >= 0, got {y0}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    up = upper_bracket(p)
    cap = 10.0 * up
    off, eta, b = p.offset, p.eta, p.cubic
    if dt is None:
        reach = max(up, min(y0, cap))
        dt = 1e-3 / (1.0 + max(eta, 3.0 * b * reach * reach - eta))
    n = max(1, min(int(math.ceil(t_end / dt)), 4_000_000))
    step = t_end / n

    def f(x):
        return off - eta * x + b * x * x * x

    ts = np.empty(n + 1)
    ys = np.empty(n + 1)
    ts[0] = 0.0
    ys[0] = y = float(y0)
    last = 0
    escaped = y > cap
    if not escaped:
        for k in range(n):
            k1 = f(y)
            k2 = f(y + 0.5 * step * k1)
            k3 = f(y + 0.5 * step * k2)
            k4 = f(y + step * k3)
            y = y + step * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            last = k + 1
            ts[last] = (k + 1) * step
            ys[last] = y
            if not y <= cap:  # catches NaN as well
                escaped = True
                break
    return ComparisonPath(ts[:last + 1].copy(), ys[:last + 1].copy(), escaped)


# ------------------------------------------------- constants behind a_const

@dataclass(frozen=True)
class InterpolationFit:
    """Empirical constants of |w|_3 <= c1 |grad w|_2^(1/2) |w|_2^(1/2) + c2 |w|_2."""

    c1: float
    c2: float
    samples: int
    seed: int


def fit_interpolation_constants(g: Grid, samples: int = 400, seed: int = 20,
                                modes: int = 20) -> InterpolationFit:
    """Fit the interpolation constants on a 3-d grid by ratio maximization.

    c2 is exact: constant fields force c2 = |Omega|^(-1/6).  c1 is the
    max over random band-limited fields of the residual ratio; it is
    deterministic per seed and nondecreasing in the sample count.
    """
    if g.dim != 3:
        raise ValueError("interpolation fit is defined for dim=3 only")
    if samples < 1:
        raise ValueError("samples must be positive")
    c2 = g.volume ** (-1.0 / 6.0)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        w = random_low_mode_field(g, modes, rng)
        a = lp_norm(w, 3)
        c = lp_norm(w, 2)
        dirichlet = face_grad_l2sq(w)
        if dirichlet <= 0 or c <= 0:
            continue
        b = dirichlet ** 0.25 * math.sqrt(c)
        best = max(best, (a - c2 * c) / b)
    return InterpolationFit(c1=max(best, 1e-6), c2=c2, samples=samples, seed=seed)


def young_constant(eps: float, p: float, q: float) -> float:
    """C in x y <= eps x^p + C y^q for conjugate exponents p, q."""
    if abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
        raise ValueError(f"exponents {p}, {q} are not conjugate")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return (p * eps) ** (-q / p) / q


def sixth_power_constant(fit: InterpolationFit, a: float) -> float:
    """C(a) in int |grad v|^6 <= a int |grad Z|^2 + C(a) (Y^3 + Y^(3/2)).

    Z = |grad v|^2 and Y = int Z^2.  Cubing the interpolation inequality
    costs a factor 8 on each term; the gradient part is then split by
    Young with exponents 4/3 and 4 at weight a.
    """
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    return max(8.0 * fit.c2 ** 3,
               (8.0 * fit.c1 ** 3) ** 4 * young_constant(a, 4.0 / 3.0, 4.0))


@dataclass(frozen=True)
class ConstantChain:
    """Every intermediate between the fitted constants and a_const."""

    fit: InterpolationFit
    mu: float
    c_split: float
    a_half: float
    c_mixed: float
    c_eighth: float
    a_root: float
    a_const: float


def assemble_constants(fit: InterpolationFit, mu: float) -> ConstantChain:
    """Chain the fitted constants into the cubic coefficient.

    c_split is the Young constant in u^2 Z <= mu u^3 + c_split Z^3 (for
    Z = |grad v|^2, exponents 3/2 and 3); a_half is the sixth-power
    weight that leaves exactly one half on the second-gradient term
    after multiplying by c_split; c_mixed bounds the chemotaxis cross
    term; and a_root = max(2 c_mixed + 8 c_eighth, 1) squares to the
    cubic coefficient.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    c_split = young_constant(mu, 1.5, 3.0)
    a_half = 0.5 / c_split
    c_mixed = c_split * sixth_power_constant(fit, a_half)
    c_eighth = sixth_power_constant(fit, 0.125)
    a_root = max(2.0 * c_mixed + 8.0 * c_eighth, 1.0)
    return ConstantChain(fit=fit, mu=mu, c_split=c_split, a_half=a_half,
                         c_mixed=c_mixed, c_eighth=c_eighth, a_root=a_root,
                         a_const=a_root * a_root)


# ------------------------------------------------------- smallness windows

def empirical_smallness_time(tr: Trace, kappa_hat: float):
    """First trace time after which mass_u stays below 2 kappa_hat |Omega| / mu.

    None when the condition never settles (measured, not predicted: no
    decay rate is assumed).
    """
    thr = 2.0 * kappa_hat * tr.grid.volume / tr.params.mu
    mass = tr.column("mass_u")
    bad = np.nonzero(mass >= thr)[0]
    if len(bad) == 0:
        return float(tr.records[0].t)
    if bad[-1] == len(mass) - 1:
        return None
    return float(tr.records[bad[-1] + 1].t)


def window_constant(tr: Trace, kappa_hat: float) -> float:
    """Initial-data constant entering the averaging-window length."""
    r0 = tr.records[0]
    mu = tr.params.mu
    vol = tr.grid.volume
    growth = max(1.0 + r0.mass_u, kappa_hat * vol / mu)
    return max(1.0 + r0.grad_v_l2sq + r0.mass_u / mu + 1.0 / mu,
               (kappa_hat + 1.0) / mu * growth)


def averaging_window(tr: Trace, kappa_hat: float, c_omega: float,
                     delta: float, t: float) -> float:
    """Window length T making the time average of y over [t, t+T] small.

    The mean bound needs the bracketed sum below T delta / 2 strictly;
    the returned T carries ten percent headroom over that equality.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    r0 = tr.records[0]
    mu = tr.params.mu
    vol = tr.grid.volume
    c0 = window_constant(tr, kappa_hat)
    growth = max(1.0 + r0.mass_u, kappa_hat * vol / mu)
    total = (2.0 * kappa_hat * vol / mu ** 2
             + 2.0 * c_omega * kappa_hat * vol / mu ** 2
             + c_omega * kappa_hat / mu * growth * t
             + c_omega * r0.mass_u / mu
             + c_omega / mu
             + c_omega * r0.v_l2sq
             + c_omega
             + 2.0 * c_omega * c0
             + 2.0 * c_omega * kappa_hat * vol / mu ** 2)
    return 2.2 * total / delta


# ------------------------------------------------------ trajectory ledger

def _outside(name: str, note: str) -> BoundReport:
    return BoundReport(name=name, theoretical=math.nan, observed=math.nan,
                       margin=0.0, tolerance=0.0, passed=True, note=note)


def _series_report(name, times, threshold, observed, tol_rel, note="") -> BoundReport:
    """Worst relative violation along a time series; scale is the larger side."""
    threshold = np.asarray(threshold, float)
    observed = np.asarray(observed, float)
    scale = np.maximum(np.abs(threshold), np.abs(observed))
    viol = np.where(scale > 0, (observed - threshold) / np.where(scale > 0, scale, 1.0), 0.0)
    k = int(np.argmax(viol))
    tag = f"worst of {len(times)} samples at t={times[k]:.6g}"
    return BoundReport(name=name, theoretical=float(threshold[k]),
                       observed=float(observed[k]),
                       margin=float(threshold[k] - observed[k]),
                       tolerance=float(tol_rel * scale[k]),
                       passed=bool(viol[k] <= tol_rel),
                       note=f"{tag}; {note}" if note else tag)


def _snapshot_series(tr: Trace) -> dict:
    g = tr.grid
    vol = g.cell_volume
    n = len(tr.snap_times)
    out = {k: np.empty(n) for k in
           ("int_u", "int_u2", "int_u3", "dir_u", "adv",
            "int_z2", "int_z3", "dir_z", "cross")}
    out["t"] = np.array(tr.snap_times, float)
    for k in range(n):
        u = Field(g, tr.snap_u[k])
        v = Field(g, tr.snap_v[k])
        gu = [c.values for c in gradient(u)]
        gv = [c.values for c in gradient(v)]
        z = sum(c * c for c in gv)
        dot = sum(p * q for p, q in zip(gu, gv))
        gu_mag = np.sqrt(sum(c * c for c in gu))
        uu = u.values
        out["int_u"][k] = uu.sum() * vol
        out["int_u2"][k] = (uu * uu).sum() * vol
        out["int_u3"][k] = (uu ** 3).sum() * vol
        out["dir_u"][k] = face_grad_l2sq(u)
        out["adv"][k] = (uu * dot).sum() * vol
        out["int_z2"][k] = (z * z).sum() * vol
        out["int_z3"][k] = (z ** 3).sum() * vol
        out["dir_z"][k] = face_grad_l2sq(Field(g, z))
        out["cross"][k] = (z ** 1.5 * gu_mag).sum() * vol
    return out


def odi_ledger_check(tr: Trace, poly: OdiPolynomial, chain: ConstantChain,
                     window: float | None = None, delta: float | None = None,
                     tol: float = 0.1) -> list[BoundReport]:
    """Re-check the differential-inequality chain along a recorded run.

    Items, each one report: (i) the dissipation inequality for
    d/dt int u^2; (ii) the fourth-power gradient inequality for
    d/dt int |grad v|^4; (iii) the sixth-power split at weights 1/2 and
    1/8 with the fitted constants; (iv) y' <= p(y) past the empirical
    smallness time; (v) each full averaging window contains a time with
    y <= delta.  Items whose hypotheses the run does not meet report
    that instead of failing.  Time derivatives are centered differences
    on the snapshot times with the endpoints excluded.
    """
    g = tr.grid
    if g.dim != 3:
        raise ValueError("ledger items need a 3-d trace")
    if len(tr.snap_times) < 3:
        raise ValueError("ledger items need at least 3 snapshots")
    kappa = tr.params.kappa
    mu = tr.params.mu
    if delta is None:
        delta = largest_root(poly)
    s = _snapshot_series(tr)
    t = s["t"]
    mid = slice(1, len(t) - 1)
    span = t[2:] - t[:-2]
    reports = []

    lhs = (s["int_u2"][2:] - s["int_u2"][:-2]) / span
    rhs = (-2.0 * s["dir_u"] + 2.0 * s["adv"]
           + 2.0 * kappa * s["int_u2"] - 2.0 * mu * s["int_u3"])[mid]
    reports.append(_series_report("ddt_u_l2sq", t[mid], rhs, lhs, tol))

    lhs = (s["int_z2"][2:] - s["int_z2"][:-2]) / span
    rhs = (-2.0 * s["dir_z"] - 4.0 * s["int_z2"] + 4.0 * s["cross"])[mid]
    reports.append(_series_report("ddt_grad_v_l4", t[mid], rhs, lhs, tol))

    for a, tag in ((0.5, "half"), (0.125, "eighth")):
        ca = sixth_power_constant(chain.fit, a)
        rhs = a * s["dir_z"] + ca * (s["int_z2"] ** 3 + s["int_z2"] ** 1.5)
        reports.append(_series_report(f"grad_v_l6_split_{tag}", t, rhs,
                                      s["int_z3"], tol))

    name = "cubic_comparison"
    if not kappa < poly.kappa_hat or (2.0 * kappa + poly.eta) * poly.c_p > 1.0 + 1e-12:
        reports.append(_outside(
            name, "outside hypotheses: needs kappa < kappa_hat and "
                  "(2 kappa + eta) c_p <= 1"))
    else:
        thr_mass = 2.0 * poly.kappa_hat * g.volume / mu
        ok = s["int_u"] < thr_mass
        usable = ok[:-2] & ok[1:-1] & ok[2:]
        if not usable.any():
            reports.append(_outside(
                name, "outside hypotheses: mass never settles below "
                      "2 kappa_hat |Omega| / mu"))
        else:
            y = s["int_u2"] + s["int_z2"]
            lhs = ((y[2:] - y[:-2]) / span)[usable]
            rhs = np.array([p_eval(poly, x) for x in y[mid][usable]])
            reports.append(_series_report(name, t[mid][usable], rhs, lhs, tol))

    name = "window_smallness"
    if window is None or delta is None:
        reports.append(_outside(name, "no averaging window or barrier level supplied"))
    elif not kappa < poly.kappa_hat:
        reports.append(_outside(name, "outside hypotheses: needs kappa < kappa_hat"))
    else:
        t0 = empirical_smallness_time(tr, poly.kappa_hat)
        if t0 is None:
            reports.append(_outside(
                name, "outside hypotheses: mass never settles below "
                      "2 kappa_hat |Omega| / mu"))
        else:
            times = tr.times
            yrec = tr.column("y")
            starts = np.nonzero((times >= t0)
                                & (times + window <= times[-1] + 1e-12))[0]
            if len(starts) == 0:
                reports.append(_outside(
                    name, "no complete averaging window inside the trace"))
            else:
                worst = -math.inf
                worst_t = t0
                for i in starts:
                    j = int(np.searchsorted(times, times[i] + window, side="right"))
                    wmin = float(yrec[i:j].min())
                    if wmin > worst:
                        worst, worst_t = wmin, float(times[i])
                reports.append(_report(name, delta, worst, tol,
                                       note=f"worst window starts at t={worst_t:.6g}"))
    return reports
