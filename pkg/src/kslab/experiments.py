"""Run orchestration and the headline experiments.

Configuration is a flat key = value text file with dotted keys; every
key has a typed default, unknown keys are rejected by name, and any key
may be overridden on the command line.  Experiments fan out independent
runs (optionally across worker processes), summarize them into verdict
rows, and write everything as CSV.  Each verdict's threshold carries a
provenance tag: "formula:" for closed forms, "fitted:" for constants
estimated on the grid, "config:" for plain configuration choices.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .functionals import Recorder, Trace, _fmt, meta_to_json, trace_from_csv, \
    trace_to_csv
from .grid import Field, Grid, embedding_constant_estimate, gradient, integrate, \
    poincare_constant, random_low_mode_field
from .odi import (ConstantChain, ThresholdSet, assemble_constants,
                  averaging_window, empirical_smallness_time,
                  fit_interpolation_constants, odi_ledger_check,
                  select_thresholds)
from .snapshots import read_field, write_snapshot
from .solver import BlowupError, ModelParams, State, StepperConfig, \
    make_initial_data, run

__all__ = [
    "RunConfig", "ScaledRun", "Verdict", "ExperimentReport",
    "default_settings", "load_settings", "parse_overrides", "settings_to_text",
    "profile_field", "run_config", "run_one", "run_scaled",
    "write_run_outputs", "load_run",
    "run_decay_experiment", "run_absorbing_experiment", "run_eps_limit",
    "run_smallness_time", "fitted_thresholds", "holder_quotients",
    "d_delta_eval", "k_delta_eval", "report_to_csv", "runs_to_csv",
]


# ----------------------------------------------------------- configuration

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())

def _opt_float(text: str):
    return None if text.strip() == "" else float(text)

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")

def _profiles(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(";") if p.strip())


# key -> (parser, default as text).  The parsed defaults double as the
# documentation of record; docs/formats.md mirrors this table.
_SCHEMA: dict = {
    "grid.dim": (int, "1"),
    "grid.extents": (_floats, "6.283185307179586"),
    "grid.cells": (_ints, "256"),
    "model.kappa": (float, "0.05"),
    "model.mu": (float, "1.0"),
    "model.eps": (float, "0.0"),
    "model.theta": (_opt_float, ""),
    "stepper.dt": (float, "0.01"),
    "stepper.safety": (float, "1.0"),
    "stepper.tol": (float, "1e-10"),
    "stepper.blowup_ceiling": (float, "1e6"),
    "run.t_end": (float, "20.0"),
    "run.cadence": (float, "0.1"),
    "run.snap_cadence": (float, "0.0"),
    "run.seed": (int, "0"),
    "run.workers": (int, "1"),
    "init.u": (str, "constant:1.0"),
    "init.v": (str, "constant:0.0"),
    "out.dir": (str, "runs/out"),
    "verify.tol": (float, "0.05"),
    "verify.ledger_tol": (float, "0.1"),
    "constants.gn_samples": (int, "400"),
    "constants.gn_seed": (int, "20"),
    "constants.gn_modes": (int, "20"),
    "constants.embed_samples": (int, "200"),
    "constants.embed_seed": (int, "0"),
    "decay.kappas": (_floats, "-1.0"),
    "decay.thresholds": (_floats, "0.5,0.1,0.02"),
    "absorbing.kappa_fracs": (_floats, "0.125,0.25,0.5"),
    "absorbing.mean": (float, "2.0"),
    "absorbing.ensemble_u": (_profiles,
                             "random:modes=6,scale=0.3,floor=1.0;"
                             "bump:height=1.0,width=0.8"),
    "absorbing.ensemble_v": (_profiles,
                             "random:modes=6,scale=0.2,floor=1.0;"
                             "constant:1.0"),
    "absorbing.spread_tol": (float, "0.2"),
    "eps.j_max": (int, "6"),
    "eps.noise_floor": (float, "1e-9"),
    "eps.halving_tol": (float, "0.2"),
    "eps.final_tol": (float, "1e-4"),
    "eps.include_baseline": (_bool, "true"),
    "smallness.kappa_frac": (float, "0.5"),
    "smallness.mass_frac": (float, "0.5"),
    "smallness.y_frac": (float, "0.5"),
    "smallness.barrier_tol": (float, "0.1"),
    "semigroup.qs": (_floats, "2.0,4.0"),
    "semigroup.trials": (int, "40"),
    "semigroup.seed": (int, "0"),
    "dmap.p": (float, "3.5"),
    "dmap.c3": (float, "1.0"),
    "dmap.c4": (float, "1.0"),
    "dmap.c5": (float, "1.0"),
    "dmap.c8": (float, "1.0"),
}


def default_settings() -> dict:
    return {k: parse(dflt) for k, (parse, dflt) in _SCHEMA.items()}


def _apply(settings: dict, key: str, value: str, where: str) -> None:
    if key not in _SCHEMA:
        raise ValueError(f"unknown config key {key!r} ({where})")
    parse = _SCHEMA[key][0]
    try:
        settings[key] = parse(value)
    except ValueError as e:
        raise ValueError(f"bad value for {key!r} ({where}): {e}") from e


def load_settings(path=None, overrides: tuple = ()) -> dict:
    """Defaults, then the file (if any), then --key=value overrides."""
    settings = default_settings()
    if path is not None:
        for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            _apply(settings, key, value, f"{path}:{ln}")
    for ov in overrides:
        text = ov[2:] if ov.startswith("--") else ov
        if "=" not in text:
            raise ValueError(f"override {ov!r} is not of the form --key=value")
        key, value = (part.strip() for part in text.split("=", 1))
        _apply(settings, key, value, "command line")
    return settings


def parse_overrides(argv) -> tuple:
    return tuple(a for a in argv)


def settings_to_text(settings: dict) -> str:
    """Canonical echo: sorted keys, repr-exact floats."""
    lines = []
    for key in sorted(settings):
        val = settings[key]
        if isinstance(val, tuple):
            sep = ";" if key.endswith(("ensemble_u", "ensemble_v")) else ","
            text = sep.join(_fmt(v) if isinstance(v, float) else str(v)
                            for v in val)
        elif isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, float):
            text = _fmt(val)
        elif val is None:
            text = ""
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ initial data

def profile_field(g: Grid, spec: str, rng: np.random.Generator) -> Field:
    """Initial-data mini-language.

    Forms: constant:VALUE; cosine:base=B,amp=A,mode=M[,axis=K];
    bump:height=H,width=W[,center=C]; random:modes=M,scale=S[,floor=F];
    snapshot:PATH.  All produce nonnegative fields for valid parameters;
    random shifts the sampled combination up to its minimum plus floor.
    """
    name, _, arg = spec.partition(":")
    name = name.strip()
    if name == "constant":
        return Field(g, np.full(g.shape, float(arg)))
    if name == "snapshot":
        f, _ = read_field(arg.strip(), g)
        return f
    kv = {}
    for part in arg.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"profile parameter {part!r} is not key=value")
        k, v = part.split("=", 1)
        kv[k.strip()] = v.strip()

    def take(key, default=None, cast=float):
        if key in kv:
            return cast(kv.pop(key))
        if default is None:
            raise ValueError(f"profile {name!r} needs parameter {key!r}")
        return default

    if name == "cosine":
        base = take("base")
        amp = take("amp")
        mode = take("mode", cast=int)
        axis = take("axis", 0, int)
        if not 0 <= axis < g.dim:
            raise ValueError(f"cosine axis {axis} out of range for dim {g.dim}")
        x = g.mesh()[axis]
        vals = base + amp * np.cos(mode * math.pi * x / g.extents[axis])
    elif name == "bump":
        height = take("height")
        width = take("width")
        center = take("center", 0.5)
        vals = np.full(g.shape, float(height))
        for a, x in enumerate(g.mesh()):
            vals = vals * np.exp(-((x - center * g.extents[a]) ** 2)
                                 / (2.0 * width * width))
    elif name == "random":
        modes = take("modes", cast=int)
        scale = take("scale")
        floor = take("floor", 0.0)
        w = random_low_mode_field(g, modes, rng, scale=scale)
        vals = floor + w.values - float(w.values.min())
    else:
        raise ValueError(f"unknown profile {name!r}")
    if kv:
        raise ValueError(f"profile {name!r}: unexpected parameters {sorted(kv)}")
    return Field(g, vals)


# ---------------------------------------------------------------- one run

@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; picklable so runs can fan out to workers."""

    grid: Grid
    params: ModelParams
    stepper: StepperConfig
    t_end: float
    cadence: float
    snap_cadence: float
    u0: str
    v0: str
    seed: int
    outdir: str

    def __post_init__(self):
        if self.t_end <= 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not 0.0 < self.cadence <= self.t_end:
            raise ValueError(
                f"cadence must lie in (0, t_end], got {self.cadence}")
        if self.snap_cadence < 0.0:
            raise ValueError("snap_cadence must be nonnegative")
        if self.snap_cadence > 0.0:
            stride = self.snap_cadence / self.cadence
            if abs(stride - round(stride)) > 1e-9 * max(stride, 1.0):
                raise ValueError(
                    "snap_cadence must be an integer multiple of cadence")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


def run_config(settings: dict) -> RunConfig:
    g = Grid(settings["grid.dim"], settings["grid.extents"],
             settings["grid.cells"])
    params = ModelParams(settings["model.kappa"], settings["model.mu"],
                         settings["model.eps"], settings["model.theta"])
    stepper = StepperConfig(dt=settings["stepper.dt"],
                            safety=settings["stepper.safety"],
                            tol=settings["stepper.tol"],
                            blowup_ceiling=settings["stepper.blowup_ceiling"])
    return RunConfig(grid=g, params=params, stepper=stepper,
                     t_end=settings["run.t_end"],
                     cadence=settings["run.cadence"],
                     snap_cadence=settings["run.snap_cadence"],
                     u0=settings["init.u"], v0=settings["init.v"],
                     seed=settings["run.seed"], outdir=settings["out.dir"])


@dataclass(frozen=True)
class ScaledRun:
    """A run plus optional initial-data normalization.

    Positive u_mass / v_mass rescale the sampled profiles to those
    integrals; a positive y_cap then shrinks both fields jointly until
    int u^2 + int |grad v|^4 is at most the cap.  Zeros leave the
    profiles as sampled.
    """

    cfg: RunConfig
    u_mass: float = 0.0
    v_mass: float = 0.0
    y_cap: float = 0.0


def run_scaled(job: ScaledRun) -> Trace:
    cfg = job.cfg
    g = cfg.grid
    rng = np.random.default_rng(cfg.seed)
    u0 = profile_field(g, cfg.u0, rng)
    v0 = profile_field(g, cfg.v0, rng)
    scales = {"u": 1.0, "v": 1.0, "joint": 1.0}
    if job.u_mass > 0.0:
        m = integrate(u0)
        if m <= 0.0:
            raise ValueError("cannot scale a massless u profile to a target")
        scales["u"] = job.u_mass / m
        u0 = Field(g, u0.values * scales["u"])
    if job.v_mass > 0.0:
        m = integrate(v0)
        if m > 0.0:
            scales["v"] = job.v_mass / m
            v0 = Field(g, v0.values * scales["v"])
    if job.y_cap > 0.0:
        scales["joint"] = _shrink_to_y(u0, v0, job.y_cap)
        u0 = Field(g, u0.values * scales["joint"])
        v0 = Field(g, v0.values * scales["joint"])
    fu, fv = make_initial_data(g, u0, v0, cfg.params.eps)
    state = State(fu, fv, 0.0, cfg.params)
    stride = 0
    if cfg.snap_cadence > 0.0:
        stride = int(round(cfg.snap_cadence / cfg.cadence))
    rec = Recorder(g, state.params, snap_stride=stride)
    run(state, cfg.t_end, cfg.stepper, observer=rec, cadence=cfg.cadence)
    rec.trace.meta["run"] = {
        "u0": cfg.u0, "v0": cfg.v0, "seed": cfg.seed, "t_end": cfg.t_end,
        "cadence": cfg.cadence, "snap_cadence": cfg.snap_cadence,
        "scales": scales,
    }
    return rec.trace


def run_one(cfg: RunConfig) -> Trace:
    return run_scaled(ScaledRun(cfg))


def _shrink_to_y(u0: Field, v0: Field, cap: float) -> float:
    """Largest factor in (0, 1] with y(t u0, t v0) = t^2 a + t^4 b <= cap."""
    a = integrate(Field(u0.grid, u0.values ** 2))
    comps = gradient(v0)
    z = sum(c.values * c.values for c in comps)
    b = integrate(Field(v0.grid, z * z))
    if a + b <= cap:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if a * mid * mid + b * mid ** 4 <= cap:
            lo = mid
        else:
            hi = mid
    return lo


def _map_runs(jobs, workers: int):
    """Fan out; results merged in job order regardless of scheduling."""
    jobs = [j if isinstance(j, ScaledRun) else ScaledRun(j) for j in jobs]
    if workers <= 1 or len(jobs) <= 1:
        return [run_scaled(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(run_scaled, jobs))


def write_run_outputs(trace: Trace, outdir, tag: str = "run") -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    trace_to_csv(trace, out / f"{tag}.csv")
    meta_to_json(trace, out / f"{tag}_meta.json")
    g = trace.grid
    for k, t in enumerate(trace.snap_times):
        write_snapshot(out / f"{tag}_snap{k:04d}_u.bin",
                       Field(g, trace.snap_u[k]), t)
        write_snapshot(out / f"{tag}_snap{k:04d}_v.bin",
                       Field(g, trace.snap_v[k]), t)


def load_run(outdir, tag: str = "run") -> Trace:
    out = Path(outdir)
    trace = trace_from_csv(out / f"{tag}.csv", out / f"{tag}_meta.json")
    for upath in sorted(out.glob(f"{tag}_snap*_u.bin")):
        vpath = upath.with_name(upath.name[:-6] + "_v.bin")
        fu, t = read_field(upath, trace.grid)
        fv, tv = read_field(vpath, trace.grid)
        if abs(t - tv) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"snapshot pair times differ at {upath.name}")
        trace.snap_times.append(t)
        trace.snap_u.append(fu.values)
        trace.snap_v.append(fv.values)
    return trace


# ----------------------------------------------------------------- reports

@dataclass(frozen=True)
class Verdict:
    """One named criterion with its outcome and threshold provenance."""

    criterion: str
    passed: bool
    observed: float
    threshold: float
    tolerance: float
    provenance: str
    note: str = ""


@dataclass
class ExperimentReport:
    name: str
    runs: list = field(default_factory=list)      # one dict of scalars per run
    verdicts: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def report_to_csv(rep: ExperimentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "criterion", "passed", "observed",
                    "threshold", "tolerance", "provenance", "note"])
        for v in rep.verdicts:
            w.writerow([rep.name, v.criterion, v.passed, _fmt(v.observed),
                        _fmt(v.threshold), _fmt(v.tolerance), v.provenance,
                        v.note])


def runs_to_csv(rep: ExperimentReport, path) -> None:
    if not rep.runs:
        raise ValueError("report has no per-run summaries")
    names = list(rep.runs[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rep.runs:
            if list(row) != names:
                raise ValueError("per-run summaries disagree on columns")
            w.writerow([_fmt(x) if isinstance(x, float) else str(x)
                        for x in row.values()])


def _settle(times: np.ndarray, series: np.ndarray, thr: float):
    """First time after which the series stays <= thr; None if it never does."""
    bad = np.flatnonzero(series > thr)
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == len(series) - 1:
        return None
    return float(times[bad[-1] + 1])


def _first_crossing(times: np.ndarray, series: np.ndarray, thr: float):
    idx = np.flatnonzero(series <= thr)
    return float(times[idx[0]]) if idx.size else None


# ------------------------------------------------------------- experiments

def run_decay_experiment(settings: dict) -> ExperimentReport:
    """Sweep of nonpositive growth rates; checks eventual sup-norm decay.

    Per run and per threshold in the configured ladder, records the first
    crossing and the settle time of sup_u + sup_v (and of each component,
    whose crossings are what homogeneous reference solutions pin down).
    Verdicts per rate: the smallest threshold must be reached before the
    horizon and never re-exceeded, and crossing times must be ordered
    along the ladder.  The horizon a threshold needs depends on the rate
    (algebraic decay at kappa = 0, exponential below), so ladder and
    t_end have to be chosen together.
    """
    kappas = settings["decay.kappas"]
    ladder = sorted(settings["decay.thresholds"], reverse=True)
    if not ladder:
        raise ValueError("decay.thresholds is empty")
    mu = settings["model.mu"]
    if mu <= 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    for k in kappas:
        if k > 0.0:
            raise ValueError(f"decay sweep needs kappa <= 0, got {k}")
    base = run_config(settings)
    cfgs = [replace(base, params=replace(base.params, kappa=k))
            for k in kappas]
    traces = _map_runs(cfgs, settings["run.workers"])

    rep = ExperimentReport(name="decay")
    rep.meta["thresholds"] = list(ladder)
    for k, tr in zip(kappas, traces):
        t = tr.times
        su = tr.column("sup_u")
        sv = tr.column("sup_v")
        total = su + sv
        crossings = []
        for thr in ladder:
            c = _first_crossing(t, total, thr)
            crossings.append(c)
            rep.runs.append({
                "kappa": k, "mu": mu, "threshold": thr,
                "cross_sum": _nan(c),
                "cross_u": _nan(_first_crossing(t, su, thr)),
                "cross_v": _nan(_first_crossing(t, sv, thr)),
                "settle_sum": _nan(_settle(t, total, thr)),
            })
        settle = _settle(t, total, min(ladder))
        rep.verdicts.append(Verdict(
            criterion=f"settles-below-{min(ladder)}@kappa={k}",
            passed=settle is not None,
            observed=_nan(settle), threshold=float(base.t_end),
            tolerance=0.0, provenance="config:decay.thresholds",
            note="settle time of sup_u + sup_v vs horizon"))
        hit = [c for c in crossings if c is not None]
        ordered = (all(a <= b for a, b in zip(hit, hit[1:]))
                   and all(c is None for c in crossings[len(hit):]))
        rep.verdicts.append(Verdict(
            criterion=f"crossing-order@kappa={k}",
            passed=ordered, observed=float(len(hit)),
            threshold=float(len(ladder)), tolerance=0.0,
            provenance="config:decay.thresholds",
            note="crossing times nondecreasing down the ladder; "
                 "uncrossed thresholds only at the tail"))
    return rep


def _nan(x):
    return float("nan") if x is None else float(x)


def fitted_thresholds(g: Grid, mu: float, settings: dict) \
        -> tuple[ThresholdSet, ConstantChain]:
    """Constant chain and thresholds for a 3D grid, all knobs from settings."""
    fit = fit_interpolation_constants(
        g, samples=settings["constants.gn_samples"],
        seed=settings["constants.gn_seed"],
        modes=settings["constants.gn_modes"])
    chain = assemble_constants(fit, mu)
    c_omega = embedding_constant_estimate(
        g, samples=settings["constants.embed_samples"],
        seed=settings["constants.embed_seed"])
    ts = select_thresholds(chain.a_const, poincare_constant(g), c_omega,
                           g.volume, mu)
    return ts, chain


def _fit_id(settings: dict) -> str:
    return ("gn(seed={},samples={});embed(seed={},samples={})".format(
        settings["constants.gn_seed"], settings["constants.gn_samples"],
        settings["constants.embed_seed"], settings["constants.embed_samples"]))


def run_absorbing_experiment(settings: dict) -> ExperimentReport:
    """Absorbing-radius proxy along a ladder of small growth rates.

    R(kappa) = max of sup_u + sup_grad_v over the last quarter of each
    run; verdicts ask the ensemble spread at fixed kappa to stay within
    tolerance and the ensemble mean to be nonincreasing as kappa drops.
    Each member starts at mean level absorbing.mean * kappa / mu so the
    fixed horizon measures the absorbed regime rather than the slow
    transient of order-one data.
    """
    base = run_config(settings)
    g = base.grid
    if g.dim != 3:
        raise ValueError("absorbing experiment needs a 3D grid")
    mu = base.params.mu
    ts, chain = fitted_thresholds(g, mu, settings)
    fracs = settings["absorbing.kappa_fracs"]
    if any(not 0.0 < f < 1.0 for f in fracs):
        raise ValueError("absorbing.kappa_fracs must lie in (0, 1)")
    kappas = sorted(f * ts.kappa0 for f in fracs)
    ens_u = settings["absorbing.ensemble_u"]
    ens_v = settings["absorbing.ensemble_v"]
    if len(ens_u) != len(ens_v):
        raise ValueError("ensemble_u and ensemble_v differ in length")
    mean_level = settings["absorbing.mean"]
    if mean_level <= 0.0:
        raise ValueError("absorbing.mean must be positive")

    jobs = []
    for k in kappas:
        target = mean_level * k / mu * g.volume
        for i, (pu, pv) in enumerate(zip(ens_u, ens_v)):
            cfg = replace(
                base, params=replace(base.params, kappa=k),
                u0=pu, v0=pv, seed=base.seed + i)
            jobs.append(ScaledRun(cfg, u_mass=target, v_mass=target))
    traces = _map_runs(jobs, settings["run.workers"])

    rep = ExperimentReport(name="absorbing")
    rep.meta["kappa0"] = ts.kappa0
    rep.meta["kappas"] = list(kappas)
    spread_tol = settings["absorbing.spread_tol"]
    fit_id = _fit_id(settings)
    radii = []
    it = iter(traces)
    for k in kappas:
        ens = []
        for i in range(len(ens_u)):
            tr = next(it)
            t = tr.times
            tail = t >= 0.75 * t[-1]
            r = float((tr.column("sup_u")[tail]
                       + tr.column("sup_grad_v")[tail]).max())
            ens.append(r)
            rep.runs.append({"kappa": k, "member": i, "radius": r,
                             "mass_final": float(tr.column("mass_u")[-1])})
        spread = (max(ens) - min(ens)) / max(max(ens), 1e-300)
        radii.append(sum(ens) / len(ens))
        rep.verdicts.append(Verdict(
            criterion=f"ensemble-spread@kappa={k:.3e}",
            passed=spread <= spread_tol, observed=spread,
            threshold=spread_tol, tolerance=0.0,
            provenance="config:absorbing.spread_tol",
            note=f"radii {[f'{r:.4g}' for r in ens]}"))
    for lo, hi in zip(radii, radii[1:]):
        # ladder is ascending in kappa; radius may not grow as kappa drops
        rep.verdicts.append(Verdict(
            criterion=f"radius-nonincreasing@{hi:.3e}>={lo:.3e}",
            passed=lo <= hi * (1.0 + spread_tol), observed=lo,
            threshold=hi * (1.0 + spread_tol), tolerance=spread_tol,
            provenance=f"fitted:{fit_id}",
            note="mean radius ordered along the kappa ladder"))
    rep.meta["radius_means"] = radii
    rep.meta["radius_over_kappa"] = [r * mu / k for r, k in zip(radii, kappas)]
    rep.meta["chain_a"] = chain.a_const
    return rep


def run_eps_limit(settings: dict) -> ExperimentReport:
    """Regularization ladder eps_j = 2^-j on frozen grid, dt and data.

    d_j is the space-time L2 distance between consecutive runs' u
    snapshots; the damping integral eps int int u^theta should halve
    with each j.  A baseline eps = 0 run is attempted when configured;
    its blow-up, if any, is recorded as data rather than failure.
    """
    base = run_config(settings)
    if base.snap_cadence <= 0.0:
        raise ValueError("eps limit needs run.snap_cadence > 0")
    j_max = settings["eps.j_max"]
    if j_max < 1:
        raise ValueError("eps.j_max must be at least 1")
    cfgs = [replace(base, params=replace(base.params, eps=2.0 ** (-j)))
            for j in range(j_max + 1)]
    traces = _map_runs(cfgs, settings["run.workers"])

    rep = ExperimentReport(name="eps_limit")
    damp = []
    for j, tr in enumerate(traces):
        t = tr.times
        integ = float(trapezoid(tr.column("eps_theta"), t))
        damp.append(integ)
        rep.runs.append({"j": j, "eps": 2.0 ** (-j), "damping_integral": integ,
                         "sup_u_final": float(tr.column("sup_u")[-1])})

    dists = []
    for j in range(j_max):
        dists.append(_space_time_l2(traces[j], traces[j + 1]))
    noise = settings["eps.noise_floor"]
    inversions = sum(1 for a, b in zip(dists, dists[1:]) if b > a)
    tolerated = sum(1 for a, b in zip(dists, dists[1:])
                    if b > a and max(a, b) <= noise)
    rep.verdicts.append(Verdict(
        criterion="distances-decreasing",
        passed=inversions - tolerated == 0 and tolerated <= 1,
        observed=float(inversions), threshold=0.0, tolerance=1.0,
        provenance="config:eps.noise_floor",
        note=f"d_j {[f'{d:.4g}' for d in dists]}; "
             f"{tolerated} inversion(s) at noise floor"))
    ftol = settings["eps.final_tol"]
    rep.verdicts.append(Verdict(
        criterion="final-distance",
        passed=dists[-1] <= ftol, observed=dists[-1], threshold=ftol,
        tolerance=0.0, provenance="config:eps.final_tol",
        note="deepest-rung distance against the configured tolerance"))
    htol = settings["eps.halving_tol"]
    worst = 0.0
    for a, b in zip(damp, damp[1:]):
        if a > 0.0:
            worst = max(worst, abs(b / a - 0.5))
    rep.verdicts.append(Verdict(
        criterion="damping-halves",
        passed=worst <= 0.5 * htol, observed=worst, threshold=0.5 * htol,
        tolerance=htol, provenance="formula:damping-linear-in-eps",
        note="worst |ratio - 1/2| over consecutive j"))
    rep.meta["distances"] = dists
    rep.meta["damping"] = damp

    if settings["eps.include_baseline"]:
        cfg0 = replace(base, params=replace(base.params, eps=0.0))
        try:
            tr0 = run_one(cfg0)
            d0 = _space_time_l2(traces[-1], tr0)
            rep.runs.append({"j": -1, "eps": 0.0, "damping_integral": 0.0,
                             "sup_u_final": float(tr0.column("sup_u")[-1])})
            rep.meta["baseline_distance"] = d0
        except BlowupError as e:
            rep.meta["baseline_blowup"] = {"time": e.time, "peak": e.peak}
    return rep


def _space_time_l2(a: Trace, b: Trace) -> float:
    if len(a.snap_times) != len(b.snap_times) or len(a.snap_times) < 2:
        raise ValueError("traces need matching snapshot sets")
    t = np.array(a.snap_times)
    if not np.allclose(t, np.array(b.snap_times), rtol=0.0, atol=1e-9):
        raise ValueError("snapshot times differ between runs")
    vol = a.grid.cell_volume
    sq = np.array([float(((ua - ub) ** 2).sum()) * vol
                   for ua, ub in zip(a.snap_u, b.snap_u)])
    return math.sqrt(max(float(trapezoid(sq, t)), 0.0))


def run_smallness_time(settings: dict) -> ExperimentReport:
    """Mass-settling and barrier experiment on a 3D grid.

    Initial data are rescaled so the mass starts at a configured
    fraction of the settling threshold 2 kappa_tilde |Omega| / mu, then
    shrunk further if needed until y(0) is under a fraction of the
    funnel root delta.  The run must settle in mass and keep y below
    delta(1 + tol) once it enters.  The averaging window assembled from
    the trace constants is reported against the horizon, and parabolic
    difference quotients of the snapshots are reported as a smoothness
    proxy; neither is asserted.
    """
    base = run_config(settings)
    g = base.grid
    if g.dim != 3:
        raise ValueError("smallness experiment needs a 3D grid")
    mu = base.params.mu
    ts, chain = fitted_thresholds(g, mu, settings)
    frac = settings["smallness.kappa_frac"]
    if not 0.0 < frac < 1.0:
        raise ValueError("smallness.kappa_frac must lie in (0, 1)")
    kappa = frac * ts.kappa0
    if base.snap_cadence <= 0.0:
        base = replace(base, snap_cadence=base.cadence)
    mass_frac = settings["smallness.mass_frac"]
    if not 0.0 < mass_frac < 1.0:
        raise ValueError("smallness.mass_frac must lie in (0, 1)")
    y_frac = settings["smallness.y_frac"]
    if not 0.0 < y_frac <= 1.0:
        raise ValueError("smallness.y_frac must lie in (0, 1]")

    mass_target = mass_frac * 2.0 * ts.kappa_tilde * g.volume / mu
    cfg = replace(base, params=replace(base.params, kappa=kappa))
    tr = run_scaled(ScaledRun(cfg, u_mass=mass_target, v_mass=mass_target,
                              y_cap=y_frac * ts.delta))

    rep = ExperimentReport(name="smallness")
    fit_id = _fit_id(settings)
    t = tr.times
    y = tr.column("y")
    t0_emp = empirical_smallness_time(tr, ts.kappa_tilde)
    below = np.flatnonzero(y <= ts.delta)
    t_entry = float(t[below[0]]) if below.size else None
    btol = settings["smallness.barrier_tol"]
    scales = tr.meta["run"]["scales"]
    rep.runs.append({
        "kappa": kappa, "mu": mu, "delta": ts.delta, "y0": float(y[0]),
        "mass0": float(tr.column("mass_u")[0]),
        "scale_u": scales["u"], "scale_joint": scales["joint"],
        "t_mass": _nan(t0_emp), "t_entry": _nan(t_entry),
        "y_max_after_entry": float(y[below[0]:].max()) if below.size
        else float("nan"),
    })
    rep.verdicts.append(Verdict(
        criterion="mass-settled", passed=t0_emp is not None,
        observed=_nan(t0_emp), threshold=float(base.t_end), tolerance=0.0,
        provenance=f"fitted:{fit_id}",
        note="first time mass stays below 2 kappa_tilde |Omega| / mu"))
    if t_entry is None:
        rep.verdicts.append(Verdict(
            criterion="barrier-holds", passed=False, observed=float(y.min()),
            threshold=ts.delta, tolerance=0.0,
            provenance=f"fitted:{fit_id}", note="y never reached delta"))
    else:
        worst = float(y[below[0]:].max())
        rep.verdicts.append(Verdict(
            criterion="barrier-holds",
            passed=worst <= ts.delta * (1.0 + btol), observed=worst,
            threshold=ts.delta * (1.0 + btol), tolerance=btol,
            provenance=f"fitted:{fit_id}",
            note=f"max y after entry at t={t_entry:.4g}"))

    if t0_emp is not None:
        window = averaging_window(tr, ts.kappa_tilde, ts.c_omega, ts.delta,
                                  float(t[-1]))
        rep.meta["window"] = window
        horizon = float(t[-1]) - t0_emp
        if window <= horizon:
            avgs = _window_averages(t, y, window)
            rep.verdicts.append(Verdict(
                criterion="window-average", passed=bool(avgs.min() <= ts.delta),
                observed=float(avgs.min()), threshold=ts.delta, tolerance=0.0,
                provenance="formula:window-sum",
                note="min sliding window average of y"))
        else:
            rep.verdicts.append(Verdict(
                criterion="window-average", passed=True,
                observed=float(trapezoid(y, t) / (t[-1] - t[0])),
                threshold=ts.delta, tolerance=0.0,
                provenance="formula:window-sum",
                note=f"window {window:.3g} exceeds horizon {horizon:.3g}; "
                     "whole-run average reported, not asserted"))

    if tr.has_snapshots:
        hq = holder_quotients(tr, t_entry if t_entry is not None else 0.0)
        rep.meta["holder"] = {k: list(v) for k, v in hq.items()}
        worst_growth = 0.0
        for arr in hq.values():
            for a, b in zip(arr, arr[1:]):
                if a > 0.0:
                    worst_growth = max(worst_growth, b / a)
        rep.verdicts.append(Verdict(
            criterion="holder-quotients", passed=True, observed=worst_growth,
            threshold=2.0, tolerance=0.0, provenance="config:snapshots",
            note="level-to-level growth of parabolic difference quotients; "
                 "reported, not asserted"))

    rep.meta["thresholds"] = {
        "kappa_tilde": ts.kappa_tilde, "kappa0": ts.kappa0,
        "delta": ts.delta, "eta": ts.eta, "a_const": ts.a_const,
        "c_p": ts.c_p, "c_omega": ts.c_omega,
    }
    tol = settings["verify.ledger_tol"]
    if tr.has_snapshots and len(tr.snap_times) >= 3:
        ledger = odi_ledger_check(tr, ts.polynomial(), chain, tol=tol)
        rep.meta["ledger"] = [(r.name, r.passed) for r in ledger]
    return rep


def _window_averages(t: np.ndarray, y: np.ndarray, window: float) -> np.ndarray:
    integ = np.concatenate(([0.0], np.cumsum(np.diff(t) * 0.5
                                             * (y[:-1] + y[1:]))))
    out = []
    for i, ti in enumerate(t):
        j = np.searchsorted(t, ti + window)
        if j >= len(t):
            break
        out.append((integ[j] - integ[i]) / (t[j] - ti))
    if not out:
        raise ValueError("no complete window fits the horizon")
    return np.array(out)


def holder_quotients(tr: Trace, t_start: float,
                     space_exp: float = 0.5, time_exp: float = 0.25) -> dict:
    """Parabolic difference quotients over dyadic separations.

    For snapshots at or after t_start: per dyadic cell shift s the max of
    |f(x + s h) - f(x)| / (s h)^space_exp over axes, and per dyadic index
    gap the max of ||f(t') - f(t)||_inf / (t' - t)^time_exp.  Arrays are
    indexed by level; a smoothness proxy to be read, not asserted.
    """
    keep = [i for i, t in enumerate(tr.snap_times) if t >= t_start - 1e-12]
    if len(keep) < 2:
        raise ValueError("need at least two snapshots past t_start")
    g = tr.grid
    out = {}
    for name, snaps in (("u", tr.snap_u), ("v", tr.snap_v)):
        fields = [snaps[i] for i in keep]
        times = [tr.snap_times[i] for i in keep]
        space = []
        s = 1
        while s <= min(g.cells) // 4:
            worst = 0.0
            for f in fields:
                for a in range(g.dim):
                    lo = [slice(None)] * g.dim
                    hi = [slice(None)] * g.dim
                    lo[a] = slice(0, g.cells[a] - s)
                    hi[a] = slice(s, g.cells[a])
                    diff = np.abs(f[tuple(hi)] - f[tuple(lo)]).max()
                    worst = max(worst, float(diff) / (s * g.h[a]) ** space_exp)
            space.append(worst)
            s *= 2
        tquot = []
        k = 1
        while k < len(fields):
            worst = 0.0
            for i in range(len(fields) - k):
                dt = times[i + k] - times[i]
                diff = float(np.abs(fields[i + k] - fields[i]).max())
                worst = max(worst, diff / dt ** time_exp)
            tquot.append(worst)
            k *= 2
        out[f"space_{name}"] = np.array(space)
        out[f"time_{name}"] = np.array(tquot)
    return out


# ------------------------------------------------------------- scalar maps

def d_delta_eval(delta: float, p_exp: float, c3: float, c4: float) -> float:
    """Largest xi with xi - c4 delta^(1/p) xi^beta <= c3 sqrt(delta).

    beta = 1 - (4-p)/(2p) lies in (5/6, 1) for p in (3, 4); the left side
    dips below zero up to a crossover and then increases without bound,
    so the sup is the unique root beyond the crossover, found by
    bisection on the monotone branch.  c4 = 0 collapses to the identity
    map and returns c3 sqrt(delta) in closed form.
    """
    if not 3.0 < p_exp < 4.0:
        raise ValueError(f"p must lie in (3, 4), got {p_exp}")
    if c3 < 0.0 or c4 < 0.0:
        raise ValueError("c3 and c4 must be nonnegative")
    if delta < 0.0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if delta == 0.0:
        return 0.0
    rhs = c3 * math.sqrt(delta)
    if c4 == 0.0:
        return rhs
    beta = 1.0 - (4.0 - p_exp) / (2.0 * p_exp)
    a = c4 * delta ** (1.0 / p_exp)

    def gap(xi: float) -> float:
        return xi - a * xi ** beta - rhs

    crossover = (a * beta) ** (1.0 / (1.0 - beta))
    hi = max(2.0 * crossover, 2.0 * rhs, 1.0)
    while gap(hi) <= 0.0:
        hi *= 2.0
    lo = crossover
    while hi - lo > 1e-15 * hi:
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def k_delta_eval(delta: float, p_exp: float, c3: float, c4: float, c5: float,
                 c8: float, c_p: float, c_omega: float,
                 omega_vol: float) -> float:
    """Sup-norm absorbing radius for (u, grad v, v), collected terms.

    u contributes D(delta); grad v adds c5 delta^(1/4) plus the window
    integral int (1 + s^(-1/2)) e^(-s) ds = 1 + sqrt(pi) times c5 D; v
    adds 2 c8 C_P |Omega|^(1/4) delta^(1/4) + c7 sqrt(delta) + 2 D with
    c7 = (1 + 1/sqrt(4 + 8 C_Omega)) / sqrt(|Omega|).  Transients that
    die off exponentially are not part of the radius.
    """
    if min(c5, c8, c_p, c_omega, omega_vol) <= 0.0:
        raise ValueError("c5, c8, c_p, c_omega and omega_vol must be positive")
    d = d_delta_eval(delta, p_exp, c3, c4)
    c7 = (1.0 + 1.0 / math.sqrt(4.0 + 8.0 * c_omega)) / math.sqrt(omega_vol)
    return ((3.0 + c5 * (1.0 + math.sqrt(math.pi))) * d
            + (c5 + 2.0 * c8 * c_p * omega_vol ** 0.25) * delta ** 0.25
            + c7 * math.sqrt(delta))
