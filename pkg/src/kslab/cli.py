"""Command-line surface.

Subcommands: simulate, verify, thresholds, experiment <name>, semigroup,
plot.  Every subcommand reads one config file plus --key=value overrides
against the same schema; unknown keys are rejected by name.  --config
accepts a path or the bare name of a bundled config (see kslab.configs).
Exit status 0 means every checked criterion passed, 2 means a criterion
failed, 1 means the invocation itself failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import configs
from . import experiments as ex
from .functionals import _fmt, bounds_to_csv, verify_apriori_bounds
from .grid import Grid
from .odi import odi_ledger_check, thresholds_to_csv
from .semigroup import smoothing_fit, smoothing_fits_to_csv, spectral_kernel
from .solver import BlowupError

_EXPERIMENTS = {
    "decay": ex.run_decay_experiment,
    "absorbing": ex.run_absorbing_experiment,
    "epslimit": ex.run_eps_limit,
    "smallness": ex.run_smallness_time,
}


def main(argv=None) -> int:
    try:
        return _dispatch(sys.argv[1:] if argv is None else list(argv))
    except SystemExit as e:
        # argparse exits with 2 on usage errors; 2 is reserved for failed
        # criteria, so fold usage problems into the invocation-error code
        code = e.code if isinstance(e.code, int) else 1
        return 0 if code == 0 else 1
    except BlowupError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _dispatch(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="kslab",
        description="laboratory runs for the logistic chemotaxis system")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "thresholds", "semigroup", "plot"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
    sp = sub.add_parser("verify")
    sp.add_argument("--config", default=None)
    sp.add_argument("--trace", default=None,
                    help="directory holding the trace (default: out.dir)")
    sp.add_argument("--tag", default="run")
    sp = sub.add_parser("experiment")
    sp.add_argument("name", choices=sorted(_EXPERIMENTS))
    sp.add_argument("--config", default=None)

    args, extra = parser.parse_known_args(argv)
    for ov in extra:
        if not (ov.startswith("--") and "=" in ov):
            raise ValueError(f"unrecognized argument {ov!r} "
                             "(overrides look like --key=value)")
    path = configs.resolve(args.config) if args.config else None
    settings = ex.load_settings(path, tuple(extra))
    out = Path(settings["out.dir"])

    if args.command == "simulate":
        return _simulate(settings, out)
    if args.command == "verify":
        tdir = Path(args.trace) if args.trace else out
        return _verify(settings, tdir, args.tag)
    if args.command == "thresholds":
        return _thresholds(settings, out)
    if args.command == "experiment":
        return _experiment(settings, out, args.name)
    if args.command == "semigroup":
        return _semigroup(settings, out)
    return _plot(out)


def _simulate(settings, out: Path) -> int:
    cfg = ex.run_config(settings)
    trace = ex.run_one(cfg)
    ex.write_run_outputs(trace, out)
    last = trace.records[-1]
    print(f"wrote {len(trace.records)} records, {len(trace.snap_times)} "
          f"snapshots to {out}")
    print(f"final t={last.t:g} sup_u={last.sup_u:.6g} sup_v={last.sup_v:.6g} "
          f"mass_u={last.mass_u:.6g}")
    return 0


def _verify(settings, tdir: Path, tag: str) -> int:
    trace = ex.load_run(tdir, tag)
    reports = verify_apriori_bounds(trace, tol=settings["verify.tol"])
    bounds_to_csv(reports, tdir / "bounds.csv")
    if trace.grid.dim == 3 and len(trace.snap_times) >= 3:
        ts, chain = ex.fitted_thresholds(trace.grid, trace.params.mu, settings)
        ledger = odi_ledger_check(trace, ts.polynomial(), chain,
                                  tol=settings["verify.ledger_tol"])
        bounds_to_csv(ledger, tdir / "ledger.csv")
        reports = reports + ledger
    ok = True
    for r in reports:
        ok = ok and r.passed
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} "
              f"margin={r.margin:.4g} tol={r.tolerance:.4g}")
    return 0 if ok else 2


def _thresholds(settings, out: Path) -> int:
    g = Grid(settings["grid.dim"], settings["grid.extents"],
             settings["grid.cells"])
    if g.dim != 3:
        raise ValueError("threshold fitting needs a 3D grid in the config")
    ts, chain = ex.fitted_thresholds(g, settings["model.mu"], settings)
    out.mkdir(parents=True, exist_ok=True)
    thresholds_to_csv([(ts, chain)], out / "thresholds.csv")
    _dmap_csv(settings, ts, out / "dmap.csv")
    print(f"kappa_tilde={ts.kappa_tilde:.6g} kappa0={ts.kappa0:.6g} "
          f"delta={ts.delta:.6g} eta={ts.eta:.6g} A={ts.a_const:.6g}")
    print(f"wrote thresholds.csv and dmap.csv to {out}")
    return 0


def _dmap_csv(settings, ts, path) -> None:
    p = settings["dmap.p"]
    c3, c4 = settings["dmap.c3"], settings["dmap.c4"]
    c5, c8 = settings["dmap.c5"], settings["dmap.c8"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "d_value", "k_value"])
        for k in range(1, 9):
            delta = 10.0 ** (-k)
            d = ex.d_delta_eval(delta, p, c3, c4)
            kk = ex.k_delta_eval(delta, p, c3, c4, c5, c8, ts.c_p,
                                 ts.c_omega, ts.omega_vol)
            w.writerow([_fmt(delta), _fmt(d), _fmt(kk)])


def _experiment(settings, out: Path, name: str) -> int:
    rep = _EXPERIMENTS[name](settings)
    out.mkdir(parents=True, exist_ok=True)
    ex.report_to_csv(rep, out / f"{name}_report.csv")
    if rep.runs:
        ex.runs_to_csv(rep, out / f"{name}_runs.csv")
    (out / f"{name}_meta.json").write_text(
        json.dumps(rep.meta, indent=2, sort_keys=True, default=_jsonable)
        + "\n")
    for v in rep.verdicts:
        print(f"{v.criterion}: {'PASS' if v.passed else 'FAIL'} "
              f"observed={v.observed:.4g} threshold={v.threshold:.4g} "
              f"[{v.provenance}]")
    return 0 if rep.passed else 2


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [float(x) for x in obj]
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _semigroup(settings, out: Path) -> int:
    g = Grid(settings["grid.dim"], settings["grid.extents"],
             settings["grid.cells"])
    kern = spectral_kernel(g)
    fits = [smoothing_fit(kern, q, trials=settings["semigroup.trials"],
                          seed=settings["semigroup.seed"])
            for q in settings["semigroup.qs"]]
    out.mkdir(parents=True, exist_ok=True)
    smoothing_fits_to_csv(fits, out / "semigroup.csv")
    for f in fits:
        rel = abs(f.alpha_fit - f.alpha_expected) / f.alpha_expected
        print(f"q={f.q:g}: alpha_fit={f.alpha_fit:.4g} "
              f"expected={f.alpha_expected:.4g} rel={rel:.3f}")
    return 0


_PLOT_SCRIPT = '''\
"""Plots for kslab CSV outputs; reads only the CSVs next to this file."""

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).parent


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    return header, data


def column(header, data, name, cast=float):
    i = header.index(name)
    return [cast(row[i]) for row in data]


def plot_trace(path):
    header, data = read_csv(path)
    t = column(header, data, "t")
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, names in zip(
            axes.flat,
            (("sup_u", "sup_v"), ("mass_u", "mass_v"),
             ("u_l2sq", "grad_v_l4", "y"), ("energy",))):
        for name in names:
            ax.plot(t, column(header, data, name), label=name)
        ax.set_xlabel("t")
        ax.legend()
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"))
    plt.close(fig)


def plot_dmap(path):
    header, data = read_csv(path)
    fig, ax = plt.subplots()
    deltas = column(header, data, "delta")
    ax.loglog(deltas, column(header, data, "d_value"), "o-", label="D")
    ax.loglog(deltas, column(header, data, "k_value"), "s-", label="K")
    ax.set_xlabel("delta")
    ax.legend()
    fig.savefig(path.with_suffix(".png"))
    plt.close(fig)


def main():
    for path in sorted(HERE.glob("*.csv")):
        header, _ = read_csv(path)
        if header[:2] == ["t", "mass_u"]:
            plot_trace(path)
        elif header[:2] == ["delta", "d_value"]:
            plot_dmap(path)
    print("plots written next to their CSVs")


if __name__ == "__main__":
    main()
'''


def _plot(out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "plot_all.py").write_text(_PLOT_SCRIPT)
    print(f"wrote {out / 'plot_all.py'} (needs matplotlib; run with python3)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
