"""Time the compiled stencil core against the numpy fallback.

Runs every kernel both ways on a few representative shapes, checks the
outputs agree to rounding, and prints per-call times plus the speedup.
Usage: python3 benchmarks/bench_kernels.py [--repeats-scale N]
"""

import argparse
import time

import numpy as np

from kslab._kernels import fallback

try:
    from kslab._kernels import _stencil_core as compiled
except ImportError:
    compiled = None

SHAPES = [
    ((256,), (2.0 * np.pi / 256,)),
    ((128, 128), (2.0 * np.pi / 128, 2.0 * np.pi / 128)),
    ((16, 16, 16), (np.pi / 16,) * 3),
    ((32, 32, 32), (np.pi / 32,) * 3),
]


def _fields(shape, seed):
    rng = np.random.default_rng(seed)
    u = np.abs(rng.standard_normal(shape)) + 0.1
    v = np.abs(rng.standard_normal(shape)) + 0.1
    return np.ascontiguousarray(u), np.ascontiguousarray(v)


def _calls(mod, u, v, hs):
    return {
        "laplacian": lambda: mod.laplacian(u, hs),
        "gradient": lambda: mod.gradient(u, hs),
        "upwind_flux_div": lambda: mod.upwind_flux_div(u, v, hs),
        "explicit_stage": lambda: mod.explicit_stage(
            u, v, hs, 1e-3, 0.05, 1.0, 0.0, float(u.ndim + 3)),
        "max_grad_mag": lambda: mod.max_grad_mag(v, hs),
    }


def _best(fn, repeats):
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def _deviation(a, b):
    if isinstance(a, tuple):
        return max(_deviation(x, y) for x, y in zip(a, b))
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats-scale", type=int, default=1,
                    help="multiply the auto-chosen repeat counts")
    args = ap.parse_args()

    if compiled is None:
        print("compiled core not built; timing the fallback only")
    header = f"{'shape':>12} {'kernel':>16} {'fallback':>12}"
    if compiled is not None:
        header += f" {'compiled':>12} {'speedup':>8} {'max dev':>10}"
    print(header)
    for shape, hs in SHAPES:
        u, v = _fields(shape, seed=hash(shape) % 2**32)
        repeats = max(5, args.repeats_scale * int(2e6 / u.size))
        slow = _calls(fallback, u, v, hs)
        fast = _calls(compiled, u, v, hs) if compiled is not None else None
        for name in slow:
            t_slow = _best(slow[name], repeats)
            row = (f"{'x'.join(map(str, shape)):>12} {name:>16} "
                   f"{t_slow * 1e6:>10.1f}us")
            if fast is not None:
                dev = _deviation(slow[name](), fast[name]())
                t_fast = _best(fast[name], repeats)
                row += (f" {t_fast * 1e6:>10.1f}us {t_slow / t_fast:>7.1f}x "
                        f"{dev:>10.2e}")
            print(row)


if __name__ == "__main__":
    main()
