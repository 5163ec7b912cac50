"""Spectral propagators: exactness, smoothing rates, Duhamel closure."""

import math

import numpy as np
import pytest

from kslab.functionals import Recorder
from kslab.grid import Field, Grid, axis_eigenvalues
from kslab.semigroup import (duhamel_check, semigroup_apply, smoothing_exponent,
                             smoothing_fit, smoothing_fits_to_csv,
                             spectral_kernel, window_integral_finite)
from kslab.solver import ModelParams, State, StepperConfig, run


def _rand(g, rng):
    return Field(g, rng.standard_normal(g.cells))


# ------------------------------------------------------- complete kernels

def test_identity_at_time_zero(g2, rng):
    kern = spectral_kernel(g2)
    f = _rand(g2, rng)
    out = semigroup_apply(kern, 0.0, f)
    assert np.allclose(out.values, f.values, rtol=0.0, atol=1e-13)


def test_constant_invariance_and_shift(g1):
    kern = spectral_kernel(g1)
    f = Field(g1, np.full(g1.cells, 3.0))
    out = semigroup_apply(kern, 2.5, f)
    assert np.allclose(out.values, 3.0, rtol=1e-12)
    damped = semigroup_apply(kern, 2.5, f, shift=1.0)
    assert np.allclose(damped.values, 3.0 * math.exp(-2.5), rtol=1e-12)


@pytest.mark.parametrize("j", [1, 3])
def test_single_mode_exact_decay(g1, j):
    # cell-centered cosines are exact stencil eigenvectors
    kern = spectral_kernel(g1)
    lam = axis_eigenvalues(g1.cells[0], g1.h[0])[j]
    x = g1.mesh()[0]
    f = Field(g1, np.cos(j * math.pi * x / g1.extents[0]))
    out = semigroup_apply(kern, 0.7, f)
    assert np.allclose(out.values, math.exp(-lam * 0.7) * f.values,
                       rtol=1e-10, atol=1e-13)


def test_semigroup_property(g2, rng):
    kern = spectral_kernel(g2)
    f = _rand(g2, rng)
    one = semigroup_apply(kern, 0.3, semigroup_apply(kern, 0.2, f))
    two = semigroup_apply(kern, 0.5, f)
    scale = float(np.abs(two.values).max())
    assert float(np.abs(one.values - two.values).max()) <= 1e-10 * max(scale, 1.0)


def test_positivity_preserved(g2, rng):
    kern = spectral_kernel(g2)
    f = Field(g2, np.abs(rng.standard_normal(g2.cells)))
    sup = float(f.values.max())
    for t in (0.01, 0.1, 1.0):
        out = semigroup_apply(kern, t, f)
        assert float(out.values.min()) >= -1e-12 * sup


def test_sup_contraction(g1, rng):
    kern = spectral_kernel(g1)
    f = _rand(g1, rng)
    sup = float(np.abs(f.values).max())
    for t in (0.05, 0.5, 5.0):
        out = semigroup_apply(kern, t, f)
        assert float(np.abs(out.values).max()) <= sup * (1.0 + 1e-12)


def test_negative_time_rejected(g1, rng):
    with pytest.raises(ValueError, match="t must be"):
        semigroup_apply(spectral_kernel(g1), -0.1, _rand(g1, rng))


def test_grid_mismatch_rejected(g1, g2, rng):
    with pytest.raises(ValueError, match="different grid"):
        semigroup_apply(spectral_kernel(g1), 0.1, _rand(g2, rng))


# ------------------------------------------------------ truncated kernels

def test_truncated_low_mode_exact(g1):
    # data inside the retained span propagates exactly, remainder bound 0
    kern = spectral_kernel(g1, modes=4)
    lam = axis_eigenvalues(g1.cells[0], g1.h[0])[1]
    x = g1.mesh()[0]
    f = Field(g1, 2.0 + np.cos(math.pi * x / g1.extents[0]))
    out, bound = semigroup_apply(kern, 0.4, f, return_bound=True)
    exact = 2.0 + math.exp(-lam * 0.4) * np.cos(math.pi * x / g1.extents[0])
    assert bound <= 1e-10
    assert np.allclose(out.values, exact, rtol=1e-9, atol=1e-11)


def test_truncated_error_within_bound(g1, rng):
    full = spectral_kernel(g1)
    kern = spectral_kernel(g1, modes=6)
    f = Field(g1, np.abs(rng.standard_normal(g1.cells)))
    for t in (0.05, 0.3):
        out, bound = semigroup_apply(kern, t, f, return_bound=True)
        ref = semigroup_apply(full, t, f)
        err = math.sqrt(float(((out.values - ref.values) ** 2).sum())
                        * g1.cell_volume)
        assert err <= bound * (1.0 + 1e-9) + 1e-12


def test_truncated_requires_bound_request(g1, rng):
    kern = spectral_kernel(g1, modes=4)
    with pytest.raises(ValueError, match="remainder bound"):
        semigroup_apply(kern, 0.1, _rand(g1, rng))


def test_kernel_mode_validation(g1):
    with pytest.raises(ValueError, match="modes"):
        spectral_kernel(g1, modes=0)
    assert spectral_kernel(g1, modes=g1.size).complete
    assert spectral_kernel(g1, modes=10 * g1.size).complete
    assert not spectral_kernel(g1, modes=3).complete


# ------------------------------------------------------------ rate fitting

def test_smoothing_exponent_values():
    assert smoothing_exponent(1, 2.0) == 0.75
    assert smoothing_exponent(1, 4.0) == 0.625
    assert smoothing_exponent(2, 4.0) == 0.75
    assert smoothing_exponent(1, 64.0) == pytest.approx(0.5078125)


def test_window_integral_truth_table():
    # converges exactly when q > n + 2
    assert window_integral_finite(1, 4.0)
    assert not window_integral_finite(3, 4.0)
    assert window_integral_finite(3, 5.001)
    assert not window_integral_finite(3, 5.0)
    assert not window_integral_finite(1, 1.0)


def test_smoothing_fit_frozen_values():
    g = Grid(1, (2.0 * math.pi,), (256,))
    fit = smoothing_fit(spectral_kernel(g), 2.0, trials=20, seed=0)
    assert fit.alpha_expected == 0.75
    assert fit.alpha_fit == pytest.approx(0.74, abs=1e-9)
    assert fit.c_fit == pytest.approx(0.16231208382256476, rel=1e-9)
    assert fit.grad_contraction <= 1.0 + 1e-12


def test_smoothing_fit_matches_rate_1d():
    g = Grid(1, (2.0 * math.pi,), (256,))
    kern = spectral_kernel(g)
    for q in (2.0, 4.0):
        fit = smoothing_fit(kern, q, trials=40, seed=0)
        rel = abs(fit.alpha_fit - fit.alpha_expected) / fit.alpha_expected
        assert rel <= 0.15, (q, fit.alpha_fit, fit.alpha_expected)


def test_smoothing_fit_matches_rate_2d():
    g = Grid(2, (2.0 * math.pi, 2.0 * math.pi), (128, 128))
    fit = smoothing_fit(spectral_kernel(g), 4.0, trials=40, seed=0)
    rel = abs(fit.alpha_fit - fit.alpha_expected) / fit.alpha_expected
    assert rel <= 0.15, (fit.alpha_fit, fit.alpha_expected)


def test_smoothing_fit_large_q():
    # q -> inf pushes the rate toward the pure 1/2 power
    g = Grid(1, (2.0 * math.pi,), (256,))
    fit = smoothing_fit(spectral_kernel(g), 64.0, trials=40, seed=0)
    rel = abs(fit.alpha_fit - fit.alpha_expected) / fit.alpha_expected
    assert rel <= 0.15


def test_smoothing_fit_deterministic():
    g = Grid(1, (2.0 * math.pi,), (128,))
    one = smoothing_fit(spectral_kernel(g), 2.0, trials=12, seed=3)
    two = smoothing_fit(spectral_kernel(g), 2.0, trials=12, seed=3)
    assert one.alpha_fit == two.alpha_fit
    assert one.c_fit == two.c_fit
    assert np.array_equal(one.ratios, two.ratios)


def test_smoothing_fit_rejections(g1, box3):
    with pytest.raises(ValueError, match="complete kernel"):
        smoothing_fit(spectral_kernel(g1, modes=4), 2.0)
    with pytest.raises(ValueError, match="q must be"):
        smoothing_fit(spectral_kernel(g1), 0.5)
    with pytest.raises(ValueError, match="trials"):
        smoothing_fit(spectral_kernel(g1), 2.0, trials=5)
    with pytest.raises(ValueError, match="collapses"):
        smoothing_fit(spectral_kernel(box3), 2.0)


def test_smoothing_fits_csv_contract(tmp_path):
    g = Grid(1, (2.0 * math.pi,), (128,))
    fit = smoothing_fit(spectral_kernel(g), 2.0, trials=12, seed=3)
    path = tmp_path / "fits.csv"
    smoothing_fits_to_csv([fit], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "q,alpha_expected,alpha_fit,c_fit,rel_error"
    row = lines[1].split(",")
    assert len(row) == 5
    assert float(row[0]) == 2.0
    assert float(row[4]) == pytest.approx(
        abs(fit.alpha_fit - fit.alpha_expected) / fit.alpha_expected, rel=1e-12)


# --------------------------------------------------------------- Duhamel

def _duhamel_trace(g, dt, u_amp=0.3):
    x = g.mesh()[0]
    params = ModelParams(kappa=0.05, mu=1.0)
    u0 = Field(g, 0.8 + u_amp * np.cos(x)) if u_amp else Field(g, np.zeros(g.cells))
    v0 = Field(g, 0.5 + 0.1 * np.cos(2.0 * x))
    s = State(u0, v0, 0.0, params)
    rec = Recorder(g, s.params, snap_stride=1)
    run(s, 1.0, StepperConfig(dt=dt), observer=rec, cadence=10.0 * dt)
    return rec.trace


def test_duhamel_deviation_halves_with_dt():
    # the reconstruction is exact in time, so the solver splitting error
    # dominates and scales linearly in dt
    g = Grid(1, (2.0 * math.pi,), (64,))
    kern = spectral_kernel(g)
    devs = [duhamel_check(kern, _duhamel_trace(g, dt)) for dt in (2e-3, 1e-3)]
    assert devs[0] > 0.0
    ratio = devs[1] / devs[0]
    assert 0.4 <= ratio <= 0.65, (devs, ratio)


def test_duhamel_zero_source_still_first_order():
    g = Grid(1, (2.0 * math.pi,), (64,))
    kern = spectral_kernel(g)
    devs = [duhamel_check(kern, _duhamel_trace(g, dt, u_amp=0.0))
            for dt in (2e-3, 1e-3)]
    ratio = devs[1] / devs[0]
    assert 0.4 <= ratio <= 0.65, (devs, ratio)


def test_duhamel_steady_state_is_tiny():
    g = Grid(1, (2.0 * math.pi,), (64,))
    params = ModelParams(kappa=0.05, mu=1.0)
    level = params.kappa / params.mu
    s = State(Field(g, np.full(g.cells, level)),
              Field(g, np.full(g.cells, level)), 0.0, params)
    rec = Recorder(g, s.params, snap_stride=1)
    run(s, 1.0, StepperConfig(dt=2e-3), observer=rec, cadence=0.02)
    assert duhamel_check(spectral_kernel(g), rec.trace) <= 5e-6


def test_duhamel_guards(g1, g2):
    params = ModelParams(kappa=0.0, mu=1.0)
    with pytest.raises(ValueError, match="complete kernel"):
        duhamel_check(spectral_kernel(g1, modes=4),
                      Recorder(g1, params.resolved(1)).trace)
    with pytest.raises(ValueError, match="no snapshots"):
        duhamel_check(spectral_kernel(g1), Recorder(g1, params.resolved(1)).trace)
    tr = _duhamel_trace(Grid(1, (2.0 * math.pi,), (64,)), 1e-2)
    with pytest.raises(ValueError, match="grids differ"):
        duhamel_check(spectral_kernel(g2), tr)
