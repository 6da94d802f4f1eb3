import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scatter_ra.baseline import (
    AffineCalibration,
    GradientSeries,
    apply_calibration,
    baseline_ra,
    fit_affine_calibration,
    gradients,
    highpass_roughness,
    integrate,
    interpolate_gaps,
    mirror_extend,
    ra,
    threshold,
)
from scatter_ra.core_data import LaserReading, SurfaceProfile, build_sensor_geometry
from scatter_ra.errors import DegenerateFitError, InvariantError, NoValidGradientError

GEOM = build_sensor_geometry()


def test_threshold_hand_example():
    out = threshold(np.array([[5, 3, 7, 3, 9]]), theta=2)
    assert out.tolist() == [[2, 0, 4, 0, 6]]


def test_threshold_theta_one_subtracts_minimum():
    assert threshold(np.array([[5, 3, 7, 3, 9]]), theta=1).tolist() == [[2, 0, 4, 0, 6]]
    assert threshold(np.array([[5, 3, 7, 4, 9]]), theta=2).tolist() == [[1, 0, 3, 0, 5]]


def test_threshold_rejects_bad_theta():
    with pytest.raises(InvariantError):
        threshold(np.ones((20, 4)), theta=0)
    with pytest.raises(InvariantError):
        threshold(np.ones((20, 4)), theta=5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (20, 17)), st.integers(1, 17))
def test_threshold_is_nonnegative_with_theta_zeros(x, theta):
    out = threshold(x, theta)
    assert out.min() >= 0
    assert np.all((out == 0).sum(axis=1) >= theta)


def test_gradient_symmetric_column_is_zero():
    xt = np.zeros((20, 1))
    xt[3, 0] = xt[16, 0] = 40.0
    g = gradients(xt, GEOM)
    assert abs(g.values[0]) <= 1e-12


def test_gradient_single_sensor():
    xt = np.zeros((20, 1))
    xt[11, 0] = 17.0  # +10.1 degrees
    g = gradients(xt, GEOM)
    assert abs(g.values[0] - math.radians(5.05)) <= 1e-12
    assert g.degrees[0] == pytest.approx(5.05, abs=1e-12)


def test_gradient_weighted_mean():
    xt = np.zeros((20, 1))
    xt[10, 0], xt[12, 0] = 1.0, 3.0  # 3.4 and 16.8 degrees
    expected = 0.5 * (1 * 3.4 + 3 * 16.8) / 4
    assert gradients(xt, GEOM).degrees[0] == pytest.approx(expected, abs=1e-12)


def test_dark_columns_are_masked():
    xt = np.zeros((20, 3))
    xt[10, 1] = 5
    g = gradients(xt, GEOM)
    assert g.valid_mask.tolist() == [False, True, False]


@settings(max_examples=40, deadline=None)
@given(arrays(np.int64, (20, 6), elements=st.integers(0, 255)), st.floats(0.01, 100))
def test_gradient_scale_invariant(xt, c):
    g1 = gradients(xt, GEOM)
    g2 = gradients(c * xt, GEOM)
    assert np.array_equal(g1.valid_mask, g2.valid_mask)
    np.testing.assert_allclose(g1.values[g1.valid_mask], g2.values[g2.valid_mask], rtol=1e-9, atol=1e-12)


def test_interpolation_linear_inside_constant_at_ends():
    v = np.array([np.nan, 1.0, np.nan, 3.0, np.nan, np.nan])
    g = interpolate_gaps(GradientSeries(np.nan_to_num(v), ~np.isnan(v)))
    np.testing.assert_allclose(g.values, [1.0, 1.0, 2.0, 3.0, 3.0, 3.0])
    assert g.valid_mask.all()


def test_interpolation_all_dark_raises():
    with pytest.raises(NoValidGradientError):
        interpolate_gaps(GradientSeries(np.zeros(4), np.zeros(4, dtype=bool)))


def test_integrate_constant_slope():
    g = GradientSeries(np.full(5, math.atan(0.25)), np.ones(5, dtype=bool))
    np.testing.assert_allclose(integrate(g, 0.8).heights, 0.2 * np.arange(1, 6), rtol=0, atol=1e-14)


def test_integrate_guards_steep_gradient():
    with pytest.raises(InvariantError):
        integrate(GradientSeries(np.array([math.radians(89.95)]), np.array([True])))


def test_mirror_extend_layout_and_seams():
    e = mirror_extend([1.0, 2.0, 3.0])
    assert e.tolist() == [3, 2, 1, 1, 2, 3, 3, 2, 1]
    assert e[2] == e[3] and e[5] == e[6]


def _sine(wavelength, n=4096, step=0.8, amp=1.0):
    x = np.arange(n) * step
    return amp * np.sin(2 * np.pi * x / wavelength)


def _amplitude_at(signal, wavelength, step=0.8):
    x = np.arange(signal.shape[0]) * step
    A = np.column_stack([np.sin(2 * np.pi * x / wavelength), np.cos(2 * np.pi * x / wavelength)])
    coef, *_ = np.linalg.lstsq(A, signal, rcond=None)
    return float(np.hypot(*coef))


@pytest.mark.parametrize("phase", [0.0, 0.3, 1.0, np.pi / 2])
def test_filter_removes_long_wavelength(phase):
    x = np.arange(4096) * 0.8
    out = highpass_roughness(SurfaceProfile(np.sin(2 * np.pi * x / 200.0 + phase)), 80.0).heights
    assert _amplitude_at(out, 200.0) < 0.01
    # the mirror seams leak broadband energy near the ends; the interior is clean
    assert np.abs(out[1024:-1024]).max() < 0.01


def test_filter_keeps_short_wavelength():
    src = _sine(20.0)
    out = highpass_roughness(SurfaceProfile(src), 80.0).heights
    core = slice(200, -200)
    err = np.sqrt(np.mean((out[core] - src[core]) ** 2)) / np.sqrt(np.mean(src[core] ** 2))
    assert err < 0.02


@pytest.mark.parametrize("n", [2, 7, 100, 4096])
@pytest.mark.parametrize("c", [0.0, 1.0, -12.345, 1e6])
def test_filter_constant_profile_has_zero_ra(n, c):
    assert ra(highpass_roughness(SurfaceProfile(np.full(n, c)))) == 0.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(4, 200), elements=st.floats(-10, 10)), st.floats(-100, 100))
def test_filter_ignores_global_offset(h, c):
    a = highpass_roughness(SurfaceProfile(h)).heights
    b = highpass_roughness(SurfaceProfile(h + c)).heights
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_filter_keeps_cutoff_wavelength_itself():
    # span 3N * step = 3 * 100 * 0.8 = 240 um; bin 3 is exactly 80 um
    n = 100
    x = np.arange(3 * n) * 0.8
    full = np.cos(2 * np.pi * x / 80.0)
    h = full[n:2 * n]
    out = highpass_roughness(SurfaceProfile(h), 80.0).heights
    assert np.abs(out).max() > 0.5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 100), elements=st.floats(-1e3, 1e3)),
       st.floats(-1e3, 1e3), st.floats(-10, 10))
def test_ra_translation_and_homogeneity(z, shift, scale):
    base = ra(z)
    assert ra(z + shift) == pytest.approx(base, rel=1e-9, abs=1e-6)
    assert ra(scale * z) == pytest.approx(abs(scale) * base, rel=1e-9, abs=1e-9)


def test_ra_hand_value():
    assert ra(np.array([0.0, 2.0, 0.0, 2.0])) == 1.0
    assert ra(np.array([1.0, 2.0, 3.0])) == pytest.approx(2 / 3)


def test_baseline_is_deterministic(small_dataset):
    r = small_dataset.samples[0].readings[0]
    a, b = baseline_ra(r), baseline_ra(r)
    assert a == b and a > 0


def test_baseline_on_dark_reading_raises():
    with pytest.raises(NoValidGradientError):
        baseline_ra(LaserReading(np.zeros((20, 16), dtype=np.uint8)))


def test_affine_calibration_recovers_exact_map():
    p = np.array([0.5, 1.0, 2.0, 3.5])
    cal = fit_affine_calibration(p, 2.0 * p - 0.25)
    assert cal.scale == pytest.approx(2.0) and cal.offset == pytest.approx(-0.25)
    assert apply_calibration(cal, 1.0) == pytest.approx(1.75)
    np.testing.assert_allclose(cal(p), 2.0 * p - 0.25)


def test_affine_calibration_minimizes_squared_error(rng):
    p = rng.normal(size=30)
    y = rng.normal(size=30)
    cal = fit_affine_calibration(p, y)
    A = np.column_stack([p, np.ones_like(p)])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    assert cal.scale == pytest.approx(a, abs=1e-12) and cal.offset == pytest.approx(b, abs=1e-12)


def test_affine_calibration_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_affine_calibration([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert isinstance(AffineCalibration(1.0, 0.0), AffineCalibration)
