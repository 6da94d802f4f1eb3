"""Closed-form Ra from a laser reading.

The chain is threshold -> intensity-weighted reflection angle -> gap
interpolation -> slope integration -> mirrored FFT high-pass -> Ra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import LaserReading, RoughnessProfile, SensorGeometry, SurfaceProfile, build_sensor_geometry
from .errors import DegenerateFitError, InvariantError, NoValidGradientError

DEFAULT_THETA = 2
DEFAULT_CUTOFF_UM = 80.0
MAX_GRADIENT_DEG = 89.9

_CANONICAL = build_sensor_geometry()


def threshold(X, theta: int = DEFAULT_THETA) -> np.ndarray:
    """Subtract each channel's ``theta``-th smallest value and clip at zero.

    Parameters
    ----------
    X : LaserReading or array of shape (C, T)
    theta : int
        1-based rank of the per-channel floor value.

    Returns
    -------
    np.ndarray of float64, same shape as ``X``.
    """
    x = X.intensities if isinstance(X, LaserReading) else np.asarray(X)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    t = x.shape[1]
    if not (1 <= theta <= t):
        raise InvariantError(f"theta must be in [1, {t}], got {theta}")
    floor = np.partition(x, theta - 1, axis=1)[:, theta - 1]
    return np.maximum(x - floor[:, None], 0.0)


@dataclass(frozen=True, eq=False)
class GradientSeries:
    """Surface gradient angle per timestep, radians; ``valid_mask`` marks lit columns."""

    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.valid_mask, dtype=bool)
        if v.shape != m.shape or v.ndim != 1:
            raise InvariantError("values and valid_mask must be 1-D and equal length")
        if not np.all(np.isfinite(v[m])):
            raise InvariantError("valid gradients must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid_mask", m)

    @property
    def degrees(self) -> np.ndarray:
        return np.rad2deg(self.values)

    def __len__(self):
        return self.values.shape[0]


def gradients(Xt, geom: SensorGeometry = _CANONICAL) -> GradientSeries:
    """Half the intensity-weighted mean reflection angle of every column."""
    xt = np.asarray(Xt, dtype=np.float64)
    if xt.ndim != 2 or xt.shape[0] != geom.angles.shape[0]:
        raise InvariantError(f"expected {geom.angles.shape[0]} channels, got shape {xt.shape}")
    if np.any(xt < 0):
        raise InvariantError("thresholded intensities must be nonnegative")
    total = xt.sum(axis=0)
    weighted = geom.angles @ xt
    valid = total > 0
    deg = np.full(total.shape, np.nan)
    deg[valid] = 0.5 * weighted[valid] / total[valid]
    return GradientSeries(np.deg2rad(deg), valid)


def interpolate_gaps(g: GradientSeries) -> GradientSeries:
    valid = g.valid_mask
    if not valid.any():
        raise NoValidGradientError("no timestep received any light")
    if valid.all():
        return g
    idx = np.arange(len(g))
    # np.interp holds the end values constant outside the valid span
    filled = np.interp(idx, idx[valid], g.values[valid])
    return GradientSeries(filled, np.ones_like(valid))


def integrate(g: GradientSeries, step_um: float = 0.8) -> SurfaceProfile:
    if not g.valid_mask.all():
        raise InvariantError("integrate needs a fully valid gradient series")
    if np.any(np.abs(g.values) >= np.deg2rad(MAX_GRADIENT_DEG)):
        raise InvariantError(f"gradient at or beyond {MAX_GRADIENT_DEG} degrees")
    return SurfaceProfile(np.cumsum(np.tan(g.values) * step_um), step_um)


def mirror_extend(heights) -> np.ndarray:
    """``[reversed, original, reversed]``, length 3N."""
    h = np.asarray(heights, dtype=np.float64)
    r = h[::-1]
    return np.concatenate([r, h, r])


def highpass_roughness(surface: SurfaceProfile, cutoff_um: float = DEFAULT_CUTOFF_UM) -> RoughnessProfile:
    """Brick-wall removal of wavelengths longer than ``cutoff_um``.

    The profile is mirror-extended to 3N samples before the transform so
    the periodic continuation has no jumps; the filtered signal is cropped
    back to the central N samples. The cutoff wavelength itself is kept.
    """
    h = surface.heights
    n = h.shape[0]
    if n < 2:
        raise InvariantError("need at least two samples to filter")
    if not cutoff_um > 0:
        raise InvariantError("cutoff_um must be positive")
    # the DC bin is discarded anyway; shifting by h[0] makes a flat profile exactly zero
    ext = mirror_extend(h - h[0])
    m = ext.shape[0]
    spec = np.fft.rfft(ext)
    k = np.arange(spec.shape[0])
    span = m * surface.step_um
    # wavelength span/k > cutoff  <=>  k * cutoff < span; k = 0 (DC) always removed
    spec[k * cutoff_um * (1.0 + 1e-12) < span] = 0.0
    out = np.fft.irfft(spec, n=m)
    return RoughnessProfile(out[n:2 * n], surface.step_um)


def ra(profile) -> float:
    """Arithmetic mean absolute deviation from the mean height."""
    z = profile.heights if isinstance(profile, SurfaceProfile) else np.asarray(profile, dtype=np.float64)
    if z.size == 0:
        raise InvariantError("Ra of an empty profile is undefined")
    return float(np.mean(np.abs(z - z.mean())))


def baseline_ra(reading: LaserReading, theta: int = DEFAULT_THETA, cutoff_um: float = DEFAULT_CUTOFF_UM,
                geom: SensorGeometry = _CANONICAL) -> float:
    g = interpolate_gaps(gradients(threshold(reading, theta), geom))
    surface = integrate(g, reading.step_um)
    return ra(highpass_roughness(surface, cutoff_um))


@dataclass(frozen=True)
class AffineCalibration:
    scale: float
    offset: float

    def __call__(self, x):
        return apply_calibration(self, x)


def fit_affine_calibration(pred, truth) -> AffineCalibration:
    """Least-squares ``a, b`` so that ``a * pred + b`` approximates ``truth``."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise InvariantError("pred and truth must be 1-D and equal length")
    if p.size < 2 or np.ptp(p) == 0:
        raise DegenerateFitError("calibration needs at least two distinct predictions")
    pc = p - p.mean()
    a = float(np.dot(pc, y - y.mean()) / np.dot(pc, pc))
    b = float(y.mean() - a * p.mean())
    return AffineCalibration(a, b)


def apply_calibration(cal: AffineCalibration, x):
    if np.isscalar(x):
        return cal.scale * float(x) + cal.offset
    return cal.scale * np.asarray(x, dtype=np.float64) + cal.offset
