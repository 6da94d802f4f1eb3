"""Synthetic steel samples: rough profiles, stylus Ra values and laser readings.

Surfaces come from random-phase spectral synthesis; laser readings come
from a specular model where each timestep's reflection sits at twice the
local slope angle and spreads over the sensor arc as a Gaussian lobe.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._parallel import parallel_map
from .baseline import DEFAULT_CUTOFF_UM, highpass_roughness, ra
from .core_data import (
    DEFAULT_T,
    STEP_UM,
    Coating,
    Dataset,
    LaserReading,
    SensorGeometry,
    SteelSample,
    SurfaceProfile,
    build_sensor_geometry,
)
from .errors import InvariantError

log = logging.getLogger(__name__)

# (number of samples, measurements per sample)
TABLE1_COUNTS = ((4, 5), (24, 10), (1, 23), (2, 24), (13, 25), (3, 26))
# The table's rows cover 47 samples; 49 samples with the same 734 readings
# are reached by splitting two 10-reading samples into four 5-reading ones.
DEFAULT_COUNTS = ((8, 5), (22, 10), (1, 23), (2, 24), (13, 25), (3, 26))

_STYLUS, _LASER_SURFACE, _SCATTER = 0, 1, 2


def derive_seed(root: int, *key: int) -> np.random.SeedSequence:
    """Child seed for ``key`` (e.g. sample index, stream, track index)."""
    return np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))


@dataclass(frozen=True)
class SurfaceSpec:
    target_ra: float
    roughness_band: tuple = (40.0, 78.0)
    waviness: Optional[tuple] = None  # (amplitude um, wavelength um)
    length_steps: int = DEFAULT_T
    step_um: float = STEP_UM
    n_components: Optional[int] = None  # random subset of in-band bins; None keeps all

    def __post_init__(self):
        lo, hi = (float(v) for v in self.roughness_band)
        object.__setattr__(self, "roughness_band", (lo, hi))
        if not self.target_ra > 0:
            raise InvariantError("target_ra must be > 0")
        if lo < 2 * self.step_um:
            raise InvariantError(f"lambda_min {lo} is below Nyquist (2 * {self.step_um})")
        if not lo <= hi < DEFAULT_CUTOFF_UM:
            raise InvariantError(f"roughness band must satisfy lambda_min <= lambda_max < {DEFAULT_CUTOFF_UM}")
        if self.length_steps < 2:
            raise InvariantError("length_steps must be >= 2")
        if self.waviness is not None:
            object.__setattr__(self, "waviness", tuple(float(v) for v in self.waviness))


@dataclass(frozen=True)
class ScatterSpec:
    lobe_sigma_deg: float = 8.0
    peak_intensity: float = 220.0
    dropout_rate: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.lobe_sigma_deg > 0:
            raise InvariantError("lobe_sigma_deg must be > 0")
        if not 0 < self.peak_intensity <= 255:
            raise InvariantError("peak_intensity must be in (0, 255]")
        if not 0 <= self.dropout_rate < 1:
            raise InvariantError("dropout_rate must be in [0, 1)")
        if self.noise_sigma < 0:
            raise InvariantError("noise_sigma must be >= 0")


def band_bins(spec: SurfaceSpec) -> np.ndarray:
    """rfft bin indices whose wavelength falls inside the roughness band."""
    n = spec.length_steps
    k = np.arange(1, n // 2 + 1)
    wavelength = n * spec.step_um / k
    lo, hi = spec.roughness_band
    return k[(wavelength >= lo) & (wavelength <= hi)]


def synthesize_surface(spec: SurfaceSpec, seed) -> SurfaceProfile:
    """Band-limited random-phase profile whose roughness Ra equals ``target_ra``.

    Any waviness sinusoid is added after the Ra rescaling, so it does not
    enter the calibrated Ra of the roughness component.
    """
    rng = np.random.default_rng(seed)
    bins = band_bins(spec)
    if bins.size == 0:
        raise InvariantError(f"no frequency bins inside band {spec.roughness_band} for T={spec.length_steps}")
    if spec.n_components is not None and spec.n_components < bins.size:
        bins = np.sort(rng.choice(bins, size=spec.n_components, replace=False))
    n = spec.length_steps
    coeffs = np.zeros(n // 2 + 1, dtype=np.complex128)
    coeffs[bins] = np.exp(2j * np.pi * rng.random(bins.size))
    rough = np.fft.irfft(coeffs, n=n)
    rough *= spec.target_ra / ra(rough)
    heights = rough
    if spec.waviness is not None:
        amp, wl = spec.waviness
        x = np.arange(n) * spec.step_um
        heights = rough + amp * np.sin(2 * np.pi * x / wl + 2 * np.pi * rng.random())
    return SurfaceProfile(heights, spec.step_um)


def surface_slopes(profile: SurfaceProfile) -> np.ndarray:
    """Forward-difference slope per step; the last step repeats its neighbour."""
    h = profile.heights
    s = np.empty_like(h)
    s[:-1] = np.diff(h) / profile.step_um
    s[-1] = s[-2] if h.size > 1 else 0.0
    return s


def reflected_angles_deg(profile: SurfaceProfile) -> np.ndarray:
    return 2.0 * np.rad2deg(np.arctan(surface_slopes(profile)))


def lobe_intensities(reflected_deg, geom: SensorGeometry, spec: ScatterSpec) -> np.ndarray:
    """Noise-free, unquantized intensity for each (sensor, timestep)."""
    r = np.asarray(reflected_deg, dtype=np.float64)
    d = geom.angles[:, None] - r[None, :]
    return spec.peak_intensity * np.exp(-(d * d) / (2.0 * spec.lobe_sigma_deg ** 2))


def quantize(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp into the 8-bit range."""
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def forward_scatter(profile: SurfaceProfile, geom: SensorGeometry, spec: ScatterSpec, seed,
                    reading_id: str = "", stats: dict = None) -> LaserReading:
    """Simulate the 20-sensor reading produced by scanning ``profile``.

    Columns whose reflection leaves the arc by more than three lobe widths
    are recorded as dark. If ``stats`` is given it receives the counts
    ``out_of_arc`` and ``dropped``.
    """
    rng = np.random.default_rng(seed)
    r = reflected_angles_deg(profile)
    x = lobe_intensities(r, geom, spec)
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    q = quantize(x)
    out_of_arc = np.abs(r) > geom.angles[-1] + 3 * spec.lobe_sigma_deg
    q[:, out_of_arc] = 0
    dropped = np.zeros(r.shape, dtype=bool)
    if spec.dropout_rate > 0:
        dropped = rng.random(r.shape[0]) < spec.dropout_rate
        q[:, dropped] = 0
    n_out = int(out_of_arc.sum())
    if n_out:
        log.debug("reading %s: %d columns reflected outside the sensor arc", reading_id, n_out)
    if stats is not None:
        stats["out_of_arc"] = n_out
        stats["dropped"] = int(dropped.sum())
    return LaserReading(q, step_um=profile.step_um, reading_id=reading_id)


def table1_reading_counts() -> list:
    return [m for n, m in TABLE1_COUNTS for _ in range(n)]


def default_reading_counts() -> list:
    """49 per-sample reading counts summing to 734."""
    return [m for n, m in DEFAULT_COUNTS for _ in range(n)]


def _default_galvanized():
    return ScatterSpec(lobe_sigma_deg=8.0, peak_intensity=220.0, dropout_rate=0.03, noise_sigma=2.0)


def _default_other():
    return ScatterSpec(lobe_sigma_deg=11.0, peak_intensity=150.0, dropout_rate=0.08, noise_sigma=3.0)


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for :func:`generate_dataset`. Defaults mirror the 49-sample layout."""

    n_samples: int = 49
    readings_per_sample: Optional[tuple] = None
    stylus_tracks: int = 6
    ra_range: tuple = (0.5, 2.5)
    track_jitter: float = 0.05
    length_steps: int = DEFAULT_T
    step_um: float = STEP_UM
    roughness_band: tuple = (20.0, 78.0)
    n_components: Optional[int] = None
    waviness_amplitude_um: tuple = (0.5, 3.0)
    waviness_wavelength_um: tuple = (300.0, 1500.0)
    n_other_coating: int = 3
    scatter_galvanized: ScatterSpec = field(default_factory=_default_galvanized)
    scatter_other: ScatterSpec = field(default_factory=_default_other)

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvariantError("n_samples must be >= 1")
        if self.readings_per_sample is not None:
            counts = tuple(int(c) for c in self.readings_per_sample)
            if len(counts) != self.n_samples or min(counts) < 1:
                raise InvariantError("readings_per_sample needs one positive count per sample")
            object.__setattr__(self, "readings_per_sample", counts)
        if self.stylus_tracks < 1:
            raise InvariantError("stylus_tracks must be >= 1")
        lo, hi = self.ra_range
        if not 0 < lo <= hi:
            raise InvariantError("ra_range must satisfy 0 < low <= high")
        if self.track_jitter < 0:
            raise InvariantError("track_jitter must be >= 0")
        if not 0 <= self.n_other_coating <= self.n_samples:
            raise InvariantError("n_other_coating out of range")
        for name in ("scatter_galvanized", "scatter_other"):
            v = getattr(self, name)
            if isinstance(v, dict):
                object.__setattr__(self, name, ScatterSpec(**v))
        # validates band/length against the surface invariants up front
        SurfaceSpec(1.0, self.roughness_band, None, self.length_steps, self.step_um, self.n_components)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvariantError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "DatasetConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _reading_counts(config: DatasetConfig, rng) -> list:
    if config.readings_per_sample is not None:
        return list(config.readings_per_sample)
    for table in (default_reading_counts(), table1_reading_counts()):
        if config.n_samples == len(table):
            return [int(c) for c in rng.permutation(table)]
    table = table1_reading_counts()
    return [int(c) for c in rng.choice(table, size=config.n_samples)]


def _surface_spec(config, target_ra, waviness):
    return SurfaceSpec(target_ra, config.roughness_band, waviness, config.length_steps,
                       config.step_um, config.n_components)


def _draw_waviness(config, rng):
    amp = rng.uniform(*config.waviness_amplitude_um)
    wl = rng.uniform(*config.waviness_wavelength_um)
    return (amp, wl)


def _track_ra(nominal, jitter, rng):
    return nominal * math.exp(jitter * rng.standard_normal()) if jitter > 0 else nominal


def _stylus_value(config, seed, i, t, nominal):
    rng = np.random.default_rng(derive_seed(seed, i, _STYLUS, t))
    spec = _surface_spec(config, _track_ra(nominal, config.track_jitter, rng), _draw_waviness(config, rng))
    profile = synthesize_surface(spec, rng)
    return ra(highpass_roughness(profile))


def _laser_reading(config, geom, seed, i, j, nominal, scatter, reading_id):
    rng = np.random.default_rng(derive_seed(seed, i, _LASER_SURFACE, j))
    spec = _surface_spec(config, _track_ra(nominal, config.track_jitter, rng), _draw_waviness(config, rng))
    profile = synthesize_surface(spec, rng)
    return forward_scatter(profile, geom, scatter, derive_seed(seed, i, _SCATTER, j), reading_id=reading_id)


def generate_dataset(config: DatasetConfig = None, seed: int = 0, jobs: int = 1) -> Dataset:
    """Build a synthetic dataset where stylus and laser tracks never coincide.

    Each sample draws a nominal Ra; stylus values and laser readings come
    from separate, independently seeded surface realizations around it, so
    the only link between a reading and its label is the shared sample.
    """
    config = config or DatasetConfig()
    geom = build_sensor_geometry()
    rng = np.random.default_rng(derive_seed(seed, 2 ** 31))
    n = config.n_samples
    nominal = rng.uniform(*config.ra_range, size=n)
    counts = _reading_counts(config, rng)
    other = set(int(i) for i in rng.choice(n, size=config.n_other_coating, replace=False))
    width = max(2, len(str(n)))

    samples = []
    for i in range(n):
        sid = f"S{i + 1:0{width}d}"
        coating = Coating.OTHER if i in other else Coating.GALVANIZED
        scatter = config.scatter_other if coating is Coating.OTHER else config.scatter_galvanized
        stylus = parallel_map(lambda t: _stylus_value(config, seed, i, t, nominal[i]),
                              range(config.stylus_tracks), jobs)
        readings = parallel_map(
            lambda j: _laser_reading(config, geom, seed, i, j, nominal[i], scatter, f"{sid}_r{j:02d}"),
            range(counts[i]), jobs)
        samples.append(SteelSample(sid, coating, stylus, readings))
    return Dataset(samples, seed=int(seed), step_um=config.step_um)
