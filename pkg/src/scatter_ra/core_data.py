"""Domain types, sensor geometry and on-disk formats.

Reading files are little-endian binaries::

    magic "SRRD" | version u16 | C u16 | T u32 | C*T uint8, channel-major

A dataset directory holds ``dataset.json`` plus one reading file per
laser measurement.
"""

from __future__ import annotations

import enum
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import (
    BadMagicError,
    DatasetError,
    DimensionError,
    InvariantError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

N_SENSORS = 20
STEP_UM = 0.8
DEFAULT_T = 4096
PRODUCTION_T = 65536

MAGIC = b"SRRD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHI")
SCHEMA_VERSION = 1
MANIFEST_NAME = "dataset.json"
READING_SUFFIX = ".srrd"

PathLike = Union[str, os.PathLike]

# inner gap straddles the laser, every other gap is 6.7 degrees
_INNER_HALF_GAP_DEG = 3.4
_SENSOR_PITCH_DEG = 6.7


@dataclass(frozen=True, eq=False)
class SensorGeometry:
    """Angular positions (degrees from the surface normal) of the 20 sensors."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64)
        if a.shape != (N_SENSORS,):
            raise InvariantError(f"expected {N_SENSORS} angles, got shape {a.shape}")
        if not np.all(np.diff(a) > 0):
            raise InvariantError("sensor angles must be strictly increasing")
        if not np.allclose(a, -a[::-1], rtol=0, atol=1e-9):
            raise InvariantError("sensor angles must be symmetric about 0")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @property
    def radians(self) -> np.ndarray:
        return np.deg2rad(self.angles)

    def __eq__(self, other):
        return isinstance(other, SensorGeometry) and np.array_equal(self.angles, other.angles)

    def __hash__(self):
        return hash(self.angles.tobytes())


def build_sensor_geometry() -> SensorGeometry:
    """Canonical array: +-3.4, +-10.1, ..., +-63.7 degrees."""
    half = np.round(_INNER_HALF_GAP_DEG + _SENSOR_PITCH_DEG * np.arange(N_SENSORS // 2), 10)
    return SensorGeometry(np.concatenate([-half[::-1], half]))


@dataclass(frozen=True, eq=False)
class LaserReading:
    """One laser track: ``intensities[channel, timestep]`` as uint8 counts."""

    intensities: np.ndarray
    step_um: float = STEP_UM
    reading_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.intensities)
        if x.ndim != 2 or x.shape[0] != N_SENSORS or x.shape[1] == 0:
            raise InvariantError(f"reading must be {N_SENSORS} x T with T > 0, got {x.shape}")
        if x.dtype != np.uint8:
            if not np.issubdtype(x.dtype, np.integer):
                if not np.all(np.isfinite(x)) or not np.array_equal(x, np.round(x)):
                    raise InvariantError("intensities must be integers")
            if x.min() < 0 or x.max() > 255:
                raise InvariantError("intensities must lie in [0, 255]")
            x = x.astype(np.uint8)
        x = np.ascontiguousarray(x)
        x.setflags(write=False)
        object.__setattr__(self, "intensities", x)
        if not (self.step_um > 0 and math.isfinite(self.step_um)):
            raise InvariantError("step_um must be positive")

    @property
    def n_channels(self) -> int:
        return self.intensities.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.intensities.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, LaserReading)
            and self.reading_id == other.reading_id
            and self.step_um == other.step_um
            and np.array_equal(self.intensities, other.intensities)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SurfaceProfile:
    heights: np.ndarray
    step_um: float = STEP_UM

    def __post_init__(self):
        h = np.array(self.heights, dtype=np.float64)
        if h.ndim != 1:
            raise InvariantError("heights must be one-dimensional")
        if not np.all(np.isfinite(h)):
            raise InvariantError("heights must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)

    def __len__(self):
        return self.heights.shape[0]

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and self.step_um == other.step_um
            and np.array_equal(self.heights, other.heights)
        )

    __hash__ = None


class RoughnessProfile(SurfaceProfile):
    """Heights after waviness removal; same length as the source surface."""


class Coating(str, enum.Enum):
    GALVANIZED = "galvanized"
    OTHER = "other"


@dataclass(frozen=True)
class SteelSample:
    sample_id: str
    coating: Coating
    stylus_ra: tuple
    readings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coating", Coating(self.coating))
        ra = tuple(float(v) for v in self.stylus_ra)
        if not ra:
            raise InvariantError(f"sample {self.sample_id}: stylus_ra is empty")
        if not all(v > 0 and math.isfinite(v) for v in ra):
            raise InvariantError(f"sample {self.sample_id}: stylus Ra values must be > 0")
        object.__setattr__(self, "stylus_ra", ra)
        object.__setattr__(self, "readings", tuple(self.readings))

    @property
    def mean_ra(self) -> float:
        return mean_ra_label(self)

    @property
    def min_ra(self) -> float:
        return min(self.stylus_ra)

    @property
    def max_ra(self) -> float:
        return max(self.stylus_ra)


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    seed: int
    step_um: float = STEP_UM
    schema_version: int = SCHEMA_VERSION
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate sample_id: {', '.join(dupes)}")
        rids = [r.reading_id for s in samples for r in s.readings]
        if len(set(rids)) != len(rids):
            raise DatasetError("reading ids must be unique across the dataset")
        object.__setattr__(self, "_index", {s.sample_id: s for s in samples})

    def sample(self, sample_id: str) -> SteelSample:
        try:
            return self._index[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample_id {sample_id!r}") from None

    def iter_readings(self):
        """Yield ``(sample, reading)`` pairs in manifest order."""
        for s in self.samples:
            for r in s.readings:
                yield s, r

    @property
    def n_readings(self) -> int:
        return sum(len(s.readings) for s in self.samples)


def mean_ra_label(sample: SteelSample) -> float:
    """Label shared by every laser reading of ``sample``: mean stylus Ra."""
    values = sample.stylus_ra
    if len(values) == 0:
        raise InvariantError("stylus_ra is empty")
    return math.fsum(values) / len(values)


def _open_for(target, mode):
    if hasattr(target, "write" if "w" in mode else "read"):
        return target, False
    return open(target, mode), True


def write_reading(reading: LaserReading, destination: Union[PathLike, BinaryIO]) -> int:
    """Serialize ``reading``; returns the number of bytes written."""
    if not isinstance(reading, LaserReading):
        raise InvariantError("write_reading expects a LaserReading")
    c, t = reading.intensities.shape
    if t > 0xFFFFFFFF:
        raise InvariantError("T does not fit in u32")
    blob = HEADER.pack(MAGIC, FORMAT_VERSION, c, t) + reading.intensities.tobytes(order="C")
    fh, close = _open_for(destination, "wb")
    try:
        fh.write(blob)
    finally:
        if close:
            fh.close()
    return len(blob)


def read_reading(source: Union[PathLike, BinaryIO], step_um: float = STEP_UM,
                 reading_id: str = None) -> LaserReading:
    fh, close = _open_for(source, "rb")
    try:
        blob = fh.read()
    finally:
        if close:
            fh.close()
    if reading_id is None:
        reading_id = Path(source).stem if not hasattr(source, "read") else ""
    if len(blob) < HEADER.size:
        if blob[:4] != MAGIC[: len(blob[:4])]:
            raise BadMagicError(f"bad magic {blob[:4]!r}")
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, got {len(blob)}")
    magic, version, c, t = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported reading version {version}")
    if c != N_SENSORS or t == 0:
        raise DimensionError(f"dimensions out of range: C={c}, T={t}")
    expected = c * t
    payload = blob[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise DimensionError(f"{len(payload) - expected} trailing bytes after payload")
    x = np.frombuffer(payload, dtype=np.uint8).reshape(c, t)
    return LaserReading(x, step_um=step_um, reading_id=reading_id)


def _reading_filename(reading_id: str) -> str:
    return f"{reading_id}{READING_SUFFIX}"


def save_dataset(ds: Dataset, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in ds.samples:
        names = []
        for r in s.readings:
            if r.step_um != ds.step_um:
                raise DatasetError(f"reading {r.reading_id} step differs from dataset step")
            name = _reading_filename(r.reading_id)
            write_reading(r, directory / name)
            names.append(name)
        entries.append({
            "sample_id": s.sample_id,
            "coating": s.coating.value,
            "stylus_ra": list(s.stylus_ra),
            "readings": names,
        })
    manifest = {
        "schema_version": ds.schema_version,
        "seed": int(ds.seed),
        "step_um": ds.step_um,
        "samples": entries,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_manifest(directory: PathLike) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"missing manifest {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"unsupported schema_version {manifest.get('schema_version')!r}")
    return manifest


def load_dataset(directory: PathLike) -> Dataset:
    directory = Path(directory)
    manifest = load_manifest(directory)
    step = float(manifest["step_um"])
    samples = []
    seen = set()
    for entry in manifest["samples"]:
        sid = entry["sample_id"]
        if sid in seen:
            raise DatasetError(f"duplicate sample_id: {sid}")
        seen.add(sid)
        readings = []
        for name in entry["readings"]:
            path = directory / name
            if not path.is_file():
                raise DatasetError(f"manifest references missing reading file {name}")
            r = read_reading(path, step_um=step)
            if _reading_filename(r.reading_id) != name:
                raise DatasetError(f"reading file {name} does not match its id")
            readings.append(r)
        samples.append(SteelSample(sid, entry["coating"], entry["stylus_ra"], readings))
    return Dataset(samples, seed=int(manifest["seed"]), step_um=step,
                   schema_version=int(manifest["schema_version"]))
