"""Feature matrices on disk: raw little-endian float64 plus a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ScatterRaError

_LE_F64 = np.dtype("<f8")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_features(path, F, extractor: str, seed: int) -> Path:
    path = Path(path)
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ScatterRaError("feature matrix must be 2-D")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(F, dtype=_LE_F64).tobytes())
    meta = {"rows": F.shape[0], "cols": F.shape[1], "extractor": extractor, "seed": int(seed)}
    _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_features(path):
    """Returns ``(F, meta)``."""
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    raw = path.read_bytes()
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if len(raw) != rows * cols * 8:
        raise ScatterRaError(f"{path}: expected {rows * cols * 8} bytes, found {len(raw)}")
    F = np.frombuffer(raw, dtype=_LE_F64).reshape(rows, cols).astype(np.float64)
    return F, meta
