"""Split protocols, normalization, metrics and experiment runs.

Two protocols are supported:

``per_sample_20``
    Within every steel sample, ceil(20 %) of its readings go to test.
``kfold_steel``
    One fold per steel sample; the fold's test set is all of that
    sample's readings.

Every reading is labelled with the mean stylus Ra of its sample.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._parallel import parallel_map
from .baseline import (
    DEFAULT_CUTOFF_UM,
    DEFAULT_THETA,
    AffineCalibration,
    apply_calibration,
    baseline_ra,
    fit_affine_calibration,
    threshold,
)
from .core_data import Dataset, LaserReading, SteelSample
from .errors import InvariantError, PlanMismatchError, ReadingFailureError, ScatterRaError
from .features.minirocket import (
    DEFAULT_MAX_DILATIONS,
    DEFAULT_N_FEATURES,
    MiniRocketParams,
    minirocket_fit,
    minirocket_transform,
)
from .features.ridge import DEFAULT_ALPHAS, RidgeModel, ridge_fit, ridge_predict
from .features.rocket import DEFAULT_N_KERNELS, generate_rocket_kernels, rocket_transform

PER_SAMPLE_20 = "per_sample_20"
KFOLD_STEEL = "kfold_steel"
PROTOCOLS = (PER_SAMPLE_20, KFOLD_STEEL)

BASELINE = "baseline"
BASELINE_CALIBRATED = "baseline_calibrated"
ROCKET_RIDGE = "rocket_ridge"
MINIROCKET_RIDGE = "minirocket_ridge"
METHODS = (BASELINE, BASELINE_CALIBRATED, ROCKET_RIDGE, MINIROCKET_RIDGE)
FEATURE_METHODS = (ROCKET_RIDGE, MINIROCKET_RIDGE)

STD_FLOOR = 1e-8
TEST_FRACTION = 0.2


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    test_ids: tuple
    protocol: str
    fold_index: Optional[int] = None
    seed: Optional[int] = None
    dataset_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        if self.protocol not in PROTOCOLS:
            raise InvariantError(f"unknown protocol {self.protocol!r}")
        if set(self.train_ids) & set(self.test_ids):
            raise InvariantError("train and test reading ids overlap")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "fold_index": self.fold_index,
            "seed": self.seed,
            "dataset_seed": self.dataset_seed,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(d["train_ids"], d["test_ids"], d["protocol"], d.get("fold_index"),
                   d.get("seed"), d.get("dataset_seed"))

    def check_against(self, ds: Dataset) -> None:
        if self.dataset_seed is not None and self.dataset_seed != ds.seed:
            raise PlanMismatchError(f"plan was built for dataset seed {self.dataset_seed}, dataset has {ds.seed}")
        known = {r.reading_id for _, r in ds.iter_readings()}
        missing = [rid for rid in self.train_ids + self.test_ids if rid not in known]
        if missing:
            raise PlanMismatchError(f"plan references {len(missing)} unknown reading ids, e.g. {missing[0]}")


def _n_test(n: int) -> int:
    return -(-n // 5)  # ceil(0.2 * n) without float rounding


def split_per_sample_20(ds: Dataset, seed: int) -> SplitPlan:
    """Hold out ceil(20 %) of each sample's readings, chosen uniformly at random."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for s in ds.samples:
        n = len(s.readings)
        if n < 2:
            raise InvariantError(f"sample {s.sample_id} has {n} reading(s); need at least 2 to split")
        chosen = set(rng.choice(n, size=_n_test(n), replace=False).tolist())
        for j, r in enumerate(s.readings):
            (test if j in chosen else train).append(r.reading_id)
    return SplitPlan(train, test, PER_SAMPLE_20, None, int(seed), ds.seed)


def kfold_per_steel(ds: Dataset) -> list:
    if len(ds.samples) < 2:
        raise InvariantError("k-fold by steel sample needs at least 2 samples")
    plans = []
    for k, held in enumerate(ds.samples):
        test = [r.reading_id for r in held.readings]
        train = [r.reading_id for s in ds.samples if s is not held for r in s.readings]
        plans.append(SplitPlan(train, test, KFOLD_STEEL, k, None, ds.seed))
    return plans


def make_plans(ds: Dataset, protocol: str, seed: int) -> list:
    if protocol == PER_SAMPLE_20:
        return [split_per_sample_20(ds, seed)]
    if protocol == KFOLD_STEEL:
        return kfold_per_steel(ds)
    raise InvariantError(f"unknown protocol {protocol!r}")


# --------------------------------------------------------- normalization

@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    mode: str = "per_channel"

    def to_dict(self) -> dict:
        return {"mode": self.mode, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   d.get("mode", "per_channel"))


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, LaserReading):
        x = x.intensities
    return np.asarray(x, dtype=np.float64)


def fit_norm(train: Sequence, mode: str = "per_channel") -> NormStats:
    """Mean and standard deviation over every timestep of every training reading.

    ``train`` holds thresholded (C, T) matrices. ``mode="global"`` pools
    all channels into one pair, repeated per channel.
    """
    if mode not in ("per_channel", "global"):
        raise InvariantError(f"unknown normalization mode {mode!r}")
    if len(train) == 0:
        raise InvariantError("cannot fit normalization on an empty training set")
    axis = 1 if mode == "per_channel" else None
    count = 0
    total = 0.0
    for x in train:
        m = _as_matrix(x)
        count += m.shape[1] if axis == 1 else m.size
        total = total + m.sum(axis=axis)
    mean = total / count
    sq = 0.0
    for x in train:
        m = _as_matrix(x)
        dev = m - (mean[:, None] if axis == 1 else mean)
        sq = sq + (dev * dev).sum(axis=axis)
    std = np.sqrt(sq / count)
    c = _as_matrix(train[0]).shape[0]
    mean = np.broadcast_to(mean, (c,)).astype(np.float64)
    std = np.maximum(np.broadcast_to(std, (c,)).astype(np.float64), STD_FLOOR)
    return NormStats(mean, std, mode)


def apply_norm(stats: NormStats, reading) -> np.ndarray:
    m = _as_matrix(reading)
    if m.shape[0] != stats.mean.shape[0]:
        raise InvariantError(f"reading has {m.shape[0]} channels, stats have {stats.mean.shape[0]}")
    return (m - stats.mean[:, None]) / stats.std[:, None]


class _NormalizedView:
    """Lazy ``apply_norm`` over a list of thresholded matrices."""

    def __init__(self, stats, mats):
        self.stats = stats
        self.mats = mats

    def __len__(self):
        return len(self.mats)

    def __getitem__(self, i):
        return apply_norm(self.stats, self.mats[i]).astype(np.float32)


# --------------------------------------------------------------- metrics

def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise InvariantError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise InvariantError("metrics need at least one value")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    d = y - yhat
    return float(np.mean(d * d))


def rmse(y, yhat) -> float:
    return math.sqrt(mse(y, yhat))


def max_error(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.max(np.abs(y - yhat)))


def pearson(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise InvariantError("correlation needs at least two values")
    a = y - y.mean()
    b = yhat - yhat.mean()
    saa = float(np.dot(a, a))
    sbb = float(np.dot(b, b))
    if saa == 0 or sbb == 0:
        raise InvariantError("correlation is undefined for a constant input")
    return float(np.clip(np.dot(a, b) / math.sqrt(saa * sbb), -1.0, 1.0))


@dataclass(frozen=True)
class PredictionRecord:
    reading_id: str
    sample_id: str
    truth: float
    prediction: float


def _sample_lookup(samples):
    if isinstance(samples, Dataset):
        return samples.sample
    if isinstance(samples, dict):
        return samples.__getitem__
    table = {s.sample_id: s for s in samples}
    return table.__getitem__


def coverage(records, samples) -> float:
    """Share of predictions inside their sample's closed [min, max] stylus Ra range."""
    lookup = _sample_lookup(samples)
    records = list(records)
    if not records:
        raise InvariantError("coverage of zero records is undefined")
    hits = 0
    for rec in records:
        try:
            s = lookup(rec.sample_id)
        except KeyError:
            raise InvariantError(f"unknown sample_id {rec.sample_id!r}") from None
        hits += s.min_ra <= rec.prediction <= s.max_ra
    return hits / len(records)


def tcn_receptive_field(ks: int, nl: int, dilation_base: int = 2) -> int:
    """Receptive field of a TCN with two convolutions per residual block."""
    for name, v in (("ks", ks), ("nl", nl), ("dilation_base", dilation_base)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise InvariantError(f"{name} must be an integer")
    if ks < 2 or nl < 1 or dilation_base < 1:
        raise InvariantError("need ks >= 2, nl >= 1, dilation_base >= 1")
    return 2 * sum((ks - 1) * dilation_base ** i for i in range(nl))


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mse: float
    pearson_r: float
    max_error: float
    pred_coverage: float
    records: tuple
    method: str = ""
    protocol: str = ""
    seed: Optional[int] = None
    train_rmse: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "protocol": self.protocol,
            "seed": self.seed,
            "config": self.config,
            "metrics": {
                "rmse": self.rmse,
                "mse": self.mse,
                "pearson_r": self.pearson_r,
                "max_error": self.max_error,
                "pred_coverage": self.pred_coverage,
            },
            "train_rmse": self.train_rmse,
            "n_predictions": len(self.records),
            "records": [
                {"reading_id": r.reading_id, "sample_id": r.sample_id,
                 "truth": r.truth, "prediction": r.prediction}
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        m = d["metrics"]
        recs = tuple(PredictionRecord(r["reading_id"], r["sample_id"], r["truth"], r["prediction"])
                     for r in d["records"])
        return cls(m["rmse"], m["mse"], m["pearson_r"], m["max_error"], m["pred_coverage"], recs,
                   d.get("method", ""), d.get("protocol", ""), d.get("seed"), d.get("train_rmse"),
                   d.get("config", {}))

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def to_csv(self, samples) -> str:
        lookup = _sample_lookup(samples)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["reading_id", "sample_id", "truth_ra_um", "pred_ra_um", "sample_min_ra", "sample_max_ra"])
        for r in self.records:
            s = lookup(r.sample_id)
            w.writerow([r.reading_id, r.sample_id, repr(r.truth), repr(r.prediction),
                        repr(s.min_ra), repr(s.max_ra)])
        return buf.getvalue()

    def write_csv(self, path, samples) -> None:
        Path(path).write_text(self.to_csv(samples))


def evaluate_records(records, samples, method="", protocol="", seed=None, train_rmse=None,
                     config=None) -> EvalReport:
    records = tuple(records)
    y = np.array([r.truth for r in records])
    p = np.array([r.prediction for r in records])
    m = mse(y, p)
    return EvalReport(
        rmse=math.sqrt(m), mse=m, pearson_r=pearson(y, p), max_error=max_error(y, p),
        pred_coverage=coverage(records, samples), records=records, method=method,
        protocol=protocol, seed=seed, train_rmse=train_rmse, config=dict(config or {}),
    )


# ------------------------------------------------------- trained models

@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Thresholding + normalization + feature extractor + ridge head."""

    method: str
    theta: int
    norm: NormStats
    extractor: object  # KernelBank or MiniRocketParams
    ridge: RidgeModel
    plan: Optional[SplitPlan] = None
    train_rmse: Optional[float] = None
    config: dict = field(default_factory=dict)

    def extractor_fingerprint(self) -> str:
        return self.extractor.fingerprint()

    def to_dict(self) -> dict:
        if self.method == MINIROCKET_RIDGE:
            ext = {"kind": "minirocket", "params": self.extractor.to_dict()}
        else:
            b = self.extractor
            ext = {"kind": "rocket", "seed": b.seed, "count": b.count, "input_len": b.input_len,
                   "n_channels": b.n_channels}
        ext["fingerprint"] = self.extractor_fingerprint()
        return {
            "format": "scatter-ra-model",
            "version": 1,
            "method": self.method,
            "theta": self.theta,
            "norm": self.norm.to_dict(),
            "extractor": ext,
            "ridge": self.ridge.to_dict(),
            "plan": self.plan.to_dict() if self.plan is not None else None,
            "train_rmse": self.train_rmse,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != "scatter-ra-model":
            raise ScatterRaError("not a scatter-ra model file")
        ext = d["extractor"]
        if ext["kind"] == "minirocket":
            extractor = MiniRocketParams.from_dict(ext["params"])
        else:
            extractor = generate_rocket_kernels(ext["seed"], ext["count"], ext["input_len"], ext["n_channels"])
        if extractor.fingerprint() != ext["fingerprint"]:
            raise ScatterRaError("extractor fingerprint mismatch; model file is inconsistent")
        plan = SplitPlan.from_dict(d["plan"]) if d.get("plan") else None
        return cls(d["method"], int(d["theta"]), NormStats.from_dict(d["norm"]), extractor,
                   RidgeModel.from_dict(d["ridge"]), plan, d.get("train_rmse"), d.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _thresholded(reading: LaserReading, theta: int) -> np.ndarray:
    # integer input minus an integer floor stays integral and within [0, 255]
    return threshold(reading, theta).astype(np.uint8)


def _extract(method, extractor, mats, jobs):
    if method == MINIROCKET_RIDGE:
        return minirocket_transform(mats, extractor, jobs=jobs)
    return rocket_transform(mats, extractor, jobs=jobs)


def _fit_extractor(method, view, seed, input_len, n_channels, n_kernels, n_features, max_dilations):
    if method == MINIROCKET_RIDGE:
        return minirocket_fit(view, seed=seed, input_len=input_len, n_features=n_features,
                              max_dilations_per_kernel=max_dilations)
    if method == ROCKET_RIDGE:
        return generate_rocket_kernels(seed, n_kernels, input_len, n_channels)
    raise InvariantError(f"{method!r} is not a feature method")


def train_model(train_mats, y, method, seed=0, *, theta=DEFAULT_THETA, alphas=DEFAULT_ALPHAS,
                n_kernels=DEFAULT_N_KERNELS, n_features=DEFAULT_N_FEATURES,
                max_dilations=DEFAULT_MAX_DILATIONS, norm_mode="per_channel", jobs=1, plan=None):
    """Fit normalization, extractor and ridge on thresholded training matrices.

    Returns ``(model, train_predictions)``.
    """
    stats = fit_norm(train_mats, mode=norm_mode)
    view = _NormalizedView(stats, train_mats)
    c, t = np.asarray(train_mats[0]).shape
    extractor = _fit_extractor(method, view, seed, t, c, n_kernels, n_features, max_dilations)
    F = _extract(method, extractor, view, jobs)
    ridge = ridge_fit(F, y, alphas)
    train_pred = ridge_predict(ridge, F)
    train_rmse = rmse(np.asarray(y, dtype=np.float64), train_pred)
    model = TrainedModel(method, theta, stats, extractor, ridge, plan, train_rmse)
    return model, train_pred


def predict_mats(model: TrainedModel, mats, jobs=1) -> np.ndarray:
    F = _extract(model.method, model.extractor, _NormalizedView(model.norm, mats), jobs)
    return ridge_predict(model.ridge, F)


def predict_readings(model: TrainedModel, readings, jobs=1) -> np.ndarray:
    return predict_mats(model, [_thresholded(r, model.theta) for r in readings], jobs)


# ----------------------------------------------------------- experiments

def baseline_predictions(ds: Dataset, theta=DEFAULT_THETA, cutoff_um=DEFAULT_CUTOFF_UM, jobs=1) -> dict:
    """Uncalibrated baseline Ra for every reading, keyed by reading id."""
    readings = [r for _, r in ds.iter_readings()]

    def one(r):
        try:
            return baseline_ra(r, theta, cutoff_um)
        except ScatterRaError as err:
            raise ReadingFailureError(r.reading_id, err) from err

    values = parallel_map(one, readings, jobs)
    return {r.reading_id: v for r, v in zip(readings, values)}


def _labels(ds: Dataset) -> dict:
    out = {}
    for s in ds.samples:
        label = s.mean_ra
        for r in s.readings:
            out[r.reading_id] = (s.sample_id, label)
    return out


def run_experiment(ds: Dataset, protocol: str, method: str, seed: int = 0, *, theta: int = DEFAULT_THETA,
                   cutoff_um: float = DEFAULT_CUTOFF_UM, alphas=DEFAULT_ALPHAS, extractor_seed: int = None,
                   n_kernels: int = DEFAULT_N_KERNELS, n_features: int = DEFAULT_N_FEATURES,
                   max_dilations: int = DEFAULT_MAX_DILATIONS, norm_mode: str = "per_channel",
                   jobs: int = 1) -> EvalReport:
    """Evaluate ``method`` under ``protocol``; k-fold pools every fold's test predictions.

    ``seed`` drives the 20 % split; the feature extractor uses
    ``extractor_seed`` (default: ``seed``).
    """
    if method not in METHODS:
        raise InvariantError(f"unknown method {method!r}; choose from {METHODS}")
    plans = make_plans(ds, protocol, seed)
    labels = _labels(ds)
    ext_seed = seed if extractor_seed is None else extractor_seed
    config = {"theta": theta, "cutoff_um": cutoff_um, "dataset_seed": ds.seed}
    readings = {r.reading_id: r for _, r in ds.iter_readings()}

    if method in FEATURE_METHODS:
        config.update({"extractor_seed": ext_seed, "alphas": [float(a) for a in alphas], "norm_mode": norm_mode})
        if method == ROCKET_RIDGE:
            config["n_kernels"] = n_kernels
        else:
            config.update({"n_features": n_features, "max_dilations": max_dilations})
        mats = {rid: _thresholded(r, theta) for rid, r in readings.items()}
    else:
        raw = baseline_predictions(ds, theta, cutoff_um, jobs)

    records = []
    train_sq = 0.0
    train_n = 0
    for plan in plans:
        y_train = np.array([labels[rid][1] for rid in plan.train_ids])
        if method in FEATURE_METHODS:
            model, train_pred = train_model(
                [mats[rid] for rid in plan.train_ids], y_train, method, ext_seed, theta=theta,
                alphas=alphas, n_kernels=n_kernels, n_features=n_features, max_dilations=max_dilations,
                norm_mode=norm_mode, jobs=jobs)
            test_pred = predict_mats(model, [mats[rid] for rid in plan.test_ids], jobs)
        else:
            train_pred = np.array([raw[rid] for rid in plan.train_ids])
            test_pred = np.array([raw[rid] for rid in plan.test_ids])
            if method == BASELINE_CALIBRATED:
                cal = fit_affine_calibration(train_pred, y_train)
                train_pred = apply_calibration(cal, train_pred)
                test_pred = apply_calibration(cal, test_pred)
        train_sq += float(np.sum((y_train - train_pred) ** 2))
        train_n += y_train.size
        for rid, p in zip(plan.test_ids, test_pred):
            sid, label = labels[rid]
            records.append(PredictionRecord(rid, sid, label, float(p)))

    return evaluate_records(records, ds, method, protocol, seed, math.sqrt(train_sq / train_n), config)
