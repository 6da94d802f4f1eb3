"""``scatter-ra`` command line: simulate, baseline, train, evaluate, rf.

Settings resolve as flags > ``--config`` JSON file > built-in defaults.
Every JSON artifact carries a ``config`` block holding the resolved
settings, so a run can be repeated from its own output. Artifacts hold no
timestamps or host details and are byte-identical for identical inputs,
whatever ``--jobs`` is.

Failures exit nonzero with a single JSON object on stderr::

    {"error": "DatasetError", "message": "...", "reading_id": null}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from ._parallel import resolve_jobs
from .baseline import DEFAULT_CUTOFF_UM, DEFAULT_THETA, apply_calibration, fit_affine_calibration
from .core_data import MANIFEST_NAME, load_dataset, save_dataset
from .errors import PlanMismatchError, ReadingFailureError, ScatterRaError
from .features.minirocket import DEFAULT_MAX_DILATIONS, DEFAULT_N_FEATURES
from .features.ridge import DEFAULT_ALPHAS
from .features.rocket import DEFAULT_N_KERNELS
from .simulator import DatasetConfig, generate_dataset

log = logging.getLogger("scatter_ra")

METHOD_NAMES = {
    "baseline": ev.BASELINE,
    "calibrated": ev.BASELINE_CALIBRATED,
    "rocket": ev.ROCKET_RIDGE,
    "minirocket": ev.MINIROCKET_RIDGE,
}
PROTOCOL_NAMES = {"per20": ev.PER_SAMPLE_20, "kfold": ev.KFOLD_STEEL}


class UsageError(ScatterRaError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------- helpers

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _emit(obj, out):
    text = _dump(obj)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


class _Resolver:
    """Flag value if given, else the config file's value, else the default."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg

    def __call__(self, name, default=None):
        v = getattr(self.args, name, None)
        if v is not None:
            return v
        return self.cfg.get(name, default)


def _method(name):
    if name in METHOD_NAMES:
        return METHOD_NAMES[name]
    if name in METHOD_NAMES.values():
        return name
    raise UsageError(f"unknown method {name!r}; choose from {sorted(METHOD_NAMES)}")


def _protocol(name):
    if name in PROTOCOL_NAMES:
        return PROTOCOL_NAMES[name]
    if name in PROTOCOL_NAMES.values():
        return name
    raise UsageError(f"unknown protocol {name!r}; choose from {sorted(PROTOCOL_NAMES)}")


def _alphas(value):
    if value is None:
        return tuple(float(a) for a in DEFAULT_ALPHAS)
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(float(a) for a in value)


def _read_plan(path) -> ev.SplitPlan:
    """A split plan file, or a model file whose embedded plan is used."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read split plan {path}: {err}") from err
    if d.get("format") == "scatter-ra-model":
        d = d.get("plan")
        if d is None:
            raise UsageError(f"model {path} carries no split plan")
    return ev.SplitPlan.from_dict(d)


def _prepare_out_dir(out: Path, force: bool):
    if not out.exists():
        return
    if not force:
        raise UsageError(f"output {out} already exists; pass --force to overwrite")
    if not out.is_dir():
        raise UsageError(f"output {out} exists and is not a directory")
    if any(out.iterdir()) and not (out / MANIFEST_NAME).is_file():
        raise UsageError(f"refusing to replace {out}: it is not empty and holds no {MANIFEST_NAME}")
    shutil.rmtree(out)


# ------------------------------------------------------------ commands

def cmd_simulate(args, get):
    if args.out is None:
        raise UsageError("simulate needs --out")
    seed = int(get("seed", 0))
    fields = {k: v for k, v in args.cfg.items() if k not in ("seed", "jobs")}
    if args.samples is not None:
        fields["n_samples"] = args.samples
        fields.pop("readings_per_sample", None)
    if args.t is not None:
        fields["length_steps"] = args.t
    if "n_other_coating" not in fields and "n_samples" in fields:
        fields["n_other_coating"] = min(DatasetConfig.n_other_coating, int(fields["n_samples"]))
    config = DatasetConfig.from_dict(fields)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    ds = generate_dataset(config, seed=seed, jobs=get("jobs"))
    save_dataset(ds, out)
    labels = [s.mean_ra for s in ds.samples]
    summary = {
        "command": "simulate",
        "config": {"seed": seed, "out": str(out), **config.to_dict()},
        "samples": len(ds.samples),
        "readings": ds.n_readings,
        "ra_min": min(labels),
        "ra_max": max(labels),
    }
    _emit(summary, None)


def cmd_baseline(args, get):
    ds = load_dataset(args.dataset)
    theta = int(get("theta", DEFAULT_THETA))
    cutoff = float(get("cutoff_um", DEFAULT_CUTOFF_UM))
    raw = ev.baseline_predictions(ds, theta, cutoff, get("jobs"))
    config = {"dataset": str(args.dataset), "dataset_seed": ds.seed, "theta": theta, "cutoff_um": cutoff}
    calibration = None
    cal = None
    if args.calibrate is not None:
        plan = _read_plan(args.calibrate)
        plan.check_against(ds)
        labels = {r.reading_id: s.mean_ra for s, r in ds.iter_readings()}
        cal = fit_affine_calibration([raw[i] for i in plan.train_ids], [labels[i] for i in plan.train_ids])
        calibration = {"a": cal.scale, "b": cal.offset, "split": str(args.calibrate),
                       "n_train": len(plan.train_ids)}
        config["calibrate"] = str(args.calibrate)
    records = []
    for s, r in ds.iter_readings():
        v = raw[r.reading_id]
        records.append({
            "reading_id": r.reading_id,
            "sample_id": s.sample_id,
            "baseline_ra": v,
            "calibrated_ra": apply_calibration(cal, v) if cal is not None else None,
        })
    _emit({"command": "baseline", "config": config, "calibration": calibration, "records": records}, args.out)


def _feature_settings(get, method):
    settings = {
        "alphas": list(_alphas(get("alphas"))),
        "norm_mode": get("norm_mode", "per_channel"),
    }
    if method == ev.ROCKET_RIDGE:
        settings["n_kernels"] = int(get("n_kernels", DEFAULT_N_KERNELS))
    else:
        settings["n_features"] = int(get("n_features", DEFAULT_N_FEATURES))
        settings["max_dilations"] = int(get("max_dilations", DEFAULT_MAX_DILATIONS))
    return settings


def cmd_train(args, get):
    if args.out is None:
        raise UsageError("train needs --out for the model file")
    ds = load_dataset(args.dataset)
    method = _method(get("method", "minirocket"))
    if method not in ev.FEATURE_METHODS:
        raise UsageError("train only applies to rocket and minirocket; baselines need no model")
    protocol = _protocol(get("protocol", "per20"))
    seed = int(get("seed", 0))
    ext_seed = int(get("extractor_seed", seed))
    theta = int(get("theta", DEFAULT_THETA))
    plans = ev.make_plans(ds, protocol, seed)
    fold = get("fold")
    if protocol == ev.KFOLD_STEEL:
        if fold is None:
            raise UsageError("kfold training needs --fold; evaluate --protocol kfold trains every fold")
        if not 0 <= int(fold) < len(plans):
            raise UsageError(f"--fold must be in [0, {len(plans) - 1}]")
        plan = plans[int(fold)]
    else:
        plan = plans[0]
    settings = _feature_settings(get, method)
    config = {"dataset": str(args.dataset), "dataset_seed": ds.seed, "method": method, "protocol": protocol,
              "fold": plan.fold_index, "seed": seed, "extractor_seed": ext_seed, "theta": theta, **settings}
    labels = {r.reading_id: s.mean_ra for s, r in ds.iter_readings()}
    readings = {r.reading_id: r for _, r in ds.iter_readings()}
    mats = [ev._thresholded(readings[i], theta) for i in plan.train_ids]
    y = np.array([labels[i] for i in plan.train_ids])
    kw = {k: v for k, v in settings.items() if k != "alphas"}
    model, _ = ev.train_model(mats, y, method, ext_seed, theta=theta, alphas=settings["alphas"],
                              jobs=get("jobs"), plan=plan, **kw)
    model = ev.TrainedModel(model.method, model.theta, model.norm, model.extractor, model.ridge, model.plan,
                            model.train_rmse, config)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    _emit({"command": "train", "config": config, "model": str(args.out), "alpha": model.ridge.alpha,
           "train_rmse": model.train_rmse, "n_train": len(plan.train_ids)}, None)


def _evaluate_model(args, ds, jobs):
    model = ev.TrainedModel.load(args.model)
    if model.plan is None:
        raise PlanMismatchError("model has no split plan to evaluate against")
    model.plan.check_against(ds)
    by_id = {r.reading_id: (s, r) for s, r in ds.iter_readings()}
    test = [by_id[i] for i in model.plan.test_ids]
    preds = ev.predict_readings(model, [r for _, r in test], jobs)
    records = [ev.PredictionRecord(r.reading_id, s.sample_id, s.mean_ra, float(p)) for (s, r), p in zip(test, preds)]
    config = {"dataset": str(args.dataset), "model": str(args.model), **model.config}
    return ev.evaluate_records(records, ds, model.method, model.plan.protocol, model.config.get("seed"),
                               model.train_rmse, config)


def cmd_evaluate(args, get):
    ds = load_dataset(args.dataset)
    jobs = get("jobs")
    if args.model is not None:
        report = _evaluate_model(args, ds, jobs)
    else:
        if get("method") is None:
            raise UsageError("evaluate needs --model or --method")
        method = _method(get("method"))
        protocol = _protocol(get("protocol", "per20"))
        seed = int(get("seed", 0))
        ext_seed = int(get("extractor_seed", seed))
        settings = _feature_settings(get, method) if method in ev.FEATURE_METHODS else {}
        kw = {k: v for k, v in settings.items() if k != "alphas"}
        if "alphas" in settings:
            kw["alphas"] = tuple(settings["alphas"])
        report = ev.run_experiment(ds, protocol, method, seed, theta=int(get("theta", DEFAULT_THETA)),
                                   cutoff_um=float(get("cutoff_um", DEFAULT_CUTOFF_UM)),
                                   extractor_seed=ext_seed, jobs=jobs, **kw)
        config = {"dataset": str(args.dataset), "method": method, "protocol": protocol, "seed": seed,
                  **report.config}
        report = ev.EvalReport(report.rmse, report.mse, report.pearson_r, report.max_error, report.pred_coverage,
                               report.records, report.method, report.protocol, report.seed, report.train_rmse,
                               config)
    doc = {"command": "evaluate", **report.to_dict()}
    _emit(doc, args.out)
    if args.csv is not None:
        report.write_csv(args.csv, ds)


def cmd_rf(args, get):
    print(ev.tcn_receptive_field(args.ks, args.nl, args.base))


# -------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scatter-ra", description="Laser-scatterometry Ra estimation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="JSON file of settings; flags override it")
        sp.add_argument("--seed", type=int, help="root seed (default 0)")
        sp.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
        if dataset:
            sp.add_argument("--dataset", required=True, help="dataset directory")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(s, dataset=False)
    s.add_argument("--out", help="output directory")
    s.add_argument("--samples", type=int, help="number of steel samples (default 49)")
    s.add_argument("--t", type=int, help="timesteps per reading (default 4096)")
    s.add_argument("--force", action="store_true", help="replace an existing output directory")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("baseline", help="closed-form Ra for every reading")
    common(b)
    b.add_argument("--theta", type=int, help=f"threshold rank (default {DEFAULT_THETA})")
    b.add_argument("--cutoff-um", dest="cutoff_um", type=float, help=f"waviness cutoff (default {DEFAULT_CUTOFF_UM:g})")
    b.add_argument("--calibrate", help="split plan (or model) file; fit a*x+b on its train ids")
    b.add_argument("--out", help="results JSON (default: stdout)")
    b.set_defaults(func=cmd_baseline)

    def features(sp):
        sp.add_argument("--method", help="baseline | calibrated | rocket | minirocket")
        sp.add_argument("--protocol", help="per20 | kfold (default per20)")
        sp.add_argument("--theta", type=int, help=f"threshold rank (default {DEFAULT_THETA})")
        sp.add_argument("--extractor-seed", dest="extractor_seed", type=int, help="kernel seed (default: --seed)")
        sp.add_argument("--alphas", help="comma-separated ridge penalties (default logspace(-3, 3, 10))")
        sp.add_argument("--n-kernels", dest="n_kernels", type=int, help=f"Rocket kernels (default {DEFAULT_N_KERNELS})")
        sp.add_argument("--n-features", dest="n_features", type=int,
                        help=f"MiniRocket features (default {DEFAULT_N_FEATURES})")
        sp.add_argument("--max-dilations", dest="max_dilations", type=int,
                        help=f"MiniRocket dilations per kernel (default {DEFAULT_MAX_DILATIONS})")
        sp.add_argument("--norm-mode", dest="norm_mode", choices=("per_channel", "global"))

    t = sub.add_parser("train", help="fit extractor + ridge on a split's train set")
    common(t)
    features(t)
    t.add_argument("--fold", type=int, help="fold index for --protocol kfold")
    t.add_argument("--out", help="model file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a model or method on held-out readings")
    common(e)
    features(e)
    e.add_argument("--cutoff-um", dest="cutoff_um", type=float, help=f"waviness cutoff (default {DEFAULT_CUTOFF_UM:g})")
    e.add_argument("--model", help="model file from `train`")
    e.add_argument("--out", help="report JSON (default: stdout)")
    e.add_argument("--csv", help="per-reading scatter CSV")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rf", help="receptive field of a TCN")
    r.add_argument("ks", type=int, help="kernel size")
    r.add_argument("nl", type=int, help="number of residual blocks")
    r.add_argument("--base", type=int, default=2, help="dilation base (default 2)")
    r.set_defaults(func=cmd_rf)
    return p


def _error_json(err) -> str:
    cause = err
    reading_id = None
    if isinstance(err, ReadingFailureError):
        reading_id = err.reading_id
    return json.dumps({"error": type(cause).__name__, "message": str(cause), "reading_id": reading_id})


def main(argv=None) -> int:
    level = os.environ.get("SCATTER_RA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        args.cfg = _load_config(getattr(args, "config", None))
        get = _Resolver(args, args.cfg)
        if getattr(args, "jobs", None) is not None or "jobs" in args.cfg:
            args.jobs = resolve_jobs(get("jobs"))
        log.info("running %s", args.command)
        args.func(args, get)
    except (ScatterRaError, ValueError, OSError) as err:
        sys.stderr.write(_error_json(err) + "\n")
        return 2 if isinstance(err, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
