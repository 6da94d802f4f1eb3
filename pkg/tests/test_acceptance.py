"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (see ``criterion`` in conftest)
that is repeated in the terminal summary.
"""

import filecmp
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from scatter_ra import evaluation as ev
from scatter_ra.baseline import baseline_ra, gradients, highpass_roughness, ra, threshold
from scatter_ra.core_data import SurfaceProfile, build_sensor_geometry
from scatter_ra.features.minirocket import additive_convolution, kernel_weights
from scatter_ra.features.ridge import DEFAULT_ALPHAS, loo_mse_path, ridge_fit, standardize_stats
from scatter_ra.simulator import (
    DatasetConfig,
    ScatterSpec,
    SurfaceSpec,
    forward_scatter,
    generate_dataset,
    reflected_angles_deg,
    synthesize_surface,
)

GEOM = build_sensor_geometry()


# 1 -------------------------------------------------------------------------

def test_receptive_field_exact(criterion):
    t0 = time.perf_counter()
    got = [ev.tcn_receptive_field(9, 12), ev.tcn_receptive_field(5, 13), ev.tcn_receptive_field(7, 8)]
    dt = time.perf_counter() - t0
    criterion(1, got == [65520, 65528, 3060] and dt < 1.0, f"RF {got}, expected [65520, 65528, 3060], {dt:.3f}s")


# 2 -------------------------------------------------------------------------

def _round_trip_surfaces(n, seed=2024):
    """Noiseless surfaces whose reflections stay well inside the sensor arc.

    Slope scales as Ra / wavelength, so the band's upper wavelength grows
    with Ra; surfaces with any reflection beyond 50 degrees are redrawn.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        target = rng.uniform(0.5, 2.5)
        hi = min(49.3 * target, 78.0)
        s = int(rng.integers(2**32))
        p = synthesize_surface(SurfaceSpec(target, (0.8 * hi, hi), None, 4096, 0.8, n_components=4), s)
        if np.abs(reflected_angles_deg(p)).max() <= 50.0:
            out.append((p, s))
    return out


def test_baseline_round_trip(criterion):
    t0 = time.perf_counter()
    spec = ScatterSpec(8.0, 220.0, 0.0, 0.0)
    errs = []
    for p, s in _round_trip_surfaces(24):
        truth = ra(highpass_roughness(p))
        est = baseline_ra(forward_scatter(p, GEOM, spec, s))
        errs.append(abs(est - truth) / truth)
    dt = time.perf_counter() - t0
    worst = max(errs)
    criterion(2, worst <= 0.05 and len(errs) >= 20 and dt < 30,
              f"{len(errs)} surfaces, worst relative error {worst:.4%} (limit 5%), {dt:.1f}s")


# 3 -------------------------------------------------------------------------

def _fitted_amplitude(signal, wavelength, step=0.8):
    x = np.arange(signal.shape[0]) * step
    A = np.column_stack([np.sin(2 * np.pi * x / wavelength), np.cos(2 * np.pi * x / wavelength)])
    coef, *_ = np.linalg.lstsq(A, signal, rcond=None)
    return float(np.hypot(*coef))


def test_filter_behaviour(criterion):
    t0 = time.perf_counter()
    n = 4096
    x = np.arange(n) * 0.8
    margin = n // 4
    long_out = highpass_roughness(SurfaceProfile(np.sin(2 * np.pi * x / 200.0)), 80.0).heights
    long_amp = _fitted_amplitude(long_out, 200.0)
    long_interior = float(np.abs(long_out[margin:-margin]).max())
    short_in = np.sin(2 * np.pi * x / 20.0)
    short_out = highpass_roughness(SurfaceProfile(short_in), 80.0).heights
    core = slice(margin, -margin)
    short_err = float(np.sqrt(np.mean((short_out[core] - short_in[core]) ** 2) / np.mean(short_in[core] ** 2)))
    flat = ra(highpass_roughness(SurfaceProfile(np.full(n, 3.7)), 80.0))
    dt = time.perf_counter() - t0
    ok = long_amp < 0.01 and long_interior < 0.01 and short_err < 0.02 and flat == 0.0 and dt < 5
    criterion(3, ok, f"200um residual amplitude {long_amp:.2e}, interior max {long_interior:.2e} (<1e-2); "
                     f"20um RMS error {short_err:.2e} (<2e-2); flat Ra {flat!r}; {dt:.2f}s")


# 4 -------------------------------------------------------------------------

def test_hand_oracles(criterion):
    thr = threshold(np.array([[5, 3, 7, 3, 9]]), 2).tolist()
    sym = np.zeros((20, 1))
    sym[2, 0] = sym[17, 0] = 9.0
    single = np.zeros((20, 1))
    single[11, 0] = 1.0
    g_sym = float(gradients(sym, GEOM).values[0])
    g_single = float(gradients(single, GEOM).values[0])
    ok = thr == [[2, 0, 4, 0, 6]] and abs(g_sym) <= 1e-12 and abs(g_single - math.radians(5.05)) <= 1e-12
    criterion(4, ok, f"threshold {thr[0]}; symmetric {g_sym:.1e} rad; "
                     f"single +10.1deg -> {math.degrees(g_single):.12f} deg")


# 5 -------------------------------------------------------------------------

def _mac_convolution(x, w, d):
    L = x.shape[0]
    out = np.zeros(L)
    for m in range(9):
        s = (m - 4) * d
        lo, hi = max(0, -s), min(L, L - s)
        if lo < hi:
            out[lo:hi] += w[m] * x[lo + s:hi + s]
    return out


def test_minirocket_equivalence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    checked = 0
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(9, 257)))
        for k in range(84):
            w = kernel_weights(k)
            for d in range(1, 9):
                diff = np.abs(additive_convolution(x, k, d) - _mac_convolution(x, w, d)).max()
                worst = max(worst, float(diff))
                checked += 1
    dt = time.perf_counter() - t0
    criterion(5, worst <= 1e-9 and dt < 10,
              f"{checked} (signal, kernel, dilation) cases, max |diff| {worst:.2e} (limit 1e-9), {dt:.1f}s")


# 6 -------------------------------------------------------------------------

def test_ridge_correctness(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(5):
        F = rng.normal(size=(50, 10)) * rng.uniform(0.2, 5.0, 10) + rng.normal(size=10)
        y = F @ rng.normal(size=10) + rng.normal(size=50)
        mean, scale = standardize_stats(F)
        Xs = (F - mean) / scale
        for lam in DEFAULT_ALPHAS:
            oracle = np.linalg.solve(Xs.T @ Xs + lam * np.eye(10), Xs.T @ (y - y.mean()))
            worst = max(worst, float(np.abs(ridge_fit(F, y, (lam,)).weights - oracle).max()))

    F = rng.normal(size=(20, 5))
    y = F @ rng.normal(size=5) + 0.5 * rng.normal(size=20)
    model = ridge_fit(F, y)
    mean, scale = standardize_stats(F)
    Xs = (F - mean) / scale
    brute = []
    for lam in DEFAULT_ALPHAS:
        errs = []
        for i in range(20):
            keep = np.arange(20) != i
            A = np.column_stack([np.ones(19), Xs[keep]])
            P = lam * np.eye(6)
            P[0, 0] = 0.0  # intercept unpenalized
            beta = np.linalg.solve(A.T @ A + P, A.T @ y[keep])
            errs.append(y[i] - np.r_[1.0, Xs[i]] @ beta)
        brute.append(float(np.mean(np.square(errs))))
    brute_alpha = DEFAULT_ALPHAS[int(np.argmin(brute))]
    closed = loo_mse_path(Xs, y - y.mean(), DEFAULT_ALPHAS)
    path_err = float(np.max(np.abs(closed - brute) / np.asarray(brute)))
    ok = worst <= 1e-9 and model.alpha == brute_alpha
    criterion(6, ok, f"50x10 max |w - w_normal| {worst:.2e} (limit 1e-9); LOO picks {model.alpha:.4g}, "
                     f"refits pick {brute_alpha:.4g} (path rel. diff {path_err:.1e})")


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_ordering_on_default_dataset(criterion):
    t0 = time.perf_counter()
    ds = generate_dataset(seed=0, jobs=None)
    res = {}
    for protocol in ev.PROTOCOLS:
        for method in (ev.BASELINE, ev.BASELINE_CALIBRATED, ev.MINIROCKET_RIDGE):
            res[method, protocol] = ev.run_experiment(ds, protocol, method, seed=0, jobs=None)
    dt = time.perf_counter() - t0
    parts = []
    ok = dt < 15 * 60
    for protocol in ev.PROTOCOLS:
        mr = res[ev.MINIROCKET_RIDGE, protocol].rmse
        bl = res[ev.BASELINE, protocol]
        cal = res[ev.BASELINE_CALIBRATED, protocol]
        ok &= mr < bl.rmse and cal.train_rmse <= bl.train_rmse
        parts.append(f"{protocol}: minirocket {mr:.4f} vs baseline {bl.rmse:.4f}, "
                     f"train calibrated {cal.train_rmse:.4f} <= {bl.train_rmse:.4f}")
    criterion(7, ok, "; ".join(parts) + f"; {ds.n_readings} readings, {dt / 60:.1f} min (limit 15)")


# 8 -------------------------------------------------------------------------

def test_protocol_integrity(criterion):
    ds = generate_dataset(DatasetConfig(length_steps=256, stylus_tracks=2), seed=1, jobs=None)
    all_ids = sorted(r.reading_id for _, r in ds.iter_readings())
    plan = ev.split_per_sample_20(ds, seed=0)
    leak = set(plan.train_ids) & set(plan.test_ids)
    train_samples = {rid.split("_")[0] for rid in plan.train_ids}
    per20_ok = (not leak and sorted(plan.train_ids + plan.test_ids) == all_ids
                and train_samples == {s.sample_id for s in ds.samples})

    folds = ev.kfold_per_steel(ds)
    tested = sorted(rid for p in folds for rid in p.test_ids)
    one_sample = all(len({rid.split("_")[0] for rid in p.test_ids}) == 1 for p in folds)
    kfold_ok = len(folds) == len(ds.samples) and tested == all_ids and one_sample and all(
        not set(p.train_ids) & set(p.test_ids) for p in folds)

    raw = ev.run_experiment(ds, ev.PER_SAMPLE_20, ev.BASELINE)
    cal = ev.run_experiment(ds, ev.PER_SAMPLE_20, ev.BASELINE_CALIBRATED)
    y = np.array([r.truth for r in raw.records])
    p = np.array([r.prediction for r in raw.records])
    rmse_mse = abs(raw.rmse ** 2 - raw.mse) <= 1e-12 * max(raw.mse, 1.0)
    affine = abs(ev.pearson(y, 3.5 * p - 0.7) - ev.pearson(y, p)) <= 1e-12
    shared_r = abs(raw.pearson_r - cal.pearson_r) <= 1e-12
    ok = per20_ok and kfold_ok and rmse_mse and affine and shared_r
    criterion(8, ok, f"per20 leak {len(leak)}, samples in train {len(train_samples)}/{len(ds.samples)}; "
                     f"{len(folds)} folds partition {len(tested)}/{len(all_ids)} readings; rmse^2=mse {rmse_mse}; "
                     f"pearson affine-invariant {affine}; baseline r {raw.pearson_r:.12f} = "
                     f"calibrated r {cal.pearson_r:.12f}")


# 9 -------------------------------------------------------------------------

def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_determinism(tmp_path, criterion):
    # Each command runs in its own process, sharing a fresh numba cache: the
    # first replica compiles the kernels, later replicas load them from the
    # cache, as separate invocations would. Replicas use identical relative
    # paths because the echoed config records the paths it was given.
    env = {**os.environ, "NUMBA_CACHE_DIR": str(tmp_path / "numba-cache")}
    commands = [
        ["simulate", "--seed", "7", "--samples", "6", "--t", "1024", "--out", "ds"],
        ["train", "--dataset", "ds", "--method", "minirocket", "--seed", "3", "--out", "model.json"],
        ["evaluate", "--dataset", "ds", "--model", "model.json", "--out", "report.json", "--csv", "report.csv"],
        ["evaluate", "--dataset", "ds", "--method", "rocket", "--protocol", "kfold", "--n-kernels", "500",
         "--seed", "3", "--out", "kfold.json"],
    ]
    runs = {}
    for tag, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
        d = tmp_path / tag
        d.mkdir()
        for cmd in commands:
            proc = subprocess.run([sys.executable, "-m", "scatter_ra.cli", *cmd, "--jobs", jobs], cwd=d, env=env,
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
        runs[tag] = d
    checks = {}
    for other in ("b", "c"):
        checks[other] = _same_tree(runs["a"] / "ds", runs[other] / "ds") and all(
            filecmp.cmp(runs["a"] / f, runs[other] / f, shallow=False)
            for f in ("model.json", "report.json", "report.csv", "kfold.json"))
    criterion(9, all(checks.values()),
              f"separate-process repeat identical {checks['b']}; --jobs 1 vs 3 identical {checks['c']} "
              "(dataset, model, report JSON/CSV, k-fold report)")
