"""Ridge regression with leave-one-out selection of the penalty.

Features are standardized with training statistics and the target is
centered, so the intercept is unpenalized. One spectral decomposition
serves every penalty on the grid: for ``Xs = U S V^T`` the hat matrix is
``11^T/n + U diag(s^2 / (s^2 + lam)) U^T`` and the leave-one-out residual
of row ``i`` is ``r_i / (1 - H_ii)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvariantError

DEFAULT_ALPHAS = tuple(np.logspace(-3, 3, 10))
SCALE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    alpha: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    alphas: tuple = DEFAULT_ALPHAS
    loo_mse: tuple = ()

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "alpha": self.alpha,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "alphas": list(self.alphas),
            "loo_mse": list(self.loo_mse),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RidgeModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["intercept"]), float(d["alpha"]),
                   np.asarray(d["feature_mean"], dtype=np.float64),
                   np.asarray(d["feature_scale"], dtype=np.float64),
                   tuple(d.get("alphas", DEFAULT_ALPHAS)), tuple(d.get("loo_mse", ())))


def standardize_stats(F: np.ndarray):
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale = np.where(scale < SCALE_FLOOR, 1.0, scale)
    return mean, scale


def _check(F, y):
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if F.ndim != 2 or y.ndim != 1 or F.shape[0] != y.shape[0]:
        raise InvariantError(f"F must be (n, p) and y (n,), got {F.shape} and {y.shape}")
    if F.shape[0] < 2:
        raise InvariantError("ridge needs at least two rows")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y))):
        raise InvariantError("features and targets must be finite")
    return F, y


def _spectrum(Xs):
    """Left singular vectors and squared singular values of ``Xs``."""
    n, p = Xs.shape
    if n <= p:
        evals, U = np.linalg.eigh(Xs @ Xs.T)
        return U, np.clip(evals, 0.0, None)
    U, s, _ = np.linalg.svd(Xs, full_matrices=False)
    return U, s * s


def loo_mse_path(Xs, yc, alphas, spectrum=None) -> np.ndarray:
    """Mean squared leave-one-out error for each penalty.

    ``Xs`` must have column means of zero and ``yc`` mean zero; the
    intercept's leverage ``1/n`` is included.
    """
    U, e = spectrum if spectrum is not None else _spectrum(Xs)
    n = Xs.shape[0]
    uty = U.T @ yc
    U2 = U * U
    out = np.empty(len(alphas))
    for i, lam in enumerate(alphas):
        shrink = e / (e + lam)
        fitted = U @ (shrink * uty)
        h = 1.0 / n + U2 @ shrink
        resid = (yc - fitted) / np.maximum(1.0 - h, 1e-12)
        out[i] = np.mean(resid * resid)
    return out


def _solve(Xs, yc, lam, spectrum):
    U, e = spectrum
    n, p = Xs.shape
    if n <= p:
        # dual form: w = Xs^T (Xs Xs^T + lam I)^-1 y
        return Xs.T @ (U @ ((U.T @ yc) / (e + lam)))
    return np.linalg.solve(Xs.T @ Xs + lam * np.eye(p), Xs.T @ yc)


def ridge_fit(F, y, alphas=DEFAULT_ALPHAS) -> RidgeModel:
    """Fit on standardized features, choosing the penalty by leave-one-out error."""
    F, y = _check(F, y)
    alphas = tuple(float(a) for a in alphas)
    if not alphas or min(alphas) <= 0:
        raise InvariantError("penalties must be positive")
    mean, scale = standardize_stats(F)
    Xs = (F - mean) / scale
    ybar = float(y.mean())
    yc = y - ybar
    spectrum = _spectrum(Xs)
    loo = loo_mse_path(Xs, yc, alphas, spectrum)
    best = int(np.argmin(loo))
    w = _solve(Xs, yc, alphas[best], spectrum)
    return RidgeModel(w, ybar, alphas[best], mean, scale, alphas, tuple(float(v) for v in loo))


def ridge_predict(model: RidgeModel, F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 1
    if single:
        F = F[None, :]
    if F.shape[1] != model.n_features:
        raise InvariantError(f"expected {model.n_features} features, got {F.shape[1]}")
    pred = ((F - model.feature_mean) / model.feature_scale) @ model.weights + model.intercept
    return pred[0] if single else pred
