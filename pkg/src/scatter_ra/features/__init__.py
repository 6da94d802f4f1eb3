from .io import load_features, save_features
from .minirocket import (
    KERNEL_INDICES,
    MiniRocketParams,
    additive_convolution,
    fit_dilations,
    kernel_weights,
    minirocket_fit,
    minirocket_transform,
)
from .ridge import DEFAULT_ALPHAS, RidgeModel, loo_mse_path, ridge_fit, ridge_predict
from .rocket import KernelBank, generate_rocket_kernels, pool_max_ppv, rocket_transform

__all__ = [
    "DEFAULT_ALPHAS",
    "KERNEL_INDICES",
    "KernelBank",
    "MiniRocketParams",
    "RidgeModel",
    "additive_convolution",
    "fit_dilations",
    "generate_rocket_kernels",
    "kernel_weights",
    "load_features",
    "loo_mse_path",
    "minirocket_fit",
    "minirocket_transform",
    "pool_max_ppv",
    "ridge_fit",
    "ridge_predict",
    "rocket_transform",
    "save_features",
]
