"""Surface roughness (Ra) from laser-scatterometry readings.

Two estimators are provided: a closed-form pipeline that reconstructs the
surface from the scattered-light centroid, and random-convolution features
(Rocket / MiniRocket) with a ridge regression head.
"""

from .baseline import (
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
from .core_data import (
    Coating,
    Dataset,
    LaserReading,
    RoughnessProfile,
    SensorGeometry,
    SteelSample,
    SurfaceProfile,
    build_sensor_geometry,
    load_dataset,
    mean_ra_label,
    read_reading,
    save_dataset,
    write_reading,
)
from .evaluation import (
    EvalReport,
    NormStats,
    SplitPlan,
    TrainedModel,
    coverage,
    fit_norm,
    kfold_per_steel,
    max_error,
    mse,
    pearson,
    rmse,
    run_experiment,
    split_per_sample_20,
    tcn_receptive_field,
)
from .simulator import DatasetConfig, ScatterSpec, SurfaceSpec, forward_scatter, generate_dataset, synthesize_surface

__version__ = "0.1.0"
