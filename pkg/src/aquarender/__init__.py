"""Underwater image formation, adversarial water-column fitting, and restoration.

The functional core lives in :mod:`aquarender.physics` (forward model and
closed-form derivatives), :mod:`aquarender.fitting` (adversarial and
least-squares parameter estimation), :mod:`aquarender.restoration`
(model inversion and monocular depth), and :mod:`aquarender.metrics`
(color accuracy/consistency, RMSE, reference baselines).
:mod:`aquarender.estimators` wraps these in scikit-learn style
fit/transform classes, and :mod:`aquarender.cli` exposes the pipeline
subcommands.
"""

from .discriminator import Discriminator
from .estimators import (
    AdversarialWaterModel,
    DirectFitWaterModel,
    MonocularRestorer,
    WaterColumnSimulator,
)
from .fitting import (
    DirectFitResult,
    TrainConfig,
    TrainReport,
    disc_update,
    fit_direct,
    gen_update,
    train,
)
from .metrics import (
    ColorPatchSet,
    TrackSet,
    baseline_grayworld,
    baseline_histeq,
    color_accuracy,
    color_consistency,
    intensity_normalize,
    rmse_depth_norm,
    rmse_rgb,
)
from .physics import (
    PARAM_NAMES,
    CameraParams,
    RenderModel,
    WaterParams,
    apply_vignette,
    attenuate,
    backscatter_mask,
    compose_scatter,
    fill_missing_depth,
    missing_depth_mask,
    normalize_depth,
    render,
    render_gradients,
    sensor_gain,
    vignette_mask,
)
from .restoration import (
    RestorationResult,
    baseline_attenuation_only,
    estimate_depth,
    invert_render,
    restore_monocular,
    saturation_mask,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # physics
    "PARAM_NAMES", "WaterParams", "CameraParams", "RenderModel",
    "attenuate", "backscatter_mask", "compose_scatter", "vignette_mask",
    "apply_vignette", "sensor_gain", "render", "render_gradients",
    "normalize_depth", "missing_depth_mask", "fill_missing_depth",
    # fitting
    "Discriminator", "TrainConfig", "TrainReport", "DirectFitResult",
    "disc_update", "gen_update", "train", "fit_direct",
    # restoration
    "RestorationResult", "invert_render", "estimate_depth",
    "restore_monocular", "baseline_attenuation_only", "saturation_mask",
    # metrics
    "ColorPatchSet", "TrackSet", "intensity_normalize", "color_accuracy",
    "color_consistency", "rmse_rgb", "rmse_depth_norm",
    "baseline_histeq", "baseline_grayworld",
    # estimators
    "WaterColumnSimulator", "AdversarialWaterModel",
    "DirectFitWaterModel", "MonocularRestorer",
]
