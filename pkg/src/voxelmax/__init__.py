"""Voxel-weighted activation maximization.

Fit a lagged linear encoding model from pooled backbone features to
voxel responses, turn fitted weights into ROI contrast objectives, and
synthesize images that maximize them by gradient ascent through a
differentiable feature extractor.
"""

from .autodiff import Tensor, gradients
from .backbone import Backbone, BackboneSpec, describe_spec, resolve_spec, tiny_cnn_spec
from .encoder import (NoiseCeiling, RidgeEncoder, alpha_grid, build_design, fit_ridge,
                      noise_ceiling, prediction_accuracy, zscore_columns)
from .featurizer import (DEFAULT_FEATURE_BUDGET, FeatureExtractor, FeatureLayout,
                         concat_features, downsample_activation, target_spatial_size,
                         temporal_average)
from .fileformats import (FormatError, read_matrix, read_objective, read_voxel_weights,
                          write_matrix, write_objective, write_voxel_weights)
from .harness import (ExperimentConfig, ExperimentResult, StageError, SyntheticBrain,
                      calibration_table, expected_ceiling, generate_stimuli, make_brain,
                      run_experiment, selectivity_matrix, sigma_for_ceiling)
from .objective import (ContrastObjective, DegenerateObjectiveError, FingerprintMismatchError,
                        collapse_lags, contrast_weights, predicted_contrast, roi_aggregate)
from .synthesizer import (FourierImage, SynthesisConfig, SynthesisError, SynthesisTrace,
                          augment, save_png, synthesize)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "gradients",
    "Backbone", "BackboneSpec", "describe_spec", "resolve_spec", "tiny_cnn_spec",
    "NoiseCeiling", "RidgeEncoder", "alpha_grid", "build_design", "fit_ridge",
    "noise_ceiling", "prediction_accuracy", "zscore_columns",
    "DEFAULT_FEATURE_BUDGET", "FeatureExtractor", "FeatureLayout", "concat_features",
    "downsample_activation", "target_spatial_size", "temporal_average",
    "FormatError", "read_matrix", "read_objective", "read_voxel_weights",
    "write_matrix", "write_objective", "write_voxel_weights",
    "ExperimentConfig", "ExperimentResult", "StageError", "SyntheticBrain",
    "calibration_table", "expected_ceiling", "generate_stimuli", "make_brain",
    "run_experiment", "selectivity_matrix", "sigma_for_ceiling",
    "ContrastObjective", "DegenerateObjectiveError", "FingerprintMismatchError",
    "collapse_lags", "contrast_weights", "predicted_contrast", "roi_aggregate",
    "FourierImage", "SynthesisConfig", "SynthesisError", "SynthesisTrace",
    "augment", "save_png", "synthesize",
    "__version__",
]
