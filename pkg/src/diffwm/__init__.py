"""Watermarking the intermediate diffusion process of DDPM-style models.

The watermark is baked into the training targets so that it shows up in the
averaged reverse-process state at a chosen step ``t_A`` and is absent from the
final samples.
"""

from diffwm.schedule import (
    VarianceSchedule,
    compute_K,
    compute_f1,
    compute_f2,
    default_beta_range,
    make_linear_schedule,
)
from diffwm.watermark import WatermarkSpec, compute_bt, make_pattern, scale_pattern_dynamic
from diffwm.forward import (
    TrainingPair,
    build_training_pair,
    diffuse_embedding,
    diffuse_simulation,
    diffuse_vanilla,
    recursive_step,
)
from diffwm.reverse import (
    TrajectoryBatch,
    average_snapshot,
    posterior_params,
    reverse_step,
    sample,
)
from diffwm.verification import VerificationReport, contour_similarity, find_contours, preprocess, verify

__version__ = "0.1.0"

__all__ = [
    "VarianceSchedule",
    "make_linear_schedule",
    "default_beta_range",
    "compute_K",
    "compute_f1",
    "compute_f2",
    "WatermarkSpec",
    "make_pattern",
    "scale_pattern_dynamic",
    "compute_bt",
    "TrainingPair",
    "diffuse_vanilla",
    "diffuse_embedding",
    "diffuse_simulation",
    "build_training_pair",
    "recursive_step",
    "TrajectoryBatch",
    "posterior_params",
    "reverse_step",
    "sample",
    "average_snapshot",
    "VerificationReport",
    "preprocess",
    "find_contours",
    "contour_similarity",
    "verify",
]
