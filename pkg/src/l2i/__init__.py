"""Domain-robust classification with learnable hypersphere center points.

A small numpy library built around three ideas: class anchors on the unit
hypersphere learned from target-domain samples only, margin losses that pull
latents inside per-class spheres while pushing the anchors apart, and
selective gradient routing so the encoder never learns from the (nuisance
contaminated) classification gradient. Includes its own reverse-mode
autodiff engine, a synthetic benchmark generator that plants a spurious
domain cue, a trainer with the baseline variants, and evaluation metrics.
"""

from . import autodiff, cli, config, data, losses, metrics, model, suite, trainer
from .autodiff import Tensor, backward, finite_difference_check
from .config import ExperimentConfig, default_config, emit_config, parse_config
from .data import Batch, DatasetConfig, DomainSpec, Sample, generate_dataset, sample_batch
from .losses import LossBreakdown, LossConfig, center_point_loss, latent_loss, total_loss
from .metrics import MetricScores, accuracy, auroc, cohen_kappa
from .model import ModelConfig, ModelParams, classify, encode, fixed_center_points, init_center_points
from .suite import dump_latent_projection, run_suite
from .trainer import (
    EarlyStopConfig,
    OptimizerConfig,
    RunResult,
    Variant,
    evaluate,
    run_experiment,
    train,
    train_step,
)

__all__ = [
    "Tensor",
    "backward",
    "finite_difference_check",
    "ExperimentConfig",
    "default_config",
    "emit_config",
    "parse_config",
    "Batch",
    "DatasetConfig",
    "DomainSpec",
    "Sample",
    "generate_dataset",
    "sample_batch",
    "LossBreakdown",
    "LossConfig",
    "center_point_loss",
    "latent_loss",
    "total_loss",
    "MetricScores",
    "accuracy",
    "auroc",
    "cohen_kappa",
    "ModelConfig",
    "ModelParams",
    "classify",
    "encode",
    "fixed_center_points",
    "init_center_points",
    "dump_latent_projection",
    "run_suite",
    "EarlyStopConfig",
    "OptimizerConfig",
    "RunResult",
    "Variant",
    "evaluate",
    "run_experiment",
    "train",
    "train_step",
]
