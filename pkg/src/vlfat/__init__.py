"""Variable-length volumetric classification.

A ViT slice encoder embeds each 2D slice of a volume; a transformer
aggregator with a length-interpolatable learnable positional table combines
the slice sequence into one volume representation. Training randomizes the
sequence length per step and resamples the positional table to match, which
makes the model robust to volume resolutions never seen in training.
"""

from .aggregator import (
    AGGREGATOR_MODES,
    Conv1DAggregator,
    FATAggregator,
    PEBank,
    interpolate_pe,
    sample_length,
    sinusoidal_pe,
)
from .autodiff import Tensor, set_debug_checks
from .data import (
    AugmentConfig,
    Manifest,
    SyntheticTaskSpec,
    Volume,
    augment,
    generate_synthetic_dataset,
    load_volume,
    subsample_slices,
)
from .encoder import EncoderConfig, SliceEncoder, patchify
from .errors import (
    ConfigError,
    CorruptFileError,
    InvalidInputError,
    ShapeError,
    TrainingAborted,
)
from .estimator import VolumeClassifier
from .metrics import EvalResult, auroc_ova, balanced_accuracy, confusion_matrix
from .model import ModelConfig, VolumeModel, load_checkpoint, predict, save_checkpoint
from .rng import RngStream
from .training import (
    AdamW,
    TrainConfig,
    class_weights,
    cosine_lr,
    evaluate,
    train,
    weighted_ce_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATOR_MODES",
    "AdamW",
    "AugmentConfig",
    "ConfigError",
    "Conv1DAggregator",
    "CorruptFileError",
    "EncoderConfig",
    "EvalResult",
    "FATAggregator",
    "InvalidInputError",
    "Manifest",
    "ModelConfig",
    "PEBank",
    "RngStream",
    "ShapeError",
    "SliceEncoder",
    "SyntheticTaskSpec",
    "Tensor",
    "TrainConfig",
    "TrainingAborted",
    "Volume",
    "VolumeClassifier",
    "VolumeModel",
    "augment",
    "auroc_ova",
    "balanced_accuracy",
    "class_weights",
    "confusion_matrix",
    "cosine_lr",
    "evaluate",
    "generate_synthetic_dataset",
    "interpolate_pe",
    "load_checkpoint",
    "load_volume",
    "patchify",
    "predict",
    "sample_length",
    "save_checkpoint",
    "set_debug_checks",
    "sinusoidal_pe",
    "subsample_slices",
    "train",
    "weighted_ce_loss",
]
