"""Channel-wise and single-channel next-year cost predictors."""

from .ablation import AblationResult, Cell, ablation_grid, run_ablation
from .inputs import (
    CHANNEL_ORDER,
    Batch,
    PatientInputs,
    build_channel_inputs,
    build_vocab,
    code_channels,
    collate,
    prepare_inputs,
)
from .model import ChannelModel, ModelConfig
from .training import (
    Prediction,
    TrainConfig,
    TrainingDivergedError,
    TrainingLog,
    evaluate_loss,
    export_attention,
    predict,
    train,
)

__all__ = [
    "AblationResult",
    "Cell",
    "ablation_grid",
    "run_ablation",
    "CHANNEL_ORDER",
    "Batch",
    "ChannelModel",
    "ModelConfig",
    "PatientInputs",
    "Prediction",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingLog",
    "build_channel_inputs",
    "build_vocab",
    "code_channels",
    "collate",
    "evaluate_loss",
    "export_attention",
    "predict",
    "prepare_inputs",
    "train",
]
