from .checkpoint import (
    Checkpoint, CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint,
)
from .loop import (
    LOG_COLUMNS, REFERENCE_EPOCHS, STAGES, ConfigurationError, StageResult, TrainConfig, mse_loss,
    predict_records, read_metrics_csv, run_stage, write_metrics_csv,
)
from .optim import OptimizerState, adam_step, clip_by_global_norm, global_norm

__all__ = [
    "Checkpoint", "CheckpointError", "CheckpointVersionError", "load_checkpoint", "save_checkpoint",
    "LOG_COLUMNS", "REFERENCE_EPOCHS", "STAGES", "ConfigurationError", "StageResult", "TrainConfig",
    "mse_loss", "predict_records", "read_metrics_csv", "run_stage", "write_metrics_csv",
    "OptimizerState", "adam_step", "clip_by_global_norm", "global_norm",
]
