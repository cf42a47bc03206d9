from ._staging import define_policy, finished_steps, input, policy_step, spec, state, transient
from .config import PolicyConfig, TrainConfig
from .loop import (
    METRICS_COLUMNS,
    METRICS_HEADER,
    EpochRecord,
    EvalReport,
    LossHook,
    RunMetrics,
    apply_stage,
    binarize_weights,
    evaluate,
    expert_utilization,
    read_metrics_csv,
    recalibrate_bn,
    replicate_model,
    train_epoch,
    train_stage,
)
from .optim import BinaryAdam, adam_step, build_optimizer
from .policy import STEP_IDS, TrainingPolicy, load_model, run_stage2_from, save_model
from .proxy import ProxyTrainer, adapt_to_dataset
from .schedule import lr_schedule, lr_trace

__all__ = [
    "define_policy",
    "finished_steps",
    "input",
    "policy_step",
    "spec",
    "state",
    "transient",
    "PolicyConfig",
    "TrainConfig",
    "METRICS_COLUMNS",
    "METRICS_HEADER",
    "EpochRecord",
    "EvalReport",
    "LossHook",
    "RunMetrics",
    "apply_stage",
    "binarize_weights",
    "evaluate",
    "expert_utilization",
    "read_metrics_csv",
    "recalibrate_bn",
    "replicate_model",
    "train_epoch",
    "train_stage",
    "BinaryAdam",
    "adam_step",
    "build_optimizer",
    "STEP_IDS",
    "TrainingPolicy",
    "load_model",
    "run_stage2_from",
    "save_model",
    "ProxyTrainer",
    "adapt_to_dataset",
    "lr_schedule",
    "lr_trace",
]
