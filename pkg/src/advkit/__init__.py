"""Small, self-contained adversarial-attack toolkit.

Pure-numpy classifiers with hand-written gradients, sign-based and
optimization-based evasion attacks, ensemble attacks with per-model
gating, and a deterministic evaluation pipeline for white-box and
transfer success rates.
"""

from .attacks import (
    AttackConfig,
    AttackGoal,
    AttackTrace,
    CWConfig,
    CWResult,
    GatingPolicy,
    StepRecord,
    clip_to_ball,
    cw_l2,
    cw_margin,
    fgsm,
    igsm,
    iterative_ensemble_attack,
    loss_ensemble_loss,
    prob_ensemble_loss,
    update_gating,
)
from .datasets import (
    Dataset,
    collection_id,
    load_datasets,
    load_idx,
    save_datasets,
    synthetic_dataset,
)
from .errors import (
    AdvkitError,
    ConfigError,
    ContractError,
    DataError,
    InvariantViolation,
    ShapeError,
)
from .evaluation import (
    CellResult,
    EvalSpec,
    SweepResult,
    TransferMatrix,
    assign_goals,
    eligible_indices,
    eval_report_csv,
    iteration_sweep,
    report_json,
    run_eval,
    source_label,
    subsample_indices,
    success,
    sweep_report_csv,
)
from .layers import (
    GRAD_CHECK_STEP,
    LayerGrads,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    grad_check,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .models import (
    DEFAULT_DATASET_SEED,
    ENSEMBLE_NAMES,
    HOLDOUT_NAME,
    ZOO_ENTRIES,
    Hyper,
    LayerDef,
    ModelMeta,
    ModelSpec,
    TrainedModel,
    ZooEntry,
    accuracy,
    adversarial_train,
    build_architecture,
    conv2d,
    dense,
    flatten,
    load_model,
    model_content_hash,
    relu,
    save_model,
    train,
    train_zoo,
)

__version__ = "0.1.0"

__all__ = [
    "AdvkitError",
    "AttackConfig",
    "AttackGoal",
    "AttackTrace",
    "CWConfig",
    "CWResult",
    "CellResult",
    "ConfigError",
    "ContractError",
    "DataError",
    "Dataset",
    "DEFAULT_DATASET_SEED",
    "ENSEMBLE_NAMES",
    "EvalSpec",
    "GRAD_CHECK_STEP",
    "GatingPolicy",
    "HOLDOUT_NAME",
    "Hyper",
    "InvariantViolation",
    "LayerDef",
    "LayerGrads",
    "ModelMeta",
    "ModelSpec",
    "ShapeError",
    "StepRecord",
    "SweepResult",
    "TrainedModel",
    "TransferMatrix",
    "ZOO_ENTRIES",
    "ZooEntry",
    "accuracy",
    "adversarial_train",
    "assign_goals",
    "build_architecture",
    "clip_to_ball",
    "collection_id",
    "conv2d",
    "conv2d_backward",
    "conv2d_forward",
    "cw_l2",
    "cw_margin",
    "dense",
    "dense_backward",
    "dense_forward",
    "eligible_indices",
    "eval_report_csv",
    "fgsm",
    "flatten",
    "grad_check",
    "igsm",
    "iteration_sweep",
    "iterative_ensemble_attack",
    "load_datasets",
    "load_idx",
    "load_model",
    "loss_ensemble_loss",
    "model_content_hash",
    "prob_ensemble_loss",
    "relu",
    "relu_backward",
    "relu_forward",
    "report_json",
    "run_eval",
    "save_datasets",
    "save_model",
    "softmax",
    "softmax_cross_entropy",
    "source_label",
    "subsample_indices",
    "success",
    "sweep_report_csv",
    "synthetic_dataset",
    "train",
    "train_zoo",
    "update_gating",
]
