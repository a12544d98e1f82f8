"""Delayed-feedback conversion-rate prediction with feedback-shift
importance weights: data model, synthetic generator with exact oracle
weights, counterfactual-deadline relabeling, weight estimation, weighted and
baseline trainers, metrics, and an experiment harness."""

from .data import (
    ClickRecord,
    FeatureVector,
    FieldSpec,
    LabeledSample,
    ParseError,
    TestSample,
    full_observation_labels,
    hash_features,
    hash_records,
    parse_record,
    read_tsv,
    snapshot_labels,
    stable_feature_hash,
    write_tsv,
)
from .experiment import (
    ExperimentConfig,
    PipelineError,
    ReportRow,
    config_from_dict,
    deadline_sweep,
    load_config,
    parse_duration,
    rolling_splits,
    run_pipeline,
)
from .metrics import (
    DelayStats,
    EvalReport,
    bootstrap_ci,
    delay_stats,
    evaluate_predictions,
    log_loss,
    normalized_log_loss,
    pr_auc,
)
from .optim import OptConfig, OptResult, features_to_csr, minimize_batch
from .relabel import ArtificialSample, ConfigError, RelabelConfig, build_artificial_datasets
from .simulate import (
    ExponentialDelay,
    ModulatedExponentialDelay,
    SimConfig,
    SimSample,
    generate_arrays,
    generate_dataset,
    oracle_fsiw,
    oracle_fsiw_array,
)
from .training import (
    DfmModel,
    LinearCvrModel,
    TrainingError,
    load_model,
    predict_cvr,
    predict_cvr_batch,
    predict_delay_rate,
    save_model,
    train_dfm,
    train_naive_logistic,
    train_weighted_logistic,
)
from .weights import (
    ElapsedBasis,
    WeightedDataset,
    WeightModel,
    WeightModelHyper,
    WeightModelPair,
    assign_fsiw,
    fit_weight_model,
    unit_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ArtificialSample",
    "ClickRecord",
    "ConfigError",
    "DelayStats",
    "DfmModel",
    "ElapsedBasis",
    "EvalReport",
    "ExperimentConfig",
    "ExponentialDelay",
    "FeatureVector",
    "FieldSpec",
    "LabeledSample",
    "LinearCvrModel",
    "ModulatedExponentialDelay",
    "OptConfig",
    "OptResult",
    "ParseError",
    "PipelineError",
    "RelabelConfig",
    "ReportRow",
    "SimConfig",
    "SimSample",
    "TestSample",
    "TrainingError",
    "WeightModel",
    "WeightModelHyper",
    "WeightModelPair",
    "WeightedDataset",
    "assign_fsiw",
    "bootstrap_ci",
    "build_artificial_datasets",
    "config_from_dict",
    "deadline_sweep",
    "delay_stats",
    "evaluate_predictions",
    "features_to_csr",
    "fit_weight_model",
    "full_observation_labels",
    "generate_arrays",
    "generate_dataset",
    "hash_features",
    "hash_records",
    "load_config",
    "load_model",
    "log_loss",
    "minimize_batch",
    "normalized_log_loss",
    "oracle_fsiw",
    "oracle_fsiw_array",
    "parse_duration",
    "parse_record",
    "pr_auc",
    "predict_cvr",
    "predict_cvr_batch",
    "predict_delay_rate",
    "read_tsv",
    "rolling_splits",
    "run_pipeline",
    "save_model",
    "snapshot_labels",
    "stable_feature_hash",
    "train_dfm",
    "train_naive_logistic",
    "train_weighted_logistic",
    "unit_weights",
    "write_tsv",
]
