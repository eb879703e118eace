"""Sequential adaptation of batch-streaming predictors with multiple adaptive
mechanisms and generic strategies for choosing between them."""
from .bdwm import BatchDWM
from .bpl import BatchPairedLearner
from .errors import AdaptError, ConfigError, DimensionError, IoError, MechanismError, ParseError
from .evaluation import (
    RunRecord,
    build_rank_table,
    friedman_test,
    load_records,
    nemenyi_critical_difference,
    normalize_scores,
    write_report,
)
from .experiment import ExperimentConfig, run_grid
from .framework import (
    AdaptiveMechanism,
    Algorithm,
    LabeledBatch,
    PredictorState,
    StrategySpec,
    deploy_am,
    initial_state,
    oracle_select,
    predict_batch,
    retrospective_correct,
    run_strategy,
    xv_select,
)
from .metrics import CLASSIFICATION, REGRESSION, score_batch
from .sable import Sable
from .streams import SYNTHETIC_SUITE, Drift, StreamSpec, generate, load_csv_stream

__version__ = "0.1.0"

__all__ = [
    "AdaptError", "AdaptiveMechanism", "Algorithm", "BatchDWM", "BatchPairedLearner",
    "CLASSIFICATION", "ConfigError", "DimensionError", "Drift", "ExperimentConfig",
    "IoError", "LabeledBatch", "MechanismError", "ParseError", "PredictorState",
    "REGRESSION", "RunRecord", "SYNTHETIC_SUITE", "Sable", "StrategySpec", "StreamSpec",
    "build_rank_table", "deploy_am", "friedman_test", "generate", "initial_state",
    "load_csv_stream", "load_records", "nemenyi_critical_difference", "normalize_scores",
    "oracle_select", "predict_batch", "retrospective_correct", "run_grid", "run_strategy",
    "score_batch", "write_report", "xv_select",
]
