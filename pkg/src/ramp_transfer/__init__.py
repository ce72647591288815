"""Predicting post-intervention freeway traffic parameters by temporal
correction, ridge-based variable selection and two-stage instance-transfer
boosting."""

from .core import (
    Period,
    RampTransferError,
    SegmentPosition,
    SiteMap,
    SiteMapError,
    TimeKey,
    TrafficSample,
    encode_time_key,
    validate_sample,
)
from .correction import (
    CorrectedProfile,
    Dataset,
    FeatureRow,
    INPUT_COLUMNS,
    TARGET_COLUMNS,
    pair_before_after,
    temporal_correct,
)
from .ridge import (
    RidgeRegressor,
    averaged_fit,
    filter_variables,
    ridge_fit,
    select_lambda,
)
from .boosting import AdaBoostR2, R2Ensemble, adaboost_r2_fit, weighted_median
from .transfer import (
    TransferConfig,
    TransferModel,
    TwoStageTrAdaBoostR2,
    build_substitute,
    two_stage_fit,
    transfer_predict,
)
from .evaluation import (
    KNNRegressor,
    MetricReport,
    ModelSpec,
    emit_report,
    grid_search,
    loso_cv,
    mae,
    mape,
    rmse,
)
from .synth import SynthConfig, SynthCorpus, generate

__version__ = "0.1.0"

__all__ = [
    "AdaBoostR2",
    "CorrectedProfile",
    "Dataset",
    "FeatureRow",
    "INPUT_COLUMNS",
    "KNNRegressor",
    "MetricReport",
    "ModelSpec",
    "Period",
    "R2Ensemble",
    "RampTransferError",
    "RidgeRegressor",
    "SegmentPosition",
    "SiteMap",
    "SiteMapError",
    "SynthConfig",
    "SynthCorpus",
    "TARGET_COLUMNS",
    "TimeKey",
    "TrafficSample",
    "TransferConfig",
    "TransferModel",
    "TwoStageTrAdaBoostR2",
    "adaboost_r2_fit",
    "averaged_fit",
    "build_substitute",
    "emit_report",
    "encode_time_key",
    "filter_variables",
    "generate",
    "grid_search",
    "loso_cv",
    "mae",
    "mape",
    "pair_before_after",
    "rmse",
    "ridge_fit",
    "select_lambda",
    "temporal_correct",
    "transfer_predict",
    "two_stage_fit",
    "validate_sample",
    "weighted_median",
]
