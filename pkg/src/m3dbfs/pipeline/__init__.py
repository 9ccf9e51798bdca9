"""Three-stage training pipeline, checkpoints and evaluation."""

from .checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .inspect import (
    REPORT_A_HEADER,
    REPORT_B_HEADER,
    RoutingCounts,
    report_a,
    report_b,
    routing_counts,
    rows_csv,
)
from .metrics import METRIC_NAMES, Metrics, aggregate, auc_score, confusion_metrics, metrics_tsv, table_row
from .models import (
    Batch,
    FusionOutput,
    Stage1Model,
    Stage2Model,
    Stage3Model,
    UniModalModel,
    collate,
    iter_batches,
    predict_proba,
    routing_records,
)
from .training import (
    STAGE_COLUMNS,
    PipelineResult,
    build_stage3,
    config_from_checkpoint,
    evaluate,
    load_model,
    load_stage1,
    load_stage2,
    load_stage3,
    run_cv,
    run_pipeline,
    split_validation,
    stage3_objective,
    train_stage1,
    train_stage2,
    train_stage3,
)

__all__ = [
    "Checkpoint",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "REPORT_A_HEADER",
    "REPORT_B_HEADER",
    "RoutingCounts",
    "report_a",
    "report_b",
    "routing_counts",
    "rows_csv",
    "METRIC_NAMES",
    "Metrics",
    "aggregate",
    "auc_score",
    "confusion_metrics",
    "metrics_tsv",
    "table_row",
    "Batch",
    "FusionOutput",
    "Stage1Model",
    "Stage2Model",
    "Stage3Model",
    "UniModalModel",
    "collate",
    "iter_batches",
    "predict_proba",
    "routing_records",
    "STAGE_COLUMNS",
    "PipelineResult",
    "build_stage3",
    "config_from_checkpoint",
    "evaluate",
    "load_model",
    "load_stage1",
    "load_stage2",
    "load_stage3",
    "run_cv",
    "run_pipeline",
    "split_validation",
    "stage3_objective",
    "train_stage1",
    "train_stage2",
    "train_stage3",
]
