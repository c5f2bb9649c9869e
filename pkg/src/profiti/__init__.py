"""Joint probabilistic forecasting of irregularly sampled multivariate time
series with an invertible-attention conditional normalizing flow."""

from .data import (
    Observation,
    Query,
    SeriesInstance,
    SortCriterion,
    argsort_queries,
    load_jsonl,
    save_jsonl,
)
from .encoder import EncoderConfig
from .metrics import MetricReport, evaluate_metrics
from .model import DensityResult, ModelConfig, ProfitiModel, build_variant
from .synthetic import SyntheticConfig, generate
from .training import RunRecord, TrainConfig, evaluate, run_ablation, train

__all__ = [
    "Observation", "Query", "SeriesInstance", "SortCriterion",
    "argsort_queries", "load_jsonl", "save_jsonl",
    "EncoderConfig", "MetricReport", "evaluate_metrics",
    "DensityResult", "ModelConfig", "ProfitiModel", "build_variant",
    "SyntheticConfig", "generate",
    "RunRecord", "TrainConfig", "evaluate", "run_ablation", "train",
]

__version__ = "0.1.0"
