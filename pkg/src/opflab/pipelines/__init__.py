"""Training, evaluation, hybrid solver pipelines and reporting."""
from .hybrid import (
    CLIP_MARGIN,
    FeasibilityError,
    FeasibilityResult,
    WarmStartResult,
    feasibility_test,
    warm_start_eval,
)
from .reports import inference_benchmark, mean_solve_time, stats_table, write_csv, write_markdown
from .training import (
    RunStats,
    TrainConfig,
    baseline_mse,
    evaluate_classification,
    evaluate_regression,
    repeat_stats,
    summarize,
    t_half_width,
    train,
)

__all__ = [
    "CLIP_MARGIN",
    "FeasibilityError",
    "FeasibilityResult",
    "RunStats",
    "TrainConfig",
    "WarmStartResult",
    "baseline_mse",
    "evaluate_classification",
    "evaluate_regression",
    "feasibility_test",
    "inference_benchmark",
    "mean_solve_time",
    "repeat_stats",
    "stats_table",
    "summarize",
    "t_half_width",
    "train",
    "warm_start_eval",
    "write_csv",
    "write_markdown",
]
