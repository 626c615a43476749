"""Training protocol, evaluation metrics and repeat statistics."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from ..autodiff import bce
from ..models import GridNet
from ..sampling import Dataset, derive_seed

__all__ = [
    "TrainConfig",
    "RunStats",
    "train",
    "evaluate_regression",
    "evaluate_classification",
    "baseline_mse",
    "t_half_width",
    "repeat_stats",
    "summarize",
]


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 100
    patience: int = 20
    max_epochs: int = 500
    learning_rate: float = 1e-4
    seed: int = 0
    repeats: int = 3
    task: str = "regression"

    def __post_init__(self):
        if self.batch < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch, patience and max_epochs must be at least 1")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def loss(self) -> str:
        return "mse" if self.task == "regression" else "bce"

    def to_dict(self) -> dict:
        return asdict(self)


def _target(dataset: Dataset, task: str) -> str:
    return "y" if task == "regression" else "active"


def train(case, arch: str, dataset: Dataset, config: TrainConfig, seed: int | None = None, k_edge: float = 0.0):
    """Fit one model on the dataset's train part with validation-based early stopping.

    Returns the fitted estimator; its ``history_`` holds per-epoch losses.
    """
    if dataset.split is None:
        raise ValueError("dataset has no split; run sampling.split first")
    if dataset.case_id != case.name:
        raise ValueError(f"dataset is for {dataset.case_id!r}, model for {case.name!r}")
    if config.task == "classification" and len(dataset.nontrivial) == 0:
        raise ValueError("every constraint is trivially on or off in the training split; nothing to classify")
    target = _target(dataset, config.task)
    xt, yt = dataset.arrays("train", target)
    xv, yv = dataset.arrays("val", target)
    if len(xt) == 0 or len(xv) == 0:
        raise ValueError("empty train or validation split")
    model = GridNet(
        case=case,
        arch=arch,
        task=config.task,
        k_edge=k_edge,
        batch_size=config.batch,
        patience=config.patience,
        max_epochs=config.max_epochs,
        learning_rate=config.learning_rate,
        seed=config.seed if seed is None else seed,
    )
    return model.fit(xt, yt, removed=dataset.removed("train"), eval_set=(xv, yv, dataset.removed("val")))


def evaluate_regression(model, x, y, removed=None) -> float:
    """Test MSE in the model's standardized target units."""
    pred = model.predict(x, removed) if removed is not None else model.predict(x)
    scale = getattr(model, "y_scale_", 1.0)
    return float(np.mean(((pred - np.asarray(y, float)) / scale) ** 2))


def baseline_mse(model, y_train, y) -> float:
    """MSE of always predicting the training-target mean (same units as :func:`evaluate_regression`)."""
    mean = np.asarray(y_train, float).mean(axis=0)
    scale = getattr(model, "y_scale_", 1.0)
    return float(np.mean(((np.asarray(y, float) - mean) / scale) ** 2))


def evaluate_classification(model, x, c, removed=None) -> dict:
    """Mean BCE, plus precision and recall of the binding class at threshold 0.5."""
    proba = model.predict_proba(x, removed) if removed is not None else model.predict_proba(x)
    c = np.asarray(c, dtype=float)
    loss = float(bce(c, proba).data)
    pred = proba >= 0.5
    truth = c >= 0.5
    tp = float(np.sum(pred & truth))
    n_pred, n_true = float(pred.sum()), float(truth.sum())
    # empty denominators: nothing predicted (or nothing to find) counts as perfect
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_true if n_true else 1.0
    return {"bce": loss, "precision": precision, "recall": recall}


@dataclass(frozen=True)
class RunStats:
    values: tuple
    mean: float
    half_width: float
    seconds: float = 0.0

    @property
    def n(self) -> int:
        return len(self.values)

    def cell(self, digits: int = 4) -> str:
        return f"{self.mean:.{digits}g} ± {self.half_width:.{digits}g}"


def t_half_width(values, level: float = 0.95) -> float:
    """Two-sided Student-t confidence half-width; NaN for fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float("nan")
    s = v.std(ddof=1)
    return float(stats.t.ppf(0.5 + level / 2, v.size - 1) * s / np.sqrt(v.size))


def repeat_stats(experiment, repeats: int, seed: int = 0, workers: int = 1) -> RunStats:
    """Run ``experiment(seed_r)`` for independent per-repeat seeds.

    ``experiment`` returns a metric or ``(metric, seconds)``.
    """
    if repeats < 2:
        raise ValueError("repeat statistics need at least 2 repeats")
    seeds = [derive_seed(seed, r) for r in range(repeats)]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(experiment, seeds))
    else:
        results = [experiment(s) for s in seeds]
    wall = time.perf_counter() - t0
    values, secs = [], 0.0
    for r in results:
        if isinstance(r, tuple):
            values.append(float(r[0]))
            secs += float(r[1])
        else:
            values.append(float(r))
    return summarize(values, secs or wall)


def summarize(values, seconds: float = 0.0) -> RunStats:
    v = np.asarray(values, dtype=float)
    # sorted sum keeps the mean independent of repeat order
    mean = float(np.sum(np.sort(v)) / v.size)
    return RunStats(tuple(float(x) for x in v), mean, t_half_width(np.sort(v)), seconds)
