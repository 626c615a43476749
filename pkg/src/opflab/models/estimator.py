"""scikit-learn style estimator wrapping one network of the zoo."""
from __future__ import annotations

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..autodiff import AdamState, adam_step, bce, load_checkpoint, mse, no_grad, save_checkpoint
from ..grid import GridCase
from ..sampling import derive_seed
from .arch import ArchSpec, CaseDims, build
from .inputs import InputAdapter

__all__ = ["GridNet", "TrainingError"]

log = logging.getLogger(__name__)

PREDICT_CHUNK = 256


class TrainingError(FloatingPointError):
    pass


def _scale(a):
    # columns that only move at solver-tolerance level (a unit parked on a bound)
    # are constant; dividing by their spread would turn rounding noise into targets
    s = a.std(axis=0)
    return np.where(s > 1e-8 * (1.0 + np.abs(a.mean(axis=0))), s, 1.0)


class GridNet(BaseEstimator):
    """Regressor of (Pg, generator-bus Vm) or classifier of binding constraints.

    Parameters follow the training protocol: Adam with ``learning_rate``,
    mini-batches of ``batch_size`` and early stopping after ``patience``
    epochs without validation improvement. Inputs are standardized with
    training statistics; regression targets too, so losses are reported in
    standardized units.
    """

    def __init__(
        self,
        case: GridCase | None = None,
        arch: str = "FCNN:global-1",
        task: str = "regression",
        k_edge: float = 0.0,
        width: int | None = None,
        batch_size: int = 100,
        patience: int = 20,
        max_epochs: int = 500,
        learning_rate: float = 1e-4,
        seed: int = 0,
    ):
        self.case = case
        self.arch = arch
        self.task = task
        self.k_edge = k_edge
        self.width = width
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.seed = seed

    # -- helpers ------------------------------------------------------------------------
    @property
    def spec(self) -> ArchSpec:
        return ArchSpec.parse(self.arch, self.task, self.k_edge)

    def _setup(self, n_out: int):
        if self.case is None:
            raise ValueError("GridNet needs a case")
        spec = self.spec
        dims = CaseDims.from_case(self.case)
        if spec.task == "regression" and n_out != dims.n_targets:
            raise ValueError(f"regression targets have {n_out} columns, the case needs {dims.n_targets}")
        self.network_ = build(spec, dims, n_out, seed=derive_seed(self.seed, 0), width=self.width)
        self.adapter_ = InputAdapter(self.case, spec, dims)
        self.n_params_ = self.network_.n_params

    def _check_x(self, X):
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        n_in = 2 * self.case.n_load
        if X.shape[1] != n_in:
            raise ValueError(f"X has {X.shape[1]} features, the case has {n_in}")
        return X

    def _loss_fn(self):
        return mse if self.spec.task == "regression" else bce

    def _target(self, y):
        return (y - self.y_mean_) / self.y_scale_ if self.spec.task == "regression" else y

    def _forward(self, xs, removed, training):
        return self.network_.forward(self.adapter_(xs, removed), training=training)

    def _raw(self, X, removed):
        xs = (X - self.x_mean_) / self.x_scale_
        out = np.empty((len(X), self.network_.n_out))
        with no_grad():
            for lo in range(0, len(X), PREDICT_CHUNK):
                sl = slice(lo, lo + PREDICT_CHUNK)
                out[sl] = self._forward(xs[sl], None if removed is None else removed[sl], False).data
        return out

    def _loss_on(self, X, y, removed):
        pred = self._raw(X, removed)
        return float(self._loss_fn()(self._target(y), pred).data)

    # -- estimator API ------------------------------------------------------------------
    def fit(self, X, y, removed=None, eval_set=None):
        """Train with early stopping on ``eval_set = (X_val, y_val[, removed_val])``.

        Without an eval set the last tenth of the training rows is held out.
        """
        X = self._check_x(X)
        y = check_array(y, dtype=np.float64, ensure_2d=True)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be at least 1")
        removed = None if removed is None else list(removed)
        if eval_set is None:
            cut = max(1, len(X) // 10)
            Xv, yv, rv = X[-cut:], y[-cut:], None if removed is None else removed[-cut:]
            X, y, removed = X[:-cut], y[:-cut], None if removed is None else removed[:-cut]
        else:
            Xv, yv, *rest = eval_set
            Xv = self._check_x(Xv)
            yv = check_array(yv, dtype=np.float64, ensure_2d=True)
            rv = list(rest[0]) if rest and rest[0] is not None else None
        if len(X) == 0 or len(Xv) == 0:
            raise ValueError("empty training or validation split")
        if self.spec.task == "classification" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("classification targets must be 0/1")

        self._setup(y.shape[1])
        self.x_mean_, self.x_scale_ = X.mean(axis=0), _scale(X)
        if self.spec.task == "regression":
            self.y_mean_, self.y_scale_ = y.mean(axis=0), _scale(y)
        xs = (X - self.x_mean_) / self.x_scale_
        ys = self._target(y)
        loss_fn = self._loss_fn()
        params = self.network_.named_params()
        opt = AdamState(lr=self.learning_rate)
        order_rng = np.random.default_rng(derive_seed(self.seed, 1))

        n = len(X)
        starts = list(range(0, n, self.batch_size))
        if len(starts) > 1 and n - starts[-1] < 2:
            starts.pop()  # fold a single leftover row into the previous batch
        bounds = list(zip(starts, starts[1:] + [n]))

        history = []
        best, best_state, best_epoch, since = np.inf, self.network_.state(), 0, 0
        t0 = time.perf_counter()
        for epoch in range(1, self.max_epochs + 1):
            perm = order_rng.permutation(n)
            total = 0.0
            for b, (lo, hi) in enumerate(bounds):
                idx = perm[lo:hi]
                rb = None if removed is None else [removed[i] for i in idx]
                pred = self._forward(xs[idx], rb, True)
                loss = loss_fn(ys[idx], pred)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                for p in params.values():
                    p.grad = None
                loss.backward()
                adam_step(params, {k: p.grad for k, p in params.items()}, opt)
                total += float(loss.data) * len(idx)
            val = self._loss_on(Xv, yv, rv)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val})
            if val < best:
                best, best_state, best_epoch, since = val, self.network_.state(), epoch, 0
            else:
                since += 1
                if since >= self.patience:
                    break
        self.network_.load_state(best_state)
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.best_val_loss_ = best
        self.fit_seconds_ = time.perf_counter() - t0
        log.info("%s: %d epochs, best %d (val %.4g)", self.arch, len(history), best_epoch, best)
        return self

    def predict(self, X, removed=None):
        """Targets in original units (regression) or 0/1 labels at threshold 0.5."""
        check_is_fitted(self, "network_")
        X = self._check_x(X)
        out = self._raw(X, None if removed is None else list(removed))
        if self.spec.task == "regression":
            return out * self.y_scale_ + self.y_mean_
        return (out >= 0.5).astype(float)

    def predict_proba(self, X, removed=None):
        check_is_fitted(self, "network_")
        if self.spec.task != "classification":
            raise AttributeError("predict_proba is only available for classification")
        return self._raw(self._check_x(X), None if removed is None else list(removed))

    def loss(self, X, y, removed=None) -> float:
        """Training loss on (X, y): standardized MSE or mean BCE."""
        check_is_fitted(self, "network_")
        return self._loss_on(self._check_x(X), check_array(y, dtype=np.float64), removed)

    def score(self, X, y, removed=None) -> float:
        return -self.loss(X, y, removed)

    # -- persistence ------------------------------------------------------------------------
    def manifest(self) -> dict:
        check_is_fitted(self, "network_")
        m = self.network_.manifest()
        m["params"] = {k: v for k, v in self.get_params().items() if k != "case"}
        m["best_epoch"] = self.best_epoch_
        return m

    def save(self, path):
        check_is_fitted(self, "network_")
        blocks = self.network_.state()
        blocks.update({"input.mean": self.x_mean_, "input.scale": self.x_scale_})
        if self.spec.task == "regression":
            blocks.update({"target.mean": self.y_mean_, "target.scale": self.y_scale_})
        meta = self.manifest()
        meta["history"] = self.history_
        return save_checkpoint(path, blocks, meta)

    @classmethod
    def load(cls, path, case: GridCase) -> "GridNet":
        blocks, meta = load_checkpoint(path)
        if meta["case_id"] != case.name:
            raise ValueError(f"checkpoint was trained on {meta['case_id']!r}, not {case.name!r}")
        est = cls(case=case, **meta["params"])
        est._setup(meta["n_out"])
        if est.network_.width != meta["width"]:
            est.network_ = build(est.spec, est.network_.dims, meta["n_out"], width=meta["width"])
        est.network_.load_state(blocks)
        est.x_mean_, est.x_scale_ = blocks["input.mean"], blocks["input.scale"]
        if est.spec.task == "regression":
            est.y_mean_, est.y_scale_ = blocks["target.mean"], blocks["target.scale"]
        est.history_ = meta["history"]
        est.best_epoch_ = meta["best_epoch"]
        est.n_params_ = est.network_.n_params
        return est
