"""scikit-learn style wrapper around the SO(3) model and its training loop."""

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DivergenceDetected
from ..matcore import derive_rng
from ..optim import OPTIMIZERS, LrSchedule, MatrixOptimizer, lr_at, split_parameters
from ..polar import NsConfig, Precision
from ..validation import check_point_clouds, check_targets
from .model import So3Model, backward, forward, mse_loss, rbf_features

logger = logging.getLogger(__name__)

# matrix-group learning rates that won a single-seed 30-epoch scan per arm (seed 0, hc=16)
DEFAULT_LR = {"adamw": 3e-3, "muon": 1e-2, "polaradamw": 1e-2}
DEFAULT_AUX_LR = 1e-3


class SO3Regressor(RegressorMixin, BaseEstimator):
    """Rotation-invariant regressor on ``(n_clouds, n_points, 3)`` inputs.

    Parameters
    ----------
    hidden_channels : int
        Scalar and vector multiplicity ``hc`` of every hidden layer.
    n_layers : int
    optimizer : {"adamw", "muon", "polaradamw"}
        Update applied to the 2-D weights; everything else always gets AdamW.
    lr, aux_lr : float or None
        Peak learning rates for the matrix group and the auxiliary group.
        ``None`` picks the per-arm default.
    epochs, warmup_epochs, patience : int
        Linear warmup then cosine decay; training stops once the eval MSE
        has not improved for ``patience`` epochs.
    weight_decay : float
        Decoupled decay for AdamW-type steps. Muon's matrix step never decays.
    ns_precision : {"bf16", "full"}
        Precision of the Newton-Schulz iteration.
    random_state : int
        Seeds initialisation and batch order. The same seed gives the same
        initial weights and batch order for every optimizer.
    """

    def __init__(self, hidden_channels=16, n_layers=3, optimizer="muon", lr=None,
                 aux_lr=None, epochs=100, warmup_epochs=10, patience=30,
                 weight_decay=0.0, batch_size=64, ns_precision="bf16",
                 random_state=0):
        self.hidden_channels = hidden_channels
        self.n_layers = n_layers
        self.optimizer = optimizer
        self.lr = lr
        self.aux_lr = aux_lr
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.patience = patience
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.ns_precision = ns_precision
        self.random_state = random_state

    def _validate_params(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.epochs < 0 or self.warmup_epochs < 0 or self.patience < 1:
            raise ValueError("epochs/warmup_epochs must be >= 0 and patience >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def init_model(self):
        return So3Model.initialize(self.hidden_channels, self.n_layers,
                                   derive_rng(self.random_state, "init"))

    def fit(self, X, y, eval_set=None):
        """Train from scratch.

        ``eval_set=(X_eval, y_eval)`` drives early stopping and the
        reported best epoch; without it the training MSE is used.
        """
        self._validate_params()
        X = check_point_clouds(X)
        y = check_targets(y, len(X))
        if eval_set is not None:
            X_eval = check_point_clouds(eval_set[0])
            y_eval = check_targets(eval_set[1], len(X_eval))

        model = self.init_model()
        split = split_parameters(model)
        ns = NsConfig(precision=Precision(self.ns_precision))
        opt = MatrixOptimizer(self.optimizer, split, weight_decay=self.weight_decay, ns=ns)
        lr = DEFAULT_LR[self.optimizer] if self.lr is None else self.lr
        aux_lr = DEFAULT_AUX_LR if self.aux_lr is None else self.aux_lr
        shuffle_rng = derive_rng(self.random_state, "shuffle")

        self.model_ = model
        self.history_ = []
        self.best_epoch_ = -1
        best_score = _mse(model, X_eval, y_eval) if eval_set is not None else np.inf
        best_params = model.copy().params
        stale = 0
        n = len(X)
        phi = rbf_features(X)
        for epoch in range(self.epochs):
            sched = LrSchedule(lr, self.warmup_epochs, self.epochs)
            factor = lr_at(sched, epoch) / lr
            order = shuffle_rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                # overflow shows up as a non-finite loss, checked right below
                with np.errstate(over="ignore", invalid="ignore"):
                    pred, cache = forward(model, X[idx], phi[idx])
                    loss, d_pred = mse_loss(pred, y[idx])
                if not np.isfinite(loss):
                    raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
                grads = backward(model, cache, d_pred)
                opt.step(model.params, grads, lr * factor, aux_lr * factor)
                total += loss * len(idx)
            record = {"epoch": epoch, "lr": lr * factor, "train_mse": total / n}
            score = record["train_mse"]
            if eval_set is not None:
                score = record["test_mse"] = _mse(model, X_eval, y_eval)
            if not np.isfinite(score):
                raise DivergenceDetected(f"non-finite eval loss at epoch {epoch}")
            self.history_.append(record)
            logger.debug("epoch %d %s", epoch, record)
            if score < best_score:
                best_score, stale, self.best_epoch_ = score, 0, epoch
                best_params = model.copy().params
            else:
                stale += 1
                if stale >= self.patience:
                    break
        model.params = best_params
        self.best_score_ = float(best_score)
        self.stopped_epoch_ = len(self.history_)
        self.optimizer_ = opt
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return _predict(self.model_, check_point_clouds(X))


def _predict(model, X, chunk=256):
    return np.concatenate([forward(model, X[i:i + chunk])[0]
                           for i in range(0, len(X), chunk)]) if len(X) else np.zeros(0)


def _mse(model, X, y):
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean((_predict(model, X) - y) ** 2))
