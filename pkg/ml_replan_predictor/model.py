"""
Replanning-benefit regressor: robust scaling plus a small ReLU network.

The network maps the 42 replanning features to the expected SOC saving of
replanning now. It is trained on scaled targets with a mean absolute error
loss, Adam with a step-decayed learning rate, and early stopping on a held
out validation fraction.
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.inspection import permutation_importance as sklearn_permutation_importance
from sklearn.metrics import mean_absolute_error
from sklearn.model_selection import KFold

import config
from mapf_core import MapfError

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'mlp-replan-predictor'
MODEL_VERSION = 1
SCALE_FLOOR = 1e-9


class TrainingError(MapfError):
    """Training could not produce a usable model."""


class ModelFormatError(MapfError):
    """Malformed or incompatible model file."""


@dataclass
class ScalerParams:
    """Per-column median and interquartile range."""
    center: np.ndarray
    scale: np.ndarray

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.center) / self.scale

    def inverse_transform(self, data: np.ndarray) -> np.ndarray:
        return np.asarray(data, dtype=np.float64) * self.scale + self.center


def fit_scaler(data: np.ndarray) -> ScalerParams:
    """
    Median/IQR scaler; a zero IQR is floored at SCALE_FLOOR.

    sklearn's RobustScaler would replace a zero range with 1 instead.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] < 2:
        raise ValueError(f"need at least 2 rows to fit a scaler, got {data.shape[0]}")
    q1, median, q3 = np.percentile(data, [25, 50, 75], axis=0)
    return ScalerParams(center=median, scale=np.maximum(q3 - q1, SCALE_FLOOR))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = config.BATCH_SIZE
    max_epochs: int = config.MAX_EPOCHS
    patience: int = config.EARLY_STOP_PATIENCE
    validation_split: float = config.VALIDATION_SPLIT
    learning_rate: float = config.INITIAL_LEARNING_RATE
    decay_rate: float = config.DECAY_RATE
    decay_steps: int = config.DECAY_STEPS
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    epsilon: float = config.ADAM_EPSILON
    hidden_layers: Tuple[int, ...] = tuple(config.HIDDEN_LAYERS)
    seed: int = config.TRAIN_SEED

    def __post_init__(self):
        for name in ('batch_size', 'max_epochs', 'patience', 'decay_steps', 'learning_rate'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience >= self.max_epochs:
            raise ValueError(f"patience {self.patience} must be below max epochs {self.max_epochs}")
        if not 0 < self.validation_split < 1:
            raise ValueError(f"validation split must be in (0, 1), got {self.validation_split}")

    @classmethod
    def from_values(cls, values: dict) -> 'TrainConfig':
        return cls(batch_size=values['batch_size'], max_epochs=values['max_epochs'],
                   patience=values['patience'], validation_split=values['validation_split'],
                   learning_rate=values['learning_rate'], decay_rate=values['decay_rate'],
                   decay_steps=values['decay_steps'], seed=values['train_seed'])


@dataclass
class EpochRecord:
    epoch: int
    train_mae_scaled: float
    val_mae_scaled: float
    val_mae_seconds: float
    learning_rate: float


# Network math on lists of (weights, bias); weights are (fan_in, fan_out)

def init_params(layer_sizes: Sequence[int], rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    """He-uniform weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def forward(params, x: np.ndarray):
    """Returns (output column, cache of layer inputs and pre-activations)."""
    cache = []
    a = x
    for i, (w, b) in enumerate(params):
        z = a @ w + b
        cache.append((a, z))
        a = z if i == len(params) - 1 else np.maximum(z, 0.0)
    return a, cache


def backward(params, cache, d_out: np.ndarray):
    """Gradients of sum(d_out * output) with respect to every (weights, bias)."""
    grads = [None] * len(params)
    delta = d_out
    for i in reversed(range(len(params))):
        a, z = cache[i]
        if i < len(params) - 1:
            delta = delta * (z > 0)
        w = params[i][0]
        grads[i] = (a.T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
    return grads


class AdamOptimizer:
    """Adam with eta(s) = eta0 * gamma ** floor(s / s_decay), s counting updates."""

    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.m = [np.zeros_like(p) for pair in params for p in pair]
        self.v = [np.zeros_like(p) for pair in params for p in pair]

    @property
    def learning_rate(self) -> float:
        return config.get_learning_rate(self.step, self.cfg.learning_rate, self.cfg.decay_rate,
                                        self.cfg.decay_steps)

    def update(self, params, grads):
        cfg = self.cfg
        lr = self.learning_rate
        t = self.step + 1
        flat_params = [p for pair in params for p in pair]
        flat_grads = [g for pair in grads for g in pair]
        updated = []
        for i, (p, g) in enumerate(zip(flat_params, flat_grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g * g
            m_hat = self.m[i] / (1 - cfg.beta1 ** t)
            v_hat = self.v[i] / (1 - cfg.beta2 ** t)
            updated.append(p - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon))
        self.step += 1
        return list(zip(updated[0::2], updated[1::2]))


def mae_gradient(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d/dpred of mean |pred - target| over the batch."""
    return np.sign(pred - target) / len(pred)


class MlpModel(RegressorMixin, BaseEstimator):
    """
    Feed-forward ReLU regressor [d, 64, 32, 16, 1] with a linear output.

    Inputs and targets go through a median/IQR scaler; ``predict`` returns
    values in target units (seconds).
    """

    def __init__(self, train_config: Optional[TrainConfig] = None):
        self.train_config = train_config

    @property
    def cfg(self) -> TrainConfig:
        return self.train_config or TrainConfig()

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        cfg = self.cfg
        if len(X) < cfg.batch_size:
            raise TrainingError(f"need at least {cfg.batch_size} records, got {len(X)}")
        rng = np.random.default_rng(cfg.seed)

        order = rng.permutation(len(X))
        n_val = max(1, int(round(cfg.validation_split * len(X))))
        val_idx, fit_idx = order[:n_val], order[n_val:]
        self.validation_index_ = np.sort(val_idx)

        # scalers see the fitting rows only
        self.x_scaler_ = fit_scaler(X[fit_idx])
        self.y_scaler_ = fit_scaler(y[fit_idx])
        x_fit = self.x_scaler_.transform(X[fit_idx])
        y_fit = self.y_scaler_.transform(y[fit_idx][:, None])
        x_val = self.x_scaler_.transform(X[val_idx])
        y_val = self.y_scaler_.transform(y[val_idx][:, None])

        layer_sizes = [X.shape[1]] + list(cfg.hidden_layers) + [1]
        params = init_params(layer_sizes, rng)
        optimizer = AdamOptimizer(params, cfg)
        best = (np.inf, 0, params)
        self.history_ = []

        for epoch in range(cfg.max_epochs):
            lr = optimizer.learning_rate
            batch_losses = []
            perm = rng.permutation(len(x_fit))
            for start in range(0, len(perm), cfg.batch_size):
                batch = perm[start:start + cfg.batch_size]
                pred, cache = forward(params, x_fit[batch])
                loss = float(np.mean(np.abs(pred - y_fit[batch])))
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {optimizer.step} "
                                        f"(learning rate {optimizer.learning_rate:g})")
                batch_losses.append(loss * len(batch))
                grads = backward(params, cache, mae_gradient(pred, y_fit[batch]))
                params = optimizer.update(params, grads)

            val_pred, _ = forward(params, x_val)
            val_mae = float(np.mean(np.abs(val_pred - y_val)))
            if not np.isfinite(val_mae):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            val_seconds = val_mae * float(self.y_scaler_.scale[0])
            self.history_.append(EpochRecord(epoch, sum(batch_losses) / len(x_fit), val_mae,
                                             val_seconds, lr))
            if val_mae < best[0]:
                best = (val_mae, epoch, params)
            elif epoch - best[1] >= cfg.patience:
                logger.info(f"Early stop at epoch {epoch}; best epoch {best[1]} "
                            f"(val MAE {best[0]:.4f} scaled)")
                break
            if epoch % 50 == 0:
                logger.debug(f"epoch {epoch}: train {self.history_[-1].train_mae_scaled:.4f} "
                             f"val {val_mae:.4f} lr {lr:.6g}")

        self.best_epoch_ = best[1]
        self.params_ = best[2]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out, _ = forward(self.params_, self.x_scaler_.transform(X))
        return self.y_scaler_.inverse_transform(out)[:, 0]


def train(X: np.ndarray, y: np.ndarray, cfg: Optional[TrainConfig] = None) -> Tuple[MlpModel, List[EpochRecord]]:
    """Fit a fresh model; returns it with its per-epoch history."""
    model = MlpModel(cfg).fit(X, y)
    logger.info(f"Trained for {len(model.history_)} epochs, best epoch {model.best_epoch_}")
    return model, model.history_


def predict(model: MlpModel, x: Sequence[float]) -> float:
    """Prediction for one feature vector, in seconds."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != model.n_features_in_:
        raise ValueError(f"expected a vector of {model.n_features_in_} features, got shape {x.shape}")
    return float(model.predict(x[None, :])[0])


@dataclass
class CvResult:
    fold_mae: List[float] = field(default_factory=list)
    fold_mae_scaled: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_mae))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_mae))


def kfold_cv(X: np.ndarray, y: np.ndarray, k: int = config.CV_FOLDS,
             cfg: Optional[TrainConfig] = None) -> CvResult:
    """Train k models on shuffled folds and report each held-out fold's MAE."""
    cfg = cfg or TrainConfig()
    if k < 2 or len(X) < k:
        raise ValueError(f"cannot run {k}-fold CV on {len(X)} records")
    result = CvResult()
    folds = KFold(n_splits=k, shuffle=True, random_state=cfg.seed)
    for fold, (train_idx, test_idx) in enumerate(folds.split(X)):
        model, _ = train(X[train_idx], y[train_idx], cfg)
        mae = mean_absolute_error(y[test_idx], model.predict(X[test_idx]))
        result.fold_mae.append(float(mae))
        result.fold_mae_scaled.append(float(mae / model.y_scaler_.scale[0]))
        logger.info(f"Fold {fold + 1}/{k}: MAE {mae:.4f}s")
    logger.info(f"{k}-fold CV MAE: {result.mean:.4f} +/- {result.std:.4f}s")
    return result


def permutation_importance(model: MlpModel, X: np.ndarray, y: np.ndarray,
                           repeats: int = config.IMPORTANCE_REPEATS,
                           seed: int = config.IMPORTANCE_SEED):
    """
    MAE increase (seconds) when each feature column is shuffled.

    Returns:
        (mean increase per feature, raw increases of shape (features, repeats))
    """
    if len(X) == 0:
        raise ValueError("permutation importance needs a non-empty test set")
    result = sklearn_permutation_importance(model, X, y, scoring='neg_mean_absolute_error',
                                            n_repeats=repeats, random_state=seed)
    return result.importances_mean, result.importances


def _floats(values) -> str:
    return ' '.join(repr(float(v)) for v in np.ravel(values))


def save_model(model: MlpModel, path: str):
    """Plain-text model: header, scalers, then row-major layer matrices."""
    sizes = [model.params_[0][0].shape[0]] + [w.shape[1] for w, _ in model.params_]
    lines = [f"{MODEL_FORMAT} v{MODEL_VERSION}",
             'layers ' + ' '.join(str(s) for s in sizes),
             'x_center ' + _floats(model.x_scaler_.center),
             'x_scale ' + _floats(model.x_scaler_.scale),
             'y_center ' + _floats(model.y_scaler_.center),
             'y_scale ' + _floats(model.y_scaler_.scale)]
    for i, (w, b) in enumerate(model.params_):
        lines.append(f"weights {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(_floats(row) for row in w)
        lines.append(f"bias {i} " + _floats(b))
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f"Model saved to {path}")


def load_model(path: str) -> MlpModel:
    with open(path, 'r') as f:
        lines = f.read().splitlines()
    try:
        if lines[0] != f"{MODEL_FORMAT} v{MODEL_VERSION}":
            raise ModelFormatError(f"{path}: unsupported header {lines[0]!r}")
        sizes = [int(tok) for tok in lines[1].split()[1:]]

        def vector(line, tag):
            parts = line.split()
            if parts[0] != tag:
                raise ModelFormatError(f"{path}: expected '{tag}', got {parts[0]!r}")
            return np.array([float(tok) for tok in parts[1:]])

        model = MlpModel()
        model.x_scaler_ = ScalerParams(vector(lines[2], 'x_center'), vector(lines[3], 'x_scale'))
        model.y_scaler_ = ScalerParams(vector(lines[4], 'y_center'), vector(lines[5], 'y_scale'))
        params = []
        pos = 6
        for i in range(len(sizes) - 1):
            rows, cols = (int(tok) for tok in lines[pos].split()[2:4])
            if (rows, cols) != (sizes[i], sizes[i + 1]):
                raise ModelFormatError(f"{path}: layer {i} shape {rows}x{cols} does not match header")
            w = np.array([[float(tok) for tok in line.split()] for line in lines[pos + 1:pos + 1 + rows]])
            b = vector(lines[pos + 1 + rows], 'bias')[1:]
            params.append((w.reshape(rows, cols), b))
            pos += rows + 2
    except (IndexError, ValueError) as e:
        raise ModelFormatError(f"{path}: {e}")
    model.params_ = params
    model.n_features_in_ = sizes[0]
    model.best_epoch_ = None
    model.history_ = []
    return model


def write_history(history: Sequence[EpochRecord], path: str):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['epoch', 'train_mae_scaled', 'val_mae_scaled', 'val_mae_seconds', 'learning_rate'])
        for record in history:
            writer.writerow([record.epoch, repr(record.train_mae_scaled), repr(record.val_mae_scaled),
                             repr(record.val_mae_seconds), repr(record.learning_rate)])
