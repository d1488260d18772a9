"""
Neural-network surrogate for the technology loop.

A small keras MLP (input -> 16 -> 8 -> 1, sigmoid hidden layers, linear
output) trained in float64 with Adam on MSE plus an L2 weight penalty.
Targets are standardized before training; predictions are returned in the
original units.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import tensorflow as tf
from tensorflow import keras

from .errors import DivergenceError, InsufficientDataError, InvalidInputError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 8
HIDDEN_UNITS = (16, 8)


@dataclass(frozen=True)
class MLPSettings:
    epochs: int = 1500
    learning_rate: float = 0.02
    l2: float = 1e-4
    batch_size: int = 16
    validation_split: float = 0.2


def r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; 1.0 for zero-variance targets"""
    y_true = np.asarray(y_true, dtype=float)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum((y_true - np.asarray(y_pred, dtype=float)) ** 2)) / ss_tot


def build_model(dim: int, settings: MLPSettings = MLPSettings(), seed: int = 0) -> keras.Model:
    keras.utils.set_random_seed(seed)
    tf.config.experimental.enable_op_determinism()
    reg = keras.regularizers.L2(settings.l2)
    layers = [keras.Input(shape=(dim,), dtype="float64")]
    for units in HIDDEN_UNITS:
        layers.append(keras.layers.Dense(units, activation="sigmoid", kernel_regularizer=reg, dtype="float64"))
    layers.append(keras.layers.Dense(1, kernel_regularizer=reg, dtype="float64"))
    model = keras.Sequential(layers)
    model.compile(optimizer=keras.optimizers.Adam(learning_rate=settings.learning_rate), loss="mse")
    return model


class MLPSurrogate:
    """Trained point predictor y(x) over encoded technology genes"""

    def __init__(self, model: keras.Model, y_mean: float = 0.0, y_std: float = 1.0,
                 loss_history: Optional[List[float]] = None, r2_train: float = float("nan"),
                 r2_validation: float = float("nan")):
        self.model = model
        self.input_dim = int(model.get_weights()[0].shape[0])
        self.y_mean = y_mean
        self.y_std = y_std
        self.loss_history = loss_history or []
        self.r2_train = r2_train
        self.r2_validation = r2_validation

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise InvalidInputError(f"expected {self.input_dim} features, got {X.shape[1]}")
        out = self.model(X, training=False).numpy()[:, 0]
        return out * self.y_std + self.y_mean

    def get_weights(self) -> List[np.ndarray]:
        return [np.array(w) for w in self.model.get_weights()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        self.model.set_weights(list(weights))

    def _loss(self, X: np.ndarray, y_std: np.ndarray) -> tf.Tensor:
        pred = self.model(tf.constant(X), training=True)[:, 0]
        loss = tf.reduce_mean(tf.square(pred - tf.constant(y_std)))
        if self.model.losses:
            loss = loss + tf.add_n([tf.cast(l, tf.float64) for l in self.model.losses])
        return loss

    def loss(self, X, y) -> float:
        """Training objective (standardized MSE + L2) at the current weights"""
        X = np.asarray(X, dtype=np.float64)
        y = (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std
        return float(self._loss(X, y).numpy())

    def gradients(self, X, y) -> List[np.ndarray]:
        """d loss / d weights, ordered like get_weights()"""
        X = np.asarray(X, dtype=np.float64)
        y = (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std
        with tf.GradientTape() as tape:
            loss = self._loss(X, y)
        grads = tape.gradient(loss, self.model.trainable_weights)
        return [np.asarray(g) for g in grads]


def _split(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * fraction))
    if fraction > 0:
        n_val = min(max(n_val, 1), n - MIN_SAMPLES // 2)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train_mlp(X, y, epochs: Optional[int] = None, seed: int = 0,
              settings: MLPSettings = MLPSettings()) -> MLPSurrogate:
    """
    Fit the surrogate on (X, y) with a seeded 80/20 holdout. Raises
    DivergenceError when the loss stops being finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidInputError(f"X {X.shape} and y {y.shape} do not match")
    if len(X) < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples to train, got {len(X)}")
    epochs = settings.epochs if epochs is None else epochs

    train_idx, val_idx = _split(len(X), settings.validation_split, seed)
    y_mean = float(y[train_idx].mean())
    y_std = float(y[train_idx].std()) or 1.0
    y_scaled = (y - y_mean) / y_std

    model = build_model(X.shape[1], settings, seed)
    validation = (X[val_idx], y_scaled[val_idx, None]) if len(val_idx) else None
    history = model.fit(X[train_idx], y_scaled[train_idx, None], epochs=epochs, batch_size=settings.batch_size,
                        validation_data=validation, shuffle=True, verbose=0,
                        callbacks=[keras.callbacks.TerminateOnNaN()])
    losses = [float(v) for v in history.history.get("loss", [])]
    if not losses or not np.all(np.isfinite(losses)):
        raise DivergenceError(f"training loss became non-finite after {len(losses)} epochs; "
                              f"try a learning rate below {settings.learning_rate}")

    surrogate = MLPSurrogate(model, y_mean, y_std, losses)
    surrogate.r2_train = r2(y[train_idx], surrogate.predict(X[train_idx]))
    if len(val_idx):
        surrogate.r2_validation = r2(y[val_idx], surrogate.predict(X[val_idx]))
    logger.info(f"Trained MLP on {len(train_idx)} samples ({len(val_idx)} held out): "
                f"loss {losses[-1]:.3e}, R2 train {surrogate.r2_train:.4f}, validation {surrogate.r2_validation:.4f}")
    return surrogate
