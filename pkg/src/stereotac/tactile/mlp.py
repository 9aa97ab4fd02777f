"""Small multilayer perceptron mapping pixel colour and position to surface angles."""

from __future__ import annotations

import json
import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

HALF_PI = np.pi / 2.0
_EPS = 1e-6

MIN_RECOMMENDED_SAMPLES = 1000


class GradientRegressor(BaseEstimator, RegressorMixin):
    """Tanh MLP trained full-batch with Adam at a fixed step size.

    Inputs are ``(R, B, x, y)`` rows; outputs are the two surface angles in
    radians, clamped to the open interval (-pi/2, pi/2). Training is
    deterministic for a fixed ``random_state``.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Width of each hidden layer.
    learning_rate : float
        Adam step size, held constant.
    n_epochs : int
        Number of full-batch updates.
    validation_fraction : float
        Share of samples held out to report ``validation_rmse_``.
    max_samples : int or None
        Training rows are subsampled to this count (deterministically).
    random_state : int
        Seed for initialization, the split, and subsampling.
    """

    def __init__(self, hidden_layer_sizes=(32, 32, 32), learning_rate=1e-2, n_epochs=1500,
                 validation_fraction=0.1, max_samples=8000, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.n_epochs = n_epochs
        self.validation_fraction = validation_fraction
        self.max_samples = max_samples
        self.random_state = random_state

    def _init_params(self, n_in, n_out, rng):
        sizes = [n_in, *self.hidden_layer_sizes, n_out]
        coefs, intercepts = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (a + b))
            coefs.append(rng.uniform(-bound, bound, (a, b)))
            intercepts.append(np.zeros(b))
        return coefs, intercepts

    def _forward(self, X, coefs, intercepts):
        acts = [X]
        h = X
        for k, (W, b) in enumerate(zip(coefs, intercepts)):
            h = h @ W + b
            if k < len(coefs) - 1:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if np.ptp(y, axis=0).max() == 0:
            warnings.warn("degenerate calibration set: all labels are identical", stacklevel=2)
        if len(X) < MIN_RECOMMENDED_SAMPLES:
            warnings.warn(f"only {len(X)} calibration samples (< {MIN_RECOMMENDED_SAMPLES}); "
                          "the model is likely to overfit", stacklevel=2)
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_val = int(round(self.validation_fraction * len(X))) if len(X) >= 10 else 0
        val_idx, train_idx = order[:n_val], order[n_val:]
        if self.max_samples is not None and len(train_idx) > self.max_samples:
            train_idx = train_idx[:self.max_samples]

        self.x_mean_ = X[train_idx].mean(axis=0)
        scale = X[train_idx].std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        # float32 halves training time; predictions stay float64
        Xt = ((X[train_idx] - self.x_mean_) / self.x_scale_).astype(np.float32)
        yt = y[train_idx].astype(np.float32)

        coefs, intercepts = self._init_params(X.shape[1], y.shape[1], rng)
        coefs = [W.astype(np.float32) for W in coefs]
        intercepts = [b.astype(np.float32) for b in intercepts]
        params = coefs + intercepts
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2 = 0.9, 0.999
        n = len(Xt)
        losses = []
        for epoch in range(1, self.n_epochs + 1):
            acts = self._forward(Xt, coefs, intercepts)
            err = acts[-1] - yt
            losses.append(float(np.mean(err ** 2)))
            delta = 2.0 * err / (n * yt.shape[1])
            g_coefs, g_ints = [], []
            for k in range(len(coefs) - 1, -1, -1):
                g_coefs.append(acts[k].T @ delta)
                g_ints.append(delta.sum(axis=0))
                if k > 0:
                    delta = (delta @ coefs[k].T) * (1.0 - acts[k] ** 2)
            grads = g_coefs[::-1] + g_ints[::-1]
            lr = np.float32(self.learning_rate) * np.sqrt(1 - beta2 ** epoch) / (1 - beta1 ** epoch)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g * g
                p -= lr * mi / (np.sqrt(vi) + np.float32(1e-8))

        self.coefs_ = [W.astype(np.float64) for W in coefs]
        self.intercepts_ = [b.astype(np.float64) for b in intercepts]
        self.loss_curve_ = losses
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.angle_limit_ = float(np.abs(y[train_idx]).max())
        if n_val:
            resid = self.predict(X[val_idx]) - y[val_idx].reshape(n_val, -1)
            self.validation_rmse_ = float(np.sqrt(np.mean(resid ** 2)))
        else:
            self.validation_rmse_ = float("nan")
        return self

    def predict(self, X):
        if not hasattr(self, "coefs_"):
            raise NotFittedError("GradientRegressor is not fitted yet")
        X = check_array(X, dtype=np.float64)
        out = self._forward((X - self.x_mean_) / self.x_scale_, self.coefs_, self.intercepts_)[-1]
        out = np.clip(out, -HALF_PI + _EPS, HALF_PI - _EPS)
        return out[:, 0] if self.n_outputs_ == 1 else out

    def to_dict(self) -> dict:
        if not hasattr(self, "coefs_"):
            raise NotFittedError("GradientRegressor is not fitted yet")
        return {
            "kind": "GradientRegressor",
            "params": self.get_params(),
            "layer_sizes": [self.n_features_in_, *self.hidden_layer_sizes, self.n_outputs_],
            "activation": "tanh",
            "weights": [W.tolist() for W in self.coefs_],
            "biases": [b.tolist() for b in self.intercepts_],
            "x_mean": self.x_mean_.tolist(),
            "x_scale": self.x_scale_.tolist(),
            "loss_curve": self.loss_curve_,
            "angle_limit": self.angle_limit_,
            "validation_rmse": None if np.isnan(self.validation_rmse_) else self.validation_rmse_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradientRegressor":
        params = dict(d["params"])
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        model = cls(**params)
        model.coefs_ = [np.array(W, dtype=np.float64) for W in d["weights"]]
        model.intercepts_ = [np.array(b, dtype=np.float64) for b in d["biases"]]
        model.x_mean_ = np.array(d["x_mean"])
        model.x_scale_ = np.array(d["x_scale"])
        model.loss_curve_ = list(d["loss_curve"])
        model.validation_rmse_ = float("nan") if d["validation_rmse"] is None else d["validation_rmse"]
        model.angle_limit_ = d["angle_limit"]
        model.n_features_in_ = d["layer_sizes"][0]
        model.n_outputs_ = d["layer_sizes"][-1]
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict())
