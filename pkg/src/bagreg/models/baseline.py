"""Radial-basis network baseline: a linear head on landmark features.

Prediction is beta^T mu_hat + b on the empirical mean embedding (or on the
point-shrunk embedding for the frequentist-shrinkage variant); training
minimizes mean squared error plus an L2 penalty lambda ||beta||^2 with
lambda = 1/(2 rho^2 n_train), the MAP weight for a N(0, rho^2) prior on beta
under unit observation noise.  Deterministic predictions, no density.
"""

from __future__ import annotations

import numpy as np

from ..embeddings import EmbeddingStats
from ..errors import InvalidArgumentError
from .common import FitConfig, RegressionModel, minibatch_fit


def baseline_predict(model: RegressionModel, stats: EmbeddingStats) -> float:
    """beta^T mu_hat + b."""
    mu = np.asarray(stats.mu_hat, dtype=float)
    if mu.shape != model.alpha.shape:
        raise InvalidArgumentError(
            f"feature dimension {mu.shape[0]} does not match model ({model.alpha.shape[0]})"
        )
    return float(model.alpha @ mu + model.intercept)


def baseline_loss(beta, intercept, features, labels, rho, n_train) -> float:
    """MSE over the batch plus lambda ||beta||^2, lambda = 1/(2 rho^2 n_train)."""
    beta = np.asarray(beta, dtype=float)
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float)
    if x.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise InvalidArgumentError("features and labels must align and be nonempty")
    resid = x @ beta + intercept - y
    lam = 1.0 / (2.0 * rho**2 * n_train)
    return float(np.mean(resid**2) + lam * np.dot(beta, beta))


def _loss_grad(theta, features, labels, rho, n_train):
    beta, b = theta[:-1], theta[-1]
    resid = features @ beta + b - labels
    lam = 1.0 / (2.0 * rho**2 * n_train)
    g_beta = 2.0 * (features.T @ resid) / labels.size + 2.0 * lam * beta
    g_b = 2.0 * np.mean(resid)
    return np.concatenate([g_beta, [g_b]])


def baseline_fit(
    train_x,
    train_y,
    early_x,
    early_y,
    rho: float,
    config: FitConfig = FitConfig(),
    init_intercept=None,
):
    """Fit (beta, b) by minibatch Adam with early stopping on held-out MSE.

    Returns (beta, intercept, meta).  The intercept starts at the training
    label mean so the optimizer only has to learn deviations from it.
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=float))
    train_y = np.asarray(train_y, dtype=float)
    early_x = np.atleast_2d(np.asarray(early_x, dtype=float))
    early_y = np.asarray(early_y, dtype=float)
    n, d = train_x.shape
    b0 = float(np.mean(train_y)) if init_intercept is None else float(init_intercept)
    theta0 = np.concatenate([np.zeros(d), [b0]])

    def batch_grad(theta, idx):
        return _loss_grad(theta, train_x[idx], train_y[idx], rho, n)

    def eval_metric(theta):
        resid = early_x @ theta[:-1] + theta[-1] - early_y
        return float(np.mean(resid**2))

    theta, meta = minibatch_fit(theta0, batch_grad, n, eval_metric, config)
    return theta[:-1], float(theta[-1]), meta
