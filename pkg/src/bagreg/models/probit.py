"""Probit classification through the embedding posterior.

With mu(z) | bag ~ N(M, C) and a probit link on f = alpha^T mu(z), the
Bernoulli class probability has the closed form

    Pr(y = 1 | bag, alpha) = Phi( alpha^T M / sqrt(1 + alpha^T C alpha) ),

the usual probit-Gaussian marginalization.  MAP fitting minimizes the
Bernoulli negative log-likelihood plus alpha^T K_z alpha / (2 rho^2), exactly
like the regression MAP fit.  The "empirical" variant runs the same objective
with C = 0 on raw empirical embeddings (no shrinkage layer).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from ..embeddings import EmbeddingPosterior
from ..errors import InvalidArgumentError
from ..predictive import PredictiveDistribution, bernoulli_predictive
from .bdr import BDRData
from .common import FitConfig, minibatch_fit

PROB_CLAMP = 1e-12


def probit_predictive(alpha: np.ndarray, post: EmbeddingPosterior) -> PredictiveDistribution:
    """Bernoulli with prob = Phi(alpha^T M / sqrt(1 + alpha^T C alpha))."""
    alpha = np.asarray(alpha, dtype=float)
    quad = max(float(alpha @ post.C @ alpha), 0.0)
    score = float(alpha @ post.M) / math.sqrt(1.0 + quad)
    return bernoulli_predictive(float(ndtr(score)))


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def probit_map_objective(
    alpha: np.ndarray,
    posteriors: Sequence[EmbeddingPosterior],
    labels: Sequence[float],
    kz: np.ndarray,
    rho: float,
) -> float:
    """Negative Bernoulli log-likelihood plus the K_z penalty, summed over bags."""
    alpha = np.asarray(alpha, dtype=float)
    total = 0.0
    for post, y in zip(posteriors, labels):
        if y not in (0, 1):
            raise InvalidArgumentError("probit labels must be 0 or 1")
        p = _clamp(probit_predictive(alpha, post).prob)
        total -= y * math.log(p) + (1 - y) * math.log(1.0 - p)
    return total + float(alpha @ kz @ alpha) / (2.0 * rho**2)


def probit_objective_and_grad(
    alpha: np.ndarray,
    data: BDRData,
    kz: np.ndarray,
    rho: float,
    idx: Optional[np.ndarray] = None,
    scale: float = 1.0,
):
    """Objective and exact gradient over a batch (all bags when idx is None).

    `scale` reweights the data term for minibatching; the penalty is unscaled.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = data.labels.size
    in_sel = np.zeros(n, dtype=bool)
    in_sel[np.arange(n) if idx is None else np.asarray(idx)] = True
    value = 0.0
    grad = np.zeros_like(alpha)
    for rows_all, c_g in data.groups:
        rows = rows_all[in_sel[rows_all]]
        if rows.size == 0:
            continue
        if c_g is None:
            c_alpha = None
            den = 1.0
        else:
            c_alpha = c_g @ alpha
            den = math.sqrt(1.0 + max(float(alpha @ c_alpha), 0.0))
        m_rows = data.m_rows[rows]
        xi = m_rows @ alpha
        s = xi / den
        p = _clamp(ndtr(s))
        y = data.labels[rows]
        value -= float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
        phi = np.exp(-0.5 * s**2) / math.sqrt(2.0 * math.pi)
        d_s = -phi * (y / p - (1.0 - y) / (1.0 - p))
        grad += (m_rows.T @ d_s) / den
        if c_alpha is not None:
            grad -= float(np.sum(d_s * xi)) / den**3 * c_alpha
    kz_alpha = kz @ alpha
    value = scale * value + float(alpha @ kz_alpha) / (2.0 * rho**2)
    grad = scale * grad + kz_alpha / rho**2
    return value, grad


def empirical_probit_data(mu: np.ndarray, labels: np.ndarray) -> BDRData:
    """Design for the no-shrinkage variant: scores alpha^T mu_hat, C = 0."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    return BDRData(
        m_rows=mu,
        groups=[(np.arange(mu.shape[0]), None)],
        labels=np.asarray(labels, dtype=float),
    )


def probit_map_fit(
    train_data: BDRData,
    early_data: BDRData,
    kz: np.ndarray,
    rho: float,
    config: FitConfig = FitConfig(),
):
    """MAP fit of alpha by minibatch Adam, early-stopped on held-out Bernoulli NLL."""
    labels = train_data.labels
    if np.any((labels != 0) & (labels != 1)):
        raise InvalidArgumentError("probit labels must be 0 or 1")
    n = labels.size
    theta0 = np.zeros(train_data.m_rows.shape[1])

    def batch_grad(theta, idx):
        _, g = probit_objective_and_grad(theta, train_data, kz, rho, idx=idx, scale=n / idx.size)
        return g

    def eval_metric(theta):
        val, _ = probit_objective_and_grad(theta, early_data, kz, rho=math.inf)
        return val / early_data.labels.size

    theta, meta = minibatch_fit(theta0, batch_grad, n, eval_metric, config)
    return theta, meta
