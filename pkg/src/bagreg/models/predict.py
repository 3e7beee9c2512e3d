"""Batch prediction dispatch for every model kind.

All embedding-based kinds share one featurization pass over the dataset; the
shrinkage-posterior kinds then reuse one Cholesky factorization per bag-size
group, so mixed-size test sets cost a handful of solves rather than one per
bag.  Results are returned in dataset order regardless of grouping.
"""

from __future__ import annotations

from typing import List

import numpy as np
from scipy.special import ndtr

from ..datagen import bayes_optimal_predict
from ..embeddings import (
    Bag,
    BagDataset,
    EmbeddingPosterior,
    EmbeddingStats,
    embed_dataset,
    posterior_group,
)
from ..errors import InvalidArgumentError
from ..predictive import PredictiveDistribution, bernoulli_predictive, point_predictive
from .baseline import baseline_predict
from .bdr import bdr_predict
from .blr import blr_predict
from .common import (
    BASELINE,
    BDR,
    BLR,
    FREQ_SHRINK,
    OPTIMAL,
    PROBIT_BLR,
    PROBIT_SHRINK,
    SHRINK_MAP,
    RegressionModel,
)
from .probit import probit_predictive
from .shrinkage import shrinkage_predictive


def predict_dataset(model: RegressionModel, dataset: BagDataset) -> List[PredictiveDistribution]:
    """One predictive distribution per bag, in dataset order."""
    if model.kind == OPTIMAL:
        if model.noise_sd is None:
            raise InvalidArgumentError("oracle model needs a noise_sd")
        return [
            bayes_optimal_predict(b, model.noise_sd, gamma_convention=model.gamma_convention)
            for b in dataset
        ]

    emb = embed_dataset(dataset, model.landmarks, model.kernel)

    if model.kind == BASELINE:
        means = emb.mu @ model.alpha + model.intercept
        return [point_predictive(float(m)) for m in means]

    if model.kind == BLR:
        return [
            blr_predict(model, EmbeddingStats(mu_hat=emb.mu[i], n=int(emb.sizes[i])))
            for i in range(len(dataset))
        ]

    if model.kind == PROBIT_BLR:
        probs = ndtr(emb.mu @ model.alpha)
        return [bernoulli_predictive(float(p)) for p in probs]

    # the remaining kinds run through the shrinkage posterior
    grams = model.grams()
    noise = model.noise()
    preds: List[PredictiveDistribution] = [None] * len(dataset)  # type: ignore[list-item]
    for n, idx in emb.group_by_size().items():
        m_rows, c = posterior_group(emb.mu[idx], n, noise, grams)
        if model.kind == FREQ_SHRINK:
            means = m_rows @ model.alpha + model.intercept
            for j, i in enumerate(idx):
                preds[i] = point_predictive(float(means[j]))
            continue
        for j, i in enumerate(idx):
            post = EmbeddingPosterior(M=m_rows[j], C=c, n=n)
            if model.kind == SHRINK_MAP:
                preds[i] = shrinkage_predictive(model.alpha, post, model.sigma)
            elif model.kind == BDR:
                preds[i] = bdr_predict(model, post)
            elif model.kind == PROBIT_SHRINK:
                preds[i] = probit_predictive(model.alpha, post)
            else:
                raise InvalidArgumentError(f"cannot predict with model kind {model.kind!r}")
    return preds


def predict_bag(model: RegressionModel, bag: Bag) -> PredictiveDistribution:
    return predict_dataset(model, BagDataset([bag]))[0]
