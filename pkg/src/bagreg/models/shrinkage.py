"""Mean-shrinkage regression: Gaussian label likelihood through the embedding posterior.

For bag i with embedding posterior (M_i, C_i), weights alpha give the label
predictive N(xi_i, nu_i) with xi_i = alpha^T M_i and nu_i = alpha^T C_i alpha
+ sigma^2, so small bags (wide C_i) automatically predict with more variance.
The fit minimizes the penalized negative log-likelihood

    sum_i 1/2 [log(2 pi nu_i) + (y_i - xi_i)^2 / nu_i] + alpha^T K_z alpha / (2 rho^2)

over (alpha, log sigma, log eta) with Adam on minibatches and early stopping
on a held-out split.

Everything is organized around the fact that bags sharing a size N share the
matrix (R + Sigma/N): one Cholesky per distinct size covers posterior means,
covariances, and every gradient term.  With A = R + Sigma/N, t = A^-1 R alpha,
w_i = A^-1 (mu_hat_i - m0) and e = alpha - t, the eta-derivatives reduce to

    d xi_i / d eta = (R1 e)^T w_i,      d nu_i / d eta = e^T R1 e,

where R1 is the unscaled prior Gram (R = eta R1).  Gradients are exact, not
autodiff; the finite-difference suite pins them.

The fitting workspace requires tied landmarks (u = z), which is how every
experiment runs; prediction through EmbeddingPosterior has no such limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..embeddings import DatasetEmbeddings, EmbeddingPosterior, NoiseModel
from ..errors import InvalidArgumentError
from ..kernels import (
    KernelParams,
    LandmarkSet,
    cholesky_factor,
    chol_solve_factor,
    gram,
)
from ..predictive import LOG_2PI, PredictiveDistribution, gaussian_predictive
from .common import FitConfig, minibatch_fit


def shrinkage_predictive(
    alpha: np.ndarray, post: EmbeddingPosterior, sigma: float
) -> PredictiveDistribution:
    """N(alpha^T M, alpha^T C alpha + sigma^2)."""
    alpha = np.asarray(alpha, dtype=float)
    mean = float(alpha @ post.M)
    quad = float(alpha @ post.C @ alpha)
    return gaussian_predictive(mean, max(quad, 0.0) + sigma**2)


def shrinkage_nll_objective(
    alpha: np.ndarray,
    sigma: float,
    posteriors: Sequence[EmbeddingPosterior],
    labels: Sequence[float],
    kz: np.ndarray,
    rho: float,
) -> float:
    """Penalized Gaussian NLL, summed over bags, constants included."""
    alpha = np.asarray(alpha, dtype=float)
    total = 0.0
    for post, y in zip(posteriors, labels):
        pred = shrinkage_predictive(alpha, post, sigma)
        total += 0.5 * (LOG_2PI + math.log(pred.variance) + (y - pred.mean) ** 2 / pred.variance)
    return total + float(alpha @ kz @ alpha) / (2.0 * rho**2)


@dataclass
class SizeGroup:
    n: int
    idx: np.ndarray  # rows of the embedding table with this bag size


class ShrinkageWorkspace:
    """Precomputed per-dataset quantities for shrinkage fits (tied landmarks).

    Holds the unscaled prior Gram R1 (so eta can move during the fit), the
    regulariser Gram K_z, centered embeddings, and the size groups.
    """

    def __init__(
        self,
        table: DatasetEmbeddings,
        noise: NoiseModel,
        landmarks: LandmarkSet,
        params: KernelParams,
    ):
        if not landmarks.tied:
            raise InvalidArgumentError("shrinkage fitting requires tied landmarks (u = z)")
        self.table = table
        self.noise = noise
        self.landmarks = landmarks
        self.params = params
        self.r1 = gram(landmarks.u, landmarks.u, params, eta=1.0, kernel="r")
        self.kz = gram(landmarks.z, landmarks.z, params, eta=1.0, kernel="k")
        self.delta = table.mu - noise.m0[None, :]
        self.labels = table.labels
        self.groups = [SizeGroup(n=n, idx=idx) for n, idx in table.group_by_size().items()]
        self.n_bags = len(table)
        self.dim = landmarks.n_obs

    # -- per-group linear algebra ---------------------------------------

    def _factor(self, eta: float, n: int):
        return cholesky_factor(eta * self.r1 + self.noise.Sigma / n)[0]

    def posterior_means(self, eta: float) -> np.ndarray:
        """All posterior means M_i as rows, one factorization per distinct size."""
        m = np.empty_like(self.table.mu)
        r = eta * self.r1
        for g in self.groups:
            chol = self._factor(eta, g.n)
            w = chol_solve_factor(chol, self.delta[g.idx].T)
            m[g.idx] = (r @ w).T + self.noise.m0[None, :]
        return m

    def posterior_cov(self, eta: float, n: int) -> np.ndarray:
        r = eta * self.r1
        chol = self._factor(eta, n)
        c = r - r @ chol_solve_factor(chol, r)
        return 0.5 * (c + c.T)

    def posteriors(self, eta: float):
        """EmbeddingPosterior per bag (C shared within a size group)."""
        m = self.posterior_means(eta)
        covs = {g.n: self.posterior_cov(eta, g.n) for g in self.groups}
        return [
            EmbeddingPosterior(M=m[i], C=covs[int(self.table.sizes[i])], n=int(self.table.sizes[i]))
            for i in range(self.n_bags)
        ]

    # -- objective and gradients -----------------------------------------

    def data_nll_and_grads(
        self,
        alpha: np.ndarray,
        sigma: float,
        eta: float,
        idx: Optional[np.ndarray] = None,
        with_grads: bool = True,
    ):
        """Sum of per-bag Gaussian NLL terms over `idx` (all bags when None).

        Returns (nll, grads) with grads = {"alpha", "log_sigma", "log_eta"}
        (None when with_grads is false).  No penalty term here.
        """
        alpha = np.asarray(alpha, dtype=float)
        sel = np.arange(self.n_bags) if idx is None else np.asarray(idx)
        in_sel = np.zeros(self.n_bags, dtype=bool)
        in_sel[sel] = True
        s2 = sigma**2
        nll = 0.0
        g_alpha = np.zeros_like(alpha) if with_grads else None
        g_log_sigma = 0.0
        g_log_eta = 0.0
        alpha_m0 = float(alpha @ self.noise.m0)
        for group in self.groups:
            rows = group.idx[in_sel[group.idx]]
            if rows.size == 0:
                continue
            chol = self._factor(eta, group.n)
            r_alpha = eta * (self.r1 @ alpha)
            w = chol_solve_factor(chol, self.delta[rows].T)  # (d, n_g)
            t = chol_solve_factor(chol, r_alpha)
            e = alpha - t
            quad = float(alpha @ r_alpha - r_alpha @ t)
            nu = max(quad, 0.0) + s2
            xi = w.T @ r_alpha + alpha_m0
            resid = self.labels[rows] - xi
            nll += 0.5 * float(np.sum(np.log(2.0 * math.pi * nu) + resid**2 / nu))
            if not with_grads:
                continue
            g_xi = -resid / nu
            g_nu = 0.5 * float(np.sum(1.0 / nu - resid**2 / nu**2))
            # d xi_i/d alpha = M_i = R w_i + m0;  d nu/d alpha = 2 C alpha = 2 eta R1 e
            w_gxi = w @ g_xi
            r1_e = self.r1 @ e
            g_alpha += eta * (self.r1 @ w_gxi) + float(np.sum(g_xi)) * self.noise.m0
            g_alpha += g_nu * 2.0 * eta * r1_e
            g_log_sigma += g_nu * 2.0 * s2
            # d xi_i/d eta = (R1 e)^T w_i;  d nu/d eta = e^T R1 e
            g_log_eta += eta * (float(r1_e @ w_gxi) + g_nu * float(e @ r1_e))
        grads = None
        if with_grads:
            grads = {"alpha": g_alpha, "log_sigma": g_log_sigma, "log_eta": g_log_eta}
        return nll, grads

    def mean_nll(self, alpha: np.ndarray, sigma: float, eta: float) -> float:
        """Average per-bag predictive NLL (the early-stopping metric)."""
        nll, _ = self.data_nll_and_grads(alpha, sigma, eta, with_grads=False)
        return nll / self.n_bags

    def penalized_objective_and_grad(
        self,
        theta: np.ndarray,
        rho: float,
        learn_eta: bool = True,
        fixed_eta: float = 1.0,
        idx: Optional[np.ndarray] = None,
        scale: float = 1.0,
    ):
        """Objective and gradient in the packed parameterization.

        theta = [alpha, log sigma, log eta] when learn_eta else [alpha, log sigma].
        `scale` multiplies the data term (minibatch reweighting); the penalty
        alpha^T K_z alpha / (2 rho^2) is never scaled.
        """
        s = self.dim
        alpha = theta[:s]
        log_sigma = theta[s]
        eta = math.exp(theta[s + 1]) if learn_eta else fixed_eta
        sigma = math.exp(log_sigma)
        nll, grads = self.data_nll_and_grads(alpha, sigma, eta, idx=idx)
        kz_alpha = self.kz @ alpha
        value = scale * nll + float(alpha @ kz_alpha) / (2.0 * rho**2)
        g_alpha = scale * grads["alpha"] + kz_alpha / rho**2
        parts = [g_alpha, [scale * grads["log_sigma"]]]
        if learn_eta:
            parts.append([scale * grads["log_eta"]])
        return value, np.concatenate([np.asarray(p, dtype=float) for p in parts])


@dataclass(frozen=True)
class ShrinkFitConfig(FitConfig):
    rho: float = 1.0
    init_eta: float = 1.0
    learn_eta: bool = True
    init_sigma: Optional[float] = None  # default: label standard deviation
    ridge_init: bool = True  # warm-start alpha from a ridge solve on posterior means


def _ridge_init(m: np.ndarray, y: np.ndarray) -> np.ndarray:
    # small-ridge least squares; just a starting point, precision irrelevant
    s = m.shape[1]
    gram_m = m.T @ m
    lam = 1e-4 * max(float(np.trace(gram_m)) / s, 1e-12)
    return np.linalg.solve(gram_m + lam * np.eye(s), m.T @ y)


def shrinkmap_fit(
    train_ws: ShrinkageWorkspace,
    early_ws: ShrinkageWorkspace,
    config: ShrinkFitConfig = ShrinkFitConfig(),
):
    """MAP fit of (alpha, sigma[, eta]) by minibatch Adam with early stopping.

    Returns (alpha, sigma, eta, meta).  The early-stopping metric is the
    held-out mean predictive NLL; the best evaluated iterate is kept.
    """
    y = train_ws.labels
    if np.any(~np.isfinite(y)):
        raise InvalidArgumentError("all training bags need labels")
    sigma0 = config.init_sigma
    if sigma0 is None:
        sigma0 = max(float(np.std(y)), 1e-3)
    if config.ridge_init:
        alpha0 = _ridge_init(train_ws.posterior_means(config.init_eta), y)
    else:
        alpha0 = np.zeros(train_ws.dim)
    parts = [alpha0, [math.log(sigma0)]]
    if config.learn_eta:
        parts.append([math.log(config.init_eta)])
    theta0 = np.concatenate([np.asarray(p, dtype=float) for p in parts])
    n = train_ws.n_bags
    s = train_ws.dim

    def batch_grad(theta, idx):
        _, g = train_ws.penalized_objective_and_grad(
            theta,
            rho=config.rho,
            learn_eta=config.learn_eta,
            fixed_eta=config.init_eta,
            idx=idx,
            scale=n / idx.size,
        )
        return g

    def eval_metric(theta):
        alpha = theta[:s]
        sigma = math.exp(theta[s])
        eta = math.exp(theta[s + 1]) if config.learn_eta else config.init_eta
        return early_ws.mean_nll(alpha, sigma, eta)

    theta, meta = minibatch_fit(theta0, batch_grad, n, eval_metric, config)
    alpha = theta[:s]
    sigma = math.exp(theta[s])
    eta = math.exp(theta[s + 1]) if config.learn_eta else config.init_eta
    return alpha, float(sigma), float(eta), meta
