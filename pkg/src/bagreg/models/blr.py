"""Bayesian linear regression on empirical mean embeddings.

Conjugate Gaussian model: weights theta ~ N(0, rho^2 D), observations
y = X theta + eps with eps ~ N(0, sigma^2).  D is the identity over feature
weights; the appended intercept column gets prior scale 10 rho (variance
100 rho^2) so the offset is penalized only nominally.

(sigma, rho) maximize the marginal likelihood.  The covariance
sigma^2 I + rho^2 X D X^T is diagonalized once per design matrix -- its
eigenbasis does not depend on (sigma, rho) -- after which each evidence
evaluation and gradient is O(n), and the ascent runs in log-space with Adam.
For n rows > m columns the reduced m x m eigenproblem is used with the
leftover dimensions folded into a sigma^2-only term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..embeddings import EmbeddingStats
from ..errors import InvalidArgumentError
from ..inference import OptimizerState, adam_step
from ..kernels import chol_solve
from ..predictive import PredictiveDistribution, gaussian_predictive
from .common import RegressionModel

INTERCEPT_PRIOR_FACTOR = 10.0  # intercept prior scale = 10 * rho


def design_matrix(mu: np.ndarray, intercept: bool) -> np.ndarray:
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    if not intercept:
        return mu
    return np.concatenate([mu, np.ones((mu.shape[0], 1))], axis=1)


def _prior_diag(m: int, intercept: bool) -> np.ndarray:
    d = np.ones(m)
    if intercept:
        d[-1] = INTERCEPT_PRIOR_FACTOR**2
    return d


@dataclass(frozen=True)
class EvidenceData:
    """Spectral reduction of the design; everything evidence needs, O(n) per call."""

    gam: np.ndarray  # nonzero eigenvalues of X D X^T
    v2: np.ndarray  # squared label components along those eigendirections
    n0: int  # label-space dimensions seeing only sigma^2
    r0: float  # squared label mass in those dimensions
    n: int


def reduce_design(x: np.ndarray, y: np.ndarray, prior_diag: np.ndarray) -> EvidenceData:
    n, m = x.shape
    y = np.asarray(y, dtype=float)
    if n <= m:
        g = (x * prior_diag[None, :]) @ x.T
        gam, q = np.linalg.eigh(g)
        v = q.T @ y
        gam = np.maximum(gam, 0.0)
        return EvidenceData(gam=gam, v2=v**2, n0=0, r0=0.0, n=n)
    xs = x * np.sqrt(prior_diag)[None, :]
    h = xs.T @ xs
    gam, v = np.linalg.eigh(h)
    proj = v.T @ (xs.T @ y)
    keep = gam > 1e-12 * max(gam[-1], 1e-300)
    gam_k = gam[keep]
    v2 = proj[keep] ** 2 / gam_k
    r0 = max(float(y @ y - np.sum(v2)), 0.0)
    return EvidenceData(gam=gam_k, v2=v2, n0=n - int(keep.sum()), r0=r0, n=n)


def log_evidence_and_grad(theta: np.ndarray, ev: EvidenceData):
    """Marginal log-likelihood and its gradient in theta = (log sigma, log rho)."""
    log_sigma, log_rho = theta
    s2 = math.exp(2.0 * log_sigma)
    r2 = math.exp(2.0 * log_rho)
    s = s2 + r2 * ev.gam
    value = -0.5 * (
        float(np.sum(np.log(s) + ev.v2 / s))
        + ev.n0 * math.log(s2)
        + ev.r0 / s2
        + ev.n * math.log(2.0 * math.pi)
    )
    common = (1.0 - ev.v2 / s) / s
    d_s2 = -0.5 * (float(np.sum(common)) + ev.n0 / s2 - ev.r0 / s2**2)
    d_r2 = -0.5 * float(np.sum(ev.gam * common))
    return value, np.array([d_s2 * 2.0 * s2, d_r2 * 2.0 * r2])


def optimize_evidence(
    ev: EvidenceData,
    init_sigma: float = 1.0,
    init_rho: float = 1.0,
    step_size: float = 0.05,
    max_iters: int = 2000,
    grad_tol: float = 1e-7,
):
    """Adam ascent of the evidence over (log sigma, log rho).

    Returns (sigma, rho, info).  If the gradient never falls below tolerance
    the best iterate seen is returned with info["converged"] = False.
    """
    state = OptimizerState(
        params=np.log([init_sigma, init_rho]), step_size=step_size
    )
    best_val = -math.inf
    best = state.params.copy()
    converged = False
    for _ in range(max_iters):
        val, grad = log_evidence_and_grad(state.params, ev)
        if val > best_val:
            best_val = val
            best = state.params.copy()
        if np.max(np.abs(grad)) < grad_tol:
            converged = True
            break
        state = adam_step(state, -grad)  # ascent
    sigma, rho = np.exp(best)
    return float(sigma), float(rho), {"evidence": best_val, "converged": converged}


def blr_fit(
    mu: np.ndarray,
    labels: np.ndarray,
    sigma: float = 1.0,
    rho: float = 1.0,
    intercept: bool = True,
    optimize: bool = True,
    **opt_kwargs,
):
    """Conjugate posterior over weights, with (sigma, rho) evidence-tuned by default.

    Returns (weights, intercept_value, weight_cov, sigma, rho, info); weight_cov
    covers features plus the intercept column when present.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    labels = np.asarray(labels, dtype=float)
    if mu.shape[0] != labels.shape[0] or labels.size < 1:
        raise InvalidArgumentError("need one label per embedding row")
    x = design_matrix(mu, intercept)
    pdiag = _prior_diag(x.shape[1], intercept)
    info = {"converged": True}
    if optimize:
        ev = reduce_design(x, labels, pdiag)
        sigma, rho, info = optimize_evidence(ev, init_sigma=sigma, init_rho=rho, **opt_kwargs)
    prec = np.diag(1.0 / (rho**2 * pdiag)) + (x.T @ x) / sigma**2
    cov = chol_solve(prec, np.eye(x.shape[1]))
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (x.T @ labels) / sigma**2
    if intercept:
        return mean[:-1], float(mean[-1]), cov, sigma, rho, info
    return mean, 0.0, cov, sigma, rho, info


def blr_predict(model: RegressionModel, stats: EmbeddingStats) -> PredictiveDistribution:
    """Gaussian predictive: mean m^T x, variance sigma^2 + x^T S x."""
    x = np.asarray(stats.mu_hat, dtype=float)
    if model.has_intercept:
        x = np.concatenate([x, [1.0]])
        w = np.concatenate([model.alpha, [model.intercept]])
    else:
        w = model.alpha
    mean = float(w @ x)
    var = model.sigma**2 + float(x @ model.blr_cov @ x)
    return gaussian_predictive(mean, var)
