"""Fully Bayesian shrinkage regression: HMC over the regression weights.

The embedding layer stays conjugate (the same per-size posterior means and
covariances the MAP model uses, at a fixed eta), while (alpha, log sigma) are
sampled.  alpha is parameterized in the whitened basis alpha = rho L^-T
alpha_tilde with L the Cholesky factor of K_z, turning the N(0, rho^2 K_z^-1)
prior into a unit Gaussian and sparing the sampler the kernel matrix's
conditioning.  sigma gets a half-normal prior; sampling runs in log sigma with
the Jacobian folded in.

The predictive for a bag is a uniform mixture over draws of
N(xi^(t), nu^(t)); its density is averaged, not moment-matched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from ..embeddings import EmbeddingPosterior
from ..errors import InvalidArgumentError, NumericalError
from ..inference import (
    HMCConfig,
    effective_sample_size,
    hmc_sample,
    merge_chains,
    split_rhat,
)
from ..predictive import PredictiveDistribution, mixture_predictive
from .common import RegressionModel
from .shrinkage import ShrinkageWorkspace


@dataclass
class BDRData:
    """Fixed-eta design for the sampler: posterior means per bag, shared
    covariances per size group, labels."""

    m_rows: np.ndarray  # (n, s)
    groups: list  # (row indices, C) pairs
    labels: np.ndarray


def bdr_data(ws: ShrinkageWorkspace, eta: float) -> BDRData:
    m_rows = ws.posterior_means(eta)
    groups = [(g.idx, ws.posterior_cov(eta, g.n)) for g in ws.groups]
    return BDRData(m_rows=m_rows, groups=groups, labels=ws.labels)


@dataclass(frozen=True)
class BDRConfig:
    n_chains: int = 4
    n_warmup: int = 1000
    n_samples: int = 1000
    leapfrog_steps: int = 20
    target_accept: float = 0.8
    init_step: float = 0.1
    sigma_prior_scale: float = 2.0
    init_jitter: float = 0.05
    divergence_warn_frac: float = 0.01
    seed: int = 0


def _whitener(kz: np.ndarray, rho: float) -> np.ndarray:
    """B with alpha = B alpha_tilde, B = rho L^-T, K_z = L L^T."""
    from ..kernels import cholesky_factor

    chol_l, _ = cholesky_factor(kz)
    return rho * solve_triangular(chol_l.T, np.eye(kz.shape[0]), lower=False)


def bdr_log_post_and_grad(kz: np.ndarray, data: Optional[BDRData], rho: float, config: BDRConfig):
    """Build the unnormalized log posterior over theta = [alpha_tilde, log sigma].

    Returns (fn, B) where fn(theta) -> (log_post, grad) and B unwhitens draws.
    With data None the posterior is the prior alone (a sampling oracle for
    tests and a sanity path for degenerate configs).
    """
    b_mat = _whitener(kz, rho)
    sc2 = config.sigma_prior_scale**2

    def fn(theta):
        s = b_mat.shape[0]
        alpha_t = theta[:s]
        log_sigma = theta[s]
        sigma2 = math.exp(2.0 * log_sigma)
        alpha = b_mat @ alpha_t
        lp = -0.5 * float(alpha_t @ alpha_t) - sigma2 / (2.0 * sc2) + log_sigma
        g_alpha = np.zeros(s)
        g_log_sigma = -sigma2 / sc2 + 1.0
        if data is not None:
            resid_all = data.labels - data.m_rows @ alpha
            for idx, c_g in data.groups:
                c_alpha = c_g @ alpha
                nu = max(float(alpha @ c_alpha), 0.0) + sigma2
                r = resid_all[idx]
                lp -= 0.5 * float(np.sum(np.log(2.0 * math.pi * nu) + r**2 / nu))
                g_xi = r / nu  # d loglik / d xi_i
                g_nu = -0.5 * float(np.sum(1.0 / nu - r**2 / nu**2))
                g_alpha += data.m_rows[idx].T @ g_xi + g_nu * 2.0 * c_alpha
                g_log_sigma += g_nu * 2.0 * sigma2
        grad = np.concatenate([b_mat.T @ g_alpha - alpha_t, [g_log_sigma]])
        return lp, grad

    return fn, b_mat


def bdr_fit(
    kz: np.ndarray,
    data: Optional[BDRData],
    rho: float,
    config: BDRConfig = BDRConfig(),
    init_alpha: Optional[np.ndarray] = None,
    init_sigma: float = 1.0,
):
    """Sample (alpha, sigma) with HMC; returns (alpha_draws, sigma_draws, chains, meta).

    Chains start from the (whitened) init point with a small per-chain jitter.
    Divergences beyond config.divergence_warn_frac of the draws set a warning
    in meta; a chain that accepts nothing is a hard error.
    """
    s = kz.shape[0]
    fn, b_mat = bdr_log_post_and_grad(kz, data, rho, config)
    if init_alpha is None:
        alpha_t0 = np.zeros(s)
    else:
        # invert the whitening: alpha_tilde = B^-1 alpha
        alpha_t0 = np.linalg.solve(b_mat, np.asarray(init_alpha, dtype=float))
    theta0 = np.concatenate([alpha_t0, [math.log(init_sigma)]])
    rng = np.random.default_rng(config.seed)
    names = [f"alpha_tilde_{i}" for i in range(s)] + ["log_sigma"]
    chains = []
    chain_seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    for seq in chain_seeds:
        init = theta0 + config.init_jitter * rng.standard_normal(theta0.size)
        cfg_c = HMCConfig(
            n_warmup=config.n_warmup,
            n_samples=config.n_samples,
            leapfrog_steps=config.leapfrog_steps,
            target_accept=config.target_accept,
            init_step=config.init_step,
            seed=seq,
        )
        chains.append(hmc_sample(fn, init, cfg_c, param_names=names))
    for i, c in enumerate(chains):
        if c.accept_rate == 0.0:
            raise NumericalError(f"HMC chain {i} accepted no proposals")
    draws = merge_chains(chains)
    alpha_draws = draws[:, :s] @ b_mat.T
    sigma_draws = np.exp(draws[:, s])
    total = draws.shape[0]
    divergences = sum(c.divergences for c in chains)
    rhat = split_rhat(chains)
    ess = effective_sample_size(chains)
    meta = {
        "accept_rates": [c.accept_rate for c in chains],
        "divergences": divergences,
        "max_rhat": float(np.max(rhat)),
        "min_ess": float(np.min(ess)),
        "step_sizes": [c.step_size for c in chains],
    }
    if divergences > config.divergence_warn_frac * total:
        meta["warning"] = f"{divergences} divergent transitions out of {total} draws"
    return alpha_draws, sigma_draws, chains, meta


def bdr_predict(model: RegressionModel, post: EmbeddingPosterior) -> PredictiveDistribution:
    """Mixture predictive: one component N(alpha_t^T M, alpha_t^T C alpha_t + sigma_t^2)
    per posterior draw."""
    if model.posterior_draws is None or len(model.posterior_draws) == 0:
        raise InvalidArgumentError("BDR model has no posterior draws")
    draws = model.posterior_draws
    if model.sigma_draws is not None:
        sig2 = model.sigma_draws**2
    else:
        sig2 = np.full(draws.shape[0], model.sigma**2)
    means = draws @ post.M
    quads = np.maximum(np.einsum("ts,st->t", draws, post.C @ draws.T), 0.0)
    return mixture_predictive(np.column_stack([means, quads + sig2]))
