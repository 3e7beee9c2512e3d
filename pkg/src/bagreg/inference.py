"""Optimization and sampling engines.

Adam (functional, bias-corrected), early stopping on a held-out metric,
central-difference gradient checking, and Hamiltonian Monte Carlo with
dual-averaging step-size adaptation during warmup.

The HMC here is the plain fixed-length-trajectory variant: leapfrog with a
unit mass matrix, per-iteration jitter of the step count, Metropolis
correction, and a divergence guard on the energy error.  Ill-conditioned
posteriors are expected to be whitened by the caller (the weight prior's
Cholesky factor does that for the regression models), not by mass-matrix
adaptation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class OptimizerState:
    """Adam state.  best_val_metric / patience_left belong to the early-stopping
    loop that wraps the optimizer; they ride along so a fit is one object."""

    params: np.ndarray
    step: int = 0
    first_moment: np.ndarray = None
    second_moment: np.ndarray = None
    step_size: float = 1e-3
    best_val_metric: float = math.inf
    patience_left: int = 0

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float)
        object.__setattr__(self, "params", p)
        if self.first_moment is None:
            object.__setattr__(self, "first_moment", np.zeros_like(p))
        if self.second_moment is None:
            object.__setattr__(self, "second_moment", np.zeros_like(p))
        if self.first_moment.shape != p.shape or self.second_moment.shape != p.shape:
            raise InvalidArgumentError("moment vectors must match params")


def adam_step(state: OptimizerState, gradient: np.ndarray) -> OptimizerState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(gradient, dtype=float)
    if g.shape != state.params.shape:
        raise InvalidArgumentError("gradient shape must match params")
    bad = np.nonzero(~np.isfinite(g))[0]
    if bad.size:
        err = NumericalError(f"non-finite gradient at parameter index {bad[0]}")
        err.index = int(bad[0])
        raise err
    t = state.step + 1
    m = ADAM_BETA1 * state.first_moment + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.second_moment + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    params = state.params - state.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return replace(state, params=params, step=t, first_moment=m, second_moment=v)


def early_stopper(history: Sequence[float], patience: int):
    """Decide whether to stop given a history of validation metrics.

    Returns (decision, best_index); decision is "stop" when the best value is
    `patience` or more evaluations old, else "continue".  Ties keep the
    earliest index (no improvement means strictly smaller).
    """
    if len(history) == 0:
        raise InvalidArgumentError("history must be nonempty")
    arr = np.asarray(history, dtype=float)
    best = int(np.argmin(arr))
    decision = "stop" if (len(arr) - 1 - best) >= patience else "continue"
    return decision, best


@dataclass
class GradCheckReport:
    max_rel_err: float
    rel_errs: np.ndarray
    passed: bool
    bad_coords: list


def grad_check(fun_and_grad: Callable, params: np.ndarray, rtol: float = 1e-4) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    fun_and_grad(theta) must return (value, gradient).  Per-coordinate step
    h_j = 1e-5 * max(1, |theta_j|); relative error uses the larger of the two
    gradient magnitudes with a small absolute floor.
    """
    theta = np.asarray(params, dtype=float).copy()
    _, g = fun_and_grad(theta)
    g = np.asarray(g, dtype=float)
    if g.shape != theta.shape:
        raise InvalidArgumentError("gradient shape must match params")
    rel = np.empty_like(theta)
    bad = []
    for j in range(theta.size):
        h = 1e-5 * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        f_up, _ = fun_and_grad(up)
        f_dn, _ = fun_and_grad(dn)
        if not (np.isfinite(f_up) and np.isfinite(f_dn)):
            bad.append((j, "non-finite objective at perturbation"))
            rel[j] = np.inf
            continue
        fd = (f_up - f_dn) / (2.0 * h)
        rel[j] = abs(fd - g[j]) / max(abs(fd), abs(g[j]), 1e-8)
    max_rel = float(np.max(rel)) if theta.size else 0.0
    return GradCheckReport(
        max_rel_err=max_rel, rel_errs=rel, passed=(max_rel <= rtol and not bad), bad_coords=bad
    )


@dataclass(frozen=True)
class HMCConfig:
    n_warmup: int = 1000
    n_samples: int = 1000
    leapfrog_steps: int = 20
    target_accept: float = 0.8
    init_step: float = 0.1
    seed: Optional[int] = None
    step_jitter: float = 0.2  # +-20% jitter of the leapfrog step count
    divergence_energy: float = 1000.0

    def __post_init__(self):
        if self.n_warmup < 1 or self.n_samples < 1 or self.leapfrog_steps < 1:
            raise InvalidArgumentError("counts must be >= 1")
        if not (0.0 < self.target_accept < 1.0):
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if self.init_step <= 0:
            raise InvalidArgumentError("init_step must be positive")


@dataclass
class Chain:
    draws: np.ndarray  # (n_samples, dim)
    accept_rate: float
    divergences: int
    log_posts: np.ndarray
    step_size: float
    param_names: Optional[list] = None


def leapfrog(grad: Callable, q: np.ndarray, p: np.ndarray, step: float, n_steps: int):
    """Leapfrog integration of Hamiltonian dynamics with unit masses.

    grad(q) returns the gradient of the log posterior.  Returns (q, p, grad_q)
    at the endpoint; volume-preserving and reversible up to round-off.
    """
    q = q.copy()
    p = p.copy()
    g = grad(q)
    p = p + 0.5 * step * g
    for i in range(n_steps):
        q = q + step * p
        g = grad(q)
        if i != n_steps - 1:
            p = p + step * g
    p = p + 0.5 * step * g
    return q, p, g


def hmc_sample(
    log_post_and_grad: Callable,
    init: np.ndarray,
    config: HMCConfig,
    param_names: Optional[list] = None,
) -> Chain:
    """Sample one chain from an unnormalized log posterior.

    log_post_and_grad(theta) -> (log_post, grad).  Dual averaging adapts the
    step size during warmup toward config.target_accept; the averaged step is
    then frozen for the sampling phase.  A proposal whose energy error exceeds
    config.divergence_energy counts as divergent and is rejected.
    """
    rng = np.random.default_rng(config.seed)
    q = np.asarray(init, dtype=float).copy()
    lp, g = log_post_and_grad(q)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        raise InvalidArgumentError("log posterior must be finite at the init point")

    # dual-averaging constants
    step = config.init_step
    mu = math.log(10.0 * config.init_step)
    log_step_avg = math.log(config.init_step)
    h_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75

    dim = q.size
    draws = np.empty((config.n_samples, dim))
    log_posts = np.empty(config.n_samples)
    divergences = 0
    accepts = 0
    warmup_accepts = 0

    def grad_only(x):
        return log_post_and_grad(x)[1]

    total = config.n_warmup + config.n_samples
    for it in range(total):
        warming = it < config.n_warmup
        p0 = rng.standard_normal(dim)
        h0 = -lp + 0.5 * np.dot(p0, p0)
        jitter = 1.0 + config.step_jitter * (2.0 * rng.random() - 1.0)
        n_steps = max(1, int(round(config.leapfrog_steps * jitter)))
        try:
            q_new, p_new, _ = leapfrog(grad_only, q, p0, step, n_steps)
            lp_new, _ = log_post_and_grad(q_new)
            h_new = -lp_new + 0.5 * np.dot(p_new, p_new)
            energy_err = h_new - h0
        except FloatingPointError:
            energy_err = np.inf
            lp_new = -np.inf
        if not np.isfinite(energy_err):
            energy_err = np.inf
        if energy_err <= 0.0:
            accept_prob = 1.0
        elif energy_err == np.inf:
            accept_prob = 0.0
        else:
            accept_prob = math.exp(-min(energy_err, 700.0))
        divergent = energy_err > config.divergence_energy
        if divergent:
            accept_prob = 0.0
            if not warming:
                divergences += 1
        if rng.random() < accept_prob:
            q, lp = q_new, lp_new
            if warming:
                warmup_accepts += 1
            else:
                accepts += 1
        if warming:
            m = it + 1
            frac = 1.0 / (m + t0)
            h_bar = (1.0 - frac) * h_bar + frac * (config.target_accept - accept_prob)
            log_step = mu - math.sqrt(m) / gamma * h_bar
            w = m**-kappa
            log_step_avg = w * log_step + (1.0 - w) * log_step_avg
            step = math.exp(log_step)
            if it == config.n_warmup - 1:
                if warmup_accepts == 0:
                    raise NumericalError(
                        "HMC accepted nothing during warmup; try a smaller init_step"
                    )
                step = math.exp(log_step_avg)
        else:
            draws[it - config.n_warmup] = q
            log_posts[it - config.n_warmup] = lp

    return Chain(
        draws=draws,
        accept_rate=accepts / config.n_samples,
        divergences=divergences,
        log_posts=log_posts,
        step_size=step,
        param_names=list(param_names) if param_names else None,
    )


def run_chains(
    log_post_and_grad: Callable,
    inits: Sequence[np.ndarray],
    config: HMCConfig,
    param_names: Optional[list] = None,
):
    """Run independent chains (seeds spawned from config.seed); returns the list.

    Chain i uses seed spawn(i) so results do not depend on execution order.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(len(inits))
    chains = []
    for init, seq in zip(inits, seeds):
        cfg = replace(config, seed=seq)
        chains.append(hmc_sample(log_post_and_grad, init, cfg, param_names=param_names))
    return chains


def merge_chains(chains: Sequence[Chain]) -> np.ndarray:
    return np.concatenate([c.draws for c in chains], axis=0)


def split_rhat(chains: Sequence[Chain]) -> np.ndarray:
    """Split-R-hat per dimension (each chain halved; between/within variance ratio)."""
    halves = []
    for c in chains:
        n = c.draws.shape[0] // 2
        if n < 2:
            raise InvalidArgumentError("need at least 4 draws per chain for split R-hat")
        halves.append(c.draws[:n])
        halves.append(c.draws[n : 2 * n])
    arr = np.stack(halves)  # (m, n, dim)
    m, n, _ = arr.shape
    means = arr.mean(axis=1)
    b = n * means.var(axis=0, ddof=1)
    w = arr.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    return np.where(w > 0, r, 1.0)


def effective_sample_size(chains: Sequence[Chain]) -> np.ndarray:
    """ESS per dimension via autocorrelations, truncated by Geyer's initial
    positive-pair rule."""
    arr = np.stack([c.draws for c in chains])  # (m, n, dim)
    m, n, dim = arr.shape
    centered = arr - arr.mean(axis=1, keepdims=True)
    # FFT autocovariance per chain and dimension
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n].real / n
    w = arr.var(axis=1, ddof=1).mean(axis=0)
    means = arr.mean(axis=1)
    b_over_n = means.var(axis=0, ddof=1) if m > 1 else np.zeros(dim)
    var_plus = np.maximum((n - 1) / n * w + b_over_n, 1e-300)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus  # (n, dim)
    ess = np.empty(dim)
    for k in range(dim):
        s = 0.0
        t = 1
        while t + 1 < n:
            pair = rho[t, k] + rho[t + 1, k]
            if pair < 0:
                break
            s += pair
            t += 2
        ess[k] = m * n / (1.0 + 2.0 * s)
    return np.minimum(ess, m * n)


def chain_to_csv(chain: Chain, path) -> None:
    """One row per draw; header names the parameters."""
    names = chain.param_names or [f"p{i}" for i in range(chain.draws.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in chain.draws:
            writer.writerow([repr(float(v)) for v in row])
