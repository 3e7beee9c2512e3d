"""Bags, per-bag mean embeddings, and the shrinkage posterior over embeddings.

A bag is a set of i.i.d. sample points sharing one label.  Featurising each
point against landmarks u and averaging gives the empirical mean embedding

    mu_hat[l] = (1/N) sum_j k(x_j, u_l),

an unbiased but noisy estimate of the true embedding mu(u_l), with noise that
shrinks as the bag grows.  Modelling mu as a Gaussian process with covariance
eta * r and the empirical embedding as mu_hat ~ N(mu(u), Sigma/N) gives a
conjugate Gaussian posterior over the true embedding evaluated at the
regression landmarks z:

    M = R_z (R + Sigma/N)^-1 (mu_hat - m0) + m0,
    C = R_zz - R_z (R + Sigma/N)^-1 R_z^T.

Small bags are shrunk hard toward the prior mean m0 and keep a wide C; huge
bags pin the posterior at mu_hat with C near zero.  That size-dependent
uncertainty is the whole point: it propagates into predictive variances
downstream.

Sigma is pooled across bags (averaging the per-bag feature covariances)
because tiny bags cannot estimate their own covariance; m0 is the average
empirical embedding of the *training* split, frozen before validation or test
data is touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .kernels import (
    GramMatrices,
    KernelParams,
    LandmarkSet,
    chol_solve,
    rbf_matrix,
)


@dataclass(frozen=True)
class Bag:
    """One bag: an (N_i, p) matrix of sample points and an optional label."""

    id: str
    points: np.ndarray
    y: Optional[float] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise InvalidArgumentError(f"bag {self.id!r}: points must be 2-D (N, p)")
        if pts.shape[0] < 1:
            raise InvalidArgumentError(f"bag {self.id!r} must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError(f"bag {self.id!r}: points must be finite")
        if self.y is not None and not np.isfinite(self.y):
            raise InvalidArgumentError(f"bag {self.id!r}: label must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "y", None if self.y is None else float(self.y))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class BagDataset:
    """An ordered collection of bags with consistent point dimension."""

    def __init__(self, bags):
        bags = list(bags)
        if not bags:
            raise InvalidArgumentError("dataset must contain at least one bag")
        dim = bags[0].dim
        for b in bags:
            if b.dim != dim:
                raise InvalidArgumentError(
                    f"bag {b.id!r} has dimension {b.dim}, expected {dim}"
                )
        self.bags = bags

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __getitem__(self, i):
        return self.bags[i]

    @property
    def dim(self) -> int:
        return self.bags[0].dim

    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.n for b in self.bags], dtype=int)

    @property
    def labels(self) -> np.ndarray:
        """Labels as floats, NaN where missing."""
        return np.array([np.nan if b.y is None else b.y for b in self.bags])

    @property
    def ids(self):
        return [b.id for b in self.bags]

    def all_points(self) -> np.ndarray:
        return np.concatenate([b.points for b in self.bags], axis=0)


@dataclass(frozen=True)
class EmbeddingStats:
    """Empirical mean embedding of one bag at the observation landmarks."""

    mu_hat: np.ndarray
    n: int


@dataclass(frozen=True)
class EmbeddingPosterior:
    """Gaussian posterior over the true embedding at the regression landmarks."""

    M: np.ndarray
    C: np.ndarray
    n: int


@dataclass(frozen=True)
class NoiseModel:
    """Pooled feature covariance Sigma and prior mean embedding m0."""

    Sigma: np.ndarray
    m0: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.Sigma, dtype=float)
        m = np.asarray(self.m0, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] != m.shape[0]:
            raise InvalidArgumentError("Sigma must be (d, d) and m0 length d")
        if not (np.isfinite(s).all() and np.isfinite(m).all()):
            raise InvalidArgumentError("noise model entries must be finite")
        object.__setattr__(self, "Sigma", s)
        object.__setattr__(self, "m0", m)


def featurize(points: np.ndarray, landmarks: LandmarkSet, params: KernelParams) -> np.ndarray:
    """Feature matrix phi with phi[j, l] = k(x_j, u_l), rows per sample point."""
    return rbf_matrix(np.atleast_2d(points), landmarks.u, params.bandwidth)


def empirical_embedding(bag: Bag, landmarks: LandmarkSet, params: KernelParams) -> EmbeddingStats:
    """Average the feature map over the bag: mu_hat[l] = (1/N) sum_j k(x_j, u_l)."""
    phi = featurize(bag.points, landmarks, params)
    return EmbeddingStats(mu_hat=phi.mean(axis=0), n=bag.n)


class DatasetEmbeddings:
    """Empirical embeddings of every bag in a dataset, stacked.

    mu is (n_bags, d); sizes, labels, ids align row-wise with mu.
    """

    def __init__(self, mu, sizes, labels, ids):
        self.mu = np.asarray(mu, dtype=float)
        self.sizes = np.asarray(sizes, dtype=int)
        self.labels = np.asarray(labels, dtype=float)
        self.ids = list(ids)

    def __len__(self):
        return self.mu.shape[0]

    def group_by_size(self) -> dict:
        """Map bag size N -> row indices, ascending in N.

        The shrinkage solves depend on mu_hat only through (R + Sigma/N)^-1,
        so bags sharing N share every factorization.
        """
        groups = {}
        for n in np.unique(self.sizes):
            groups[int(n)] = np.nonzero(self.sizes == n)[0]
        return groups


def embed_dataset(
    dataset: BagDataset,
    landmarks: LandmarkSet,
    params: KernelParams,
    with_noise: bool = False,
    cov_ddof: int = 0,
):
    """Embed every bag; optionally accumulate the pooled NoiseModel in the same pass.

    Returns DatasetEmbeddings, or (DatasetEmbeddings, NoiseModel) when
    with_noise is true.  Feature matrices are streamed bag by bag, never held
    all at once.
    """
    d = landmarks.n_obs
    mu = np.empty((len(dataset), d))
    sigma_sum = np.zeros((d, d)) if with_noise else None
    for i, bag in enumerate(dataset):
        phi = featurize(bag.points, landmarks, params)
        mu[i] = phi.mean(axis=0)
        if with_noise:
            denom = bag.n - cov_ddof
            if denom >= 1:
                centered = phi - mu[i]
                sigma_sum += (centered.T @ centered) / denom
            # else: singleton (or too-small) bag contributes a zero matrix
    table = DatasetEmbeddings(mu=mu, sizes=dataset.sizes, labels=dataset.labels, ids=dataset.ids)
    if not with_noise:
        return table
    noise = NoiseModel(Sigma=sigma_sum / len(dataset), m0=mu.mean(axis=0))
    return table, noise


def pooled_covariance(
    dataset: BagDataset,
    landmarks: LandmarkSet,
    params: KernelParams,
    cov_ddof: int = 0,
) -> NoiseModel:
    """Pooled observation noise: the unweighted average over bags of each bag's
    empirical feature covariance (denominator N_i - cov_ddof; bags too small to
    estimate one contribute a zero matrix), plus m0 = average of all mu_hat.

    Pooling exists exactly because per-bag covariances are hopeless for small
    bags; a single Sigma shared across bags enters the posterior as Sigma/N_i.
    """
    _, noise = embed_dataset(dataset, landmarks, params, with_noise=True, cov_ddof=cov_ddof)
    return noise


def posterior_group(
    mu_rows: np.ndarray,
    n: int,
    noise: NoiseModel,
    grams: GramMatrices,
    m0_z: Optional[np.ndarray] = None,
):
    """Shrinkage posterior for a group of bags sharing one size N.

    Returns (M, C): M is (n_bags, s) of posterior means, C the shared (s, s)
    posterior covariance (symmetrized).  One Cholesky factorization covers the
    whole group.
    """
    if n < 1:
        raise InvalidArgumentError("bag size must be >= 1")
    mu_rows = np.atleast_2d(np.asarray(mu_rows, dtype=float))
    m0 = noise.m0
    m0_z = m0 if m0_z is None else np.asarray(m0_z, dtype=float)
    a = grams.R + noise.Sigma / n
    delta = mu_rows - m0[None, :]
    # W = A^-1 [delta^T, R_z^T] in one factorization
    rhs = np.concatenate([delta.T, grams.R_z.T], axis=1)
    sol = chol_solve(a, rhs)
    w = sol[:, : delta.shape[0]]
    ar = sol[:, delta.shape[0] :]
    m_rows = (grams.R_z @ w).T + m0_z[None, :]
    c = grams.R_zz - grams.R_z @ ar
    c = 0.5 * (c + c.T)
    return m_rows, c


def shrinkage_posterior(
    stats: EmbeddingStats,
    noise: NoiseModel,
    grams: GramMatrices,
    m0_z: Optional[np.ndarray] = None,
) -> EmbeddingPosterior:
    """Conjugate posterior over the true embedding at z given one bag's mu_hat.

    M = R_z (R + Sigma/N)^-1 (mu_hat - m0) + m0, C = R_zz - R_z (R + Sigma/N)^-1 R_z^T.
    The inverse is always over the observation landmarks u.  m0_z overrides the
    prior mean at z for untied landmark sets (defaults to m0, valid when tied).
    """
    m_rows, c = posterior_group(stats.mu_hat[None, :], stats.n, noise, grams, m0_z=m0_z)
    return EmbeddingPosterior(M=m_rows[0], C=c, n=stats.n)


def frequentist_shrinkage(
    stats: EmbeddingStats,
    noise: NoiseModel,
    grams: GramMatrices,
    shrink_to: np.ndarray,
) -> EmbeddingStats:
    """Point-estimate shrinkage of mu_hat toward shrink_to (no covariance).

    Reuses the posterior-mean formula with eta acting as a tuned
    shrinkage-strength knob (large eta: no shrinkage; eta -> 0: all the way to
    shrink_to).
    """
    shrink_to = np.asarray(shrink_to, dtype=float)
    fake_noise = NoiseModel(Sigma=noise.Sigma, m0=shrink_to)
    m_rows, _ = posterior_group(stats.mu_hat[None, :], stats.n, fake_noise, grams)
    return EmbeddingStats(mu_hat=m_rows[0], n=stats.n)
