"""Kernels, Gram matrices, stable SPD solves, and landmark selection.

Two kernels are used throughout:

* ``k`` -- the Gaussian RBF kernel ``k(x, y) = exp(-||x - y||^2 / (2 b^2))``
  with bandwidth ``b``.  It featurises sample points against landmarks.
* ``r`` -- the prior covariance of the latent mean-embedding process.
  Either ``r = k`` ("k") or the convolution of ``k`` with itself against an
  unnormalised Gaussian measure of scale ``ell`` ("conv"), which has the
  closed form implemented in :func:`conv_kernel`.

All pairwise distances use the expanded form ``||x||^2 + ||y||^2 - 2 x.y``
clamped at zero against round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError

R_K = "k"
R_CONV = "conv"

# Diagonal jitter ladder applied before Cholesky, as multiples of mean(diag).
JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the RBF kernel k and the prior covariance r.

    bandwidth     length-scale of k (and of the k-factors inside "conv").
    conv_scale    length-scale of the Gaussian measure in the "conv" choice;
                  ignored when r_choice == "k".
    r_choice      "k" or "conv".
    """

    bandwidth: float
    conv_scale: float = 1.0
    r_choice: str = R_K

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidArgumentError(f"bandwidth must be positive, got {self.bandwidth}")
        if not (np.isfinite(self.conv_scale) and self.conv_scale > 0):
            raise InvalidArgumentError(f"conv_scale must be positive, got {self.conv_scale}")
        if self.r_choice not in (R_K, R_CONV):
            raise InvalidArgumentError(f"r_choice must be '{R_K}' or '{R_CONV}'")


@dataclass(frozen=True)
class LandmarkSet:
    """Landmark points: u for observing embeddings, z for expanding the regressor.

    When ``tied`` (the default workflow), z is u and downstream Gram matrices
    are computed once and shared.
    """

    u: np.ndarray
    z: np.ndarray
    tied: bool = True

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if u.ndim != 2 or z.ndim != 2:
            raise InvalidArgumentError("landmark arrays must be 2-D (count, dim)")
        if u.shape[0] < 1 or z.shape[0] < 1:
            raise InvalidArgumentError("need at least one landmark")
        if u.shape[1] != z.shape[1]:
            raise InvalidArgumentError("u and z must share point dimension")
        if not (np.isfinite(u).all() and np.isfinite(z).all()):
            raise InvalidArgumentError("landmarks must be finite")
        if self.tied and not np.array_equal(u, z):
            raise InvalidArgumentError("tied landmark set requires z == u")
        if _has_duplicate_rows(u):
            raise InvalidArgumentError("duplicate rows in u make the prior Gram singular")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "z", z if not self.tied else u)

    @property
    def n_obs(self) -> int:
        return self.u.shape[0]

    @property
    def n_reg(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]


def _has_duplicate_rows(a: np.ndarray) -> bool:
    if a.shape[0] < 2:
        return False
    order = np.lexsort(a.T)
    sorted_a = a[order]
    return bool(np.any(np.all(sorted_a[1:] == sorted_a[:-1], axis=1)))


def _check_points(x, name="points") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} must be finite")
    return x


def sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of a and rows of b."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def rbf_kernel(x, y, params: KernelParams) -> float:
    """k(x, y) = exp(-||x - y||^2 / (2 bandwidth^2)), in (0, 1]."""
    x = _check_points(x, "x")
    y = _check_points(y, "y")
    d2 = float(np.sum((np.ravel(x) - np.ravel(y)) ** 2))
    return math.exp(-d2 / (2.0 * params.bandwidth**2))


def rbf_matrix(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    """RBF kernel matrix between row sets a and b."""
    return np.exp(sqdist(a, b) / (-2.0 * bandwidth**2))


def conv_kernel(x, y, params: KernelParams) -> float:
    """Convolution covariance r(x, y) = int k(x, t) k(t, y) nu(dt).

    With k the RBF kernel of bandwidth b and nu(dt) = exp(-||t||^2/(2 ell^2)) dt
    (an unnormalised Gaussian measure), completing the square per coordinate
    gives the closed form

        r(x, y) = (pi / a)^(p/2)
                  * exp( ||x + y||^2 / (4 a b^4) - (||x||^2 + ||y||^2) / (2 b^2) )

    with a = 1/b^2 + 1/(2 ell^2).  Symmetric, positive definite, and
    non-stationary (the diagonal decays with ||x||).
    """
    x = np.ravel(_check_points(x, "x"))
    y = np.ravel(_check_points(y, "y"))
    if x.shape != y.shape:
        raise InvalidArgumentError("x and y must have the same dimension")
    b2 = params.bandwidth**2
    a = 1.0 / b2 + 1.0 / (2.0 * params.conv_scale**2)
    p = x.size
    expo = np.sum((x + y) ** 2) / (4.0 * a * b2 * b2) - (np.sum(x * x) + np.sum(y * y)) / (2.0 * b2)
    return float((math.pi / a) ** (p / 2.0) * math.exp(expo))


def conv_matrix(a_pts: np.ndarray, b_pts: np.ndarray, params: KernelParams) -> np.ndarray:
    """Convolution-covariance matrix between row sets; see :func:`conv_kernel`."""
    a_pts = np.atleast_2d(np.asarray(a_pts, dtype=float))
    b_pts = np.atleast_2d(np.asarray(b_pts, dtype=float))
    if a_pts.shape[1] != b_pts.shape[1]:
        raise InvalidArgumentError("dimension mismatch")
    b2 = params.bandwidth**2
    a = 1.0 / b2 + 1.0 / (2.0 * params.conv_scale**2)
    p = a_pts.shape[1]
    na = np.sum(a_pts * a_pts, axis=1)
    nb = np.sum(b_pts * b_pts, axis=1)
    cross = a_pts @ b_pts.T
    # ||x + y||^2 = ||x||^2 + ||y||^2 + 2 x.y
    sum_sq = na[:, None] + nb[None, :] + 2.0 * cross
    expo = sum_sq / (4.0 * a * b2 * b2) - (na[:, None] + nb[None, :]) / (2.0 * b2)
    return (math.pi / a) ** (p / 2.0) * np.exp(expo)


def gram(points_a, points_b, params: KernelParams, eta: float = 1.0, kernel: str = "r") -> np.ndarray:
    """Gram matrix with entries eta * kernel(a_s, b_t).

    kernel="r" uses the prior covariance selected by params.r_choice;
    kernel="k" forces the RBF kernel (used for the regulariser Gram K_z,
    where eta is conventionally 1).
    """
    a = _check_points(points_a, "points_a")
    b = _check_points(points_b, "points_b")
    if not (np.isfinite(eta) and eta > 0):
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    if kernel == "k" or (kernel == "r" and params.r_choice == R_K):
        m = rbf_matrix(a, b, params.bandwidth)
    elif kernel == "r" and params.r_choice == R_CONV:
        m = conv_matrix(a, b, params)
    else:
        raise InvalidArgumentError(f"unknown kernel selector {kernel!r}")
    return eta * m


@dataclass
class GramMatrices:
    """Gram matrices a shrinkage model needs, scaled by the prior strength eta.

    R    (d, d)  eta * r(u, u)
    R_z  (s, d)  eta * r(z, u)
    R_zz (s, s)  eta * r(z, z)
    K_z  (s, s)  k(z, z), unscaled (regulariser Gram)

    For tied landmarks R, R_z and R_zz are one shared array.
    """

    R: np.ndarray
    R_z: np.ndarray
    R_zz: np.ndarray
    K_z: np.ndarray
    eta: float = 1.0

    def with_eta(self, eta: float) -> "GramMatrices":
        """Rescale to a new prior strength, preserving tied-array sharing."""
        if not (np.isfinite(eta) and eta > 0):
            raise InvalidArgumentError(f"eta must be positive, got {eta}")
        scale = eta / self.eta
        r = self.R * scale
        if self.R_z is self.R:
            return GramMatrices(R=r, R_z=r, R_zz=r, K_z=self.K_z, eta=eta)
        return GramMatrices(R=r, R_z=self.R_z * scale, R_zz=self.R_zz * scale, K_z=self.K_z, eta=eta)


def build_grams(landmarks: LandmarkSet, params: KernelParams, eta: float = 1.0) -> GramMatrices:
    """Build all Gram matrices for a landmark set (single computation when tied)."""
    k_z = gram(landmarks.z, landmarks.z, params, eta=1.0, kernel="k")
    if landmarks.tied:
        r = gram(landmarks.u, landmarks.u, params, eta=eta, kernel="r")
        return GramMatrices(R=r, R_z=r, R_zz=r, K_z=k_z, eta=eta)
    return GramMatrices(
        R=gram(landmarks.u, landmarks.u, params, eta=eta, kernel="r"),
        R_z=gram(landmarks.z, landmarks.u, params, eta=eta, kernel="r"),
        R_zz=gram(landmarks.z, landmarks.z, params, eta=eta, kernel="r"),
        K_z=k_z,
        eta=eta,
    )


def cholesky_factor(m: np.ndarray, jitter: bool = True):
    """Lower Cholesky factor of a symmetric matrix, with escalating jitter.

    Adds JITTER_START * mean(diag) to the diagonal before the first attempt and
    escalates by x10 up to JITTER_MAX * mean(diag); beyond that raises
    NumericalError carrying a condition estimate.  jitter=False makes a single
    bare attempt (used to demonstrate why the policy exists).

    Returns (L, jitter_added).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError("matrix must be square")
    if not jitter:
        try:
            return np.linalg.cholesky(m), 0.0
        except np.linalg.LinAlgError:
            raise NumericalError("Cholesky failed with no jitter") from None
    scale = float(np.mean(np.diag(m)))
    if scale <= 0.0:
        scale = 1.0
    level = JITTER_START
    eye = np.eye(m.shape[0])
    while level <= JITTER_MAX * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(m + (level * scale) * eye), level * scale
        except np.linalg.LinAlgError:
            level *= 10.0
    cond = float(np.linalg.cond(m)) if np.all(np.isfinite(m)) else float("inf")
    raise NumericalError(
        f"Cholesky failed after jitter up to {JITTER_MAX:g}*mean(diag); cond(M)~{cond:.3e}"
    )


def chol_solve_factor(chol_l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve M x = b given the lower Cholesky factor of M."""
    from scipy.linalg import solve_triangular

    y = solve_triangular(chol_l, b, lower=True)
    return solve_triangular(chol_l.T, y, lower=False)


def chol_solve(m: np.ndarray, b: np.ndarray, jitter: bool = True) -> np.ndarray:
    """Solve M X = B for symmetric positive definite M via Cholesky."""
    chol_l, _ = cholesky_factor(m, jitter=jitter)
    return chol_solve_factor(chol_l, np.asarray(b, dtype=float))


def kmeans_landmarks(points: np.ndarray, d: int, seed) -> LandmarkSet:
    """Pick d landmarks as k-means centers (k-means++ init, Lloyd iterations).

    Deterministic given the seed.  Empty clusters are re-seeded from the point
    currently farthest from its assigned center.  Caps at 100 Lloyd iterations
    or a relative SSE improvement below 1e-6.
    """
    points = _check_points(points)
    points = np.atleast_2d(points)
    n = points.shape[0]
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    if n < d:
        raise InvalidArgumentError(f"need at least d={d} points, got {n}")
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp_init(points, d, rng)
    prev_sse = np.inf
    for _ in range(100):
        d2 = sqdist(points, centers)
        assign = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(n), assign]
        for j in range(d):
            mask = assign == j
            if not np.any(mask):
                far = int(np.argmax(point_cost))
                centers[j] = points[far]
                assign[far] = j
                point_cost[far] = 0.0
            else:
                centers[j] = points[mask].mean(axis=0)
        sse = float(np.sum(np.min(sqdist(points, centers), axis=1)))
        if np.isfinite(prev_sse) and prev_sse - sse <= 1e-6 * max(prev_sse, 1e-300):
            break
        prev_sse = sse
    centers = _dedupe_centers(centers, points, rng)
    return LandmarkSet(u=centers, z=centers, tied=True)


def _kmeans_pp_init(points: np.ndarray, d: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((d, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = sqdist(points, centers[:1]).ravel()
    for j in range(1, d):
        total = closest.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, sqdist(points, centers[j : j + 1]).ravel())
    return centers


def _dedupe_centers(centers: np.ndarray, points: np.ndarray, rng) -> np.ndarray:
    # Coincident centers (possible when points repeat) would break the
    # no-duplicate-landmark invariant; nudge duplicates apart deterministically.
    for _ in range(100):
        if not _has_duplicate_rows(centers):
            return centers
        _, idx = np.unique(centers, axis=0, return_index=True)
        dupes = np.setdiff1d(np.arange(centers.shape[0]), idx)
        span = points.std(axis=0)
        span[span == 0] = 1.0
        centers[dupes] += 1e-6 * span * rng.standard_normal((dupes.size, centers.shape[1]))
    raise NumericalError("could not separate duplicate k-means centers")


def sample_landmarks(points: np.ndarray, d: int, seed) -> LandmarkSet:
    """Pick d distinct rows uniformly without replacement; deterministic given seed."""
    points = _check_points(points)
    points = np.atleast_2d(points)
    n = points.shape[0]
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    if d > n:
        raise InvalidArgumentError(f"cannot sample {d} landmarks from {n} points")
    rng = np.random.default_rng(seed)
    # Duplicated data rows would violate the landmark invariant; sample among
    # distinct rows.
    uniq = np.unique(points, axis=0)
    if uniq.shape[0] < d:
        raise InvalidArgumentError(
            f"only {uniq.shape[0]} distinct points available for {d} landmarks"
        )
    idx = rng.choice(uniq.shape[0], size=d, replace=False)
    chosen = uniq[idx]
    return LandmarkSet(u=chosen, z=chosen, tied=True)


def median_heuristic(points: np.ndarray, seed=0, subsample: int = 2000) -> float:
    """Median pairwise distance over a subsample; the default bandwidth scale."""
    points = np.atleast_2d(_check_points(points))
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    if n > subsample:
        points = points[rng.choice(n, size=subsample, replace=False)]
    d2 = sqdist(points, points)
    iu = np.triu_indices(points.shape[0], k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    if not (np.isfinite(med) and med > 0):
        raise NumericalError("median heuristic degenerate (identical points?)")
    return med
