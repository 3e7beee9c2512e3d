"""Kernels, Gram matrices, Cholesky policy, and landmark selection."""

import math

import numpy as np
import pytest
from scipy import integrate

from bagreg.errors import InvalidArgumentError, NumericalError
from bagreg.kernels import (
    KernelParams,
    LandmarkSet,
    build_grams,
    chol_solve,
    cholesky_factor,
    conv_kernel,
    conv_matrix,
    gram,
    kmeans_landmarks,
    median_heuristic,
    rbf_kernel,
    rbf_matrix,
    sample_landmarks,
    sqdist,
)


def test_rbf_identical_points_is_one():
    params = KernelParams(bandwidth=0.7)
    x = np.array([0.3, -1.2, 4.0])
    assert rbf_kernel(x, x, params) == 1.0


def test_rbf_hand_value():
    params = KernelParams(bandwidth=1.0)
    assert rbf_kernel([0.0, 0.0], [1.0, 1.0], params) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_rbf_symmetric_exactly(rng):
    params = KernelParams(bandwidth=1.3)
    for _ in range(20):
        x = rng.normal(size=4)
        y = rng.normal(size=4)
        assert rbf_kernel(x, y, params) == rbf_kernel(y, x, params)


def test_rbf_values_in_unit_interval(rng):
    params = KernelParams(bandwidth=0.5)
    for _ in range(50):
        v = rbf_kernel(rng.normal(size=3), rng.normal(size=3), params)
        assert 0.0 < v <= 1.0


def test_sqdist_clamps_roundoff_and_checks_dims(rng):
    a = rng.normal(size=(5, 3))
    d2 = sqdist(a, a)
    assert np.all(d2 >= 0.0)
    assert np.allclose(np.diag(d2), 0.0, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        sqdist(a, rng.normal(size=(5, 2)))


def test_conv_flat_measure_limit():
    # conv_scale large enough that the base measure is flat over the support:
    # in 1-D with unit bandwidth r(x, y) -> sqrt(pi) exp(-(x - y)^2 / 4)
    params = KernelParams(bandwidth=1.0, conv_scale=1e6, r_choice="conv")
    r00 = conv_kernel([0.0], [0.0], params)
    r02 = conv_kernel([0.0], [2.0], params)
    assert r00 == pytest.approx(math.sqrt(math.pi), rel=1e-6)
    assert r00 / r02 == pytest.approx(math.e, rel=1e-6)


def test_conv_matches_tensor_quadrature():
    params = KernelParams(bandwidth=1.5, conv_scale=2.0, r_choice="conv")
    x = np.array([0.0, 0.0])
    y = np.array([1.0, 0.0])
    b2 = params.bandwidth**2

    def integrand(t, xi, yi):
        return math.exp(
            -((xi - t) ** 2) / (2 * b2)
            - ((t - yi) ** 2) / (2 * b2)
            - t**2 / (2 * params.conv_scale**2)
        )

    # the integrand factorizes per coordinate, so the 2-D value is a product
    want = 1.0
    for xi, yi in zip(x, y):
        q, _ = integrate.quad(integrand, -40, 40, args=(xi, yi), epsabs=1e-13, epsrel=1e-13)
        want *= q
    assert conv_kernel(x, y, params) == pytest.approx(want, rel=1e-6)


def test_conv_symmetric_and_matrix_consistent(rng):
    params = KernelParams(bandwidth=0.9, conv_scale=1.5, r_choice="conv")
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(5, 3))
    m = conv_matrix(a, b, params)
    for i in range(4):
        for j in range(5):
            assert m[i, j] == pytest.approx(conv_kernel(a[i], b[j], params), rel=1e-12)
            assert conv_kernel(a[i], b[j], params) == conv_kernel(b[j], a[i], params)


def test_gram_single_point_carries_eta():
    params = KernelParams(bandwidth=1.0)
    g = gram([[0.5, 0.5]], [[0.5, 0.5]], params, eta=2.0)
    assert g.shape == (1, 1)
    assert g[0, 0] == 2.0


def test_gram_transpose_identity(rng):
    params = KernelParams(bandwidth=1.1)
    a = rng.normal(size=(4, 2))
    b = rng.normal(size=(6, 2))
    assert np.allclose(gram(a, b, params), gram(b, a, params).T, rtol=1e-15, atol=0)


def test_gram_selector_and_validation(rng):
    params = KernelParams(bandwidth=1.0, conv_scale=1.5, r_choice="conv")
    a = rng.normal(size=(3, 2))
    assert np.array_equal(gram(a, a, params, kernel="r"), conv_matrix(a, a, params))
    assert np.array_equal(gram(a, a, params, kernel="k"), rbf_matrix(a, a, 1.0))
    with pytest.raises(InvalidArgumentError):
        gram(a, a, params, kernel="q")
    with pytest.raises(InvalidArgumentError):
        gram(a, a, params, eta=0.0)


def test_gram_psd_via_cholesky(rng):
    params = KernelParams(bandwidth=0.8)
    a = rng.normal(size=(12, 3))
    g = gram(a, a, params)
    ell, _ = cholesky_factor(g)
    assert np.allclose(ell @ ell.T, g, atol=1e-7)


def test_chol_solve_identity_returns_rhs():
    b = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    # the first jitter rung (1e-8 * mean diag) bounds the deviation
    assert np.allclose(chol_solve(np.eye(3), b), b, rtol=1e-7, atol=0)


def test_chol_solve_diagonal_hand_case():
    x = chol_solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
    assert np.allclose(x, [1.0, 1.0], rtol=1e-7)


def test_chol_solve_multiply_back(rng):
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    m = (q * rng.uniform(0.8, 1.2, size=6)) @ q.T
    m = 0.5 * (m + m.T)
    assert np.allclose(chol_solve(m, m), np.eye(6), rtol=1e-8)


def test_chol_solve_residual_small(rng):
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    m = (q * rng.uniform(0.5, 2.0, size=5)) @ q.T
    m = 0.5 * (m + m.T)
    b = rng.normal(size=5)
    x = chol_solve(m, b)
    assert np.linalg.norm(m @ x - b) / np.linalg.norm(b) <= 1e-7


def test_jitter_rescues_duplicate_landmark_gram():
    pts = np.array([[0.0], [0.0], [1.0]])
    g = rbf_matrix(pts, pts, 1.0)  # two identical rows: exactly singular
    with pytest.raises(NumericalError):
        cholesky_factor(g, jitter=False)
    ell, added = cholesky_factor(g)
    assert added == pytest.approx(1e-8, rel=1e-12)  # mean(diag) = 1
    assert np.all(np.isfinite(ell))


def test_jitter_escalates_past_first_rung():
    m = np.diag([1.0, 1.0, -5e-8])
    ell, added = cholesky_factor(m)
    scale = float(np.mean(np.diag(m)))
    assert added == pytest.approx(1e-7 * scale, rel=1e-12)
    assert np.all(np.isfinite(ell))


def test_jitter_exhaustion_reports_condition():
    m = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
    with pytest.raises(NumericalError, match="cond"):
        cholesky_factor(m)


def test_cholesky_rejects_non_square():
    with pytest.raises(InvalidArgumentError):
        cholesky_factor(np.ones((2, 3)))


def test_kmeans_single_center_is_mean(rng):
    pts = rng.normal(size=(40, 1))
    ls = kmeans_landmarks(pts, 1, seed=3)
    assert np.allclose(ls.u[0], pts.mean(axis=0), rtol=1e-12)


def test_kmeans_recovers_separated_clusters(rng):
    true = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    pts = np.concatenate([t + 0.05 * rng.normal(size=(30, 2)) for t in true])
    ls = kmeans_landmarks(pts, 3, seed=0)
    d = np.sqrt(sqdist(true, ls.u))
    assert np.all(d.min(axis=1) < 0.5)
    assert len(set(d.argmin(axis=1))) == 3


def test_kmeans_centers_are_lloyd_fixed_point(rng):
    # running further Lloyd iterations from the returned centers must not
    # increase the SSE, and the first extra step barely moves it
    pts = rng.normal(size=(100, 2))
    centers = kmeans_landmarks(pts, 5, seed=1).u.copy()

    def sse(c):
        return float(np.sum(np.min(sqdist(pts, c), axis=1)))

    prev = sse(centers)
    first_drop = None
    for _ in range(5):
        assign = np.argmin(sqdist(pts, centers), axis=1)
        for j in range(5):
            mask = assign == j
            if np.any(mask):
                centers[j] = pts[mask].mean(axis=0)
        cur = sse(centers)
        assert cur <= prev + 1e-9 * max(1.0, prev)
        if first_drop is None:
            first_drop = prev - cur
        prev = cur
    assert first_drop <= 1e-5 * max(1.0, prev)


def test_kmeans_deterministic_per_seed():
    pts = np.random.default_rng(7).normal(size=(60, 3))
    a = kmeans_landmarks(pts, 4, seed=11)
    b = kmeans_landmarks(pts, 4, seed=11)
    assert np.array_equal(a.u, b.u)
    assert a.tied and a.z is a.u


def test_kmeans_needs_enough_points(rng):
    with pytest.raises(InvalidArgumentError):
        kmeans_landmarks(rng.normal(size=(3, 2)), 4, seed=0)


def test_sample_landmarks_full_draw_is_permutation(rng):
    pts = rng.normal(size=(8, 2))
    ls = sample_landmarks(pts, 8, seed=5)
    assert sorted(map(tuple, ls.u)) == sorted(map(tuple, pts))


def test_sample_landmarks_deterministic_and_distinct(rng):
    pts = rng.normal(size=(30, 2))
    a = sample_landmarks(pts, 10, seed=2)
    b = sample_landmarks(pts, 10, seed=2)
    assert np.array_equal(a.u, b.u)
    assert np.unique(a.u, axis=0).shape[0] == 10


def test_sample_landmarks_too_many_errors(rng):
    with pytest.raises(InvalidArgumentError):
        sample_landmarks(rng.normal(size=(4, 2)), 5, seed=0)


def test_median_heuristic_small_set_exact():
    pts = np.array([[0.0], [1.0], [3.0]])  # pairwise distances 1, 2, 3
    assert median_heuristic(pts) == pytest.approx(2.0, rel=1e-12)


def test_median_heuristic_subsample_deterministic(rng):
    pts = rng.normal(size=(3000, 2))
    assert median_heuristic(pts, seed=4) == median_heuristic(pts, seed=4)


def test_landmark_set_rejects_duplicate_rows():
    u = np.array([[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(InvalidArgumentError):
        LandmarkSet(u=u, z=u, tied=True)


def test_landmark_set_tied_vs_untied():
    u = np.array([[0.0], [1.0]])
    z = np.array([[2.0], [3.0], [4.0]])
    with pytest.raises(InvalidArgumentError):
        LandmarkSet(u=u, z=z, tied=True)
    ls = LandmarkSet(u=u, z=z, tied=False)
    assert (ls.n_obs, ls.n_reg, ls.dim) == (2, 3, 1)


def test_kernel_params_validated():
    with pytest.raises(InvalidArgumentError):
        KernelParams(bandwidth=0.0)
    with pytest.raises(InvalidArgumentError):
        KernelParams(bandwidth=1.0, r_choice="spline")


def test_tied_grams_share_one_array(rng):
    ls = kmeans_landmarks(rng.normal(size=(20, 2)), 5, seed=0)
    params = KernelParams(bandwidth=1.2)
    gm = build_grams(ls, params, eta=2.0)
    assert gm.R is gm.R_z and gm.R is gm.R_zz
    assert np.array_equal(gm.K_z, rbf_matrix(ls.z, ls.z, 1.2))
    assert np.array_equal(gm.R, 2.0 * gm.K_z)
    gm2 = gm.with_eta(6.0)
    assert gm2.R is gm2.R_z and gm2.R is gm2.R_zz
    assert np.allclose(gm2.R, 3.0 * gm.R, rtol=1e-15)
    assert gm2.K_z is gm.K_z
