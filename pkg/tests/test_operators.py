"""Operator layer: kernels, grids, sample factors, whitening, file I/O."""

import numpy as np
import pytest

from mixkry.errors import (ArgumentError, CapacityError, DegenerateDataError,
                           ParameterDomainError)
from mixkry.operators import (Grid, KernelSpec, LinearOperator, aslinop,
                              build_kernel_operator, grid_distances,
                              identity_operator, kernel_eval, load_matrix,
                              load_samples, load_vector, mixed_apply,
                              mixed_operator, noise_whitener, PriorSpec,
                              sample_covariance, SampleFactor, save_matrix,
                              save_vector, zero_operator)


# -- kernel profiles ---------------------------------------------------------


def test_kernel_values_at_zero():
    """kappa(0) = 1 for every family (sinc by limit)."""
    specs = [
        KernelSpec("squared-exponential", ell=1.0),
        KernelSpec("matern", ell=1.0, nu=0.5),
        KernelSpec("matern", ell=0.3, nu=2.2),
        KernelSpec("gamma-exponential", ell=1.0, gamma_exp=1.5),
        KernelSpec("rational-quadratic", ell=0.1, nu=2.0),
        KernelSpec("sinc", nu=np.pi),
    ]
    for spec in specs:
        assert kernel_eval(spec, 0.0) == pytest.approx(1.0, abs=1e-15)


def test_matern_half_closed_form():
    """nu = 1/2 is exp(-r/ell), checked against the Bessel evaluation too."""
    r = np.linspace(0.0, 3.0, 40)
    spec = KernelSpec("matern", ell=1.0, nu=0.5)
    vals = kernel_eval(spec, r)
    np.testing.assert_allclose(vals, np.exp(-r), rtol=1e-12)
    assert kernel_eval(spec, 1.0) == pytest.approx(np.exp(-1.0), rel=1e-12)

    # Bessel route at nu = 0.5 + tiny must agree with the closed form.
    near = KernelSpec("matern", ell=1.0, nu=0.5 + 1e-9)
    np.testing.assert_allclose(kernel_eval(near, r[1:]), np.exp(-r[1:]),
                               rtol=1e-6)


def test_matern_three_halves_and_five_halves():
    r = np.linspace(1e-3, 2.0, 25)
    for nu in (1.5, 2.5):
        ell = 0.7
        x = np.sqrt(2 * nu) * r / ell
        if nu == 1.5:
            expect = (1 + x) * np.exp(-x)
        else:
            expect = (1 + x + x**2 / 3) * np.exp(-x)
        got = kernel_eval(KernelSpec("matern", ell=ell, nu=nu), r)
        np.testing.assert_allclose(got, expect, rtol=1e-12)
        # closed form and Bessel route agree off the half-integer shortcut
        bessel = kernel_eval(KernelSpec("matern", ell=ell, nu=nu + 1e-10), r)
        np.testing.assert_allclose(got, bessel, rtol=1e-6)


def test_matern_large_nu_approaches_squared_exponential():
    """Large nu tracks the squared-exponential at the O(1/nu) rate.

    The true distance on r <= 3 ell is ~4.6e-3 at nu = 50 and halves when
    nu doubles.
    """
    ell = 0.5
    r = np.linspace(0.0, 3 * ell, 60)
    se = kernel_eval(KernelSpec("squared-exponential", ell=ell), r)
    d50 = np.max(np.abs(kernel_eval(KernelSpec("matern", ell=ell, nu=50.0), r) - se))
    d100 = np.max(np.abs(kernel_eval(KernelSpec("matern", ell=ell, nu=100.0), r) - se))
    assert d50 < 5e-3
    assert d100 < 0.55 * d50


def test_matern_extreme_orders_stay_finite():
    """No overflow at large order or tiny argument; values stay in (0, 1]."""
    r = np.logspace(-9, 0.5, 120)
    for nu in (28.0, 119.0, 121.0, 500.0, 5e3):
        vals = kernel_eval(KernelSpec("matern", ell=0.5, nu=nu), r)
        assert np.all(np.isfinite(vals))
        assert np.all((vals > 0) & (vals <= 1.0))
    # the kve and asymptotic routes agree where they hand over
    lo = kernel_eval(KernelSpec("matern", ell=0.5, nu=119.999), r)
    hi = kernel_eval(KernelSpec("matern", ell=0.5, nu=120.001), r)
    assert np.max(np.abs(lo - hi)) < 1e-6


def test_rational_quadratic_formula():
    spec = KernelSpec("rational-quadratic", ell=0.1, nu=2.0)
    r = np.array([0.0, 0.05, 0.2])
    expect = (1 + r**2 / (2 * 2.0 * 0.1**2)) ** -2.0
    np.testing.assert_allclose(kernel_eval(spec, r), expect, rtol=1e-14)


def test_sinc_kernel_small_argument_limit():
    spec = KernelSpec("sinc", nu=np.pi)
    assert kernel_eval(spec, 1e-12) == pytest.approx(1.0, abs=1e-9)
    r = np.array([0.3, 1.0, 2.0])
    np.testing.assert_allclose(kernel_eval(spec, r),
                               np.sin(np.pi * r) / (np.pi * r), rtol=1e-12)


def test_gamma_exponential_formula():
    spec = KernelSpec("gamma-exponential", ell=0.4, gamma_exp=1.3)
    r = np.array([0.1, 0.5, 1.0])
    np.testing.assert_allclose(kernel_eval(spec, r),
                               np.exp(-((r / 0.4) ** 1.3)), rtol=1e-14)


def test_kernel_spec_validation():
    with pytest.raises(ParameterDomainError):
        KernelSpec("triangular")
    with pytest.raises(ParameterDomainError):
        KernelSpec("matern", ell=0.0, nu=1.0)
    with pytest.raises(ParameterDomainError):
        KernelSpec("matern", ell=1.0, nu=-2.0)
    with pytest.raises(ParameterDomainError):
        KernelSpec("gamma-exponential", ell=1.0, gamma_exp=2.5)
    with pytest.raises(ArgumentError):
        kernel_eval(KernelSpec("matern", ell=1.0, nu=0.5), -0.1)


# -- grids and kernel operators ----------------------------------------------


def test_grid_unit_square_normalization():
    """Pixel centers live in (0,1)^2 with the longer side spanning [0,1]."""
    g = Grid(4, 4)
    pts = g.points()
    assert g.n == 16
    assert pts.shape == (16, 2)
    assert pts.min() == pytest.approx(1 / 8)
    assert pts.max() == pytest.approx(7 / 8)
    # row-major: the fastest-varying coordinate is x
    np.testing.assert_allclose(pts[1] - pts[0], [0.25, 0.0])


def test_grid_rectangular_aspect():
    g = Grid(8, 2)
    pts = g.points()
    # longer side normalized to unit length; shorter side keeps aspect
    assert pts[:, 0].max() == pytest.approx(1 - 1 / 16)
    assert pts[:, 1].max() == pytest.approx(3 / 16)
    assert g.diameter() == pytest.approx(np.hypot(1.0, 0.25))


def test_grid_validation():
    with pytest.raises(ArgumentError):
        Grid(0, 3)
    with pytest.raises(ArgumentError):
        Grid(2, 2, spacing=(0.0, 1.0))


def test_build_kernel_operator_single_point():
    op = build_kernel_operator(KernelSpec("matern", ell=1.0, nu=0.5), Grid(1, 1))
    np.testing.assert_allclose(op.mat, [[1.0]])


def test_build_kernel_operator_two_points():
    """Two points at distance 1 under matern(0.5, 1): [[1, 1/e], [1/e, 1]]."""
    g = Grid(2, 1, spacing=(2.0, 2.0))  # centers at 0.25 and 0.75 -> d = 0.5
    op = build_kernel_operator(KernelSpec("matern", ell=0.5, nu=0.5), g)
    e = np.exp(-1.0)
    np.testing.assert_allclose(op.mat, [[1.0, e], [e, 1.0]], rtol=1e-14)


def test_kernel_operator_symmetric_unit_diagonal_psd():
    rng = np.random.default_rng(5)
    g = Grid(6, 5)
    for spec in (KernelSpec("matern", ell=0.3, nu=1.5),
                 KernelSpec("squared-exponential", ell=0.2),
                 KernelSpec("rational-quadratic", ell=0.1, nu=2.0),
                 KernelSpec("gamma-exponential", ell=0.3, gamma_exp=1.0)):
        K = build_kernel_operator(spec, g).mat
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        np.testing.assert_allclose(np.diag(K), 1.0, atol=1e-15)
        x = rng.standard_normal(g.n)
        assert x @ K @ x >= -1e-10 * (x @ x)


def test_kernel_operator_matvec_matches_dense():
    g = Grid(5, 4)
    op = build_kernel_operator(KernelSpec("matern", ell=0.25, nu=0.5), g)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(g.n)
    np.testing.assert_allclose(op.matvec(x), op.mat @ x, rtol=1e-14)


def test_kernel_operator_cap():
    with pytest.raises(CapacityError):
        build_kernel_operator(KernelSpec("matern", ell=0.3, nu=0.5),
                              Grid(40, 40), cap=100)


def test_grid_distances_consistency():
    g = Grid(4, 3)
    D = grid_distances(g)
    assert D.shape == (12, 12)
    np.testing.assert_allclose(D, D.T, atol=0)
    np.testing.assert_allclose(np.diag(D), 0.0, atol=1e-12)
    # passing the precomputed matrix must give the same operator
    spec = KernelSpec("matern", ell=0.3, nu=1.5)
    K1 = build_kernel_operator(spec, g).mat
    K2 = build_kernel_operator(spec, g, dists=D).mat
    np.testing.assert_allclose(K1, K2, atol=0)


# -- sample covariance factors -----------------------------------------------


def test_sample_covariance_hand_case():
    """Two samples (1,0), (-1,0): mean 0, Qhat = [[1,0],[0,0]]."""
    sf = sample_covariance([np.array([1.0, 0.0]), np.array([-1.0, 0.0])])
    np.testing.assert_allclose(sf.mean, [0.0, 0.0])
    Q = sf.factor @ sf.factor.T
    np.testing.assert_allclose(Q, [[1.0, 0.0], [0.0, 0.0]], atol=1e-15)


def test_sample_covariance_identical_samples():
    s = np.array([2.0, -1.0, 3.0])
    sf = sample_covariance([s, s, s])
    np.testing.assert_allclose(sf.mean, s)
    np.testing.assert_allclose(sf.factor, 0.0, atol=0)


def test_sample_covariance_matches_outer_product_sum():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((4, 5))
    sf = sample_covariance(list(X.T))
    mean = X.mean(axis=1)
    brute = sum(np.outer(c - mean, c - mean) for c in X.T) / 5
    np.testing.assert_allclose(sf.factor @ sf.factor.T, brute, atol=1e-12)


def test_sample_covariance_empty():
    with pytest.raises(DegenerateDataError):
        sample_covariance([])
    with pytest.raises(ArgumentError):
        sample_covariance([np.zeros(3), np.zeros(4)])


def test_sample_factor_apply_and_counting():
    """apply goes through the factor (2 matvecs per column), never a dense Qhat."""
    rng = np.random.default_rng(3)
    S = rng.standard_normal((6, 4))
    sf = SampleFactor(S, np.zeros(6))
    x = rng.standard_normal(6)
    np.testing.assert_allclose(sf.apply(x), S @ (S.T @ x), atol=0)
    assert sf.matvec_count == 2
    X = rng.standard_normal((6, 5))
    sf.apply(X)
    assert sf.matvec_count == 2 + 10
    assert sf.dim == 6 and sf.count == 4


def test_sample_factor_psd_probe():
    rng = np.random.default_rng(7)
    sf = SampleFactor(rng.standard_normal((8, 3)), np.zeros(8))
    for _ in range(20):
        x = rng.standard_normal(8)
        assert x @ sf.apply(x) >= -1e-12 * (x @ x)


# -- prior mixing and whitening ------------------------------------------------


def test_mixed_apply_collapses_and_hand_case():
    rng = np.random.default_rng(1)
    n = 4
    q1 = aslinop(np.diag([2.0, 2.0, 2.0, 2.0]))
    q2 = aslinop(np.diag([0.0, 4.0, 0.0, 4.0]))
    prior = PriorSpec(mean=np.zeros(n), q1=q1, q2=q2)
    x = rng.standard_normal(n)
    np.testing.assert_allclose(mixed_apply(prior, 1.0, x), q1.matvec(x), atol=0)
    y = mixed_apply(prior, 0.5, np.ones(n))
    np.testing.assert_allclose(y, [1.0, 3.0, 1.0, 3.0])
    # identity pair is gamma-invariant
    pid = PriorSpec(mean=np.zeros(n), q1=identity_operator(n),
                    q2=identity_operator(n))
    for g in (0.2, 0.7, 1.0):
        np.testing.assert_allclose(mixed_apply(pid, g, x), x, rtol=1e-15)


def test_mixed_operator_matches_mixed_apply():
    rng = np.random.default_rng(2)
    n = 5
    prior = PriorSpec(mean=np.zeros(n), q1=aslinop(np.eye(n) * 3),
                      q2=aslinop(np.outer(np.ones(n), np.ones(n))))
    op = mixed_operator(prior, 0.4)
    x = rng.standard_normal(n)
    np.testing.assert_allclose(op.matvec(x), mixed_apply(prior, 0.4, x), atol=0)


def test_prior_spec_gamma_validation():
    n = 3
    with pytest.raises(ParameterDomainError):
        PriorSpec(mean=np.zeros(n), q1=identity_operator(n),
                  q2=identity_operator(n), gamma_mode="fixed", gamma=0.0)
    with pytest.raises(ParameterDomainError):
        PriorSpec(mean=np.zeros(n), q1=identity_operator(n),
                  q2=identity_operator(n), gamma_mode="fixed", gamma=1.2)


def test_noise_whitener_scalar_and_diagonal():
    Rinv, LR = noise_whitener(4.0, 3)
    x = np.array([2.0, 0.0, -4.0])
    np.testing.assert_allclose(Rinv.matvec(x), x / 4.0)
    np.testing.assert_allclose(LR.matvec(x), x / 2.0)

    Rinv2, LR2 = noise_whitener(np.array([4.0, 9.0]))
    np.testing.assert_allclose(LR2.matvec(np.ones(2)), [0.5, 1 / 3])
    np.testing.assert_allclose(Rinv2.matvec(np.ones(2)), [0.25, 1 / 9])


def test_noise_whitener_composition():
    """L_R^T L_R x == R^{-1} x on random diagonals."""
    rng = np.random.default_rng(9)
    d = rng.uniform(0.5, 3.0, size=6)
    Rinv, LR = noise_whitener(d)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(LR.rmatvec(LR.matvec(x)), Rinv.matvec(x),
                               rtol=1e-12)


def test_noise_whitener_rejects_nonpositive():
    with pytest.raises(Exception):
        noise_whitener(np.array([1.0, -2.0]))
    with pytest.raises(Exception):
        noise_whitener(0.0, 4)


# -- generic operator behavior -------------------------------------------------


def test_adjoint_consistency():
    """<Op x, y> == <x, Op^T y> for dense-backed operators."""
    rng = np.random.default_rng(21)
    A = rng.standard_normal((7, 5))
    op = aslinop(A)
    for _ in range(100):
        x = rng.standard_normal(5)
        y = rng.standard_normal(7)
        lhs = op.matvec(x) @ y
        rhs = x @ op.rmatvec(y)
        assert abs(lhs - rhs) <= 1e-12 * (np.linalg.norm(x) * np.linalg.norm(y) + 1)


def test_identity_and_zero_operators():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(identity_operator(5).matvec(x), x, atol=0)
    np.testing.assert_allclose(zero_operator(5).matvec(x), 0.0, atol=0)


def test_aslinop_passthrough_and_sparse():
    import scipy.sparse as sp

    op = identity_operator(3)
    assert aslinop(op) is op
    S = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 3.0]]))
    ops = aslinop(S)
    np.testing.assert_allclose(ops.matvec(np.array([1.0, 1.0])), [3.0, 3.0])
    np.testing.assert_allclose(ops.rmatvec(np.array([1.0, 1.0])), [1.0, 5.0])


# -- MatrixMarket round trips ---------------------------------------------------


def test_matrix_roundtrip_dense_and_sparse(tmp_path):
    import scipy.sparse as sp

    rng = np.random.default_rng(6)
    M = rng.standard_normal((4, 3))
    p = tmp_path / "dense.mtx"
    save_matrix(p, M)
    np.testing.assert_allclose(load_matrix(p), M, rtol=1e-12)

    S = sp.random(6, 5, density=0.3, random_state=1, format="csr")
    ps = tmp_path / "sparse.mtx"
    save_matrix(ps, S)
    back = load_matrix(ps)
    np.testing.assert_allclose(back.toarray(), S.toarray(), rtol=1e-12)


def test_vector_roundtrip(tmp_path):
    v = np.array([1.5, -2.0, 0.0, 3.25])
    p = tmp_path / "vec.mtx"
    save_vector(p, v)
    np.testing.assert_allclose(load_vector(p), v, atol=0)


def test_load_samples_matrix_columns(tmp_path):
    rng = np.random.default_rng(8)
    X = rng.standard_normal((6, 4))
    p = tmp_path / "samples.mtx"
    save_matrix(p, X)
    cols = load_samples(p)
    assert len(cols) == 4
    np.testing.assert_allclose(np.column_stack(cols), X, rtol=1e-12)
