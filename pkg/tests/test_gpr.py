import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccopt import _matern_py, gpr
from ccopt.gpr import KernelParams


def random_problem(rng, S=None, D=None, noise=None):
    S = S or int(rng.integers(2, 11))
    D = D or int(rng.integers(1, 7))
    X = rng.random((S, D))
    y = np.sin(3 * X).sum(1) + 0.1 * rng.standard_normal(S)
    p = KernelParams(np.exp(rng.uniform(-1.5, 1.0, D)), float(np.exp(rng.uniform(-1, 1))),
                     float(noise if noise is not None else np.exp(rng.uniform(-8, -2))))
    return X, y, p


def explicit_posterior(model, Xq):
    """Posterior via an explicit inverse of the (jittered) training covariance."""
    X, p = model.train_inputs, model.params
    K = np.array([[gpr.matern52_ard(a, b, p) for b in X] for a in X]) + model.diag_noise * np.eye(len(X))
    Ks = np.array([[gpr.matern52_ard(q, b, p) for b in X] for q in Xq])
    Kinv = np.linalg.inv(K)
    ys = (model.train_targets - model.y_mean) / model.y_scale
    mean = Ks @ Kinv @ ys * model.y_scale + model.y_mean
    var = p.signal_variance - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mean, var * model.y_scale ** 2


# -- kernel ----------------------------------------------------------------


def test_matern_values():
    p = KernelParams.isotropic(1)
    assert gpr.matern52_ard([0.3], [0.3], p) == 1.0
    assert gpr.matern52_ard([0.0], [1.0], p) == pytest.approx(0.52400, abs=1e-5)
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert gpr.matern52_ard([0.0], [1.0], p) == pytest.approx(expected, rel=1e-14)


def test_matern_ard_scaling():
    p = KernelParams([2.0, 0.5], 3.0)
    # r^2 = (1/2)^2 + (0.25/0.5)^2 = 0.5
    r = math.sqrt(0.5)
    expected = 3.0 * (1 + math.sqrt(5) * r + 5 * 0.5 / 3) * math.exp(-math.sqrt(5) * r)
    assert gpr.matern52_ard([0, 0], [1.0, 0.25], p) == pytest.approx(expected, rel=1e-14)


def test_matern_dimension_mismatch():
    with pytest.raises(ValueError):
        gpr.matern52_ard([0.0, 1.0], [0.0], KernelParams.isotropic(2))
    with pytest.raises(ValueError):
        gpr.matern52_ard([0.0], [1.0], KernelParams.isotropic(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 6))
def test_kernel_matrix_symmetric_psd(seed, S, D):
    rng = np.random.default_rng(seed)
    X = rng.random((S, D))
    p = KernelParams(np.exp(rng.uniform(-2, 2, D)), 1.5)
    K = gpr.kernel_matrix(X, None, p)
    np.testing.assert_array_equal(K, K.T)
    L, _ = gpr.jittered_cholesky(K, 0.0)
    assert np.all(np.isfinite(L))
    loop = np.array([[gpr.matern52_ard(a, b, p) for b in X] for a in X])
    np.testing.assert_allclose(K, loop, atol=1e-13)


def test_cross_kernel_matches_scalar():
    rng = np.random.default_rng(1)
    A, B = rng.random((4, 3)), rng.random((5, 3))
    p = KernelParams([0.3, 1.0, 2.0], 0.7)
    np.testing.assert_allclose(gpr.kernel_matrix(A, B, p),
                               [[gpr.matern52_ard(a, b, p) for b in B] for a in A], atol=1e-14)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams([1.0, 0.0])
    with pytest.raises(ValueError):
        KernelParams([1.0], signal_variance=0.0)
    with pytest.raises(ValueError):
        KernelParams([1.0], noise_variance=-1.0)
    p = KernelParams([1.0, 2.0], 3.0, 0.1)
    q = KernelParams.from_log(p.to_log())
    np.testing.assert_allclose(q.length_scales, p.length_scales)
    assert q.signal_variance == pytest.approx(3.0) and q.noise_variance == pytest.approx(0.1)


# -- Cholesky and jitter ---------------------------------------------------


def test_jitter_rescues_duplicate_rows():
    X = np.array([[0.1, 0.2]] * 3 + [[0.5, 0.5]])
    K = gpr.kernel_matrix(X, None, KernelParams.isotropic(2))
    L, added = gpr.jittered_cholesky(K, 0.0)
    assert added > 0
    np.testing.assert_allclose(L @ L.T, K + added * np.eye(4), atol=1e-12)


def test_jitter_gives_up():
    with pytest.raises(gpr.GpFitError):
        gpr.jittered_cholesky(-np.eye(3), 0.0)


def test_chol_invariant():
    X, y, p = random_problem(np.random.default_rng(2), 8, 3)
    m = gpr.condition(X, y, p)
    K = gpr.kernel_matrix(X, None, p) + p.noise_variance * np.eye(8)
    np.testing.assert_allclose(m.chol @ m.chol.T, K, atol=1e-8)


# -- prediction ------------------------------------------------------------


def test_cholesky_path_equals_explicit_inverse():
    rng = np.random.default_rng(3)
    for _ in range(100):
        X, y, p = random_problem(rng)
        for standardize in (False, True):
            m = gpr.condition(X, y, p, standardize=standardize)
            Xq = rng.random((4, X.shape[1]))
            mu, var = gpr.predict(m, Xq)
            mu_o, var_o = explicit_posterior(m, Xq)
            np.testing.assert_allclose(mu, mu_o, atol=1e-8, rtol=0)
            np.testing.assert_allclose(var, np.maximum(var_o, 0), atol=1e-8, rtol=0)


def test_noiseless_interpolation():
    X = np.array([[0.0], [0.3], [0.7], [1.0]])
    y = np.array([1.0, -2.0, 0.5, 3.0])
    m = gpr.condition(X, y, KernelParams.isotropic(1, 0.3, 1.0, 0.0), standardize=False)
    mu, var = gpr.predict(m, X)
    np.testing.assert_allclose(mu, y, atol=1e-6)
    assert np.all(var <= 1e-8)


def test_prior_reversion_far_away():
    X = np.array([[0.0, 0.0], [0.1, 0.2]])
    p = KernelParams.isotropic(2, 0.1, 2.0, 1e-4)
    m = gpr.condition(X, np.array([3.0, -1.0]), p, standardize=False)
    mu, var = gpr.predict(m, np.array([[50.0, 50.0]]))
    assert abs(mu[0]) < 1e-12
    assert var[0] == pytest.approx(2.0, abs=1e-12)
    ms = gpr.condition(X, np.array([3.0, -1.0]), p)
    assert gpr.predict(ms, np.array([[50.0, 50.0]]), return_var=False)[0] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_variance_bounded_by_prior(seed):
    rng = np.random.default_rng(seed)
    X, y, p = random_problem(rng)
    m = gpr.condition(X, y, p, standardize=False)
    _, var = gpr.predict(m, rng.random((20, X.shape[1])) * 2 - 0.5)
    assert np.all(var >= 0)
    assert np.all(var <= p.signal_variance + 1e-8)


def test_predict_dimension_check():
    X, y, p = random_problem(np.random.default_rng(0), 5, 2)
    m = gpr.condition(X, y, p)
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 3)))


# -- likelihood and fitting ------------------------------------------------


def _lml_explicit(X, y, p):
    # includes the initial diagonal jitter the Cholesky path always adds
    diag = p.noise_variance + gpr.JITTER_START * p.signal_variance
    K = gpr.kernel_matrix(X, None, p) + diag * np.eye(len(y))
    _, logdet = np.linalg.slogdet(K)
    return -0.5 * y @ np.linalg.solve(K, y) - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)


def test_lml_matches_explicit_formula():
    rng = np.random.default_rng(5)
    for _ in range(10):
        X, y, p = random_problem(rng, noise=1e-2)
        assert gpr.log_marginal_likelihood(X, y, p) == pytest.approx(_lml_explicit(X, y, p), rel=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    h = 1e-5
    for _ in range(20):
        X, y, p = random_problem(rng, S=int(rng.integers(4, 12)), noise=np.exp(rng.uniform(-5, -1)))
        theta = p.to_log()
        _, g = gpr.log_marginal_likelihood(X, y, p, with_grad=True)
        fd = np.empty_like(theta)
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (gpr.log_marginal_likelihood(X, y, KernelParams.from_log(theta + e))
                     - gpr.log_marginal_likelihood(X, y, KernelParams.from_log(theta - e))) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(np.max(np.abs(fd)), 1e-8)


def test_fit_improves_likelihood():
    rng = np.random.default_rng(7)
    X = rng.random((5, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    init = KernelParams.isotropic(2, 1.0, 1.0, 1e-2)
    m = gpr.fit(X, y, init, rng=np.random.default_rng(0))
    ys = (y - y.mean()) / y.std()
    assert gpr.log_marginal_likelihood(X, ys, m.params) >= gpr.log_marginal_likelihood(X, ys, init)


def test_fit_constant_targets():
    X = np.random.default_rng(8).random((6, 3))
    m = gpr.fit(X, np.full(6, 4.2), KernelParams.isotropic(3), rng=np.random.default_rng(0))
    np.testing.assert_allclose(m.predict(X, return_var=False), 4.2, atol=1e-12)
    np.testing.assert_allclose(m.predict(np.random.default_rng(9).random((5, 3)), return_var=False), 4.2)


def test_fit_interpolates_linear_function():
    X = np.linspace(0, 1, 5)[:, None]
    y = 2.0 * X[:, 0] - 1.0
    m = gpr.fit(X, y, KernelParams.isotropic(1, 1.0, 1.0, 1e-10), rng=np.random.default_rng(0))
    np.testing.assert_allclose(m.predict(X, return_var=False), y, atol=1e-6)


def test_single_row_keeps_init():
    init = KernelParams.isotropic(2, 0.5, 2.0, 1e-3)
    m = gpr.fit(np.array([[0.2, 0.4]]), np.array([1.0]), init)
    assert m.params == init
    assert m.predict(np.array([[0.2, 0.4]]), return_var=False)[0] == pytest.approx(1.0)


def test_fit_is_deterministic_and_thread_safe():
    rng = np.random.default_rng(10)
    probs = [random_problem(rng, 10, 3) for _ in range(6)]

    def work(prob):
        X, y, p = prob
        return gpr.fit(X, y, p, rng=np.random.default_rng(1)).params.to_log()

    serial = [work(pr) for pr in probs]
    with ThreadPoolExecutor(3) as ex:
        threaded = list(ex.map(work, probs))
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)


# -- compiled kernels vs numpy fallback -------------------------------------


ext = pytest.importorskip("ccopt._matern_ext", reason="compiled extension not built")


@pytest.mark.parametrize("S, D", [(1, 1), (7, 3), (40, 9), (120, 27)])
def test_backends_agree(S, D):
    rng = np.random.default_rng(S * 31 + D)
    X, Y = rng.random((S, D)), rng.random((S + 2, D))
    inv_ls = np.exp(rng.uniform(-1, 1, D))
    W = rng.standard_normal((S, S))
    np.testing.assert_allclose(ext.cov(X, Y, inv_ls, 1.3), _matern_py.cov(X, Y, inv_ls, 1.3), atol=1e-12)
    np.testing.assert_allclose(ext.cov_sym(X, inv_ls, 1.3), _matern_py.cov_sym(X, inv_ls, 1.3), atol=1e-12)
    np.testing.assert_allclose(ext.lengthscale_grad(X, inv_ls, 1.3, W),
                               _matern_py.lengthscale_grad(X, inv_ls, 1.3, W), rtol=1e-9, atol=1e-9)
    if S > 1:
        y = rng.standard_normal(S)
        theta = np.r_[-np.log(inv_ls), 0.2, -3.0]
        a = ext.lml_grad(X, y, theta, 1e-10, 1e-4)
        b = _matern_py.lml_grad(X, y, theta, 1e-10, 1e-4)
        assert a[0] == pytest.approx(b[0], rel=1e-10)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-8, atol=1e-8)


def test_backend_flag():
    assert gpr.BACKEND in ("cython", "python")
