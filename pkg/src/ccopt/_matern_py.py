"""Pure-numpy Matern-5/2 ARD kernels; fallback for the compiled extension."""

import numpy as np
from scipy.linalg import lapack

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def _matern(r2, sf2):
    r = np.sqrt(r2)
    return sf2 * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * np.exp(-SQRT5 * r)


def _check(X, inv_ls):
    if X.shape[1] != inv_ls.shape[0]:
        raise ValueError("dimension mismatch")


def cov(X1, X2, inv_ls, sf2):
    _check(X1, inv_ls)
    _check(X2, inv_ls)
    return _matern(_sqdist(X1 * inv_ls, X2 * inv_ls), sf2)


def cov_sym(X, inv_ls, sf2):
    _check(X, inv_ls)
    Xs = X * inv_ls
    r2 = _sqdist(Xs, Xs)
    np.fill_diagonal(r2, 0.0)
    return _matern(r2, sf2)


def lengthscale_grad(X, inv_ls, sf2, W):
    """``sum_ij W_ij dK_ij / d log l_d`` for every input dimension ``d``."""
    _check(X, inv_ls)
    Xs = X * inv_ls
    r2 = _sqdist(Xs, Xs)
    np.fill_diagonal(r2, 0.0)
    r = np.sqrt(r2)
    M = W * (sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r))
    sq = Xs * Xs
    # sum_ij M_ij (x_id - x_jd)^2 expanded into row/column sums and a quadratic form
    return sq.T @ M.sum(1) + sq.T @ M.sum(0) - 2.0 * np.einsum("id,id->d", Xs, M @ Xs)


def lml_grad(X, y, theta, jitter_start, jitter_max):
    """Log marginal likelihood and its gradient w.r.t. log hyperparameters.

    ``theta = [log l_1..log l_D, log sf2, log sn2]``. Diagonal jitter starts at
    ``jitter_start * sf2`` and grows tenfold up to ``jitter_max * sf2``.
    """
    D = X.shape[1]
    n = X.shape[0]
    if len(theta) != D + 2 or len(y) != n:
        raise ValueError("dimension mismatch")
    inv_ls = np.exp(-theta[:D])
    sf2, sn2 = np.exp(theta[D]), np.exp(theta[D + 1])
    K = cov_sym(X, inv_ls, sf2)
    jitter = jitter_start * sf2
    while True:
        A = K + (sn2 + jitter) * np.eye(n)
        L, info = lapack.dpotrf(A, lower=1, clean=1)
        if info == 0:
            break
        jitter *= 10.0
        if jitter > jitter_max * sf2 * (1 + 1e-9):
            raise np.linalg.LinAlgError("Cholesky failed at maximum jitter")
    alpha, _ = lapack.dpotrs(L, y, lower=1)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
    Kinv, info = lapack.dpotri(L, lower=1)
    if info:
        raise np.linalg.LinAlgError("inverse from Cholesky failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty(D + 2)
    grad[:D] = 0.5 * lengthscale_grad(X, inv_ls, sf2, W)
    grad[D] = 0.5 * float(np.sum(W * K))
    grad[D + 1] = 0.5 * sn2 * float(np.trace(W))
    return lml, grad
