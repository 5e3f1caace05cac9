"""Gaussian-process regression with a Matern-5/2 ARD kernel.

Hyperparameters are fitted by maximising the log marginal likelihood with
L-BFGS-B over log-parameters. Targets are standardised before fitting
(zero prior mean on the standardised scale) and predictions are mapped
back, so the prior mean in target units is the training mean.

The O(S^2 D) kernel loops run in a compiled extension when it is available;
set ``CCOPT_PURE_PYTHON=1`` to force the numpy implementation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.optimize import minimize

from . import _matern_py

if os.environ.get("CCOPT_PURE_PYTHON"):
    from . import _matern_py as _kernels
    BACKEND = "python"
else:
    try:
        from . import _matern_ext as _kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _matern_py as _kernels
        BACKEND = "python"

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4

# bounds on log-parameters: length scales, signal variance, noise variance
LOG_LS_BOUNDS = (math.log(1e-3), math.log(1e3))
LOG_SF2_BOUNDS = (math.log(1e-4), math.log(1e2))
LOG_SN2_BOUNDS = (math.log(1e-10), math.log(1e1))


class GpFitError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest jitter."""


@dataclass(frozen=True)
class KernelParams:
    length_scales: np.ndarray
    signal_variance: float = 1.0
    noise_variance: float = 1e-2

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("length scales must be positive and finite")
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @classmethod
    def isotropic(cls, dim, length_scale=1.0, signal_variance=1.0, noise_variance=1e-2):
        return cls(np.full(dim, float(length_scale)), signal_variance, noise_variance)

    def to_log(self) -> np.ndarray:
        noise = max(self.noise_variance, 1e-300)
        return np.concatenate([np.log(self.length_scales), [math.log(self.signal_variance), math.log(noise)]])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-2]), float(np.exp(theta[-2])), float(np.exp(theta[-1])))


def matern52_ard(a, b, params: KernelParams) -> float:
    """Covariance of two points: ``sf2 (1 + sqrt5 r + 5 r^2/3) exp(-sqrt5 r)``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape or a.shape[0] != params.dim:
        raise ValueError(f"dimension mismatch: {a.shape}, {b.shape}, D={params.dim}")
    r2 = float(np.sum(((a - b) / params.length_scales) ** 2))
    r = math.sqrt(r2)
    return params.signal_variance * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * math.exp(-SQRT5 * r)


def _c(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def kernel_matrix(X1, X2, params: KernelParams) -> np.ndarray:
    inv_ls = _c(1.0 / params.length_scales)
    if X2 is None or X2 is X1:
        return _kernels.cov_sym(_c(X1), inv_ls, params.signal_variance)
    # cross terms stay on numpy: BLAS distances and vectorised exp beat the compiled loop
    return _matern_py.cov(_c(X1), _c(X2), inv_ls, params.signal_variance)


def jittered_cholesky(K: np.ndarray, noise: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + (noise + jitter) I``.

    Jitter starts at 1e-10 * mean(diag K) and grows tenfold up to 1e-4 *
    mean(diag K). Returns the factor and the total diagonal that was added.
    """
    n = K.shape[0]
    scale = float(np.trace(K)) / n if n else 1.0
    jitter = JITTER_START * scale
    while True:
        A = K.copy()
        A[np.diag_indices(n)] += noise + jitter
        L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return L, noise + jitter
        jitter *= 10.0
        if jitter > JITTER_MAX * scale * (1 + 1e-9):
            raise GpFitError(f"Cholesky failed with jitter up to {JITTER_MAX:g} x mean diag")


def _cho_solve(L, b):
    x, info = lapack.dpotrs(L, b, lower=1)
    if info:
        raise GpFitError("triangular solve failed")
    return x


def log_marginal_likelihood(X, y, params: KernelParams, with_grad: bool = False):
    """Log evidence of ``y`` (used as given, no standardisation).

    With ``with_grad`` also returns the gradient with respect to
    ``params.to_log()``, i.e. ``[log l_1..log l_D, log sf2, log sn2]``.
    """
    X = _c(X)
    y = _c(y)
    if X.shape[1] != params.dim:
        raise ValueError(f"inputs have {X.shape[1]} columns, kernel expects {params.dim}")
    try:
        lml, grad = _kernels.lml_grad(X, y, _c(params.to_log()), JITTER_START, JITTER_MAX)
    except np.linalg.LinAlgError as exc:
        raise GpFitError(str(exc)) from exc
    return (lml, grad) if with_grad else lml


@dataclass(frozen=True)
class GpModel:
    """A conditioned GP. Immutable once built."""

    train_inputs: np.ndarray
    train_targets: np.ndarray
    params: KernelParams
    chol: np.ndarray
    alpha_vec: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    diag_noise: float = 0.0

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    def predict(self, test_inputs, return_var: bool = True):
        return predict(self, test_inputs, return_var)


def _standardize(y, standardize):
    y = np.asarray(y, dtype=float)
    if not standardize:
        return y, 0.0, 1.0
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if not scale > 1e-12 * max(1.0, abs(mean)):
        scale = 1.0
    return (y - mean) / scale, mean, scale


def condition(train_inputs, train_targets, params: KernelParams, standardize: bool = True) -> GpModel:
    """Build the posterior for fixed hyperparameters."""
    X = _c(np.atleast_2d(train_inputs))
    if X.shape[1] != params.dim:
        raise ValueError(f"inputs have {X.shape[1]} columns, kernel expects {params.dim}")
    ys, mean, scale = _standardize(train_targets, standardize)
    if ys.shape != (X.shape[0],):
        raise ValueError("targets must be a vector matching the inputs")
    K = kernel_matrix(X, None, params)
    L, diag = jittered_cholesky(K, params.noise_variance)
    alpha = _cho_solve(L, ys)
    return GpModel(X, np.asarray(train_targets, dtype=float).copy(), params, L, alpha, mean, scale, diag)


def _log_bounds(dim):
    return [LOG_LS_BOUNDS] * dim + [LOG_SF2_BOUNDS, LOG_SN2_BOUNDS]


def fit(
    train_inputs,
    train_targets,
    init: KernelParams,
    *,
    n_starts: int = 2,
    warm_start: KernelParams | None = None,
    rng: np.random.Generator | None = None,
    maxiter: int = 200,
    standardize: bool = True,
) -> GpModel:
    """Maximum-likelihood hyperparameters, then :func:`condition`.

    The first start is ``init``; the second is ``warm_start`` when given,
    otherwise a random log-normal perturbation of ``init``. With a single
    training row the hyperparameters are kept as given.
    """
    X = _c(np.atleast_2d(train_inputs))
    if X.shape[0] < 2:
        return condition(X, train_targets, init, standardize)
    ys, _, _ = _standardize(train_targets, standardize)
    bounds = _log_bounds(init.dim)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    starts = [np.clip(init.to_log(), lo, hi)]
    if n_starts >= 2:
        if warm_start is not None:
            starts.append(np.clip(warm_start.to_log(), lo, hi))
        rng = rng if rng is not None else np.random.default_rng(0)
        while len(starts) < n_starts:
            jitter = rng.normal(0.0, 1.0, size=len(lo))
            starts.append(np.clip(starts[0] + jitter, lo, hi))

    ys = _c(ys)

    def negative(theta):
        try:
            v, g = _kernels.lml_grad(X, ys, _c(theta), JITTER_START, JITTER_MAX)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        return -v, -g

    best_theta, best_val = None, np.inf
    for x0 in starts:
        res = minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": maxiter})
        if res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    if best_theta is None or best_val >= 1e25:
        raise GpFitError("no start produced a valid likelihood")
    return condition(X, train_targets, KernelParams.from_log(best_theta), standardize)


def predict(model: GpModel, test_inputs, return_var: bool = True):
    """Posterior mean (and latent variance) at ``test_inputs``."""
    Xq = _c(np.atleast_2d(test_inputs))
    if Xq.shape[1] != model.params.dim:
        raise ValueError(f"test inputs have {Xq.shape[1]} columns, model expects {model.params.dim}")
    Ks = kernel_matrix(Xq, model.train_inputs, model.params)
    mean = Ks @ model.alpha_vec * model.y_scale + model.y_mean
    if not return_var:
        return mean
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.params.signal_variance - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0) * model.y_scale ** 2
