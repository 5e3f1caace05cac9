"""Reference methods: fixed defaults, random search and GP-EI Bayesian optimisation.

All methods draw their first ``n_init`` configurations from the same seeded
stream as the surrogate-assisted optimiser, so runs with equal seeds start
from identical samples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import gpr
from .metrics import ObjectiveSpec, ObjectiveValue, objective
from .optimizer import (
    STREAM_BO, STREAM_INIT, IterationRecord, OptimizationResult, random_configs, stream,
)
from .radio import AntennaConfig, NetworkSimulator, default_config

STREAM_RANDOM = 7
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def default_3gpp(simulator: NetworkSimulator, spec: ObjectiveSpec, return_report: bool = False):
    """Objective of the uniform 12/10/70 deg configuration."""
    config = default_config(simulator.n_cells)
    report = simulator.evaluate(config)
    value = objective(report, spec)
    if return_report:
        return value, report, config
    return value


def _samples(spec: ObjectiveSpec, n_cells: int, n: int, n_init: int, seed: int) -> np.ndarray:
    """``n`` uniform configs; the first ``n_init`` match the shared initial population."""
    n_init = min(n_init, n)
    head = random_configs(spec.bounds, n_cells, n_init, stream(seed, STREAM_INIT))
    tail = random_configs(spec.bounds, n_cells, n - n_init, stream(seed, STREAM_RANDOM))
    return np.vstack([head, tail])


class _Incumbent:
    """Best-so-far bookkeeping (ties keep the earlier point)."""

    def __init__(self):
        self.value: ObjectiveValue | None = None
        self.x = None
        self.report = None

    def offer(self, x, report, value) -> None:
        if self.value is None or value.f_total > self.value.f_total:
            self.x, self.report, self.value = np.array(x, dtype=float), report, value


def random_search(simulator: NetworkSimulator, spec: ObjectiveSpec, budget: int, seed: int = 0,
                  n_init: int = 0, callback=None) -> OptimizationResult:
    """Evaluate ``budget`` uniform samples and keep the best.

    The first ``n_init`` samples form iteration 0; each further sample is
    one trace iteration.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    M = simulator.n_cells
    X = _samples(spec, M, budget, n_init, seed)
    inc = _Incumbent()
    n_head = max(min(n_init, budget), 1)
    for x in X[:n_head]:
        r = simulator.evaluate(x)
        inc.offer(x, r, objective(r, spec))
    initial_best = inc.value
    trace = []
    for k, x in enumerate(X[n_head:], start=1):
        r = simulator.evaluate(x)
        v = objective(r, spec)
        improved = v.f_total > inc.value.f_total
        inc.offer(x, r, v)
        rec = IterationRecord(k, float("nan"), v, inc.value, bool(improved), 0.0)
        trace.append(rec)
        if callback is not None:
            callback(rec)
    return OptimizationResult(AntennaConfig.from_vector(inc.x), inc.value, inc.report, trace,
                              None, budget, initial_best)


def expected_improvement(mean, std, best: float):
    """EI for maximisation; reduces to ``max(0, mean - best)`` where ``std`` is 0."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    gap = mean - best
    out = np.maximum(gap, 0.0)
    pos = std > 0
    if np.any(pos):
        z = gap[pos] / std[pos]
        out = np.array(out, dtype=float)
        out[pos] = gap[pos] * ndtr(z) + std[pos] * INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.maximum(out, 0.0)


@dataclass(frozen=True)
class AcquisitionSettings:
    n_restarts: int = 64
    n_cycles: int = 2
    initial_step: float = 0.25
    min_step: float = 1e-3


def _ei_at(model: gpr.GpModel, Z: np.ndarray, best: float) -> np.ndarray:
    mu, var = gpr.predict(model, Z)
    return expected_improvement(mu, np.sqrt(var), best)


def maximize_ei(model: gpr.GpModel, best: float, dim: int, rng: np.random.Generator,
                settings: AcquisitionSettings = AcquisitionSettings()) -> tuple[np.ndarray, float]:
    """Batched coordinate search for the EI maximiser in the unit cube.

    All restarts move together: each round tries +/- step along one
    coordinate for every restart and keeps improving moves. A restart halves
    its step after a full sweep without improvement.
    """
    R = settings.n_restarts
    Z = rng.random((R, dim))
    ei = _ei_at(model, Z, best)
    step = np.full(R, settings.initial_step)
    improved = np.zeros(R, dtype=bool)
    rows = np.arange(R)
    for rnd in range(settings.n_cycles * dim):
        j = rnd % dim
        active = step >= settings.min_step
        if not active.any():
            break
        up, down = Z.copy(), Z.copy()
        up[:, j] = np.minimum(Z[:, j] + step, 1.0)
        down[:, j] = np.maximum(Z[:, j] - step, 0.0)
        cand = _ei_at(model, np.vstack([up, down]), best).reshape(2, R)
        pick = np.argmax(cand, axis=0)
        gain = cand[pick, rows] > ei
        move = gain & active
        Z[move, j] = np.where(pick[move] == 0, up[move, j], down[move, j])
        ei[move] = cand[pick[move], rows[move]]
        improved |= move
        if j == dim - 1:
            step = np.where(improved, step, 0.5 * step)
            improved[:] = False
    k = int(np.argmax(ei))
    return Z[k], float(ei[k])


def bo_ei(simulator: NetworkSimulator, spec: ObjectiveSpec, n_init: int, n_iter: int, seed: int = 0,
          n_restarts: int = 64, callback=None, init_params: gpr.KernelParams | None = None,
          n_starts: int = 2, maxiter: int = 200) -> OptimizationResult:
    """Bayesian optimisation with one global GP over all 3M parameters.

    Hyperparameters are refitted by maximum likelihood every iteration on the
    growing data set, warm-started from the previous optimum. ``surrogate_seconds`` of each trace record is the
    model-building plus acquisition time, excluding the simulator call.
    """
    if n_init < 2:
        raise ValueError("n_init must be >= 2")
    if n_iter < 0:
        raise ValueError("n_iter must be >= 0")
    M = simulator.n_cells
    lo, hi = spec.bounds.box(M)
    span = hi - lo
    dim = 3 * M
    init_params = init_params or gpr.KernelParams.isotropic(dim, 1.0, 1.0, 1e-2)
    settings = AcquisitionSettings(n_restarts=n_restarts)
    rng = stream(seed, STREAM_BO)

    X0 = random_configs(spec.bounds, M, n_init, stream(seed, STREAM_INIT))
    Z = list((X0 - lo) / span)
    F = []
    inc = _Incumbent()
    for x in X0:
        r = simulator.evaluate(x)
        v = objective(r, spec)
        F.append(v.f_total)
        inc.offer(x, r, v)
    initial_best = inc.value

    trace = []
    params = None
    for k in range(1, n_iter + 1):
        t0 = time.perf_counter()
        model = gpr.fit(np.array(Z), np.array(F), init_params, n_starts=n_starts, warm_start=params,
                        rng=rng, maxiter=maxiter)
        params = model.params
        z, _ = maximize_ei(model, inc.value.f_total, dim, rng, settings)
        predicted = float(gpr.predict(model, z[None, :], return_var=False)[0])
        elapsed = time.perf_counter() - t0

        x = spec.bounds.clip(lo + span * z)
        r = simulator.evaluate(x)
        v = objective(r, spec)
        improved = inc.value is None or v.f_total > inc.value.f_total
        inc.offer(x, r, v)
        Z.append(z)
        F.append(v.f_total)
        rec = IterationRecord(k, predicted, v, inc.value, bool(improved), elapsed)
        trace.append(rec)
        if callback is not None:
            callback(rec)
    return OptimizationResult(AntennaConfig.from_vector(inc.x), inc.value, inc.report, trace,
                              None, n_init + n_iter, initial_best)
