"""Surrogate-assisted differential evolution over antenna settings.

Each iteration mutates and recombines the whole population
(DE/current-to-best/1 with binomial crossover), scores the trial population
with per-UE Gaussian-process models of DL and UL SINR, sends only the
predicted best trial to the simulator, and lets it replace the worst
population member when it is at least as good. The population, and hence
the GP training set, keeps a fixed size.

Each UE's models see only the parameters of its neighbourhood: the cells
with the strongest RSRP under the default configuration.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import gpr
from .metrics import ObjectiveSpec, ObjectiveValue, link_utility, objective
from .radio import AntennaConfig, NetworkSimulator, ParamBounds, SinrReport, default_config

log = logging.getLogger(__name__)

# named RNG streams derived from the master seed
STREAM_INIT = 1
STREAM_MUTATION = 2
STREAM_CROSSOVER = 3
STREAM_SURROGATE = 4
STREAM_PROBE = 5
STREAM_BO = 6


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), which]))


@dataclass(frozen=True)
class DeParams:
    scale_factor: float = 0.7
    crossover_prob: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.scale_factor < 1.0:
            raise ValueError("scale factor must lie in (0, 1)")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError("crossover probability must lie in [0, 1]")


@dataclass(frozen=True)
class Neighborhood:
    """Per-UE cell ids ordered by decreasing default-config RSRP."""

    dl: np.ndarray
    ul: np.ndarray

    @property
    def size(self) -> int:
        return self.dl.shape[1]

    def cells(self, link: str) -> np.ndarray:
        return self.dl if link == "dl" else self.ul


@dataclass
class Population:
    """Fixed-size set of evaluated configurations."""

    configs: np.ndarray
    dl_sinr: np.ndarray
    ul_sinr: np.ndarray
    objective: np.ndarray
    values: list
    reports: list

    @property
    def size(self) -> int:
        return self.configs.shape[0]

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.objective))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.objective))

    def replace(self, i: int, x: np.ndarray, report: SinrReport, value: ObjectiveValue) -> "Population":
        configs = self.configs.copy()
        dl, ul, obj = self.dl_sinr.copy(), self.ul_sinr.copy(), self.objective.copy()
        values, reports = list(self.values), list(self.reports)
        configs[i], dl[i], ul[i], obj[i] = x, report.dl_sinr, report.ul_sinr, value.f_total
        values[i], reports[i] = value, report
        return Population(configs, dl, ul, obj, values, reports)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    predicted_best: float
    true_value: ObjectiveValue
    best_value: ObjectiveValue
    replaced: bool
    surrogate_seconds: float


@dataclass
class OptimizationResult:
    best_config: AntennaConfig
    best_value: ObjectiveValue
    best_report: SinrReport
    trace: list
    population: Population
    n_evaluations: int
    initial_best: ObjectiveValue | None = None


# -- neighbourhoods --------------------------------------------------------


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Per column, the ``k`` rows with the highest score (ties: lower row)."""
    order = np.argsort(-scores, axis=0, kind="stable")
    return np.ascontiguousarray(order[:k].T)


def build_neighborhoods(simulator: NetworkSimulator, size: int,
                        config: AntennaConfig | None = None, share_dl: bool = False) -> Neighborhood:
    """Top-``size`` cells per UE under ``config`` (default 12/10/70 deg).

    DL ranks by RSRP. UL ranks by the power each cell would receive from the
    UE, which is the coupling gain (the UE power is common to all cells).
    """
    M = simulator.n_cells
    if not 1 <= size <= M:
        raise ValueError(f"neighbourhood size {size} must lie in [1, {M}]")
    config = config or default_config(M)
    coupling = simulator.budget.coupling_gain(config)
    rsrp = simulator.budget.tx_power[:, None] + coupling
    dl = _top_k(rsrp, size)
    ul = dl if share_dl else _top_k(coupling, size)
    return Neighborhood(dl=dl, ul=ul)


@dataclass(frozen=True)
class CaptureReport:
    gamma: float
    n_interferers: int
    per_ue: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_ue))


def validate_neighborhoods(simulator: NetworkSimulator, neighborhood: Neighborhood, gamma: float = 0.6,
                           n_probe_configs: int = 50, bounds: ParamBounds | None = None,
                           seed: int = 0) -> CaptureReport:
    """How often each UE's strongest interferers stay inside its DL neighbourhood.

    For random configurations, a probe counts as captured when the
    ``ceil(gamma * size)`` strongest non-serving cells (by RSRP) all belong
    to the stored neighbourhood.
    """
    if not 0.6 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0.6, 1]")
    bounds = bounds or ParamBounds()
    M, N = simulator.n_cells, simulator.n_ues
    k = min(math.ceil(gamma * neighborhood.size - 1e-12), M - 1)
    member = np.zeros((N, M), dtype=bool)
    member[np.arange(N)[:, None], neighborhood.dl] = True
    rng = stream(seed, STREAM_PROBE)
    lo, hi = bounds.box(M)
    hits = np.zeros(N)
    for _ in range(n_probe_configs):
        x = lo + (hi - lo) * rng.random(3 * M)
        rsrp = simulator.rsrp(x)
        order = np.argsort(-rsrp, axis=0, kind="stable")
        strongest = order[1:1 + k].T  # drop the server
        hits += member[np.arange(N)[:, None], strongest].all(axis=1)
    return CaptureReport(gamma=gamma, n_interferers=k, per_ue=hits / max(n_probe_configs, 1))


# -- DE operators ----------------------------------------------------------


def mutate(pop: Population, i: int, params: DeParams, rng: np.random.Generator,
           bounds: ParamBounds | None = None, best: int | None = None) -> np.ndarray:
    """DE/current-to-best/1 mutant of member ``i``, clipped to the box.

    ``r1`` and ``r2`` are distinct members drawn uniformly, excluding ``i``
    and the best member.
    """
    S = pop.size
    if S < 4:
        raise ValueError("mutation needs a population of at least 4")
    best = pop.best_index if best is None else best
    pool = np.array([k for k in range(S) if k != i and k != best])
    r1, r2 = rng.choice(pool, size=2, replace=False)
    X = pop.configs
    F = params.scale_factor
    v = X[i] + F * (X[best] - X[i]) + F * (X[r1] - X[r2])
    return (bounds or ParamBounds()).clip(v)


def crossover(x: np.ndarray, v: np.ndarray, params: DeParams, rng: np.random.Generator) -> np.ndarray:
    """Take each coordinate from the mutant with probability ``crossover_prob``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise ValueError("parent and mutant differ in shape")
    mask = rng.random(x.shape) < params.crossover_prob
    return np.where(mask, v, x)


# -- surrogate -------------------------------------------------------------


def feature_columns(cells: np.ndarray, n_cells: int) -> np.ndarray:
    """Indices of (downtilt, vertical, horizontal) of ``cells`` in a 3M vector."""
    cells = np.asarray(cells)
    return np.concatenate([cells, n_cells + cells, 2 * n_cells + cells])


class UeSurrogates:
    """Per-UE, per-link GP models over neighbourhood parameters.

    Hyperparameters are refitted every iteration while the training set has
    at most ``refit_threshold`` rows and every ``refit_every`` iterations
    otherwise (warm-started from the previous fit); in between the stored
    hyperparameters are re-conditioned on the current population. With
    ``fixed_params`` the models always use ``init_params`` unchanged.
    """

    def __init__(self, neighborhood: Neighborhood, bounds: ParamBounds, n_cells: int, *,
                 init_params: gpr.KernelParams | None = None, n_starts: int = 2,
                 refit_threshold: int = 50, refit_every: int = 10, maxiter: int = 200,
                 fixed_params: bool = False, rng: np.random.Generator | None = None):
        self.neighborhood = neighborhood
        self.n_cells = n_cells
        lo, hi = bounds.box(n_cells)
        self._lo, self._span = lo, hi - lo
        dim = 3 * neighborhood.size
        self.init_params = init_params or gpr.KernelParams.isotropic(dim, 1.0, 1.0, 1e-2)
        self.n_starts = n_starts
        self.refit_threshold = refit_threshold
        self.refit_every = refit_every
        self.maxiter = maxiter
        self.fixed_params = fixed_params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[tuple[str, int], gpr.KernelParams] = {}
        self.n_fallbacks = 0

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (X - self._lo) / self._span

    def _should_refit(self, key, n_rows: int, iteration: int) -> bool:
        if key not in self.params or n_rows <= self.refit_threshold:
            return True
        return iteration % self.refit_every == 0

    def model(self, link: str, ue: int, X: np.ndarray, y: np.ndarray, iteration: int) -> gpr.GpModel:
        """Fit or re-condition the model of one UE and link on scaled inputs ``X``."""
        key = (link, ue)
        if self.fixed_params:
            return gpr.condition(X, y, self.init_params)
        if self._should_refit(key, len(y), iteration):
            m = gpr.fit(X, y, self.init_params, n_starts=self.n_starts, warm_start=self.params.get(key),
                        rng=self.rng, maxiter=self.maxiter)
            self.params[key] = m.params
            return m
        return gpr.condition(X, y, self.params[key])

    def predict_link(self, link: str, pop_x: np.ndarray, targets: np.ndarray, trials: np.ndarray,
                     iteration: int) -> np.ndarray:
        """Predicted SINR (dB) of every UE at every trial, shape (S_trials, N)."""
        Xs, Us = self.scale(pop_x), self.scale(trials)
        cells = self.neighborhood.cells(link)
        N = targets.shape[1]
        out = np.empty((Us.shape[0], N))
        for n in range(N):
            cols = feature_columns(cells[n], self.n_cells)
            y = targets[:, n]
            try:
                m = self.model(link, n, Xs[:, cols], y, iteration)
                out[:, n] = gpr.predict(m, Us[:, cols], return_var=False)
            except np.linalg.LinAlgError as exc:
                self.n_fallbacks += 1
                log.warning("GP for UE %d (%s) failed (%s); using nearest neighbour", n, link, exc)
                d = ((Us[:, cols][:, None, :] - Xs[:, cols][None, :, :]) ** 2).sum(-1)
                out[:, n] = y[np.argmin(d, axis=1)]
        return out

    def predict(self, pop: Population, trials: np.ndarray, spec: ObjectiveSpec,
                iteration: int) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
        """Predicted objective of each trial plus the predicted DL/UL SINR.

        A link whose weight in the objective is zero is not modelled and its
        prediction is returned as ``None``.
        """
        f = np.zeros(trials.shape[0])
        dl = ul = None
        if spec.alpha < 1.0:
            dl = self.predict_link("dl", pop.configs, pop.dl_sinr, trials, iteration)
            f += (1.0 - spec.alpha) * link_utility(dl, spec.beta_dl, spec.threshold_db)
        if spec.alpha > 0.0:
            ul = self.predict_link("ul", pop.configs, pop.ul_sinr, trials, iteration)
            f += spec.alpha * link_utility(ul, spec.beta_ul, spec.threshold_db)
        return f, dl, ul


def surrogate_objective(trials: np.ndarray, pop: Population, neighborhood: Neighborhood,
                        spec: ObjectiveSpec, n_cells: int | None = None, **kwargs) -> np.ndarray:
    """One-shot predicted objective of ``trials`` (fresh models, fit every time)."""
    n_cells = n_cells or pop.configs.shape[1] // 3
    s = UeSurrogates(neighborhood, spec.bounds, n_cells, **kwargs)
    return s.predict(pop, np.atleast_2d(trials), spec, iteration=0)[0]


# -- algorithm -------------------------------------------------------------


def random_configs(bounds: ParamBounds, n_cells: int, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = bounds.box(n_cells)
    return lo + (hi - lo) * rng.random((n, 3 * n_cells))


def initial_population(simulator: NetworkSimulator, spec: ObjectiveSpec, size: int, seed: int) -> Population:
    """``size`` configurations uniform in the box, all truly evaluated.

    The draw depends only on ``seed``, so every algorithm run with the same
    seed starts from the same configurations.
    """
    X = random_configs(spec.bounds, simulator.n_cells, size, stream(seed, STREAM_INIT))
    return evaluate_population(simulator, spec, X)


def evaluate_population(simulator: NetworkSimulator, spec: ObjectiveSpec, X: np.ndarray) -> Population:
    reports = [simulator.evaluate(x) for x in X]
    values = [objective(r, spec) for r in reports]
    return Population(
        configs=np.array(X, dtype=float),
        dl_sinr=np.array([r.dl_sinr for r in reports]),
        ul_sinr=np.array([r.ul_sinr for r in reports]),
        objective=np.array([v.f_total for v in values]),
        values=values,
        reports=reports,
    )


class SurrogateDE:
    """Stateful driver; :meth:`step` performs exactly one true evaluation."""

    def __init__(self, simulator: NetworkSimulator, spec: ObjectiveSpec, de_params: DeParams | None = None,
                 population_size: int = 200, neighborhood_size: int = 8, *,
                 share_neighborhood: bool = False, surrogate_options: dict | None = None):
        self.simulator = simulator
        self.spec = spec
        self.de = de_params or DeParams()
        self.population_size = population_size
        self.neighborhood = build_neighborhoods(simulator, neighborhood_size, share_dl=share_neighborhood)
        self.surrogates = UeSurrogates(self.neighborhood, spec.bounds, simulator.n_cells,
                                       rng=stream(self.de.seed, STREAM_SURROGATE),
                                       **(surrogate_options or {}))
        self._mut_rng = stream(self.de.seed, STREAM_MUTATION)
        self._cx_rng = stream(self.de.seed, STREAM_CROSSOVER)
        self.population: Population | None = None
        self.iteration = 0

    def initialize(self) -> Population:
        self.population = initial_population(self.simulator, self.spec, self.population_size, self.de.seed)
        self.iteration = 0
        return self.population

    def trials(self, pop: Population) -> np.ndarray:
        best = pop.best_index
        U = np.empty_like(pop.configs)
        for i in range(pop.size):
            v = mutate(pop, i, self.de, self._mut_rng, self.spec.bounds, best=best)
            U[i] = crossover(pop.configs[i], v, self.de, self._cx_rng)
        return U

    def step(self) -> IterationRecord:
        pop = self.population
        if pop is None:
            raise RuntimeError("call initialize() first")
        self.iteration += 1
        t0 = time.perf_counter()
        U = self.trials(pop)
        f_u, _, _ = self.surrogates.predict(pop, U, self.spec, self.iteration)
        j = int(np.argmax(f_u))
        elapsed = time.perf_counter() - t0

        report = self.simulator.evaluate(U[j])
        value = objective(report, self.spec)
        worst = pop.worst_index
        replaced = value.f_total >= pop.objective[worst]
        if replaced:
            pop = self.population = pop.replace(worst, U[j], report, value)
        return IterationRecord(
            iteration=self.iteration,
            predicted_best=float(f_u[j]),
            true_value=value,
            best_value=pop.values[pop.best_index],
            replaced=bool(replaced),
            surrogate_seconds=elapsed,
        )

    def result(self, trace: list, initial_best: ObjectiveValue | None = None) -> OptimizationResult:
        pop = self.population
        b = pop.best_index
        return OptimizationResult(
            best_config=AntennaConfig.from_vector(pop.configs[b]),
            best_value=pop.values[b],
            best_report=pop.reports[b],
            trace=trace,
            population=pop,
            n_evaluations=self.simulator.n_evaluations,
            initial_best=initial_best,
        )


def run(simulator: NetworkSimulator, spec: ObjectiveSpec, de_params: DeParams | None = None,
        population_size: int = 200, neighborhood_size: int = 8, n_iter: int = 1000,
        callback=None, **kwargs) -> OptimizationResult:
    """Initialise ``population_size`` random configurations and iterate.

    Uses ``population_size + n_iter`` true evaluations. ``callback`` is
    called with every :class:`IterationRecord`.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be >= 0")
    opt = SurrogateDE(simulator, spec, de_params, population_size, neighborhood_size, **kwargs)
    pop = opt.initialize()
    initial_best = pop.values[pop.best_index]
    trace = []
    for _ in range(n_iter):
        rec = opt.step()
        trace.append(rec)
        if callback is not None:
            callback(rec)
    return opt.result(trace, initial_best)
