"""Experiment driver: layouts x algorithms x seeds, CSV artifacts and summaries.

A run directory holds, per (algorithm, seed):

* ``trace_<alg>_seed<k>.csv``  convergence trace (not for ``default_3gpp``)
* ``sinr_<alg>_seed<k>.csv``   per-UE DL/UL SINR of the final configuration
* ``config_<alg>_seed<k>.csv`` final antenna parameters per cell

plus ``manifest.json``, ``runs.csv``, ``summary.csv``, ``cdf_<alg>_<link>.csv``
and ``hist_<alg>.csv``. Floats are written with 9 significant digits.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, netgen, optimizer
from .metrics import ObjectiveSpec, ObjectiveValue, objective, percentile_threshold, quantile
from .netgen import NetworkLayout
from .radio import AntennaConfig, NetworkSimulator, ParamBounds, RadioParams, SinrReport

log = logging.getLogger(__name__)

ALGORITHMS = ("proposed", "bo_ei", "random_search", "default_3gpp")
THRESHOLD_MODES = ("fixed", "p10")
TRACE_COLUMNS = ["iter", "predicted_best_F", "true_F_u_best", "best_F_so_far", "zeta_dl", "zeta_ul",
                 "r_dl", "r_ul", "surrogate_ms", "replaced"]
SINR_COLUMNS = ["ue", "serving_cell", "dl_sinr_db", "ul_sinr_db", "ul_tx_power_dbm"]
CONFIG_COLUMNS = ["cell", "class", "downtilt_deg", "vertical_hpbw_deg", "horizontal_hpbw_deg"]
RUN_COLUMNS = ["algorithm", "seed", "f_total", "r_dl", "zeta_dl", "r_ul", "zeta_ul", "dl_median_sinr_db",
               "dl_p10_sinr_db", "ul_median_sinr_db", "ul_p10_sinr_db", "iters_to_95"]
SUMMARY_COLUMNS = ["algorithm", "n_runs", "dl_median_sinr_db", "dl_p10_sinr_db", "ul_median_sinr_db",
                   "ul_p10_sinr_db", "f_total", "r_dl", "zeta_dl", "r_ul", "zeta_ul", "iters_to_95"]
HIST_BINS = 10


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RunError(RuntimeError):
    """A single (algorithm, seed) run raised; the message names both."""

    def __init__(self, algorithm: str, seed: int, reason: str):
        super().__init__(f"{algorithm} seed {seed} failed: {reason}")
        self.algorithm, self.seed, self.reason = algorithm, seed, reason

    def __reduce__(self):
        return type(self), (self.algorithm, self.seed, self.reason)


class IncompleteRunError(RuntimeError):
    def __init__(self, missing: list[str]):
        super().__init__("missing run files: " + ", ".join(missing))
        self.missing = missing


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.9g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class LayoutSpec:
    """Generator arguments, or a layout file when ``file`` is set."""

    file: str | None = None
    n_macro_sites: int = 7
    inter_site_distance: float = 500.0
    n_small_cells: int = 11
    n_ues: int = 62
    min_small_macro_distance: float = 10.0

    def build(self, seed: int) -> NetworkLayout:
        if self.file:
            return netgen.load_layout(self.file)
        return netgen.generate_hex_layout(self.n_macro_sites, self.inter_site_distance, self.n_small_cells,
                                          self.n_ues, self.min_small_macro_distance, seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    radio: RadioParams = field(default_factory=RadioParams)
    scale_factor: float = 0.7
    crossover_prob: float = 0.8
    population_size: int = 200
    neighborhood_size: int = 8
    n_iter: int = 1000
    share_neighborhood: bool = False
    refit_threshold: int = 50
    refit_every: int = 10
    bo_n_init: int | None = None
    bo_n_iter: int | None = None
    bo_restarts: int = 64
    random_budget: int | None = None
    algorithms: tuple = ALGORITHMS
    seeds: tuple = (1, 2, 3, 4, 5)
    gamma: float = 0.6
    n_probe_configs: int = 50
    record_timing: bool = False
    threshold_mode: str = "fixed"
    output_dir: str = "results"

    def de_params(self, seed: int) -> optimizer.DeParams:
        return optimizer.DeParams(self.scale_factor, self.crossover_prob, seed)

    def validate(self) -> None:
        """Check every precondition before any run starts."""
        try:
            self.de_params(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown or not self.algorithms:
            raise ConfigError(f"unknown or empty algorithm list: {sorted(unknown)}")
        if len(set(self.algorithms)) != len(self.algorithms) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("algorithms and seeds must not repeat")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.n_iter < 0:
            raise ConfigError("n_iter must be >= 0")
        if "proposed" in self.algorithms and self.population_size < 4:
            raise ConfigError("population_size must be >= 4")
        if self.bo_init < 2:
            raise ConfigError("BO needs at least 2 initial points")
        if self.random_search_budget < 1:
            raise ConfigError("random search budget must be >= 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if not 0.6 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0.6, 1]")
        if self.radio.n_fading < 1 or self.radio.n_rb < 1 or not 0 <= self.radio.pathloss_compensation <= 1:
            raise ConfigError("radio parameters out of range")
        if self.layout.file and not Path(self.layout.file).is_file():
            raise ConfigError(f"layout file not found: {self.layout.file}")
        try:
            n_cells = self.layout.build(self.seeds[0]).n_cells
        except (netgen.LayoutError, ValueError) as exc:
            raise ConfigError(f"layout: {exc}") from exc
        if not 1 <= self.neighborhood_size <= n_cells:
            raise ConfigError(f"neighborhood_size must lie in [1, {n_cells}]")

    @property
    def bo_init(self) -> int:
        return self.bo_n_init if self.bo_n_init is not None else self.population_size

    @property
    def bo_iterations(self) -> int:
        return self.bo_n_iter if self.bo_n_iter is not None else self.n_iter

    @property
    def random_search_budget(self) -> int:
        return self.random_budget if self.random_budget is not None else self.population_size + self.n_iter


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None, validate: bool = True) -> ExperimentConfig:
    data = dict(data)
    kw = {}
    if "layout" in data:
        layout = dict(data.pop("layout"))
        if layout.get("file") and base_dir is not None and not os.path.isabs(layout["file"]):
            layout["file"] = str(base_dir / layout["file"])
        kw["layout"] = _build(LayoutSpec, layout, "layout")
    if "objective" in data:
        obj = dict(data.pop("objective"))
        if "bounds" in obj:
            b = {k: tuple(v) for k, v in obj.pop("bounds").items()}
            obj["bounds"] = _build(ParamBounds, b, "objective.bounds")
        kw["objective"] = _build(ObjectiveSpec, obj, "objective")
    if "radio" in data:
        kw["radio"] = _build(RadioParams, data.pop("radio"), "radio")
    for key in ("algorithms", "seeds"):
        if key in data:
            kw[key] = tuple(data.pop(key))
    kw.update(data)
    cfg = _build(ExperimentConfig, kw, "config")
    if validate:
        cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["algorithms"], d["seeds"] = list(cfg.algorithms), list(cfg.seeds)
    d["objective"]["bounds"] = {k: list(v) for k, v in d["objective"]["bounds"].items()}
    return d


# -- single runs -----------------------------------------------------------


def make_simulator(cfg: ExperimentConfig, seed: int) -> NetworkSimulator:
    return NetworkSimulator.from_layout(cfg.layout.build(seed), cfg.radio, seed=seed)


def trace_rows(initial: ObjectiveValue, trace, record_timing: bool, cumulative: bool = False):
    """Rows of the trace CSV. Metric columns describe the best-so-far configuration."""
    rows = [[0, None, None, initial.f_total, initial.zeta_dl, initial.zeta_ul, initial.r_dl, initial.r_ul,
             None, None] + ([0.0 if record_timing else None] if cumulative else [])]
    total = 0.0
    for rec in trace:
        b = rec.best_value
        ms = rec.surrogate_seconds * 1e3
        total += ms
        row = [rec.iteration, rec.predicted_best, rec.true_value.f_total, b.f_total, b.zeta_dl, b.zeta_ul,
               b.r_dl, b.r_ul, ms if record_timing else None, rec.replaced]
        if cumulative:
            row.append(total if record_timing else None)
        rows.append(row)
    return rows


def run_proposed(cfg: ExperimentConfig, sim: NetworkSimulator, spec: ObjectiveSpec, seed: int):
    return optimizer.run(sim, spec, cfg.de_params(seed), cfg.population_size, cfg.neighborhood_size,
                         cfg.n_iter, share_neighborhood=cfg.share_neighborhood,
                         surrogate_options={"refit_threshold": cfg.refit_threshold,
                                            "refit_every": cfg.refit_every})


def calibrate_threshold(cfg: ExperimentConfig, seed: int) -> float:
    """10th-percentile DL SINR of a rate-only (beta_dl = 1) run of the proposed optimizer."""
    spec = dataclasses.replace(cfg.objective, beta_dl=1.0)
    res = run_proposed(cfg, make_simulator(cfg, seed), spec, seed)
    return percentile_threshold(res.best_report.dl_sinr, 0.1)


def run_spec(cfg: ExperimentConfig, threshold_db: float | None = None) -> ObjectiveSpec:
    if threshold_db is None:
        return cfg.objective
    return dataclasses.replace(cfg.objective, threshold_db=float(threshold_db))


def run_one(cfg: ExperimentConfig, algorithm: str, seed: int, threshold_db: float | None = None) -> dict:
    """Execute one (algorithm, seed) pair and return its artifacts in memory.

    ``threshold_db`` overrides the configured outage threshold (used by the
    ``p10`` threshold mode).
    """
    sim = make_simulator(cfg, seed)
    spec = run_spec(cfg, threshold_db)
    trace = None
    if algorithm == "default_3gpp":
        value, report, config = baselines.default_3gpp(sim, spec, return_report=True)
    else:
        if algorithm == "proposed":
            res = run_proposed(cfg, sim, spec, seed)
        elif algorithm == "bo_ei":
            res = baselines.bo_ei(sim, spec, cfg.bo_init, cfg.bo_iterations, seed, n_restarts=cfg.bo_restarts)
        elif algorithm == "random_search":
            res = baselines.random_search(sim, spec, cfg.random_search_budget, seed,
                                          n_init=cfg.population_size)
        else:
            raise ConfigError(f"unknown algorithm {algorithm}")
        value, report, config = res.best_value, res.best_report, res.best_config
        trace = trace_rows(res.initial_best, res.trace, cfg.record_timing, cumulative=algorithm == "bo_ei")
    layout = sim.layout
    return {
        "algorithm": algorithm,
        "seed": seed,
        "value": value,
        "report": report,
        "config": config,
        "is_macro": layout.is_macro.copy(),
        "trace": trace,
    }


def _run_task(args):
    cfg, algorithm, seed, threshold_db = args
    try:
        return run_one(cfg, algorithm, seed, threshold_db)
    except Exception as exc:  # noqa: BLE001 - reported with the run identity
        raise RunError(algorithm, seed, f"{type(exc).__name__}: {exc}") from exc


def _tag(algorithm: str, seed: int) -> str:
    return f"{algorithm}_seed{seed}"


def write_run(out: Path, run: dict) -> None:
    tag = _tag(run["algorithm"], run["seed"])
    rep: SinrReport = run["report"]
    write_csv(out / f"sinr_{tag}.csv", SINR_COLUMNS,
              [[n, int(rep.serving_cell[n]), rep.dl_sinr[n], rep.ul_sinr[n], rep.ul_tx_power[n]]
               for n in range(rep.n_ues)])
    cfg: AntennaConfig = run["config"]
    classes = ["macro-sector" if m else "small-cell" for m in run["is_macro"]]
    write_csv(out / f"config_{tag}.csv", CONFIG_COLUMNS,
              [[m, classes[m], cfg.downtilt[m], cfg.vertical_hpbw[m], cfg.horizontal_hpbw[m]]
               for m in range(cfg.n_cells)])
    if run["trace"] is not None:
        header = TRACE_COLUMNS + (["cumulative_model_ms"] if run["algorithm"] == "bo_ei" else [])
        write_csv(out / f"trace_{tag}.csv", header, run["trace"])


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, workers: int = 1) -> Path:
    """Run every (algorithm, seed) pair, write artifacts and the summary."""
    cfg.validate()
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    thresholds = {}
    if cfg.threshold_mode == "p10":
        for s in cfg.seeds:
            try:
                thresholds[s] = calibrate_threshold(cfg, s)
            except Exception as exc:  # noqa: BLE001 - reported with the run identity
                raise RunError("threshold calibration", s, f"{type(exc).__name__}: {exc}") from exc
            log.info("seed %d: outage threshold %.4f dB", s, thresholds[s])
    tasks = [(cfg, a, s, thresholds.get(s)) for a in cfg.algorithms for s in cfg.seeds]
    if workers <= 1:
        results = map(_run_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_task, tasks)
    try:
        for run in results:
            write_run(out, run)
            log.info("finished %s seed %d: F=%.4f", run["algorithm"], run["seed"], run["value"].f_total)
    finally:
        if workers > 1:
            pool.shutdown(cancel_futures=True)
    manifest = {"config": config_to_dict(cfg),
                "runs": [{"algorithm": a, "seed": s} for _, a, s, _ in tasks]}
    if thresholds:
        manifest["thresholds_db"] = {str(s): t for s, t in thresholds.items()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    summarize(out)
    return out


# -- summaries -------------------------------------------------------------


def iterations_to_fraction(best_so_far, fraction: float = 0.95) -> int:
    """First iteration whose best-so-far reaches ``fraction`` of the total gain."""
    b = np.asarray(best_so_far, dtype=float)
    target = b[0] + fraction * (b[-1] - b[0])
    return int(np.argmax(b >= target - 1e-12 * max(1.0, abs(target))))


def _expected_files(algorithm: str, seed: int) -> list[str]:
    tag = _tag(algorithm, seed)
    files = [f"sinr_{tag}.csv", f"config_{tag}.csv"]
    if algorithm != "default_3gpp":
        files.append(f"trace_{tag}.csv")
    return files


def summarize(run_dir) -> list[dict]:
    """Aggregate a run directory into ``summary.csv`` (per algorithm) and ``runs.csv``.

    Quantiles are taken over the pooled UE SINRs of all seeds; objective
    terms and iterations-to-95% are averaged over seeds.
    """
    run_dir = Path(run_dir)
    mf = run_dir / "manifest.json"
    if not mf.is_file():
        raise IncompleteRunError(["manifest.json"])
    manifest = json.loads(mf.read_text())
    runs = [(r["algorithm"], int(r["seed"])) for r in manifest["runs"]]
    if not runs:
        raise IncompleteRunError(["<no runs listed in manifest.json>"])
    missing = [f for a, s in runs for f in _expected_files(a, s) if not (run_dir / f).is_file()]
    if missing:
        raise IncompleteRunError(missing)
    cfg = config_from_dict(manifest["config"], validate=False)
    thresholds = manifest.get("thresholds_db", {})

    per_run, pooled, best_configs = [], {}, {}
    for a, s in runs:
        tag = _tag(a, s)
        sinr = read_csv(run_dir / f"sinr_{tag}.csv")
        dl = np.array([float(r["dl_sinr_db"]) for r in sinr])
        ul = np.array([float(r["ul_sinr_db"]) for r in sinr])
        serving = np.array([int(r["serving_cell"]) for r in sinr])
        spec = run_spec(cfg, thresholds.get(str(s)))
        v = objective(SinrReport(dl, ul, serving, np.zeros_like(dl)), spec)
        iters = None
        if a != "default_3gpp":
            trace = read_csv(run_dir / f"trace_{tag}.csv")
            if not trace:
                raise IncompleteRunError([f"trace_{tag}.csv (empty)"])
            iters = iterations_to_fraction([float(r["best_F_so_far"]) for r in trace])
        per_run.append([a, s, v.f_total, v.r_dl, v.zeta_dl, v.r_ul, v.zeta_ul, quantile(dl, 0.5),
                        quantile(dl, 0.1), quantile(ul, 0.5), quantile(ul, 0.1), iters])
        p = pooled.setdefault(a, {"dl": [], "ul": []})
        p["dl"].append(dl)
        p["ul"].append(ul)
        conf = read_csv(run_dir / f"config_{tag}.csv")
        best_configs.setdefault(a, []).append((conf, set(serving.tolist())))
    write_csv(run_dir / "runs.csv", RUN_COLUMNS, per_run)

    summary = []
    for a in dict.fromkeys(x for x, _ in runs):
        rows = [r for r in per_run if r[0] == a]
        dl, ul = np.concatenate(pooled[a]["dl"]), np.concatenate(pooled[a]["ul"])
        its = [r[11] for r in rows if r[11] is not None]
        summary.append({
            "algorithm": a, "n_runs": len(rows),
            "dl_median_sinr_db": quantile(dl, 0.5), "dl_p10_sinr_db": quantile(dl, 0.1),
            "ul_median_sinr_db": quantile(ul, 0.5), "ul_p10_sinr_db": quantile(ul, 0.1),
            "f_total": float(np.mean([r[2] for r in rows])),
            "r_dl": float(np.mean([r[3] for r in rows])), "zeta_dl": float(np.mean([r[4] for r in rows])),
            "r_ul": float(np.mean([r[5] for r in rows])), "zeta_ul": float(np.mean([r[6] for r in rows])),
            "iters_to_95": float(np.mean(its)) if its else None,
        })
        for link, vals in (("dl", dl), ("ul", ul)):
            srt = np.sort(vals)
            write_csv(run_dir / f"cdf_{a}_{link}.csv", ["sinr_db", "cdf"],
                      [[x, (i + 1) / len(srt)] for i, x in enumerate(srt)])
        write_csv(run_dir / f"hist_{a}.csv", ["parameter", "cell_class", "bin_lo", "bin_hi", "count"],
                  _histograms(best_configs[a], cfg.objective.bounds))
    write_csv(run_dir / "summary.csv", SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in summary])
    return summary


def _histograms(configs, bounds: ParamBounds):
    """Counts of final parameter values over cells that serve at least one UE."""
    rows = []
    params = (("downtilt_deg", bounds.downtilt), ("vertical_hpbw_deg", bounds.vertical_hpbw),
              ("horizontal_hpbw_deg", bounds.horizontal_hpbw))
    for name, (lo, hi) in params:
        edges = np.linspace(lo, hi, HIST_BINS + 1)
        for cls in ("macro-sector", "small-cell"):
            vals = [float(r[name]) for conf, served in configs for r in conf
                    if r["class"] == cls and int(r["cell"]) in served]
            counts, _ = np.histogram(vals, bins=edges)
            rows += [[name, cls, edges[i], edges[i + 1], int(counts[i])] for i in range(HIST_BINS)]
    return rows


def neighborhood_report(cfg: ExperimentConfig) -> list[dict]:
    """Capture rate of each seed's layout for the configured neighbourhood size and gamma."""
    cfg.validate()
    out = []
    for seed in cfg.seeds:
        sim = make_simulator(cfg, seed)
        nb = optimizer.build_neighborhoods(sim, cfg.neighborhood_size, share_dl=cfg.share_neighborhood)
        rep = optimizer.validate_neighborhoods(sim, nb, cfg.gamma, cfg.n_probe_configs,
                                               cfg.objective.bounds, seed)
        out.append({"seed": seed, "neighborhood_size": nb.size, "gamma": cfg.gamma,
                    "n_interferers": rep.n_interferers, "mean_capture": rep.mean,
                    "min_capture": float(np.min(rep.per_ue))})
    return out
