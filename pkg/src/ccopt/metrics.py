"""Coverage, rate and the weighted UL/DL objective.

All functions accept a single SINR vector or a stack of them (reduction
over the last axis), so the surrogate can score a whole trial population in
one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .radio import ParamBounds, SinrReport

SINR_FLOOR = 1e-6


@dataclass(frozen=True)
class ObjectiveSpec:
    """Weights and threshold of the joint objective.

    ``alpha`` weights the uplink term; ``beta_dl``/``beta_ul`` trade rate
    against outage inside each link.
    """

    alpha: float = 0.0
    beta_dl: float = 0.5
    beta_ul: float = 0.5
    threshold_db: float = 0.0
    bounds: ParamBounds = field(default_factory=ParamBounds)

    def __post_init__(self):
        for name in ("alpha", "beta_dl", "beta_ul"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not np.isfinite(self.threshold_db):
            raise ValueError("threshold_db must be finite")


@dataclass(frozen=True)
class ObjectiveValue:
    f_total: float
    r_dl: float
    r_ul: float
    zeta_dl: float
    zeta_ul: float

    def link_component(self, spec: ObjectiveSpec, link: str) -> float:
        """Per-link term ``beta R - (1 - beta) zeta`` (before the alpha weighting)."""
        if link == "dl":
            return spec.beta_dl * self.r_dl - (1.0 - spec.beta_dl) * self.zeta_dl
        if link == "ul":
            return spec.beta_ul * self.r_ul - (1.0 - spec.beta_ul) * self.zeta_ul
        raise ValueError(f"unknown link {link!r}")


def _as_sinr(sinr_db) -> np.ndarray:
    a = np.asarray(sinr_db, dtype=float)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ValueError("SINR vector must contain at least one UE")
    return a


def outage_probability(sinr_db, threshold_db: float = 0.0):
    """Fraction of UEs strictly below ``threshold_db``."""
    a = _as_sinr(sinr_db)
    return np.mean(a < threshold_db, axis=-1)


def _log_log_rate(x: float) -> float:
    return math.log(math.log1p(max(10.0 ** (x / 10.0), SINR_FLOOR)))


# libm per element and a correctly rounded sum: independent of summation
# order and of the SIMD paths numpy picks on a given CPU
_log_log_terms = np.frompyfunc(_log_log_rate, 1, 1)


def _fsum_mean(row) -> float:
    return math.fsum(row) / len(row)


def avg_sum_log_rate(sinr_db):
    """Mean of ``log(log(1 + SINR))`` with SINR floored at 1e-6 (linear)."""
    a = _as_sinr(sinr_db)
    terms = _log_log_terms(a).astype(float)
    if terms.ndim == 1:
        return np.float64(_fsum_mean(terms))
    return np.apply_along_axis(_fsum_mean, -1, terms)


def link_utility(sinr_db, beta: float, threshold_db: float):
    return beta * avg_sum_log_rate(sinr_db) - (1.0 - beta) * outage_probability(sinr_db, threshold_db)


def objective_from_sinr(dl_sinr_db, ul_sinr_db, spec: ObjectiveSpec):
    """Total objective for one or many (DL, UL) SINR vectors."""
    r_dl = avg_sum_log_rate(dl_sinr_db)
    r_ul = avg_sum_log_rate(ul_sinr_db)
    z_dl = outage_probability(dl_sinr_db, spec.threshold_db)
    z_ul = outage_probability(ul_sinr_db, spec.threshold_db)
    return combine(r_dl, r_ul, z_dl, z_ul, spec)


def combine(r_dl, r_ul, zeta_dl, zeta_ul, spec: ObjectiveSpec):
    f_dl = spec.beta_dl * r_dl - (1.0 - spec.beta_dl) * zeta_dl
    f_ul = spec.beta_ul * r_ul - (1.0 - spec.beta_ul) * zeta_ul
    return (1.0 - spec.alpha) * f_dl + spec.alpha * f_ul


def objective(report: SinrReport, spec: ObjectiveSpec) -> ObjectiveValue:
    if len(report.dl_sinr) != len(report.ul_sinr):
        raise ValueError("DL and UL SINR vectors differ in length")
    r_dl = float(avg_sum_log_rate(report.dl_sinr))
    r_ul = float(avg_sum_log_rate(report.ul_sinr))
    z_dl = float(outage_probability(report.dl_sinr, spec.threshold_db))
    z_ul = float(outage_probability(report.ul_sinr, spec.threshold_db))
    return ObjectiveValue(
        f_total=float(combine(r_dl, r_ul, z_dl, z_ul, spec)),
        r_dl=r_dl, r_ul=r_ul, zeta_dl=z_dl, zeta_ul=z_ul,
    )


def quantile(values, q: float) -> float:
    """Empirical quantile with linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=float), q, method="linear"))


def percentile_threshold(sinr_db, fraction: float = 0.1) -> float:
    """SINR below which ``fraction`` of the UEs fall; used as an outage threshold."""
    return quantile(_as_sinr(sinr_db), fraction)
