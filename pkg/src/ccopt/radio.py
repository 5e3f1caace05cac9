"""Link-budget network simulator.

Maps an antenna configuration (downtilt, vertical and horizontal HPBW per
cell) to per-UE downlink and uplink SINR. Large-scale channel state (path
loss, LOS state, shadowing) and the small-scale fading samples are drawn
once per layout seed and frozen, so :func:`evaluate_sinr` is a pure function
of the configuration.

Angles are in degrees. Azimuths are measured counter-clockwise from the +x
axis; elevation is the angle below the horizon as seen from the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .netgen import CellSite, NetworkLayout, UserEquipment

THERMAL_NOISE_DBM_HZ = -174.0
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ParamBounds:
    """Search box per antenna parameter, in degrees."""

    downtilt: tuple[float, float] = (0.0, 25.0)
    vertical_hpbw: tuple[float, float] = (0.0, 65.0)
    horizontal_hpbw: tuple[float, float] = (5.0, 100.0)

    def __post_init__(self):
        for name in ("downtilt", "vertical_hpbw", "horizontal_hpbw"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds need low < high, got {(lo, hi)}")

    def box(self, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bound vectors for the flattened 3M configuration."""
        lo = np.repeat([self.downtilt[0], self.vertical_hpbw[0], self.horizontal_hpbw[0]], n_cells)
        hi = np.repeat([self.downtilt[1], self.vertical_hpbw[1], self.horizontal_hpbw[1]], n_cells)
        return lo.astype(float), hi.astype(float)

    def clip(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.box(x.shape[-1] // 3)
        return np.clip(x, lo, hi)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        lo, hi = self.box(x.shape[-1] // 3)
        return bool(np.all((x >= lo) & (x <= hi)))


@dataclass(frozen=True)
class AntennaConfig:
    """Per-cell antenna settings; flattens to ``[theta, phi_v, phi_h]``."""

    downtilt: np.ndarray
    vertical_hpbw: np.ndarray
    horizontal_hpbw: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float).reshape(-1) for a in
                  (self.downtilt, self.vertical_hpbw, self.horizontal_hpbw)]
        if not len(arrays[0]) == len(arrays[1]) == len(arrays[2]):
            raise ValueError("parameter vectors must have equal length")
        for name, a in zip(("downtilt", "vertical_hpbw", "horizontal_hpbw"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_cells(self) -> int:
        return len(self.downtilt)

    @classmethod
    def from_vector(cls, x) -> "AntennaConfig":
        x = np.asarray(x, dtype=float).reshape(-1)
        if len(x) % 3:
            raise ValueError("configuration vector length must be a multiple of 3")
        m = len(x) // 3
        return cls(x[:m], x[m:2 * m], x[2 * m:])

    @classmethod
    def uniform(cls, n_cells: int, downtilt=12.0, vertical_hpbw=10.0, horizontal_hpbw=70.0):
        return cls(
            np.full(n_cells, float(downtilt)),
            np.full(n_cells, float(vertical_hpbw)),
            np.full(n_cells, float(horizontal_hpbw)),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.downtilt, self.vertical_hpbw, self.horizontal_hpbw])


def default_config(n_cells: int) -> AntennaConfig:
    """The common setting (12, 10, 70 deg) applied to every cell."""
    return AntennaConfig.uniform(n_cells, 12.0, 10.0, 70.0)


@dataclass(frozen=True)
class RadioParams:
    """Link-budget constants. ``rayleigh_fading=False`` makes every fading sample 1."""

    carrier_ghz: float = 2.0
    bandwidth_hz: float = 10e6
    n_rb: int = 52
    ue_noise_figure_db: float = 9.0
    bs_noise_figure_db: float = 5.0
    p0_dbm: float = -90.0
    pathloss_compensation: float = 0.9
    ue_max_power_dbm: float = 23.0
    n_fading: int = 10
    rayleigh_fading: bool = True
    macro_gain_dbi: float = 8.0
    small_gain_dbi: float = 5.0
    max_attenuation_db: float = 30.0
    min_vertical_hpbw: float = 1.0
    shadowing_los_db: float = 4.0
    shadowing_nlos_db: float = 6.0

    @property
    def ue_noise_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10 * math.log10(self.bandwidth_hz) + self.ue_noise_figure_db

    @property
    def bs_noise_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10 * math.log10(self.bandwidth_hz) + self.bs_noise_figure_db


@dataclass(frozen=True)
class SinrReport:
    dl_sinr: np.ndarray
    ul_sinr: np.ndarray
    serving_cell: np.ndarray
    ul_tx_power: np.ndarray

    @property
    def n_ues(self) -> int:
        return len(self.dl_sinr)


# -- antenna pattern -------------------------------------------------------


def wrap_degrees(a):
    """Wrap angles to [-180, 180)."""
    return (np.asarray(a, dtype=float) + 180.0) % 360.0 - 180.0


def pattern_attenuation(az_offset, el_offset, horizontal_hpbw, vertical_hpbw,
                        max_attenuation=30.0, omni=False):
    """Parabolic element pattern attenuation in dB (always <= 0).

    ``-min(12 (az/phi_h)^2 + 12 (el/phi_v)^2, A_m)``; the horizontal term is
    dropped for omnidirectional cells.
    """
    az = np.asarray(az_offset, dtype=float)
    el = np.asarray(el_offset, dtype=float)
    vert = 12.0 * (el / vertical_hpbw) ** 2
    horiz = np.where(omni, 0.0, 12.0 * (az / horizontal_hpbw) ** 2)
    return -np.minimum(horiz + vert, max_attenuation)


def _geometry(cell_xy, cell_h, cell_az, ue_xy, ue_h):
    dxy = ue_xy[None, :, :] - cell_xy[:, None, :]
    d2d = np.hypot(dxy[..., 0], dxy[..., 1])
    dh = cell_h[:, None] - ue_h[None, :]
    d3d = np.hypot(d2d, dh)
    az = np.degrees(np.arctan2(dxy[..., 1], dxy[..., 0]))
    az_off = wrap_degrees(az - cell_az[:, None])
    el = np.degrees(np.arctan2(dh, d2d))
    return d2d, d3d, az_off, el


def antenna_gain(config: AntennaConfig, cell: CellSite, ue: UserEquipment,
                 params: RadioParams | None = None) -> float:
    """Gain in dBi of ``cell``'s antenna towards ``ue`` under ``config``."""
    params = params or RadioParams()
    m = cell.id
    _, _, az_off, el = _geometry(
        np.array([cell.position], float), np.array([cell.height]), np.array([cell.azimuth]),
        np.array([ue.position], float), np.array([ue.height]),
    )
    g_max = params.macro_gain_dbi if cell.is_macro else params.small_gain_dbi
    att = pattern_attenuation(
        az_off[0, 0],
        el[0, 0] - config.downtilt[m],
        config.horizontal_hpbw[m],
        max(config.vertical_hpbw[m], params.min_vertical_hpbw),
        params.max_attenuation_db,
        omni=not cell.is_macro,
    )
    return float(g_max + att)


# -- large-scale channel ---------------------------------------------------


def free_space_loss(d3d, carrier_ghz):
    return 32.45 + 20.0 * np.log10(d3d) + 20.0 * math.log10(carrier_ghz)


def los_probability(d2d):
    """Urban-macro LOS probability for UE heights up to 13 m."""
    d = np.maximum(np.asarray(d2d, dtype=float), 1e-9)
    p = 18.0 / d + np.exp(-d / 63.0) * (1.0 - 18.0 / d)
    return np.where(d <= 18.0, 1.0, p)


def uma_path_loss(d3d, los, carrier_ghz, ue_height=1.5):
    """Single-slope urban-macro path loss in dB, never below free space."""
    log_d = np.log10(d3d)
    log_f = 20.0 * math.log10(carrier_ghz)
    pl_los = 28.0 + 22.0 * log_d + log_f
    pl_nlos = 13.54 + 39.08 * log_d + log_f - 0.6 * (np.asarray(ue_height) - 1.5)
    pl = np.where(los, pl_los, np.maximum(pl_los, pl_nlos))
    return np.maximum(pl, free_space_loss(d3d, carrier_ghz))


class LinkBudget:
    """Frozen per-(cell, UE) channel state for one layout.

    Built once; afterwards only read, so one instance can serve any number
    of concurrent evaluations.
    """

    def __init__(self, layout: NetworkLayout, params: RadioParams | None = None,
                 seed: int | None = None):
        self.layout = layout
        self.params = params = params or RadioParams()
        self.seed = layout.rng_seed if seed is None else int(seed)
        d2d, d3d, az_off, el = _geometry(
            layout.cell_xy, layout.cell_height, layout.cell_azimuth,
            layout.ue_xy, layout.ue_height,
        )
        self.d2d, self.d3d = d2d, d3d
        self.azimuth_offset = az_off
        self.elevation = el

        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x636831]))
        sites, site_index = np.unique(layout.cell_site, return_inverse=True)
        first = np.array([np.flatnonzero(site_index == k)[0] for k in range(len(sites))])
        site_d2d = d2d[first]
        site_los = rng.random(site_d2d.shape) < los_probability(site_d2d)
        site_z = rng.standard_normal(site_d2d.shape)
        self.los = site_los[site_index]
        sigma = np.where(self.los, params.shadowing_los_db, params.shadowing_nlos_db)
        self.shadowing = sigma * site_z[site_index]
        self.path_loss = uma_path_loss(d3d, self.los, params.carrier_ghz, layout.ue_height[None, :])
        self.fading = rng.exponential(1.0, size=(params.n_fading, layout.n_cells, layout.n_ues))
        if not params.rayleigh_fading:
            self.fading = np.ones_like(self.fading)

        self.g_max = np.where(layout.is_macro, params.macro_gain_dbi, params.small_gain_dbi)
        self.tx_power = layout.cell_tx_power
        self.omni = ~layout.is_macro
        for a in (self.d2d, self.d3d, self.azimuth_offset, self.elevation, self.los,
                  self.shadowing, self.path_loss, self.fading, self.g_max):
            a.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return self.layout.n_cells

    @property
    def n_ues(self) -> int:
        return self.layout.n_ues

    def gain_matrix(self, config: AntennaConfig) -> np.ndarray:
        """Antenna gain (dBi) of every cell towards every UE, shape (M, N)."""
        if config.n_cells != self.n_cells:
            raise ValueError(f"config has {config.n_cells} cells, layout has {self.n_cells}")
        p = self.params
        phi_v = np.maximum(config.vertical_hpbw, p.min_vertical_hpbw)[:, None]
        att = pattern_attenuation(
            self.azimuth_offset,
            self.elevation - config.downtilt[:, None],
            config.horizontal_hpbw[:, None],
            phi_v,
            p.max_attenuation_db,
            omni=self.omni[:, None],
        )
        return self.g_max[:, None] + att

    def coupling_gain(self, config: AntennaConfig) -> np.ndarray:
        """Antenna gain minus path loss and shadowing, dB, shape (M, N)."""
        return self.gain_matrix(config) - self.path_loss - self.shadowing


def downlink_rsrp(config: AntennaConfig, budget: LinkBudget) -> np.ndarray:
    """Received reference power (dBm) from each cell at each UE, shape (M, N)."""
    return budget.tx_power[:, None] + budget.coupling_gain(config)


def ul_tx_power(pathloss_dl, n_rb, p0, phi, p_max):
    """Fractional uplink power control: ``min(p_max, 10 log10(n_rb) + p0 + phi L)``."""
    if n_rb < 1:
        raise ValueError("n_rb must be >= 1")
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    return np.minimum(p_max, 10.0 * np.log10(n_rb) + p0 + phi * np.asarray(pathloss_dl, dtype=float))


def serving_cells(rsrp: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest cell id on ties
    return np.argmax(rsrp, axis=0)


def uplink_interferers(serving: np.ndarray, n_cells: int, n_samples: int) -> np.ndarray:
    """Scheduled UE per cell per fading sample, ``-1`` for cells without UEs.

    Each cell cycles round-robin through its own UEs (ordered by id).
    """
    out = np.full((n_samples, n_cells), -1, dtype=np.int64)
    for m in range(n_cells):
        served = np.flatnonzero(serving == m)
        if len(served):
            out[:, m] = served[np.arange(n_samples) % len(served)]
    return out


def evaluate_sinr(config: AntennaConfig, budget: LinkBudget) -> SinrReport:
    """Per-UE DL/UL SINR (dB) averaged over the frozen fading samples."""
    p = budget.params
    M, N = budget.n_cells, budget.n_ues
    ues = np.arange(N)

    coupling = budget.coupling_gain(config)
    rsrp = budget.tx_power[:, None] + coupling
    serving = serving_cells(rsrp)
    fading = budget.fading

    # downlink
    rx = 10.0 ** (rsrp / 10.0)[None] * fading  # (F, M, N) mW
    signal = rx[:, serving, ues]
    interference = rx.sum(axis=1) - signal
    dl = (signal / (interference + 10.0 ** (p.ue_noise_dbm / 10.0))).mean(axis=0)

    # uplink: power control on the measured coupling loss to the server
    coupling_loss = -coupling[serving, ues]
    tx = ul_tx_power(coupling_loss, p.n_rb, p.p0_dbm, p.pathloss_compensation, p.ue_max_power_dbm)
    q = 10.0 ** ((tx[None, :] + coupling) / 10.0)  # (M, N) power of UE n at cell m
    sched = uplink_interferers(serving, M, p.n_fading)
    bs_noise = 10.0 ** (p.bs_noise_dbm / 10.0)
    ul = np.zeros(N)
    cells = np.arange(M)
    for f in range(p.n_fading):
        active = sched[f] >= 0
        src = sched[f, active]
        # (M, A): power at every cell from every scheduled UE
        contrib = q[:, src] * fading[f][:, src]
        total = contrib.sum(axis=1)
        own = np.zeros(M)
        own[cells[active]] = contrib[cells[active], np.arange(len(src))]
        inter = total - own
        sig = q[serving, ues] * fading[f, serving, ues]
        ul += sig / (inter[serving] + bs_noise)
    ul /= p.n_fading

    return SinrReport(
        dl_sinr=10.0 * np.log10(dl),
        ul_sinr=10.0 * np.log10(ul),
        serving_cell=serving,
        ul_tx_power=tx,
    )


@dataclass
class NetworkSimulator:
    """Counts true evaluations around :func:`evaluate_sinr`."""

    budget: LinkBudget
    n_evaluations: int = field(default=0)

    @classmethod
    def from_layout(cls, layout: NetworkLayout, params: RadioParams | None = None,
                    seed: int | None = None) -> "NetworkSimulator":
        return cls(LinkBudget(layout, params, seed))

    @property
    def layout(self) -> NetworkLayout:
        return self.budget.layout

    @property
    def n_cells(self) -> int:
        return self.budget.n_cells

    @property
    def n_ues(self) -> int:
        return self.budget.n_ues

    def evaluate(self, config) -> SinrReport:
        if not isinstance(config, AntennaConfig):
            config = AntennaConfig.from_vector(config)
        self.n_evaluations += 1
        return evaluate_sinr(config, self.budget)

    def rsrp(self, config) -> np.ndarray:
        if not isinstance(config, AntennaConfig):
            config = AntennaConfig.from_vector(config)
        return downlink_rsrp(config, self.budget)
