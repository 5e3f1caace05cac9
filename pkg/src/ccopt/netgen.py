"""HetNet layout generation and layout files.

A layout is a set of cells (three sectors per macro site plus single-cell
small sites) and a set of UEs scattered uniformly over a disk around the
macro grid. Layouts are immutable and a pure function of the generator
arguments and the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

MACRO_HEIGHT = 25.0
SMALL_HEIGHT = 10.0
UE_HEIGHT = 1.5
MACRO_TX_POWER = 43.0
SMALL_TX_POWER = 30.0
SECTOR_AZIMUTHS = (0.0, 120.0, 240.0)
MAX_PLACEMENT_ATTEMPTS = 10_000

LAYOUT_FORMAT = "ccopt-layout"
LAYOUT_VERSION = 1


class LayoutError(ValueError):
    """Base class for invalid layouts."""


class PlacementInfeasibleError(LayoutError):
    """Raised when random placement cannot satisfy the layout constraints."""


class LayoutSchemaError(LayoutError):
    """A layout file or object violates the schema.

    The offending field is available as ``field``.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CellClass(str, Enum):
    MACRO = "macro-sector"
    SMALL = "small-cell"


@dataclass(frozen=True)
class CellSite:
    """One cell. Sectors of the same macro tower share ``site``."""

    id: int
    position: tuple[float, float]
    height: float = MACRO_HEIGHT
    azimuth: float = 0.0
    cell_class: CellClass = CellClass.MACRO
    tx_power: float = MACRO_TX_POWER
    site: int = -1

    @property
    def is_macro(self) -> bool:
        return self.cell_class is CellClass.MACRO


@dataclass(frozen=True)
class UserEquipment:
    id: int
    position: tuple[float, float]
    height: float = UE_HEIGHT


@dataclass(frozen=True)
class NetworkLayout:
    """Immutable cell/UE geometry.

    ``region_center`` and ``region_radius`` describe the disk the UEs were
    drawn from. Cell and UE ids are dense, ``0..M-1`` and ``0..N-1``.
    """

    cells: tuple[CellSite, ...]
    ues: tuple[UserEquipment, ...]
    rng_seed: int = 0
    region_center: tuple[float, float] = (0.0, 0.0)
    region_radius: float = 0.0

    def __post_init__(self):
        if len(self.cells) < 1:
            raise LayoutSchemaError("cells", "layout needs at least one cell")
        if len(self.ues) < 1:
            raise LayoutSchemaError("ues", "layout needs at least one UE")
        _check_ids("cells", [c.id for c in self.cells])
        _check_ids("ues", [u.id for u in self.ues])
        for c in self.cells:
            if not c.height > 0:
                raise LayoutSchemaError("cells.height", f"cell {c.id} height must be > 0")
            if not 0.0 <= c.azimuth < 360.0:
                raise LayoutSchemaError("cells.azimuth", f"cell {c.id} azimuth outside [0, 360)")
            if not all(math.isfinite(v) for v in (*c.position, c.tx_power)):
                raise LayoutSchemaError("cells.position", f"cell {c.id} has non-finite values")
        for u in self.ues:
            if not u.height > 0:
                raise LayoutSchemaError("ues.height", f"UE {u.id} height must be > 0")
            if not all(math.isfinite(v) for v in u.position):
                raise LayoutSchemaError("ues.position", f"UE {u.id} has non-finite position")
        if self.region_radius < 0:
            raise LayoutSchemaError("region.radius", "must be >= 0")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_ues(self) -> int:
        return len(self.ues)

    @cached_property
    def cell_xy(self) -> np.ndarray:
        return np.array([c.position for c in self.cells], dtype=float)

    @cached_property
    def ue_xy(self) -> np.ndarray:
        return np.array([u.position for u in self.ues], dtype=float)

    @cached_property
    def cell_height(self) -> np.ndarray:
        return np.array([c.height for c in self.cells], dtype=float)

    @cached_property
    def ue_height(self) -> np.ndarray:
        return np.array([u.height for u in self.ues], dtype=float)

    @cached_property
    def cell_azimuth(self) -> np.ndarray:
        return np.array([c.azimuth for c in self.cells], dtype=float)

    @cached_property
    def cell_tx_power(self) -> np.ndarray:
        return np.array([c.tx_power for c in self.cells], dtype=float)

    @cached_property
    def is_macro(self) -> np.ndarray:
        return np.array([c.is_macro for c in self.cells], dtype=bool)

    @cached_property
    def cell_site(self) -> np.ndarray:
        return np.array([c.site for c in self.cells], dtype=np.int64)


def _check_ids(name: str, ids: list[int]) -> None:
    if len(set(ids)) != len(ids):
        raise LayoutSchemaError(f"{name}.id", "duplicate id")
    if ids != list(range(len(ids))):
        raise LayoutSchemaError(f"{name}.id", f"ids must be dense 0..{len(ids) - 1} and in order")


def hex_grid_positions(n_sites: int, spacing: float) -> tuple[np.ndarray, int]:
    """First ``n_sites`` hexagonal grid points, ring by ring from the origin.

    Returns the positions and the index of the outermost ring used.
    """
    # axial coordinates, walking each ring starting from its "east" corner
    directions = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
    coords = [(0, 0)]
    ring = 0
    while len(coords) < n_sites:
        ring += 1
        q, r = ring, 0
        for dq, dr in directions:
            for _ in range(ring):
                coords.append((q, r))
                q, r = q + dq, r + dr
    coords = coords[:n_sites]
    pos = np.array(
        [(spacing * (q + r / 2.0), spacing * (math.sqrt(3) / 2.0) * r) for q, r in coords],
        dtype=float,
    ).reshape(-1, 2)
    used_ring = max((max(abs(q), abs(r), abs(q + r)) for q, r in coords), default=0)
    return pos, used_ring


def _uniform_disk(rng: np.random.Generator, center: np.ndarray, radius: float) -> np.ndarray:
    rho = radius * math.sqrt(rng.random())
    ang = 2.0 * math.pi * rng.random()
    return center + rho * np.array([math.cos(ang), math.sin(ang)])


def generate_hex_layout(
    n_macro_sites: int,
    inter_site_distance: float,
    n_small_cells: int,
    n_ues: int,
    min_small_macro_distance: float = 10.0,
    seed: int = 0,
    *,
    macro_height: float = MACRO_HEIGHT,
    small_height: float = SMALL_HEIGHT,
    ue_height: float = UE_HEIGHT,
    macro_tx_power: float = MACRO_TX_POWER,
    small_tx_power: float = SMALL_TX_POWER,
) -> NetworkLayout:
    """Build a two-tier layout on a hexagonal macro grid.

    Each macro site becomes three sector cells (azimuths 0, 120, 240 deg).
    Small cells and UEs are drawn uniformly over a disk of radius
    ``1.5 * inter_site_distance * max(1, rings)`` centred on the macro grid
    centroid; small cells are rejection-sampled to keep at least
    ``min_small_macro_distance`` from every macro site.

    Cells are numbered macro sectors first (site-major), then small cells.
    """
    if min(n_macro_sites, n_small_cells, n_ues) < 0:
        raise ValueError("counts must be >= 0")
    if not inter_site_distance > 0:
        raise ValueError("inter_site_distance must be > 0")
    if min_small_macro_distance < 0:
        raise ValueError("min_small_macro_distance must be >= 0")
    if n_macro_sites + n_small_cells == 0 or n_ues == 0:
        raise PlacementInfeasibleError("layout needs at least one cell and one UE")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E6574]))
    sites, rings = hex_grid_positions(n_macro_sites, inter_site_distance)
    center = sites.mean(axis=0) if n_macro_sites else np.zeros(2)
    radius = 1.5 * inter_site_distance * max(rings, 1)

    cells: list[CellSite] = []
    for s, (x, y) in enumerate(sites):
        for az in SECTOR_AZIMUTHS:
            cells.append(
                CellSite(
                    id=len(cells),
                    position=(float(x), float(y)),
                    height=macro_height,
                    azimuth=az,
                    cell_class=CellClass.MACRO,
                    tx_power=macro_tx_power,
                    site=s,
                )
            )

    for k in range(n_small_cells):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            p = _uniform_disk(rng, center, radius)
            if n_macro_sites == 0 or np.min(np.hypot(*(sites - p).T)) >= min_small_macro_distance:
                break
        else:
            raise PlacementInfeasibleError(
                f"could not place small cell {k} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        cells.append(
            CellSite(
                id=len(cells),
                position=(float(p[0]), float(p[1])),
                height=small_height,
                azimuth=0.0,
                cell_class=CellClass.SMALL,
                tx_power=small_tx_power,
                site=n_macro_sites + k,
            )
        )

    ues = []
    for n in range(n_ues):
        p = _uniform_disk(rng, center, radius)
        ues.append(UserEquipment(id=n, position=(float(p[0]), float(p[1])), height=ue_height))

    return NetworkLayout(
        cells=tuple(cells),
        ues=tuple(ues),
        rng_seed=int(seed),
        region_center=(float(center[0]), float(center[1])),
        region_radius=float(radius),
    )


def layout_to_dict(layout: NetworkLayout) -> dict:
    return {
        "format": LAYOUT_FORMAT,
        "version": LAYOUT_VERSION,
        "rng_seed": layout.rng_seed,
        "region": {"center": list(layout.region_center), "radius": layout.region_radius},
        "cells": [
            {
                "id": c.id,
                "site": c.site,
                "x": c.position[0],
                "y": c.position[1],
                "height": c.height,
                "azimuth": c.azimuth,
                "class": c.cell_class.value,
                "tx_power": c.tx_power,
            }
            for c in layout.cells
        ],
        "ues": [
            {"id": u.id, "x": u.position[0], "y": u.position[1], "height": u.height}
            for u in layout.ues
        ],
    }


def _get(record: dict, key: str, where: str, kind=float, default=None):
    if key not in record:
        if default is not None:
            return default
        raise LayoutSchemaError(f"{where}.{key}", "missing")
    value = record[key]
    try:
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise LayoutSchemaError(f"{where}.{key}", f"bad value {value!r}") from None


def layout_from_dict(data: dict) -> NetworkLayout:
    if not isinstance(data, dict):
        raise LayoutSchemaError("<root>", "expected an object")
    if data.get("format", LAYOUT_FORMAT) != LAYOUT_FORMAT:
        raise LayoutSchemaError("format", f"expected {LAYOUT_FORMAT!r}")
    for key in ("cells", "ues"):
        if not isinstance(data.get(key), list):
            raise LayoutSchemaError(key, "expected a list")

    cells = []
    for rec in data["cells"]:
        cls = rec.get("class", CellClass.MACRO.value)
        try:
            cls = CellClass(cls)
        except ValueError:
            raise LayoutSchemaError("cells.class", f"unknown class {cls!r}") from None
        macro = cls is CellClass.MACRO
        cid = _get(rec, "id", "cells", int)
        cells.append(
            CellSite(
                id=cid,
                position=(_get(rec, "x", "cells"), _get(rec, "y", "cells")),
                height=_get(rec, "height", "cells", default=MACRO_HEIGHT if macro else SMALL_HEIGHT),
                azimuth=_get(rec, "azimuth", "cells", default=0.0),
                cell_class=cls,
                tx_power=_get(
                    rec, "tx_power", "cells", default=MACRO_TX_POWER if macro else SMALL_TX_POWER
                ),
                site=_get(rec, "site", "cells", int, default=cid),
            )
        )
    ues = [
        UserEquipment(
            id=_get(rec, "id", "ues", int),
            position=(_get(rec, "x", "ues"), _get(rec, "y", "ues")),
            height=_get(rec, "height", "ues", default=UE_HEIGHT),
        )
        for rec in data["ues"]
    ]
    cells.sort(key=lambda c: c.id)
    ues.sort(key=lambda u: u.id)
    region = data.get("region", {})
    center = region.get("center", [0.0, 0.0])
    return NetworkLayout(
        cells=tuple(cells),
        ues=tuple(ues),
        rng_seed=int(data.get("rng_seed", 0)),
        region_center=(float(center[0]), float(center[1])),
        region_radius=float(region.get("radius", 0.0)),
    )


def save_layout(layout: NetworkLayout, path) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout), indent=1) + "\n")


def load_layout(path) -> NetworkLayout:
    """Read a JSON layout file; raises :class:`LayoutSchemaError` on bad content."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutSchemaError("<file>", f"parse error: {exc}") from None
    return layout_from_dict(data)
