"""Shared builders for the test suite."""

from pathlib import Path

import numpy as np

from ccopt import netgen, radio

DATA = Path(__file__).parent / "data"

# two macro sites + three small cells: M = 9, N = 20
DESK = dict(n_macro_sites=2, inter_site_distance=500.0, n_small_cells=3, n_ues=20,
            min_small_macro_distance=10.0)


def desk_layout(seed: int = 0) -> netgen.NetworkLayout:
    return netgen.generate_hex_layout(seed=seed, **DESK)


def desk_simulator(seed: int = 0) -> radio.NetworkSimulator:
    return radio.NetworkSimulator.from_layout(desk_layout(seed), seed=seed)


def line_layout(xs, ue_xs, heights=None, macro=True) -> netgen.NetworkLayout:
    """Cells and UEs on the x axis (omni small cells unless ``macro``)."""
    cls = netgen.CellClass.MACRO if macro else netgen.CellClass.SMALL
    h = heights or [25.0] * len(xs)
    cells = tuple(netgen.CellSite(i, (float(x), 0.0), h[i], 0.0, cls, 43.0, i) for i, x in enumerate(xs))
    ues = tuple(netgen.UserEquipment(i, (float(x), 0.0), 1.5) for i, x in enumerate(ue_xs))
    return netgen.NetworkLayout(cells, ues, 0, (0.0, 0.0), float(max(np.abs(ue_xs)) + 1))


# (criterion, "PASS"/"FAIL", detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list = []


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
