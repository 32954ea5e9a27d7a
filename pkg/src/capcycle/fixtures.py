"""Embedded measurement tables from the reference test campaign.

Four CSV files ship with the package: a current sweep of the 10 F device
(``table1.csv``), efficiency surfaces without and with 30-minute rests for
all three devices (``table2.csv``, ``table4.csv``), and the 50 F device's
rest-voltage drift against window span (``table3.csv``).  Loaders convert
to SI units and to :class:`~capcycle.effmap.EfficiencyGrid` objects.
"""

from __future__ import annotations

import csv
import shutil
from importlib import resources
from pathlib import Path

import numpy as np

from .effmap import PU_LEVELS, EfficiencyGrid, GridMethod
from .errors import ConfigError

DEVICES = ("10F", "50F", "100F")

TABLE_NAMES = ("table1", "table2", "table3", "table4")


def data_path(name: str) -> Path:
    """Filesystem path of a packaged data file (e.g. ``"table2"``)."""
    if name not in TABLE_NAMES:
        raise ConfigError(f"unknown fixture table {name!r}; choose from {TABLE_NAMES}")
    return Path(str(resources.files("capcycle").joinpath(f"data/{name}.csv")))


def _read_rows(name: str) -> list[list[str]]:
    with data_path(name).open(newline="") as fh:
        return [row for row in csv.reader(fh) if row and not row[0].startswith("#")]


def load_current_sweep() -> list[tuple[float, float]]:
    """(current in A, efficiency as a fraction) rows of the 10 F sweep."""
    return [(float(r[0]), float(r[1]) / 100.0) for r in _read_rows("table1")]


def load_rest_voltage_rows() -> list[tuple[float, float, float, float]]:
    """(vm, vM, v_sd, v_sc) in volts for the 50 F rest-drift measurements."""
    return [
        (float(r[1]), float(r[2]), float(r[3]) / 1000.0, float(r[4]) / 1000.0)
        for r in _read_rows("table3")
    ]


def measured_grid(device: str, rest: bool = False) -> EfficiencyGrid:
    """Efficiency grid of one device from the embedded measurements.

    ``rest=False`` selects the continuous-cycling surface, ``rest=True``
    the 30-minute-rest surface.
    """
    if device not in DEVICES:
        raise ConfigError(f"unknown device {device!r}; choose from {DEVICES}")
    col = 2 + DEVICES.index(device)
    eta = np.full((len(PU_LEVELS), len(PU_LEVELS)), np.nan)
    for r in _read_rows("table4" if rest else "table2"):
        vm, vM = float(r[0]), float(r[1])
        eta[PU_LEVELS.index(vM), PU_LEVELS.index(vm)] = float(r[col]) / 100.0
    return EfficiencyGrid(
        vm_levels=PU_LEVELS,
        vM_levels=PU_LEVELS,
        eta=eta,
        method=GridMethod.MEASURED,
        rest=rest,
    )


def export_all(out_dir: Path | str) -> list[Path]:
    """Copy every embedded table into ``out_dir``; returns the new paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in TABLE_NAMES:
        dst = out / f"{name}.csv"
        shutil.copyfile(data_path(name), dst)
        written.append(dst)
    return written
