"""Efficiency surfaces over per-unit voltage windows, and their optimization.

A grid evaluates round-trip efficiency for every pair ``vm < vM`` of per-unit
levels, either from the closed forms (optionally with a fitted rest-voltage
model), by full simulate-and-analyze runs, or from embedded measured data.
Rendering is deterministic: the same grid always produces byte-identical CSV
and SVG output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .analyzer import analyze_trace
from .errors import (
    ConfigError,
    InfeasibleEnergyRequirement,
    LossesExceedDelivery,
    NumericError,
    RankDeficientFit,
    WindowTooNarrow,
)
from .model import (
    CycleSpec,
    DeviceParams,
    OperatingWindow,
    RestVoltages,
    efficiency_no_rest,
    efficiency_with_rest,
    usable_energy_fraction,
)
from .simulator import AcquisitionConfig, run_protocol

PU_LEVELS = (0.0, 0.25, 0.5, 0.7, 0.9, 1.0)
"""Default per-unit grid levels of the test campaign."""

MIN_FIT_QUALITY = 0.95
"""Minimum coefficient of determination to use a rest-voltage model in predictions."""

_BOUNDARY_SCAN_POINTS = 4096


class GridMethod(Enum):
    CLOSED_FORM = "closed_form"
    SIMULATED = "simulated"
    MEASURED = "measured"


@dataclass(frozen=True)
class SelfDischargeModel:
    """Linear rest-voltage model: v in mV against the window span in volts.

    ``slope_*`` are mV per volt of span, ``intercept_*`` mV; ``fit_quality``
    is the smaller of the two per-response coefficients of determination.
    Predictions are clamped at zero.
    """

    slope_sd: float
    intercept_sd: float
    slope_sc: float
    intercept_sc: float
    fit_quality_sd: float
    fit_quality_sc: float
    fit_quality: float
    n_rows: int

    def __post_init__(self) -> None:
        if self.slope_sd < 0 or self.slope_sc < 0:
            raise ConfigError(
                "fitted rest-voltage slopes are negative; the linear-in-span "
                "model does not describe this data"
            )

    def predict(self, dv: float) -> RestVoltages:
        """Rest voltages (volts) for a window span ``dv`` volts."""
        v_sd = max(0.0, (self.slope_sd * dv + self.intercept_sd) / 1000.0)
        v_sc = max(0.0, (self.slope_sc * dv + self.intercept_sc) / 1000.0)
        return RestVoltages(v_sd=v_sd, v_sc=v_sc)

    def to_dict(self) -> dict:
        return {
            "slope_sd_mV_per_V": self.slope_sd,
            "intercept_sd_mV": self.intercept_sd,
            "slope_sc_mV_per_V": self.slope_sc,
            "intercept_sc_mV": self.intercept_sc,
            "fit_quality_sd": self.fit_quality_sd,
            "fit_quality_sc": self.fit_quality_sc,
            "fit_quality": self.fit_quality,
            "n_rows": self.n_rows,
        }


def _ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-12 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def fit_self_discharge(rows) -> SelfDischargeModel:
    """Fit the linear rest-voltage model to measured windows.

    ``rows`` is a sequence of ``(vm, vM, v_sd, v_sc)`` in volts; both voltages
    are regressed (ordinary least squares, with intercept) against the span
    ``vM - vm``.
    """
    data = np.array([tuple(r) for r in rows], dtype=float)
    if data.ndim != 2 or data.shape[1] != 4:
        raise ConfigError("rows must be (vm, vM, v_sd, v_sc) quadruples")
    if data.shape[0] < 3:
        raise RankDeficientFit(
            f"need at least 3 rows to fit slope and intercept, got {data.shape[0]}"
        )
    dv = data[:, 1] - data[:, 0]
    if float(np.ptp(dv)) < 1e-9:
        raise RankDeficientFit(
            "all rows share the same window span; the slope is unidentifiable"
        )
    slope_sd, icpt_sd, r2_sd = _ols_line(dv, data[:, 2] * 1000.0)
    slope_sc, icpt_sc, r2_sc = _ols_line(dv, data[:, 3] * 1000.0)
    return SelfDischargeModel(
        slope_sd=slope_sd,
        intercept_sd=icpt_sd,
        slope_sc=slope_sc,
        intercept_sc=icpt_sc,
        fit_quality_sd=r2_sd,
        fit_quality_sc=r2_sc,
        fit_quality=min(r2_sd, r2_sc),
        n_rows=int(data.shape[0]),
    )


@dataclass(frozen=True)
class RestPlan:
    """Rest configuration for a grid: duration plus (for closed form) a model."""

    duration: float = 1800.0
    model: SelfDischargeModel | None = None

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ConfigError(f"rest duration must be > 0, got {self.duration}")


@dataclass
class EfficiencyGrid:
    """Efficiency over a per-unit (vm, vM) grid; NaN marks undefined cells.

    ``eta`` has one row per vM level and one column per vm level.
    """

    vm_levels: tuple[float, ...]
    vM_levels: tuple[float, ...]
    eta: np.ndarray
    method: GridMethod
    rest: bool

    def defined_mask(self) -> np.ndarray:
        return ~np.isnan(self.eta)

    def value(self, vm: float, vM: float) -> float:
        """Grid efficiency at exact levels (NaN if the cell is undefined)."""
        j = self.vm_levels.index(vm)
        r = self.vM_levels.index(vM)
        return float(self.eta[r, j])


def _validate_levels(levels) -> tuple[float, ...]:
    levels = tuple(float(x) for x in levels)
    if len(levels) < 2:
        raise ConfigError("need at least 2 grid levels")
    if any(not 0 <= x <= 1 for x in levels):
        raise ConfigError(f"levels must lie in [0, 1], got {levels}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be strictly increasing, got {levels}")
    return levels


def build_grid(
    p: DeviceParams,
    i_c: float,
    levels=PU_LEVELS,
    rest: RestPlan | None = None,
    method: GridMethod = GridMethod.CLOSED_FORM,
    acq: AcquisitionConfig | None = None,
    sim_cycles: int = 20,
) -> EfficiencyGrid:
    """Evaluate efficiency for every level pair ``vm < vM``.

    Closed-form cells use the algebraic expressions (with rest voltages from
    ``rest.model`` at the cell's span, gated on its fit quality); simulated
    cells run the full protocol and take the steady-window mean efficiency.
    Infeasible windows (narrower than the resistive drops, or with rest losses
    exceeding delivery) are marked undefined, not errors.
    """
    levels = _validate_levels(levels)
    if method is GridMethod.MEASURED:
        raise ConfigError(
            "measured grids are built from the embedded data files, not evaluated"
        )
    if method is GridMethod.CLOSED_FORM and rest is not None:
        if rest.model is None:
            raise ConfigError("closed-form rest grids need a rest-voltage model")
        if rest.model.fit_quality < MIN_FIT_QUALITY:
            raise ConfigError(
                f"rest-voltage model fit quality {rest.model.fit_quality:.4f} is "
                f"below the {MIN_FIT_QUALITY} gate; use the simulated method instead"
            )
    n = len(levels)
    eta = np.full((n, n), np.nan)
    for r, vM in enumerate(levels):
        for j, vm in enumerate(levels):
            if vm >= vM:
                continue
            s = CycleSpec(
                i_c=i_c,
                v_min=vm * p.v_rated,
                v_max=vM * p.v_rated,
                rest_after_charge=rest.duration if rest else 0.0,
                rest_after_discharge=rest.duration if rest else 0.0,
                max_cycles=sim_cycles,
            )
            try:
                if method is GridMethod.CLOSED_FORM:
                    if rest is None:
                        value = efficiency_no_rest(p, s)
                    else:
                        rv = rest.model.predict((vM - vm) * p.v_rated)
                        value = efficiency_with_rest(p, s, rv)
                else:
                    trace = run_protocol(p, s, acq)
                    value = analyze_trace(trace).steady.mean.eta
            except (WindowTooNarrow, LossesExceedDelivery):
                continue
            if 1.0 < value < 1.0 + 1e-9:
                value = 1.0
            if not 0.0 < value <= 1.0:
                raise NumericError(
                    f"grid cell ({vm}, {vM}) produced efficiency {value!r} "
                    "outside (0, 1]"
                )
            eta[r, j] = value
    return EfficiencyGrid(
        vm_levels=levels,
        vM_levels=levels,
        eta=eta,
        method=method,
        rest=rest is not None,
    )


@dataclass(frozen=True)
class OperatingPoint:
    """An operating window with its efficiency and usable-energy share."""

    window: OperatingWindow
    eta: float
    energy_fraction: float

    def to_dict(self) -> dict:
        return {
            "vm_pu": self.window.vm_pu,
            "vM_pu": self.window.vM_pu,
            "eta": self.eta,
            "energy_fraction": self.energy_fraction,
        }


@dataclass(frozen=True)
class ClosedFormObjective:
    """Continuous efficiency objective for the window optimizer."""

    device: DeviceParams
    i_c: float
    rest_model: SelfDischargeModel | None = None
    rest: bool = False

    def eta(self, vm_pu: float, vM_pu: float) -> float:
        """Efficiency at a per-unit window; raises for infeasible windows."""
        s = CycleSpec(
            i_c=self.i_c,
            v_min=vm_pu * self.device.v_rated,
            v_max=vM_pu * self.device.v_rated,
        )
        if self.rest:
            if self.rest_model is None:
                raise ConfigError("rest objective needs a rest-voltage model")
            rv = self.rest_model.predict((vM_pu - vm_pu) * self.device.v_rated)
            return efficiency_with_rest(self.device, s, rv)
        return efficiency_no_rest(self.device, s)


def optimize_window(target, energy_fraction_min: float) -> OperatingPoint:
    """Maximize efficiency subject to a minimum usable-energy fraction.

    ``target`` is an :class:`EfficiencyGrid` (exhaustive search over defined
    cells) or a :class:`ClosedFormObjective`.  Without rest the closed-form
    optimum is analytic (``vM = 1``, ``vm = sqrt(1 - f)``: efficiency grows
    with both voltages, so the constraint binds at the rated ceiling); with
    rest the optimum still lies on the constraint boundary (raising ``vm`` at
    fixed ``vM`` both raises the voltage sum and shrinks the span, helping
    twice), which a dense boundary scan locates.  Ties break toward larger
    energy fraction, then larger ``vm``.
    """
    f = energy_fraction_min
    if f > 1:
        raise InfeasibleEnergyRequirement(
            f"energy fraction {f} exceeds 1, the full-window maximum"
        )
    if not f > 0:
        raise ConfigError(f"energy_fraction_min must lie in (0, 1], got {f}")

    if isinstance(target, EfficiencyGrid):
        best = None
        for r, vM in enumerate(target.vM_levels):
            for j, vm in enumerate(target.vm_levels):
                value = target.eta[r, j]
                if np.isnan(value):
                    continue
                frac = vM * vM - vm * vm
                if frac < f - 1e-12:
                    continue
                key = (value, frac, vm)
                if best is None or key > best[0]:
                    best = (key, vm, vM, float(value), frac)
        if best is None:
            raise InfeasibleEnergyRequirement(
                f"no defined grid cell reaches energy fraction {f}"
            )
        _, vm, vM, value, frac = best
        return OperatingPoint(
            window=OperatingWindow(vm_pu=vm, vM_pu=vM),
            eta=value,
            energy_fraction=frac,
        )

    if not isinstance(target, ClosedFormObjective):
        raise ConfigError(
            f"optimize_window target must be EfficiencyGrid or ClosedFormObjective, "
            f"got {type(target).__name__}"
        )

    if not target.rest:
        vm = math.sqrt(max(0.0, 1.0 - f))
        try:
            value = target.eta(vm, 1.0)
            return OperatingPoint(
                window=OperatingWindow(vm_pu=vm, vM_pu=1.0),
                eta=value,
                energy_fraction=1.0 - vm * vm,
            )
        except WindowTooNarrow:
            pass  # analytic point infeasible for this current; scan the boundary

    best = None
    vM_lo = math.sqrt(f)
    for vM in np.linspace(vM_lo, 1.0, _BOUNDARY_SCAN_POINTS):
        vM = float(vM)
        vm = math.sqrt(max(0.0, vM * vM - f))
        if vm >= vM:
            continue
        try:
            value = target.eta(vm, vM)
        except (WindowTooNarrow, LossesExceedDelivery):
            continue
        frac = vM * vM - vm * vm
        key = (value, frac, vm)
        if best is None or key > best[0]:
            best = (key, vm, vM, value, frac)
    if best is None:
        raise InfeasibleEnergyRequirement(
            f"no window on the energy-fraction boundary {f} is feasible "
            "for this device and current"
        )
    _, vm, vM, value, frac = best
    return OperatingPoint(
        window=OperatingWindow(vm_pu=vm, vM_pu=vM),
        eta=value,
        energy_fraction=frac,
    )


# ---------------------------------------------------------------------------
# Rendering


def _fmt_level(x: float) -> str:
    return f"{x:.6g}"


def _fmt_pct(eta: float) -> str:
    return f"{eta * 100.0:.4g}"


def _ramp_color(frac: float) -> str:
    """Three-stop red-yellow-green ramp; frac in [0, 1]."""
    stops = ((215, 48, 39), (254, 224, 139), (26, 152, 80))
    if frac <= 0.5:
        a, b = stops[0], stops[1]
        u = frac / 0.5
    else:
        a, b = stops[1], stops[2]
        u = (frac - 0.5) / 0.5
    rgb = tuple(round(x + (y - x) * u) for x, y in zip(a, b))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_map(grid: EfficiencyGrid, out: str | Path) -> tuple[Path, Path]:
    """Write ``<out>.csv`` and ``<out>.svg`` for the grid; returns both paths.

    The CSV is a matrix with vm levels as columns and vM levels as rows
    (corner label ``vmpu\\vMpu``), cells in percent, blanks for undefined.
    The SVG is a self-contained colored cell map with per-cell percentage
    labels, per-unit axis labels, and a legend.
    """
    defined = grid.defined_mask()
    col_ok = defined.any(axis=0)
    row_ok = defined.any(axis=1)
    if int(col_ok.sum()) < 2 or int(row_ok.sum()) < 2:
        raise ConfigError(
            "grid must have defined cells spanning at least 2 vm and 2 vM levels"
        )
    out = Path(out)
    if out.suffix in (".csv", ".svg"):
        out = out.with_suffix("")
    csv_path = out.with_suffix(".csv")
    svg_path = out.with_suffix(".svg")

    lines = ["vmpu\\vMpu," + ",".join(_fmt_level(v) for v in grid.vm_levels)]
    for r, vM in enumerate(grid.vM_levels):
        cells = [
            _fmt_pct(grid.eta[r, j]) if defined[r, j] else ""
            for j in range(len(grid.vm_levels))
        ]
        lines.append(_fmt_level(vM) + "," + ",".join(cells))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    svg_path.write_text(_render_svg(grid, defined), encoding="utf-8", newline="\n")
    return csv_path, svg_path


def _render_svg(grid: EfficiencyGrid, defined: np.ndarray) -> str:
    cw, ch = 66, 44
    left, top = 78, 46
    ncols, nrows = len(grid.vm_levels), len(grid.vM_levels)
    legend_w = 130
    width = left + ncols * cw + legend_w + 20
    height = top + nrows * ch + 64

    values = grid.eta[defined]
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0

    tag = "with rest" if grid.rest else "no rest"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{left}" y="24" font-family="sans-serif" font-size="15" '
        f'fill="#000000">round-trip efficiency (%), {grid.method.value}, {tag}</text>',
    ]
    for r in range(nrows):
        y = top + (nrows - 1 - r) * ch
        for j in range(ncols):
            x = left + j * cw
            if defined[r, j]:
                value = float(grid.eta[r, j])
                color = _ramp_color((value - lo) / span)
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" '
                    f'fill="{color}" stroke="#ffffff"/>'
                )
                parts.append(
                    f'<text x="{x + cw // 2}" y="{y + ch // 2 + 5}" '
                    f'font-family="sans-serif" font-size="13" text-anchor="middle" '
                    f'fill="#000000">{value * 100.0:.1f}</text>'
                )
            else:
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" '
                    f'fill="#f2f2f2" stroke="#ffffff"/>'
                )
    for j, vm in enumerate(grid.vm_levels):
        parts.append(
            f'<text x="{left + j * cw + cw // 2}" y="{top + nrows * ch + 20}" '
            f'font-family="sans-serif" font-size="12" text-anchor="middle" '
            f'fill="#000000">{_fmt_level(vm)}</text>'
        )
    for r, vM in enumerate(grid.vM_levels):
        y = top + (nrows - 1 - r) * ch + ch // 2 + 4
        parts.append(
            f'<text x="{left - 10}" y="{y}" font-family="sans-serif" '
            f'font-size="12" text-anchor="end" fill="#000000">{_fmt_level(vM)}</text>'
        )
    parts.append(
        f'<text x="{left + ncols * cw // 2}" y="{top + nrows * ch + 44}" '
        f'font-family="sans-serif" font-size="13" text-anchor="middle" '
        f'fill="#000000">minimum voltage (per unit)</text>'
    )
    parts.append(
        f'<text x="20" y="{top + nrows * ch // 2}" font-family="sans-serif" '
        f'font-size="13" text-anchor="middle" fill="#000000" '
        f'transform="rotate(-90 20 {top + nrows * ch // 2})">maximum voltage (per unit)</text>'
    )

    # Legend: vertical ramp from lo (bottom) to hi (top).
    lx = left + ncols * cw + 36
    lh = nrows * ch
    steps = 24
    for k in range(steps):
        frac = (k + 0.5) / steps
        y = top + lh - (k + 1) * lh / steps
        parts.append(
            f'<rect x="{lx}" y="{y:.2f}" width="18" height="{lh / steps + 0.5:.2f}" '
            f'fill="{_ramp_color(frac)}"/>'
        )
    parts.append(
        f'<text x="{lx + 24}" y="{top + lh}" font-family="sans-serif" font-size="11" '
        f'fill="#000000">{lo * 100.0:.1f}</text>'
    )
    parts.append(
        f'<text x="{lx + 24}" y="{top + 10}" font-family="sans-serif" font-size="11" '
        f'fill="#000000">{hi * 100.0:.1f}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
