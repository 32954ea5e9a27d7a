"""Equivalent-circuit types and closed-form cycle energetics.

The base model is an ideal capacitor ``c_main`` behind a series resistance
``r_series``.  A cycle charges at constant current ``i_c`` until the terminal
voltage reaches ``v_max``, discharges at ``-i_c`` down to ``v_min``, with
optional open-circuit rests in between.  Because the terminal voltage includes
the resistive drop, the capacitor itself swings between ``v_min + i*R`` and
``v_max - i*R``; every formula below follows from that picture.

All voltages are absolute volts; per-unit windows are converted explicitly via
:func:`window_to_volts`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import (
    ConfigError,
    LossesExceedDelivery,
    UnboundedCurrent,
    WindowTooNarrow,
)


@dataclass(frozen=True)
class Redistribution:
    """Parallel RC branch modelling charge redistribution in the electrode pores."""

    c_branch: float
    r_branch: float

    def __post_init__(self) -> None:
        if not self.c_branch > 0:
            raise ConfigError(f"redistribution.c_branch must be > 0, got {self.c_branch}")
        if not self.r_branch > 0:
            raise ConfigError(f"redistribution.r_branch must be > 0, got {self.r_branch}")


@dataclass(frozen=True)
class DeviceParams:
    """Equivalent-circuit parameters of one device.

    ``redistribution`` and ``r_leak`` extend the base series-RC model; both are
    optional and only exercised by the simulator (the closed forms are blind to
    them by construction).
    """

    c_main: float
    r_series: float
    v_rated: float
    redistribution: Redistribution | None = None
    r_leak: float | None = None

    def __post_init__(self) -> None:
        if not self.c_main > 0:
            raise ConfigError(f"device.c_main must be > 0, got {self.c_main}")
        if self.r_series < 0:
            raise ConfigError(f"device.r_series must be >= 0, got {self.r_series}")
        if not self.v_rated > 0:
            raise ConfigError(f"device.v_rated must be > 0, got {self.v_rated}")
        if self.r_leak is not None and not self.r_leak > 0:
            raise ConfigError(f"device.r_leak must be > 0 if present, got {self.r_leak}")


@dataclass(frozen=True)
class CycleSpec:
    """One test protocol: constant-current cycling over a voltage window."""

    i_c: float
    v_min: float
    v_max: float
    rest_after_charge: float = 0.0
    rest_after_discharge: float = 0.0
    max_cycles: int = 1
    steady_tolerance: float = 0.01

    def __post_init__(self) -> None:
        if not self.i_c > 0:
            raise ConfigError(f"spec.i_c must be > 0, got {self.i_c}")
        if self.v_min < 0:
            raise ConfigError(f"spec.v_min must be >= 0, got {self.v_min}")
        if not self.v_min < self.v_max:
            raise ConfigError(
                f"spec.v_min must be < spec.v_max, got {self.v_min} >= {self.v_max}"
            )
        if self.rest_after_charge < 0 or self.rest_after_discharge < 0:
            raise ConfigError("spec rest durations must be >= 0")
        if self.max_cycles < 1:
            raise ConfigError(f"spec.max_cycles must be >= 1, got {self.max_cycles}")
        if not 0 < self.steady_tolerance < 1:
            raise ConfigError(
                f"spec.steady_tolerance must lie in (0, 1), got {self.steady_tolerance}"
            )

    def validate_against(self, device: DeviceParams) -> None:
        """Cross-check the window against the device rating."""
        if self.v_max > device.v_rated:
            raise ConfigError(
                f"spec.v_max {self.v_max} exceeds device.v_rated {device.v_rated}"
            )


@dataclass(frozen=True)
class RestVoltages:
    """Open-circuit voltage movement during the two rests of a cycle.

    ``v_sd`` is the drop during the post-charge rest (self-discharge), ``v_sc``
    the rebound during the post-discharge rest (self-charge).
    """

    v_sd: float
    v_sc: float

    def __post_init__(self) -> None:
        if self.v_sd < 0 or self.v_sc < 0:
            raise ConfigError(
                f"rest voltages must be >= 0, got v_sd={self.v_sd}, v_sc={self.v_sc}"
            )


@dataclass(frozen=True)
class OperatingWindow:
    """Per-unit working-voltage window (fractions of the rated voltage)."""

    vm_pu: float
    vM_pu: float

    def __post_init__(self) -> None:
        if not 0 <= self.vm_pu < self.vM_pu <= 1:
            raise ConfigError(
                f"window must satisfy 0 <= vm_pu < vM_pu <= 1, got ({self.vm_pu}, {self.vM_pu})"
            )


def window_to_volts(window: OperatingWindow, v_rated: float) -> tuple[float, float]:
    """Convert a per-unit window to absolute (v_min, v_max) volts."""
    return window.vm_pu * v_rated, window.vM_pu * v_rated


def _require_feasible_window(p: DeviceParams, s: CycleSpec) -> float:
    """Return 2*i*R after checking the window can fit both resistive jumps."""
    drop = 2.0 * s.i_c * p.r_series
    if not s.v_max - s.v_min > drop:
        raise WindowTooNarrow(
            f"window {s.v_max - s.v_min:.6g} V cannot exceed the resistive drop "
            f"budget 2*i*R = {drop:.6g} V; widen the window or lower the current",
            min_window=drop,
        )
    return drop


def charge_duration(p: DeviceParams, s: CycleSpec) -> float:
    """Duration of the constant-current charge phase, in seconds.

    The capacitor runs from ``v_min + i*R`` to ``v_max - i*R`` at slope
    ``i/C``, hence ``C*(v_max - v_min - 2*i*R)/i``.  The steady-state
    discharge duration is identical (same swing, same current magnitude).
    """
    drop = _require_feasible_window(p, s)
    return p.c_main * (s.v_max - s.v_min - drop) / s.i_c


def efficiency_no_rest(p: DeviceParams, s: CycleSpec) -> float:
    """Round-trip energy efficiency of a rest-free steady cycle.

    Equals ``(v_max + v_min - 2*i*R) / (v_max + v_min + 2*i*R)``; the series
    resistance is the only loss element, so R = 0 gives exactly 1.
    """
    drop = _require_feasible_window(p, s)
    vsum = s.v_max + s.v_min
    return (vsum - drop) / (vsum + drop)


def efficiency_with_rest(p: DeviceParams, s: CycleSpec, rv: RestVoltages) -> float:
    """Round-trip efficiency when open-circuit rests move the voltage.

    Self-discharge ``v_sd`` must be re-supplied and the self-charge rebound
    ``v_sc`` is never delivered, so both enter as window-shift penalties:
    ``(v_max + v_min - v_sd - 2*i*R) / (v_max + v_min + v_sc + 2*i*R)``.
    Reduces to :func:`efficiency_no_rest` at ``rv = (0, 0)``.
    """
    drop = _require_feasible_window(p, s)
    vsum = s.v_max + s.v_min
    numerator = vsum - rv.v_sd - drop
    if not numerator > 0:
        raise LossesExceedDelivery(
            f"self-discharge {rv.v_sd:.6g} V plus resistive drop {drop:.6g} V "
            f"consume the whole window sum {vsum:.6g} V; nothing is delivered"
        )
    return numerator / (vsum + rv.v_sc + drop)


def energy_in(p: DeviceParams, s: CycleSpec) -> float:
    """Energy supplied during one steady charge phase, in joules.

    Mean terminal voltage during charge is ``(v_max + v_min)/2 + i*R``; times
    current and duration gives ``i*(v_max + v_min + 2*i*R)/2 * dt``.
    """
    drop = _require_feasible_window(p, s)
    dt = p.c_main * (s.v_max - s.v_min - drop) / s.i_c
    return s.i_c * (s.v_max + s.v_min + drop) / 2.0 * dt


def energy_out(p: DeviceParams, s: CycleSpec) -> float:
    """Energy delivered during one steady discharge phase, in joules."""
    drop = _require_feasible_window(p, s)
    dt = p.c_main * (s.v_max - s.v_min - drop) / s.i_c
    return s.i_c * (s.v_max + s.v_min - drop) / 2.0 * dt


def energy_in_with_rest(p: DeviceParams, s: CycleSpec, rv: RestVoltages) -> float:
    """Energy supplied per cycle when the post-discharge rest rebounds by v_sc.

    The rebound shortens nothing (the duration is set by the same window) but
    raises the mean charging voltage: ``i*(v_max + v_min + v_sc + 2*i*R)/2 * dt``.
    """
    drop = _require_feasible_window(p, s)
    dt = p.c_main * (s.v_max - s.v_min - drop) / s.i_c
    return s.i_c * (s.v_max + s.v_min + rv.v_sc + drop) / 2.0 * dt


def energy_out_with_rest(p: DeviceParams, s: CycleSpec, rv: RestVoltages) -> float:
    """Energy delivered per cycle when the post-charge rest sags by v_sd."""
    drop = _require_feasible_window(p, s)
    dt = p.c_main * (s.v_max - s.v_min - drop) / s.i_c
    numerator = s.v_max + s.v_min - rv.v_sd - drop
    if not numerator > 0:
        raise LossesExceedDelivery(
            f"self-discharge {rv.v_sd:.6g} V plus resistive drop {drop:.6g} V "
            f"consume the whole window sum {s.v_max + s.v_min:.6g} V"
        )
    return s.i_c * numerator / 2.0 * dt


def test_current(p: DeviceParams, target_eff: float, window: OperatingWindow) -> float:
    """Constant test current at which the window's round-trip efficiency hits a target.

    Inverts the no-rest efficiency expression:
    ``i = (v_max + v_min) * (1 - eta) / (2 * R * (1 + eta))``.
    """
    if not 0 < target_eff < 1:
        raise ConfigError(f"target_eff must lie in (0, 1), got {target_eff}")
    if p.r_series == 0:
        raise UnboundedCurrent(
            "series resistance is zero: every current meets the target; "
            "no finite test current exists"
        )
    v_min, v_max = window_to_volts(window, p.v_rated)
    return (v_max + v_min) * (1.0 - target_eff) / (2.0 * p.r_series * (1.0 + target_eff))


def usable_energy_fraction(window: OperatingWindow) -> float:
    """Fraction of the device's maximum stored energy swept by the window.

    Stored energy scales with voltage squared, so the share is
    ``vM_pu**2 - vm_pu**2``.
    """
    return window.vM_pu ** 2 - window.vm_pu ** 2
