"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 = configuration/validation, 3 = trace parsing, 4 = numeric/domain,
5 = I/O (plain OSError, mapped at the CLI boundary).
"""

from __future__ import annotations


class CapcycleError(Exception):
    """Base class for all capcycle errors."""

    exit_code = 1


class ConfigError(CapcycleError):
    """Invalid configuration or parameter value (message names the field path)."""

    exit_code = 2


class TraceParseError(CapcycleError):
    """Malformed trace file; ``line_no`` is the 1-based offending line."""

    exit_code = 3

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class NumericError(CapcycleError):
    """Domain/numeric failures: a computation has no valid result."""

    exit_code = 4


class WindowTooNarrow(NumericError):
    """Voltage window smaller than the resistive drop budget 2*i*R.

    ``min_window`` is the smallest feasible (v_max - v_min) for the inputs.
    """

    def __init__(self, message: str, min_window: float):
        super().__init__(message)
        self.min_window = min_window


class LossesExceedDelivery(NumericError):
    """Rest losses plus resistive drops leave no deliverable energy."""


class UnboundedCurrent(NumericError):
    """Target efficiency cannot pin a current when series resistance is zero."""


class DynamicsDiverged(NumericError):
    """Simulated state left the guard band or failed to terminate."""


class NoCyclesFound(NumericError):
    """Trace contains no active (charge/discharge) samples."""


class MalformedProtocol(NumericError):
    """Segment sequence does not alternate charge/discharge correctly.

    ``boundary_index`` is the first sample index of the offending segment.
    """

    def __init__(self, message: str, boundary_index: int):
        super().__init__(f"{message} (at sample index {boundary_index})")
        self.boundary_index = boundary_index


class NoJumpFound(NumericError):
    """No active-to-rest transition available for resistance identification."""


class InsufficientData(NumericError):
    """Not enough usable samples/segments for an identification."""


class RankDeficientFit(NumericError):
    """Regression inputs do not span the fitted parameter space."""


class InfeasibleEnergyRequirement(NumericError):
    """No operating window can satisfy the requested energy fraction."""
