"""Uniform (time, voltage, current) traces and their on-disk formats.

Trace CSV contract: UTF-8, LF line endings, header ``t_s,v_V,i_A``, one sample
per line, plain decimal point, every field rendered with at most 9 significant
digits.  Writing is deterministic: the same trace always produces the same
bytes.  The optional sidecar ``<basename>.cycles.csv`` lists ground-truth phase
boundaries with header ``cycle,phase,t_start_s,t_end_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TraceParseError

TRACE_HEADER = "t_s,v_V,i_A"
SIDECAR_HEADER = "cycle,phase,t_start_s,t_end_s"

# Sign convention: i > 0 charges the device.


@dataclass
class Trace:
    """Uniformly sampled terminal voltage and applied current."""

    t: np.ndarray
    v: np.ndarray
    i: np.ndarray
    sample_period: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.i = np.asarray(self.i, dtype=np.float64)

    def __len__(self) -> int:
        return self.t.size

    def validate(self) -> None:
        if not (self.t.size == self.v.size == self.i.size):
            raise TraceParseError("t, v, i arrays differ in length")
        if self.t.size < 2:
            raise TraceParseError("trace needs at least 2 samples")
        for name, arr in (("t", self.t), ("v", self.v), ("i", self.i)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise TraceParseError(f"non-finite {name} value at sample {bad}")
        dt = np.diff(self.t)
        if not np.all(dt > 0):
            bad = int(np.flatnonzero(dt <= 0)[0]) + 1
            raise TraceParseError(f"time not strictly increasing at sample {bad}")
        if np.max(np.abs(dt - self.sample_period)) > 1e-6 * self.sample_period:
            bad = int(np.argmax(np.abs(dt - self.sample_period))) + 1
            raise TraceParseError(
                f"non-uniform sampling at sample {bad}: spacing {dt[bad - 1]!r} "
                f"vs period {self.sample_period!r}"
            )


@dataclass(frozen=True)
class CycleBoundary:
    """One ground-truth phase interval, as emitted by the simulator."""

    cycle: int
    phase: str
    t_start: float
    t_end: float


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_trace_csv(trace: Trace, path: str | Path) -> Path:
    """Write the trace in the canonical CSV format; returns the path."""
    path = Path(path)
    lines = [TRACE_HEADER]
    lines.extend(
        f"{_fmt(t)},{_fmt(v)},{_fmt(i)}"
        for t, v, i in zip(trace.t, trace.v, trace.i)
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def read_trace_csv(path: str | Path) -> Trace:
    """Parse and validate a trace CSV; errors carry the offending line number."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != TRACE_HEADER:
            raise TraceParseError(
                f"expected header {TRACE_HEADER!r}, got {header!r}", line_no=1
            )
        t_list: list[float] = []
        v_list: list[float] = []
        i_list: list[float] = []
        for line_no, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise TraceParseError(
                    f"expected 3 comma-separated fields, got {len(parts)}",
                    line_no=line_no,
                )
            try:
                t, v, i = (float(p) for p in parts)
            except ValueError:
                raise TraceParseError(f"unparseable number in {line!r}", line_no=line_no)
            if not (math.isfinite(t) and math.isfinite(v) and math.isfinite(i)):
                raise TraceParseError("non-finite value", line_no=line_no)
            t_list.append(t)
            v_list.append(v)
            i_list.append(i)
    if len(t_list) < 2:
        raise TraceParseError("trace needs at least 2 samples")
    t_arr = np.array(t_list)
    period = float(t_arr[1] - t_arr[0])
    trace = Trace(t=t_arr, v=np.array(v_list), i=np.array(i_list), sample_period=period)
    trace.validate()
    trace.meta["source"] = str(path)
    return trace


def sidecar_path(trace_path: str | Path) -> Path:
    trace_path = Path(trace_path)
    return trace_path.with_name(trace_path.stem + ".cycles.csv")


def write_sidecar_csv(boundaries: list[CycleBoundary], path: str | Path) -> Path:
    path = Path(path)
    lines = [SIDECAR_HEADER]
    lines.extend(
        f"{b.cycle},{b.phase},{_fmt(b.t_start)},{_fmt(b.t_end)}" for b in boundaries
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def read_sidecar_csv(path: str | Path) -> list[CycleBoundary]:
    path = Path(path)
    out: list[CycleBoundary] = []
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != SIDECAR_HEADER:
            raise TraceParseError(
                f"expected header {SIDECAR_HEADER!r}, got {header!r}", line_no=1
            )
        for line_no, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TraceParseError(
                    f"expected 4 comma-separated fields, got {len(parts)}",
                    line_no=line_no,
                )
            try:
                out.append(
                    CycleBoundary(
                        cycle=int(parts[0]),
                        phase=parts[1],
                        t_start=float(parts[2]),
                        t_end=float(parts[3]),
                    )
                )
            except ValueError:
                raise TraceParseError(f"unparseable field in {line!r}", line_no=line_no)
    return out
