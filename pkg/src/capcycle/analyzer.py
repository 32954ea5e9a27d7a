"""Trace analysis: segmentation, per-cycle metrics, steady state, identification.

Integration convention: the interval between consecutive samples belongs to
the segment of its **right** endpoint, because each sample carries the current
of the step that ends on it.  Segment energy is then
``sum (v[k-1]+v[k])/2 * i[k] * dt`` (trapezoidal in voltage, exact for
piecewise-constant current) and charge is ``sum |i[k]| * dt``.  Slicing the
trapezoids strictly inside each segment instead would drop one boundary
interval per phase and bias the recovered efficiency by several tenths of a
percentage point at a 0.1 s sample period.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    InsufficientData,
    MalformedProtocol,
    NoCyclesFound,
    NoJumpFound,
)
from .simulator import Phase
from .trace import Trace

logger = logging.getLogger(__name__)

_ACTIVE = (Phase.CHARGE, Phase.DISCHARGE)
_RESTS = (Phase.REST_HIGH, Phase.REST_LOW)


@dataclass(frozen=True)
class Segment:
    """One protocol phase located in the trace (boundary voltages included)."""

    kind: Phase
    first_index: int
    last_index: int
    v_start: float
    v_end: float
    t_start: float
    t_end: float


@dataclass(frozen=True)
class CycleMetrics:
    cycle_index: int
    q_in: float
    q_out: float
    e_in: float
    e_out: float
    t_charge: float
    t_discharge: float
    v_sd: float
    v_sc: float
    eta: float
    loss_charge: float
    loss_rest: float
    loss_discharge: float


@dataclass(frozen=True)
class Estimate:
    """An identified parameter with spread over its individual estimates."""

    value: float
    stdev: float
    n: int


@dataclass(frozen=True)
class SteadyReport:
    steady_from_cycle: int | None
    window: tuple[int, int]
    window_rule: str
    mean: CycleMetrics
    per_cycle: list[CycleMetrics]
    never_steady: bool


@dataclass
class AnalysisReport:
    """Full result of :func:`analyze_trace`, serializable to JSON."""

    segments: list[Segment]
    steady: SteadyReport
    r_series: Estimate | None
    c_main: Estimate | None
    sample_period: float
    n_samples: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def est(e: Estimate | None):
            if e is None:
                return None
            return {"value": e.value, "stdev": e.stdev, "n": e.n}

        def metrics(m: CycleMetrics) -> dict:
            return {
                "cycle_index": m.cycle_index,
                "q_in_C": m.q_in,
                "q_out_C": m.q_out,
                "e_in_J": m.e_in,
                "e_out_J": m.e_out,
                "t_charge_s": m.t_charge,
                "t_discharge_s": m.t_discharge,
                "v_sd_V": m.v_sd,
                "v_sc_V": m.v_sc,
                "eta": m.eta,
                "loss_charge_J": m.loss_charge,
                "loss_rest_J": m.loss_rest,
                "loss_discharge_J": m.loss_discharge,
            }

        return {
            "schema_version": 1,
            "n_samples": self.n_samples,
            "sample_period_s": self.sample_period,
            "segments": [
                {
                    "kind": s.kind.value,
                    "first_index": s.first_index,
                    "last_index": s.last_index,
                    "t_start_s": s.t_start,
                    "t_end_s": s.t_end,
                    "v_start_V": s.v_start,
                    "v_end_V": s.v_end,
                }
                for s in self.segments
            ],
            "cycles": [metrics(m) for m in self.steady.per_cycle],
            "steady": {
                "steady_from_cycle": self.steady.steady_from_cycle,
                "window_first": self.steady.window[0],
                "window_last": self.steady.window[1],
                "window_rule": self.steady.window_rule,
                "never_steady": self.steady.never_steady,
                "mean": metrics(self.steady.mean),
            },
            "identification": {
                "r_series_ohm": est(self.r_series),
                "c_main_F": est(self.c_main),
            },
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def segment(
    trace: Trace, i_threshold_frac: float = 0.05, min_segment: float = 1.0
) -> list[Segment]:
    """Split the trace into charge/rest/discharge segments by current threshold.

    Samples whose |current| exceeds ``i_threshold_frac`` of the trace maximum
    are active (sign decides charge vs discharge); the rest are rests, labeled
    high or low by the adjacent active phase.  Runs shorter than
    ``min_segment`` seconds are merged into their predecessor (successor for a
    run at the very start), which absorbs acquisition glitches.
    """
    if not 0 < i_threshold_frac < 0.5:
        raise ConfigError(
            f"i_threshold_frac must lie in (0, 0.5), got {i_threshold_frac}"
        )
    if min_segment < 0:
        raise ConfigError(f"min_segment must be >= 0, got {min_segment}")
    i = trace.i
    t = trace.t
    i_max = float(np.max(np.abs(i))) if i.size else 0.0
    if i_max == 0.0:
        raise NoCyclesFound("no active samples: the current is identically zero")
    thr = i_threshold_frac * i_max
    labels = np.zeros(i.size, dtype=np.int8)
    labels[i > thr] = 1
    labels[i < -thr] = -1

    # Runs of identical labels as (label, first, last) with inclusive indices.
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [labels.size - 1]))
    runs: list[tuple[int, int, int]] = [
        (int(labels[a]), int(a), int(b)) for a, b in zip(starts, ends)
    ]

    def _coalesce(rs: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
        out = [rs[0]]
        for lab, a, b in rs[1:]:
            plab, pa, pb = out[-1]
            if lab == plab:
                out[-1] = (plab, pa, b)
            else:
                out.append((lab, a, b))
        return out

    dt = trace.sample_period
    while len(runs) > 1:
        for j, (lab, a, b) in enumerate(runs):
            if (b - a + 1) * dt < min_segment - 1e-12:
                donor = runs[j - 1][0] if j > 0 else runs[j + 1][0]
                runs[j] = (donor, a, b)
                runs = _coalesce(runs)
                break
        else:
            break

    if not any(lab != 0 for lab, _, _ in runs):
        raise NoCyclesFound(
            "no active samples survive thresholding and minimum-duration merging"
        )

    # Rests take their identity from the neighbouring active phase.
    kinds: list[Phase] = []
    for j, (lab, a, b) in enumerate(runs):
        if lab == 1:
            kinds.append(Phase.CHARGE)
        elif lab == -1:
            kinds.append(Phase.DISCHARGE)
        else:
            prev_active = next(
                (runs[k][0] for k in range(j - 1, -1, -1) if runs[k][0] != 0), None
            )
            if prev_active is not None:
                kinds.append(Phase.REST_HIGH if prev_active == 1 else Phase.REST_LOW)
            else:
                next_active = next(
                    (runs[k][0] for k in range(j + 1, len(runs)) if runs[k][0] != 0)
                )
                # A rest that precedes a charge is a low rest, and vice versa.
                kinds.append(Phase.REST_LOW if next_active == 1 else Phase.REST_HIGH)

    active_kinds = [
        (kind, runs[j][1]) for j, kind in enumerate(kinds) if kind in _ACTIVE
    ]
    for (k1, _), (k2, idx2) in zip(active_kinds, active_kinds[1:]):
        if k1 == k2:
            raise MalformedProtocol(
                f"consecutive {k1.value} phases without the opposite phase between",
                boundary_index=idx2,
            )

    v = trace.v
    return [
        Segment(
            kind=kind,
            first_index=a,
            last_index=b,
            v_start=float(v[a]),
            v_end=float(v[b]),
            t_start=float(t[a]),
            t_end=float(t[b]),
        )
        for kind, (_, a, b) in zip(kinds, runs)
    ]


def _segment_energy_charge(trace: Trace, seg: Segment) -> tuple[float, float]:
    """(signed energy, unsigned charge) of one segment under right-endpoint attribution."""
    a, b = seg.first_index, seg.last_index
    k = np.arange(max(a, 1), b + 1)
    if k.size == 0:
        return 0.0, 0.0
    dt = trace.sample_period
    v, i = trace.v, trace.i
    energy = float(np.sum((v[k - 1] + v[k]) * 0.5 * i[k]) * dt)
    charge = float(np.sum(np.abs(i[k])) * dt)
    return energy, charge


@dataclass
class _Cycle:
    charge: Segment
    rest_high: Segment | None = None
    discharge: Segment | None = None
    rest_low: Segment | None = None


def _group_cycles(segments: list[Segment]) -> tuple[list[_Cycle], list[str]]:
    cycles: list[_Cycle] = []
    warnings: list[str] = []
    current: _Cycle | None = None
    leading = 0
    for seg in segments:
        if seg.kind is Phase.CHARGE:
            if current is not None:
                if current.discharge is None:
                    warnings.append(
                        f"cycle starting at t={current.charge.t_start:g}s has no "
                        "discharge phase; excluded"
                    )
                else:
                    cycles.append(current)
            current = _Cycle(charge=seg)
        elif current is None:
            leading += 1
        elif seg.kind is Phase.REST_HIGH:
            current.rest_high = seg
        elif seg.kind is Phase.DISCHARGE:
            current.discharge = seg
        elif seg.kind is Phase.REST_LOW:
            current.rest_low = seg
    if current is not None:
        if current.discharge is None:
            warnings.append(
                f"cycle starting at t={current.charge.t_start:g}s has no "
                "discharge phase; excluded"
            )
        else:
            cycles.append(current)
    if leading:
        warnings.append(
            f"{leading} segment(s) before the first charge phase ignored"
        )
    for w in warnings:
        logger.warning(w)
    return cycles, warnings


def cycle_metrics(
    trace: Trace,
    segments: list[Segment],
    c_est: float | None = None,
    r_est: float | None = None,
) -> list[CycleMetrics]:
    """Per-cycle charges, energies, rest voltages, efficiency, loss breakdown.

    The loss split is balance-exact by construction: rest losses use the
    stored-energy drop ``0.5*C*(v_start^2 - v_end^2)`` when a capacitance
    estimate is available, and the remaining ``e_in - e_out`` is apportioned
    between charge and discharge by their resistive-dissipation share (or by
    duration when no resistance estimate exists).
    """
    grouped, _ = _group_cycles(segments)
    out: list[CycleMetrics] = []
    dt = trace.sample_period
    for n, cyc in enumerate(grouped, start=1):
        e_in, q_in = _segment_energy_charge(trace, cyc.charge)
        e_dis, q_out = _segment_energy_charge(trace, cyc.discharge)
        e_out = -e_dis
        t_charge = (cyc.charge.last_index - cyc.charge.first_index + 1) * dt
        t_discharge = (cyc.discharge.last_index - cyc.discharge.first_index + 1) * dt
        v_sd = cyc.rest_high.v_start - cyc.rest_high.v_end if cyc.rest_high else 0.0
        v_sc = cyc.rest_low.v_end - cyc.rest_low.v_start if cyc.rest_low else 0.0
        eta = e_out / e_in if e_in > 0 else float("nan")

        total_loss = e_in - e_out
        rests = [s for s in (cyc.rest_high, cyc.rest_low) if s is not None]
        if rests and c_est is not None:
            loss_rest = sum(
                0.5 * c_est * (s.v_start**2 - s.v_end**2) for s in rests
            )
            remainder = total_loss - loss_rest
            if r_est is not None:
                w_c = _dissipation_weight(trace, cyc.charge)
                w_d = _dissipation_weight(trace, cyc.discharge)
            else:
                w_c, w_d = t_charge, t_discharge
            loss_charge = remainder * w_c / (w_c + w_d)
            loss_discharge = remainder - loss_charge
        elif rests:
            t_rest = sum(
                (s.last_index - s.first_index + 1) * dt for s in rests
            )
            w_sum = t_charge + t_discharge + t_rest
            loss_charge = total_loss * t_charge / w_sum
            loss_rest = total_loss * t_rest / w_sum
            loss_discharge = total_loss - loss_charge - loss_rest
        else:
            if r_est is not None:
                w_c = _dissipation_weight(trace, cyc.charge)
                w_d = _dissipation_weight(trace, cyc.discharge)
            else:
                w_c, w_d = t_charge, t_discharge
            loss_rest = 0.0
            loss_charge = total_loss * w_c / (w_c + w_d)
            loss_discharge = total_loss - loss_charge

        out.append(
            CycleMetrics(
                cycle_index=n,
                q_in=q_in,
                q_out=q_out,
                e_in=e_in,
                e_out=e_out,
                t_charge=t_charge,
                t_discharge=t_discharge,
                v_sd=v_sd,
                v_sc=v_sc,
                eta=eta,
                loss_charge=loss_charge,
                loss_rest=loss_rest,
                loss_discharge=loss_discharge,
            )
        )
    return out


def _dissipation_weight(trace: Trace, seg: Segment) -> float:
    a, b = seg.first_index, seg.last_index
    k = np.arange(max(a, 1), b + 1)
    return float(np.sum(trace.i[k] ** 2) * trace.sample_period)


def detect_steady(per_cycle: list[CycleMetrics], tol: float = 0.01) -> SteadyReport:
    """Locate the steady regime and average the reporting window.

    Steady-from is the first cycle whose charge imbalance ``|q_in-q_out|/q_in``
    stays below ``tol`` for it and every later cycle.  The averaging window is
    cycles 17-20 whenever at least 20 cycles exist (the campaign convention),
    otherwise the last up-to-4 steady cycles; a never-steady trace falls back
    to the last 4 cycles and is flagged.
    """
    n = len(per_cycle)
    if n < 2:
        raise InsufficientData(f"steady detection needs >= 2 cycles, got {n}")
    if not 0 < tol < 1:
        raise ConfigError(f"tol must lie in (0, 1), got {tol}")
    ok = [abs(m.q_in - m.q_out) / m.q_in < tol if m.q_in > 0 else False
          for m in per_cycle]
    steady_from: int | None = None
    for c in range(n, 0, -1):
        if ok[c - 1]:
            steady_from = c
        else:
            break

    if n >= 20:
        window = (17, 20)
        rule = "cycles-17-20"
    elif steady_from is not None:
        window = (max(steady_from, n - 3), n)
        rule = "last-steady-cycles"
    else:
        window = (max(1, n - 3), n)
        rule = "never-steady-fallback"

    sel = per_cycle[window[0] - 1 : window[1]]
    mean = CycleMetrics(
        cycle_index=0,
        q_in=float(np.mean([m.q_in for m in sel])),
        q_out=float(np.mean([m.q_out for m in sel])),
        e_in=float(np.mean([m.e_in for m in sel])),
        e_out=float(np.mean([m.e_out for m in sel])),
        t_charge=float(np.mean([m.t_charge for m in sel])),
        t_discharge=float(np.mean([m.t_discharge for m in sel])),
        v_sd=float(np.mean([m.v_sd for m in sel])),
        v_sc=float(np.mean([m.v_sc for m in sel])),
        eta=float(np.mean([m.eta for m in sel])),
        loss_charge=float(np.mean([m.loss_charge for m in sel])),
        loss_rest=float(np.mean([m.loss_rest for m in sel])),
        loss_discharge=float(np.mean([m.loss_discharge for m in sel])),
    )
    return SteadyReport(
        steady_from_cycle=steady_from,
        window=window,
        window_rule=rule,
        mean=mean,
        per_cycle=list(per_cycle),
        never_steady=steady_from is None,
    )


def identify_resistance(trace: Trace, segments: list[Segment]) -> Estimate:
    """Series resistance from the voltage jump at each current interruption.

    At every charge-to-rest and discharge-to-rest boundary the estimate is
    ``|v(last active sample) - v(first rest sample)| / |i(last active sample)|``;
    the first rest sample sits one sample period after the interruption, so
    each individual estimate carries a capacitive-drift bias of order
    ``i * sample_period / C`` (reflected in the returned spread, not removed).
    """
    values = []
    for prev, nxt in zip(segments, segments[1:]):
        if prev.kind in _ACTIVE and nxt.kind in _RESTS:
            k_a, k_r = prev.last_index, nxt.first_index
            i_a = trace.i[k_a]
            if i_a == 0:
                continue
            values.append(abs(trace.v[k_a] - trace.v[k_r]) / abs(i_a))
    if not values:
        raise NoJumpFound(
            "no active-to-rest transition in the trace; resistance identification "
            "needs rests after charge or discharge"
        )
    arr = np.array(values)
    return Estimate(value=float(arr.mean()), stdev=float(arr.std()), n=arr.size)


def identify_capacitance(trace: Trace, segments: list[Segment]) -> Estimate:
    """Main capacitance from the constant-current voltage ramp slope.

    Fits v(t) on the central 80% of each active segment (edges excluded to
    avoid the interruption jumps) and converts via ``C = i / slope``.
    Segments shorter than 10 samples are skipped.
    """
    values = []
    for seg in segments:
        if seg.kind not in _ACTIVE:
            continue
        n_seg = seg.last_index - seg.first_index + 1
        if n_seg < 10:
            continue
        margin = max(1, round(0.1 * n_seg))
        lo = seg.first_index + margin
        hi = seg.last_index - margin
        if hi - lo + 1 < 2:
            continue
        sl = slice(lo, hi + 1)
        slope = np.polyfit(trace.t[sl], trace.v[sl], 1)[0]
        if abs(slope) < 1e-15:
            continue
        i_mean = float(np.mean(np.abs(trace.i[sl])))
        values.append(i_mean / abs(slope))
    if not values:
        raise InsufficientData(
            "no active segment long enough (>= 10 samples) for a slope fit"
        )
    arr = np.array(values)
    return Estimate(value=float(arr.mean()), stdev=float(arr.std()), n=arr.size)


def analyze_trace(
    trace: Trace,
    i_threshold_frac: float = 0.05,
    min_segment: float = 1.0,
    steady_tol: float = 0.01,
) -> AnalysisReport:
    """Full pipeline: segment, identify parameters, per-cycle metrics, steady report.

    Identification runs on the segments of steady cycles only (located by a
    preliminary charge-balance pass), so early transient cycles cannot skew
    the estimates; when identification is impossible the report carries null
    entries plus a warning instead of failing.
    """
    trace.validate()
    segs = segment(trace, i_threshold_frac, min_segment)
    grouped, warnings = _group_cycles(segs)
    if not grouped:
        raise NoCyclesFound("no complete charge-discharge cycle in the trace")

    balances = []
    for cyc in grouped:
        _, q_in = _segment_energy_charge(trace, cyc.charge)
        _, q_out = _segment_energy_charge(trace, cyc.discharge)
        balances.append(abs(q_in - q_out) / q_in if q_in > 0 else np.inf)
    steady0: int | None = None
    for c in range(len(balances), 0, -1):
        if balances[c - 1] < steady_tol:
            steady0 = c
        else:
            break

    if steady0 is None:
        steady_cycles = grouped
    else:
        steady_cycles = grouped[steady0 - 1 :]
    steady_segs = [
        s
        for cyc in steady_cycles
        for s in (cyc.charge, cyc.rest_high, cyc.discharge, cyc.rest_low)
        if s is not None
    ]

    try:
        r_est = identify_resistance(trace, steady_segs)
    except NoJumpFound as exc:
        r_est = None
        warnings.append(f"resistance not identified: {exc}")
    try:
        c_est = identify_capacitance(trace, steady_segs)
    except InsufficientData as exc:
        c_est = None
        warnings.append(f"capacitance not identified: {exc}")

    metrics = cycle_metrics(
        trace,
        segs,
        c_est=c_est.value if c_est else None,
        r_est=r_est.value if r_est else None,
    )
    steady = detect_steady(metrics, steady_tol)
    return AnalysisReport(
        segments=segs,
        steady=steady,
        r_series=r_est,
        c_main=c_est,
        sample_period=trace.sample_period,
        n_samples=len(trace),
        warnings=warnings,
    )
