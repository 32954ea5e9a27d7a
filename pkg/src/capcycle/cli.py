"""Command-line front end.

Subcommands: ``simulate`` (protocol run to trace + sidecar CSV), ``analyze``
(trace CSV to JSON report), ``map`` (efficiency grid to CSV + SVG),
``optimize`` (constrained window search to JSON), ``fit-selfdischarge``
(rest-voltage regression to JSON), ``iec-current`` (test current for a
target efficiency), and ``fixtures`` (export the embedded data tables).

Options may come from a ``--config`` JSON file (``schema_version`` 1, keys
named after the long flags); explicit command-line flags win.  Exit codes:
0 success, 2 configuration, 3 parse, 4 numeric, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fixtures
from .analyzer import analyze_trace
from .effmap import (
    ClosedFormObjective,
    GridMethod,
    RestPlan,
    build_grid,
    fit_self_discharge,
    optimize_window,
    render_map,
)
from .errors import CapcycleError, ConfigError, TraceParseError
from .model import (
    CycleSpec,
    DeviceParams,
    OperatingWindow,
    Redistribution,
    test_current,
)
from .presets import PRESET_NAMES, TEST_CURRENTS, preset
from .simulator import AcquisitionConfig, run_protocol
from .trace import (
    CycleBoundary,
    read_trace_csv,
    sidecar_path,
    write_sidecar_csv,
    write_trace_csv,
)

CONFIG_SCHEMA_VERSION = 1


def _load_config(path: str | None, allowed: set[str], command: str) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path}: top level must be a JSON object")
    version = doc.pop("schema_version", None)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"config {path}: schema_version must be {CONFIG_SCHEMA_VERSION}, "
            f"got {version!r}"
        )
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(
            f"config {path}: unknown keys for {command}: {sorted(unknown)}"
        )
    return doc


def _merged(args: argparse.Namespace, config: dict, key: str, default=None):
    """Flag value if given, else config value, else default."""
    flag = getattr(args, key.replace("-", "_"))
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _device_from_json(path: Path) -> DeviceParams:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"device file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"device file {path}: top level must be a JSON object")
    known = {"c_main", "r_series", "v_rated", "redistribution", "r_leak"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"device file {path}: unknown keys {sorted(unknown)}")
    redis = doc.get("redistribution")
    if redis is not None:
        if not isinstance(redis, dict) or set(redis) != {"c_branch", "r_branch"}:
            raise ConfigError(
                f"device file {path}: redistribution must be an object with "
                "c_branch and r_branch"
            )
        redis = Redistribution(
            c_branch=float(redis["c_branch"]), r_branch=float(redis["r_branch"])
        )
    try:
        return DeviceParams(
            c_main=float(doc["c_main"]),
            r_series=float(doc["r_series"]),
            v_rated=float(doc.get("v_rated", 2.7)),
            redistribution=redis,
            r_leak=None if doc.get("r_leak") is None else float(doc["r_leak"]),
        )
    except KeyError as exc:
        raise ConfigError(f"device file {path}: missing key {exc}") from exc


def _resolve_device(name_or_path: str, ideal: bool) -> DeviceParams:
    if name_or_path in PRESET_NAMES:
        return preset(name_or_path, ideal=ideal)
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(
            f"device {name_or_path!r} is neither a preset "
            f"({', '.join(PRESET_NAMES)}) nor an existing JSON file"
        )
    device = _device_from_json(path)
    if ideal:
        return DeviceParams(
            c_main=device.c_main, r_series=device.r_series, v_rated=device.v_rated
        )
    return device


def _default_current(args, config, device_name: str | None) -> float:
    current = _merged(args, config, "current")
    if current is not None:
        return float(current)
    if device_name in TEST_CURRENTS:
        return TEST_CURRENTS[device_name]
    raise ConfigError("--current is required unless --device names a preset")


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _json_doc(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


_SIMULATE_KEYS = {
    "device", "ideal", "current", "vmin", "vmax", "rest", "rest-high",
    "rest-low", "cycles", "steady-tol", "sample-period", "quantize", "out",
}


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _SIMULATE_KEYS, "simulate")
    device_name = _merged(args, config, "device", "10F")
    device = _resolve_device(device_name, bool(_merged(args, config, "ideal", False)))
    rest = float(_merged(args, config, "rest", 0.0))
    spec = CycleSpec(
        i_c=_default_current(args, config, device_name),
        v_min=float(_merged(args, config, "vmin", 0.0)),
        v_max=float(_merged(args, config, "vmax", device.v_rated)),
        rest_after_charge=float(_merged(args, config, "rest-high", rest)),
        rest_after_discharge=float(_merged(args, config, "rest-low", rest)),
        max_cycles=int(_merged(args, config, "cycles", 1)),
        steady_tolerance=float(_merged(args, config, "steady-tol", 0.01)),
    )
    acq = AcquisitionConfig(
        sample_period=float(_merged(args, config, "sample-period", 0.1)),
        quantize=bool(_merged(args, config, "quantize", False)),
    )
    out = _merged(args, config, "out")
    if out is None:
        raise ConfigError("simulate: --out trace path is required")
    trace = run_protocol(device, spec, acq)
    out = Path(out)
    write_trace_csv(trace, out)
    boundaries: list[CycleBoundary] = trace.meta["boundaries"]
    side = sidecar_path(out)
    write_sidecar_csv(boundaries, side)
    print(f"wrote {out} ({trace.t.size} samples, {spec.max_cycles} cycles)")
    print(f"wrote {side}")
    return 0


_ANALYZE_KEYS = {"trace", "out", "threshold-frac", "min-segment", "steady-tol"}


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _ANALYZE_KEYS, "analyze")
    trace_path = _merged(args, config, "trace")
    if trace_path is None:
        raise ConfigError("analyze: a trace CSV path is required")
    trace = read_trace_csv(trace_path)
    report = analyze_trace(
        trace,
        i_threshold_frac=float(_merged(args, config, "threshold-frac", 0.05)),
        min_segment=float(_merged(args, config, "min-segment", 1.0)),
        steady_tol=float(_merged(args, config, "steady-tol", 0.01)),
    )
    _write_or_print(report.to_json(), _merged(args, config, "out"))
    return 0


_MAP_KEYS = {
    "device", "ideal", "current", "method", "fixture", "rest", "levels",
    "sim-cycles", "out",
}


def cmd_map(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _MAP_KEYS, "map")
    out = _merged(args, config, "out")
    if out is None:
        raise ConfigError("map: --out file prefix is required")
    fixture = _merged(args, config, "fixture")
    device_name = _merged(args, config, "device", "100F")

    if fixture is not None:
        if fixture not in ("table2", "table4"):
            raise ConfigError(
                f"map: --fixture must be table2 or table4, got {fixture!r}"
            )
        if device_name not in fixtures.DEVICES:
            raise ConfigError(
                f"map: fixture grids need a preset device name, got {device_name!r}"
            )
        grid = fixtures.measured_grid(device_name, rest=fixture == "table4")
    else:
        device = _resolve_device(
            device_name, bool(_merged(args, config, "ideal", False))
        )
        method_name = str(_merged(args, config, "method", "closedform"))
        methods = {
            "closedform": GridMethod.CLOSED_FORM,
            "simulated": GridMethod.SIMULATED,
        }
        if method_name not in methods:
            raise ConfigError(
                f"map: --method must be closedform or simulated, got {method_name!r}"
            )
        rest_duration = _merged(args, config, "rest")
        rest = None
        if rest_duration is not None:
            model = fit_self_discharge(fixtures.load_rest_voltage_rows())
            rest = RestPlan(duration=float(rest_duration), model=model)
        levels = _merged(args, config, "levels")
        if levels is None:
            levels_tuple = None
        elif isinstance(levels, str):
            levels_tuple = tuple(float(x) for x in levels.split(","))
        else:
            levels_tuple = tuple(float(x) for x in levels)
        kwargs = {} if levels_tuple is None else {"levels": levels_tuple}
        grid = build_grid(
            device,
            _default_current(args, config, device_name),
            rest=rest,
            method=methods[method_name],
            sim_cycles=int(_merged(args, config, "sim-cycles", 20)),
            **kwargs,
        )
    csv_path, svg_path = render_map(grid, out)
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return 0


_OPTIMIZE_KEYS = {"device", "ideal", "current", "min-energy", "rest", "out"}


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _OPTIMIZE_KEYS, "optimize")
    min_energy = _merged(args, config, "min-energy")
    if min_energy is None:
        raise ConfigError("optimize: --min-energy fraction is required")
    device_name = _merged(args, config, "device", "100F")
    device = _resolve_device(device_name, bool(_merged(args, config, "ideal", True)))
    with_rest = bool(_merged(args, config, "rest", False))
    model = (
        fit_self_discharge(fixtures.load_rest_voltage_rows()) if with_rest else None
    )
    objective = ClosedFormObjective(
        device=device,
        i_c=_default_current(args, config, device_name),
        rest_model=model,
        rest=with_rest,
    )
    point = optimize_window(objective, float(min_energy))
    doc = point.to_dict()
    doc["rest"] = with_rest
    _write_or_print(_json_doc(doc), _merged(args, config, "out"))
    return 0


_FIT_KEYS = {"rows", "out"}


def _read_rest_rows(path: str) -> list[tuple[float, float, float, float]]:
    """Parse a rest-drift CSV shaped like the embedded table3 file."""
    rows = []
    for line_no, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceParseError(
                f"expected 5 columns (span_V, vm_V, vM_V, v_sd_mV, v_sc_mV), "
                f"got {len(parts)}",
                line_no=line_no,
            )
        try:
            vm, vM = float(parts[1]), float(parts[2])
            v_sd, v_sc = float(parts[3]) / 1000.0, float(parts[4]) / 1000.0
        except ValueError as exc:
            raise TraceParseError(str(exc), line_no=line_no) from exc
        rows.append((vm, vM, v_sd, v_sc))
    return rows


def cmd_fit_selfdischarge(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _FIT_KEYS, "fit-selfdischarge")
    rows_path = _merged(args, config, "rows")
    if rows_path is None:
        rows = fixtures.load_rest_voltage_rows()
        source = "embedded"
    else:
        rows = _read_rest_rows(rows_path)
        source = str(rows_path)
    model = fit_self_discharge(rows)
    doc = model.to_dict()
    doc["source"] = source
    _write_or_print(_json_doc(doc), _merged(args, config, "out"))
    return 0


_IEC_KEYS = {"r", "device", "target", "vmin-pu", "vmax-pu", "v-rated"}


def cmd_iec_current(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _IEC_KEYS, "iec-current")
    r = _merged(args, config, "r")
    device_name = _merged(args, config, "device")
    if (r is None) == (device_name is None):
        raise ConfigError("iec-current: give exactly one of --r or --device")
    if device_name is not None:
        device = _resolve_device(device_name, ideal=False)
    else:
        device = DeviceParams(
            c_main=1.0,  # capacitance does not enter the current inversion
            r_series=float(r),
            v_rated=float(_merged(args, config, "v-rated", 2.7)),
        )
    window = OperatingWindow(
        vm_pu=float(_merged(args, config, "vmin-pu", 0.0)),
        vM_pu=float(_merged(args, config, "vmax-pu", 1.0)),
    )
    current = test_current(device, float(_merged(args, config, "target", 0.95)), window)
    print(f"{current:.9g}")
    return 0


def cmd_fixtures(args: argparse.Namespace) -> int:
    for path in fixtures.export_all(args.out_dir):
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capcycle",
        description="supercapacitor cycling efficiency workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a cycling protocol to a trace CSV")
    _add_config(p)
    p.add_argument("--device", help="preset name (10F/50F/100F) or device JSON file")
    p.add_argument("--ideal", action="store_true", default=None,
                   help="strip redistribution and leakage from the device")
    p.add_argument("--current", type=float, help="test current in A")
    p.add_argument("--vmin", type=float, help="lower voltage limit in V")
    p.add_argument("--vmax", type=float, help="upper voltage limit in V")
    p.add_argument("--rest", type=float, help="rest after each phase in s")
    p.add_argument("--rest-high", type=float, help="rest after charge in s")
    p.add_argument("--rest-low", type=float, help="rest after discharge in s")
    p.add_argument("--cycles", type=int, help="number of cycles (default 1)")
    p.add_argument("--steady-tol", type=float, help="charge-balance tolerance")
    p.add_argument("--sample-period", type=float, help="acquisition period in s")
    p.add_argument("--quantize", action="store_true", default=None,
                   help="apply acquisition quantization")
    p.add_argument("--out", help="trace CSV path (sidecar written alongside)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="analyze a trace CSV into a JSON report")
    _add_config(p)
    p.add_argument("trace", nargs="?", help="trace CSV path")
    p.add_argument("--threshold-frac", type=float,
                   help="active-current threshold as a fraction of max |i|")
    p.add_argument("--min-segment", type=float,
                   help="shortest believable phase duration in s")
    p.add_argument("--steady-tol", type=float, help="charge-balance tolerance")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("map", help="build an efficiency grid; write CSV + SVG")
    _add_config(p)
    p.add_argument("--device", help="preset name or device JSON file")
    p.add_argument("--ideal", action="store_true", default=None)
    p.add_argument("--current", type=float)
    p.add_argument("--method", choices=("closedform", "simulated"))
    p.add_argument("--fixture", choices=("table2", "table4"),
                   help="render an embedded measured surface instead")
    p.add_argument("--rest", type=float,
                   help="rest duration in s; enables the with-rest model")
    p.add_argument("--levels", help="comma-separated per-unit grid levels")
    p.add_argument("--sim-cycles", type=int)
    p.add_argument("--out", help="output file prefix")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("optimize", help="best window meeting an energy floor")
    _add_config(p)
    p.add_argument("--device", help="preset name or device JSON file")
    p.add_argument("--ideal", action="store_true", default=None)
    p.add_argument("--current", type=float)
    p.add_argument("--min-energy", type=float,
                   help="required usable-energy fraction in (0, 1]")
    p.add_argument("--rest", action="store_true", default=None,
                   help="optimize the with-rest model (fitted from embedded data)")
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("fit-selfdischarge",
                       help="fit the linear rest-voltage model")
    _add_config(p)
    p.add_argument("--rows", help="rest-drift CSV (default: embedded data)")
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_fit_selfdischarge)

    p = sub.add_parser("iec-current",
                       help="test current that yields a target efficiency")
    _add_config(p)
    p.add_argument("--r", type=float, help="series resistance in ohms")
    p.add_argument("--device", help="preset name or device JSON file")
    p.add_argument("--target", type=float, help="target efficiency (default 0.95)")
    p.add_argument("--vmin-pu", type=float, help="window lower bound (default 0)")
    p.add_argument("--vmax-pu", type=float, help="window upper bound (default 1)")
    p.add_argument("--v-rated", type=float,
                   help="rated voltage when --r is given (default 2.7)")
    p.set_defaults(func=cmd_iec_current)

    p = sub.add_parser("fixtures", help="export the embedded data tables")
    p.add_argument("out_dir", help="destination directory")
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapcycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
