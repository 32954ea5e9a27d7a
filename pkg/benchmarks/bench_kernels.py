"""Benchmark the phase-stepping kernel: JIT-compiled vs plain Python.

Runs the same two workloads through ``run_phase`` (numba-compiled unless
``CAPCYCLE_DISABLE_NUMBA`` is set or numba is missing) and
``run_phase_python`` (always interpreted), checks the outputs are
bit-identical, and reports throughput.

    python3 benchmarks/bench_kernels.py [--steps N]
"""

import argparse
import time

import numpy as np

from capcycle import preset
from capcycle._kernels import (
    MODE_CHARGE,
    MODE_FIXED,
    USING_NUMBA,
    run_phase,
    run_phase_python,
)
from capcycle.simulator import _discretize


def _workloads(total_steps):
    """Realistic coefficient sets from the calibrated 50F preset at dt=0.1 s."""
    p = preset("50F")
    (a11, a12), (a21, a22) = _discretize(p, 0.1)[0]
    b1, b2 = _discretize(p, 0.1)[1]
    yield (
        "rest relaxation (fixed length)",
        dict(
            v_main=2.66, v_branch=2.35,
            a11=a11, a12=a12, a21=a21, a22=a22,
            b1=b1 * 0.0, b2=b2 * 0.0,
            i_applied=0.0, r_series=p.r_series,
            mode=MODE_FIXED, v_stop=0.0, eps=1e-9,
            max_steps=total_steps, n_sub=1,
        ),
        1,
    )
    # full-window charge ramp, repeated to reach the step budget
    ramp_steps = 340
    yield (
        "charge ramp (voltage-terminated)",
        dict(
            v_main=0.035, v_branch=1.30,
            a11=a11, a12=a12, a21=a21, a22=a22,
            b1=b1 * 3.95, b2=b2 * 3.95,
            i_applied=3.95, r_series=p.r_series,
            mode=MODE_CHARGE, v_stop=2.7, eps=1e-9,
            max_steps=ramp_steps + 50, n_sub=1,
        ),
        max(1, total_steps // ramp_steps),
    )


def _drive(fn, kw, repeats, out_v, out_i):
    steps = 0
    k = 0
    for _ in range(repeats):
        if k + kw["max_steps"] > out_v.shape[0]:
            k = 0
        *_, n, k, _, _ = fn(
            kw["v_main"], kw["v_branch"],
            kw["a11"], kw["a12"], kw["a21"], kw["a22"], kw["b1"], kw["b2"],
            kw["i_applied"], kw["r_series"], kw["mode"], kw["v_stop"],
            kw["eps"], kw["max_steps"], kw["n_sub"], kw["n_sub"],
            out_v, out_i, k,
        )
        steps += n
    return steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2_000_000,
                    help="internal steps per workload (default 2e6)")
    args = ap.parse_args()

    print(f"numba kernel active: {USING_NUMBA}")
    if not USING_NUMBA:
        print("(run_phase is the plain-Python loop; expect a ~1x ratio)")

    for label, kw, repeats in _workloads(args.steps):
        buf_v = np.empty(args.steps + kw["max_steps"] + 1)
        buf_i = np.empty_like(buf_v)
        alt_v = np.empty_like(buf_v)
        alt_i = np.empty_like(buf_v)
        # trigger JIT compilation outside the timed region
        _drive(run_phase, kw, 1, buf_v, buf_i)

        t0 = time.perf_counter()
        n_jit = _drive(run_phase, kw, repeats, buf_v, buf_i)
        t_jit = time.perf_counter() - t0

        t0 = time.perf_counter()
        n_py = _drive(run_phase_python, kw, repeats, alt_v, alt_i)
        t_py = time.perf_counter() - t0

        assert n_jit == n_py
        assert np.array_equal(buf_v[:n_jit], alt_v[:n_py]), "kernel outputs differ"
        assert np.array_equal(buf_i[:n_jit], alt_i[:n_py])

        print(f"\n{label}: {n_jit} steps, outputs bit-identical")
        print(f"  run_phase        {n_jit / t_jit / 1e6:8.2f} Msteps/s  ({t_jit:.3f} s)")
        print(f"  run_phase_python {n_py / t_py / 1e6:8.2f} Msteps/s  ({t_py:.3f} s)")
        print(f"  ratio            {t_py / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
