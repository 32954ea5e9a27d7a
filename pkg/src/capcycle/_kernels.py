"""Inner stepping loop of the protocol simulator.

The circuit state advances by an exact two-state linear recurrence whose
coefficients are precomputed per (phase current, step size); the loop itself is
therefore pure scalar arithmetic and is the package's hot spot (1e5-1e6 steps
per protocol run).  When numba is importable and the environment variable
``CAPCYCLE_DISABLE_NUMBA`` is unset, the loop is JIT-compiled; otherwise the
very same Python function runs uninterpreted.  ``run_phase_python`` is always
the plain-Python version, kept available for equivalence tests and the
benchmark in ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os

DISABLE_ENV = "CAPCYCLE_DISABLE_NUMBA"

# Phase-loop modes.
MODE_CHARGE = 0      # terminate when terminal voltage rises to v_stop
MODE_DISCHARGE = 1   # terminate when terminal voltage falls to v_stop
MODE_FIXED = 2       # run exactly max_steps (rest phases)


def _phase_loop(
    v_main,
    v_branch,
    a11,
    a12,
    a21,
    a22,
    b1,
    b2,
    i_applied,
    r_series,
    mode,
    v_stop,
    eps,
    max_steps,
    n_sub,
    countdown,
    out_v,
    out_i,
    out_start,
):
    """Advance one protocol phase; write samples every ``n_sub`` internal steps.

    The state update is ``x+ = Ad x + bd`` with ``bd`` already scaled by the
    phase current.  A sample is the terminal voltage ``v_main + i*R`` carrying
    the current of the internal step that ends on the sample instant; the
    termination test runs after each step (and after any sample write), so the
    crossing sample still carries the active current.

    Returns ``(v_main, v_branch, steps, out_next, countdown, crossed)``;
    ``steps == -1`` signals output-capacity exhaustion (caller grows buffers
    and retries from the saved state).
    """
    k = out_start
    cap = out_v.shape[0]
    steps = 0
    crossed = False
    while steps < max_steps:
        vm_new = a11 * v_main + a12 * v_branch + b1
        vb_new = a21 * v_main + a22 * v_branch + b2
        v_main = vm_new
        v_branch = vb_new
        steps += 1
        countdown -= 1
        if countdown == 0:
            if k >= cap:
                return v_main, v_branch, -1, k, countdown, False
            out_v[k] = v_main + i_applied * r_series
            out_i[k] = i_applied
            k += 1
            countdown = n_sub
        if mode == MODE_CHARGE:
            if v_main + i_applied * r_series >= v_stop - eps:
                crossed = True
                break
        elif mode == MODE_DISCHARGE:
            if v_main + i_applied * r_series <= v_stop + eps:
                crossed = True
                break
    return v_main, v_branch, steps, k, countdown, crossed


run_phase_python = _phase_loop

USING_NUMBA = False
if not os.environ.get(DISABLE_ENV):
    try:
        import numba

        run_phase = numba.njit(cache=True)(_phase_loop)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        run_phase = _phase_loop
else:
    run_phase = _phase_loop
