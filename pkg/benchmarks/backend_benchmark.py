"""Timing comparison between the compiled kernels and the pure fallback.

Run as ``python benchmarks/backend_benchmark.py``. Each hot kernel is timed
on a representative workload (2-state toggle model, 120 irregular steps)
plus a full EM fit through the public API with each backend forced in a
subprocess.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))


def best_of(fn, repeats=5, inner=10):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def kernel_timings():
    import cdlds.kernels._native as native
    import cdlds.kernels._pure as pure
    import cdlds.kernels as K
    from cdlds.simulate import toggle_switch_dynamics, uniform_breaks

    rng = np.random.default_rng(0)
    A, B = toggle_switch_dynamics()
    A = 10 * A
    n, m = 2, 4
    taus = uniform_breaks(60.0, 121, 1)[:120]
    H = np.ascontiguousarray(np.vstack([np.eye(2), [[1.0, 1.0], [1.0, -1.0]]]))
    R = 0.1 * np.eye(m)
    mu0 = np.array([2.2, 68.2])
    P0 = np.eye(n)
    F = K.expm_multi(A, taus)
    Q = K.noise_covariance_multi(A, B, taus)
    Z = rng.standard_normal((121, m))
    Qinv = np.stack([np.linalg.inv(q) for q in Q])
    Exx = np.stack([np.eye(n) + np.outer(v, v) for v in rng.standard_normal((121, n))])
    cross = rng.standard_normal((120, n, n))
    G = K.build_AP(A)

    rows = []
    for name, fn_n, fn_p in [
        ("expm_multi (120 gaps)", lambda: native.expm_multi(A, taus), lambda: pure.expm_multi(A, taus)),
        ("phi1_multi (120 gaps)", lambda: native.phi1_multi(G, taus), lambda: pure.phi1_multi(G, taus)),
        (
            "filter_forward (N=121)",
            lambda: native.filter_forward(F, Q, H, R, mu0, P0, Z),
            lambda: pure.filter_forward(F, Q, H, R, mu0, P0, Z),
        ),
        (
            "misfit+gradient (120 steps)",
            lambda: native.a_misfit_grad(A, taus, Qinv, Exx, cross, True),
            lambda: pure.a_misfit_grad(A, taus, Qinv, Exx, cross, True),
        ),
    ]:
        tn = best_of(fn_n)
        tp = best_of(fn_p, repeats=3, inner=2)
        rows.append((name, tn, tp))
    return rows


def em_timing(backend):
    code = r"""
import json, time
import numpy as np
from cdlds import kernels
from cdlds.em import EMOptions, default_init, run_em
from cdlds.model import ModelParams, TimedObservations
from cdlds.simulate import sample_trajectory, toggle_switch_dynamics, uniform_breaks

A0, B0 = toggle_switch_dynamics()
A = 10 * A0
taus = uniform_breaks(60.0, 120, 7)
times = np.cumsum(taus)
params = ModelParams(A=A, Qc=B0, H=np.eye(2), R=np.eye(2), mu0=np.array([2.2, 68.2]), P0=np.eye(2))
traj = sample_trajectory(params, times, 42)
data = TimedObservations(times, traj.observed)
A_init, _ = default_init(data, 5)
opts = EMOptions(tol=1e-15, max_iters=25, refine_A=True, fixed=frozenset({"Qc", "H", "R", "mu0", "P0"}))
t0 = time.perf_counter()
run_em(params.replace(A=A_init), data, opts)
print(json.dumps({"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0}))
"""
    env = dict(os.environ, CDLDS_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    print(f"{'kernel':34s} {'native':>10s} {'pure':>10s} {'speedup':>8s}")
    for name, tn, tp in kernel_timings():
        print(f"{name:34s} {tn * 1e3:8.3f}ms {tp * 1e3:8.3f}ms {tp / tn:7.1f}x")
    rn = em_timing("native")
    rp = em_timing("pure")
    print(
        f"{'EM fit, 25 iterations (N=120)':34s} {rn['seconds'] * 1e3:8.0f}ms "
        f"{rp['seconds'] * 1e3:8.0f}ms {rp['seconds'] / rn['seconds']:7.1f}x"
    )


if __name__ == "__main__":
    main()
