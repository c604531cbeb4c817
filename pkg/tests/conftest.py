import numpy as np
import pytest

from cdlds.model import ModelParams, TimedObservations
from cdlds.simulate import sample_trajectory


def random_stable_model(rng, n, m=None, obs_noise=0.5, rho=None):
    """Random stable dynamics with a full-column-rank observation map.

    The spectral radius is drawn on a moderate range so the per-step
    amplification stays representative of physical systems.
    """
    if m is None:
        m = n
    if rho is None:
        rho = float(rng.uniform(0.1, 1.5))
    M = rng.standard_normal((n, n))
    M *= rho / max(abs(np.linalg.eigvals(M)))
    A = M - (0.1 + max(0.0, np.linalg.eigvals(M).real.max())) * np.eye(n)
    L = rng.standard_normal((n, n)) * 0.4
    Qc = L @ L.T + 0.3 * np.eye(n)
    while True:
        H = rng.standard_normal((m, n))
        if np.linalg.matrix_rank(H) == min(m, n):
            break
    R = obs_noise * np.eye(m)
    mu0 = rng.standard_normal(n)
    P0 = np.eye(n)
    return ModelParams(A=A, Qc=Qc, H=H, R=R, mu0=mu0, P0=P0)


def random_series(rng, params, N, tau_lo=0.05, tau_hi=1.0, seed=None):
    taus = rng.uniform(tau_lo, tau_hi, N - 1)
    times = np.concatenate(([0.0], np.cumsum(taus)))
    if seed is None:
        seed = int(rng.integers(0, 2**31))
    traj = sample_trajectory(params, times, seed)
    return TimedObservations(times, traj.observed)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
