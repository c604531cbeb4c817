"""Exact trajectory sampling, the linearized toggle-switch model, and
the step-size samplers used by the experiment harness."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .model import discretize_steps


@dataclass(frozen=True)
class ToggleRates:
    """Rate constants of the two-repressor toggle circuit, linearized at
    its equilibrium repressor concentrations (r1, r2).

    Defaults are the biologically realistic values used throughout the
    experiments: transcription 0.2 nM/min, mean protein lifetime 50 min,
    dissociation constant 5 nM, fold-change capacity 200, promoter
    parameter b = 10 nM, equilibrium at (11/5, 341/5) nM.
    """

    alpha_m: float = 0.2
    beta_p: float = 1.0 / 50.0
    K_R: float = 5.0
    omega: float = 200.0
    b: float = 10.0
    r1: float = 11.0 / 5.0
    r2: float = 341.0 / 5.0

    def __post_init__(self):
        for name in ("alpha_m", "beta_p", "K_R", "omega", "b", "r1", "r2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.omega <= 1:
            raise ValueError("omega must exceed 1")


def promoter_activity(r, K_R, omega):
    """Relative transcription rate under repressor concentration r.

    Two independent operator sites with dissociation constant K_R and
    fold-change capacity omega; returns a value in (0, 1].
    """
    if r < 0:
        raise ValueError("repressor concentration must be nonnegative")
    q = r / (2.0 * K_R)
    return (1.0 + (q / omega) * (2.0 + q)) / (1.0 + q) ** 2


def promoter_activity_deriv(r, K_R, omega):
    """Derivative of :func:`promoter_activity`; negative for omega > 1."""
    return (8.0 * (1.0 - omega) / omega) * K_R**2 / (r + 2.0 * K_R) ** 3


def toggle_switch_dynamics(rates=ToggleRates()):
    """Dynamics matrix A and diffusion matrix B of the linearized circuit.

    A couples the repressors through the promoter response slope at the
    equilibrium point; B collects the reaction-propensity diffusion
    coefficients on the diagonal.
    """
    g1 = promoter_activity(rates.r1, rates.K_R, rates.omega)
    g2 = promoter_activity(rates.r2, rates.K_R, rates.omega)
    d1 = promoter_activity_deriv(rates.r1, rates.K_R, rates.omega)
    d2 = promoter_activity_deriv(rates.r2, rates.K_R, rates.omega)
    ba = rates.b * rates.alpha_m
    A = np.array([[-rates.beta_p, ba * d2], [ba * d1, -rates.beta_p]])
    B = np.diag(
        [
            rates.b * ba * g2 + rates.beta_p * rates.r1,
            rates.b * ba * g1 + rates.beta_p * rates.r2,
        ]
    )
    return A, B


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    latent: np.ndarray
    observed: np.ndarray


def _noise_factor(cov, step, what):
    if np.abs(cov).max() == 0.0:
        return None
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} covariance not positive definite at step {step}") from None


def sample_trajectory(params, times, seed):
    """Draw one exact trajectory of the model on the given time grid.

    The first state is drawn from (mu0, P0); subsequent states use the
    exact one-step discretization, so no integration error enters. All
    noise comes from a counter-based generator keyed by the seed, making
    the draw reproducible and replicate-parallel.
    """
    times = np.ascontiguousarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] < 1:
        raise ValueError("times must be a nonempty 1-D array")
    taus = np.diff(times)
    if np.any(taus <= 0):
        raise ValueError("times must be strictly increasing")
    N = times.shape[0]
    n = params.n
    m = params.m
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    eps_x = rng.standard_normal((N, n))
    eps_z = rng.standard_normal((N, m))

    x = np.empty((N, n))
    z = np.empty((N, m))
    L0 = _noise_factor(params.P0, 0, "initial")
    x[0] = params.mu0 if L0 is None else params.mu0 + L0 @ eps_x[0]
    if N > 1:
        F, Q = discretize_steps(params.A, params.Qc, taus)
        for k in range(1, N):
            Lq = _noise_factor(Q[k - 1], k, "process")
            x[k] = F[k - 1] @ x[k - 1]
            if Lq is not None:
                x[k] += Lq @ eps_x[k]
    Lr = _noise_factor(params.R, 0, "observation")
    for k in range(N):
        z[k] = params.H @ x[k]
        if Lr is not None:
            z[k] += Lr @ eps_z[k]
    return Trajectory(times=times, latent=x, observed=z)


def uniform_breaks(T, N, seed):
    """Break an interval of length T into N gaps at sorted uniform points."""
    if N < 2:
        raise ValueError("need at least two intervals")
    if T <= 0:
        raise ValueError("T must be positive")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    cuts = np.sort(rng.uniform(0.0, T, size=N - 1))
    return np.diff(np.concatenate(([0.0], cuts, [T])))


def beta_steps(gamma, N, scale, seed):
    """N gaps ``scale * Beta(gamma, gamma)`` via the two-Gamma construction.

    gamma controls the gap variance: 1 gives uniform gaps on [0, scale],
    large gamma concentrates at scale/2. Gaps are clamped away from zero
    (1e-9 * scale) because small-gamma draws concentrate near 0.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    g1 = rng.standard_gamma(gamma, size=N)
    g2 = rng.standard_gamma(gamma, size=N)
    taus = scale * g1 / (g1 + g2)
    return np.maximum(taus, 1e-9 * scale)
