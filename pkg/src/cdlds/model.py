"""Parameter containers, validation, and exact discretization."""

import io
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ModelParams:
    """Continuous-discrete model parameter set.

    A is the continuous dynamics (units 1/min), Qc the differential
    diffusion covariance, H the observation map, R the observation noise,
    (mu0, P0) the initial state distribution. Instances are treated as
    immutable and are safe to share across threads.
    """

    A: np.ndarray
    Qc: np.ndarray
    H: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        for name in ("A", "Qc", "H", "R", "mu0", "P0"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if name != "mu0":
                value = np.atleast_2d(value)
            object.__setattr__(self, name, np.ascontiguousarray(value))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[0]

    def replace(self, **updates):
        fields = {k: getattr(self, k) for k in ("A", "Qc", "H", "R", "mu0", "P0")}
        fields.update(updates)
        return ModelParams(**fields)


def _pd_failure(S):
    if np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        return "not symmetric"
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return "not positive definite"
    return None


def validate(params):
    """Collect every violated invariant as a human-readable message.

    An empty list means the parameter set is well formed.
    """
    errors = []
    n = params.A.shape[0]
    if params.A.shape != (n, n):
        errors.append(f"A must be square, got {params.A.shape}")
    for name in ("A", "Qc", "H", "R", "mu0", "P0"):
        if not np.all(np.isfinite(getattr(params, name))):
            errors.append(f"{name} has non-finite entries")
    if params.Qc.shape != (n, n):
        errors.append(f"Qc must be {n}x{n}, got {params.Qc.shape}")
    if params.P0.shape != (n, n):
        errors.append(f"P0 must be {n}x{n}, got {params.P0.shape}")
    if params.mu0.shape != (n,):
        errors.append(f"mu0 must have length {n}, got {params.mu0.shape}")
    if params.H.ndim != 2 or params.H.shape[1] != n:
        errors.append(f"H must have {n} columns, got {params.H.shape}")
    m = params.H.shape[0]
    if params.R.shape != (m, m):
        errors.append(f"R must be {m}x{m} to match H, got {params.R.shape}")
    for name in ("Qc", "R", "P0"):
        S = getattr(params, name)
        if S.shape[0] == S.shape[1]:
            why = _pd_failure(S)
            if why:
                errors.append(f"{name} {why}")
    return errors


def require_valid(params):
    errors = validate(params)
    if errors:
        raise ValueError("invalid model parameters: " + "; ".join(errors))
    return params


class TimedObservations:
    """Strictly increasing timestamps with one m-dimensional observation each.

    Time gaps are derived once at construction and cached. A single
    observation is accepted for filtering; EM requires at least two.
    """

    def __init__(self, times, obs):
        times = np.ascontiguousarray(times, dtype=float)
        obs = np.ascontiguousarray(obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if times.ndim != 1 or obs.shape[0] != times.shape[0]:
            raise ValueError("times and obs must have matching leading length")
        if times.shape[0] < 1:
            raise ValueError("need at least one observation")
        taus = np.diff(times)
        if np.any(taus <= 0):
            raise ValueError("times must be strictly increasing")
        self.times = times
        self.obs = obs
        self.taus = taus

    @property
    def N(self):
        return self.times.shape[0]

    @property
    def m(self):
        return self.obs.shape[1]

    def to_csv(self, path):
        header = "t," + ",".join(f"z{i + 1}" for i in range(self.m))
        body = np.column_stack([self.times, self.obs])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for row in body:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if not header or header[0] != "t":
                raise ValueError(f"expected header starting with 't', got {header}")
            data = np.loadtxt(io.StringIO(fh.read()), delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1:])


@dataclass(frozen=True)
class DiscretizedStep:
    """One-step transition ``F = e^{A tau}`` and accumulated noise Q(tau)."""

    F: np.ndarray
    Q: np.ndarray


def discretize(A, Qc, tau):
    """Exact discretization of the continuous model over one time gap."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    F, Q = discretize_steps(A, Qc, np.array([float(tau)]))
    return DiscretizedStep(F=F[0], Q=Q[0])


def discretize_steps(A, Qc, taus):
    """Transition and noise stacks for a vector of time gaps."""
    F = kernels.expm_multi(A, taus)
    Q = kernels.noise_covariance_multi(A, Qc, taus)
    return F, Q
