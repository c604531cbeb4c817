"""Discrete-time Kalman EM baseline with constant step matrices.

The baseline deliberately never sees timestamps: it learns a single
transition matrix F and a single step-noise covariance Q as if the
observations were equally spaced. All M-steps are exact closed forms, so
the log-likelihood increases strictly.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .em import EMOptions, _psd_repair, _solve_right, update_H, update_R
from .errors import NumericalError
from .filtering import FilterPass
from .model import TimedObservations
from .smoothing import _moments_from


@dataclass(frozen=True)
class DiscreteParams:
    """One-step transition F, step noise Q, and the shared observation
    and initial-state parameters."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "H", "R", "mu0", "P0"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if name != "mu0":
                value = np.atleast_2d(value)
            object.__setattr__(self, name, np.ascontiguousarray(value))

    def replace(self, **updates):
        fields = {k: getattr(self, k) for k in ("F", "Q", "H", "R", "mu0", "P0")}
        fields.update(updates)
        return DiscreteParams(**fields)


def _filter_const(params, obs):
    N = obs.shape[0]
    F = np.broadcast_to(params.F, (N - 1,) + params.F.shape).copy()
    Q = np.broadcast_to(params.Q, (N - 1,) + params.Q.shape).copy()
    mu_pr, P_pr, mu_po, P_po, K, ll = kernels.filter_forward(
        F, Q, params.H, params.R, params.mu0, params.P0, obs
    )
    return FilterPass(mu_pr, P_pr, mu_po, P_po, K, ll, F, Q)


def _smooth_const(fpass):
    mu_s, P_s, cross = kernels.rts_moments(
        fpass.F, fpass.mu_post, fpass.P_post, fpass.mu_prior, fpass.P_prior
    )
    return _moments_from(mu_s, P_s, cross)


def discrete_em(params0, obs, opts=EMOptions()):
    """Classical EM for the constant-step model.

    ``fixed`` may name any of F, Q, H, R, mu0, P0. Returns the final
    parameters and the post-update log-likelihood trace.
    """
    obs = np.ascontiguousarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    N = obs.shape[0]
    if N < 2:
        raise ValueError("EM needs at least two observations")
    if obs.shape[1] != params0.H.shape[0]:
        raise ValueError(
            f"observation dimension mismatch: data has {obs.shape[1]} channels, "
            f"H expects {params0.H.shape[0]}"
        )
    allowed = {"F", "Q", "H", "R", "mu0", "P0"}
    unknown = set(opts.fixed) - allowed
    if unknown:
        raise ValueError(f"unknown fixed parameter names for the baseline: {sorted(unknown)}")
    data = TimedObservations(np.arange(N, dtype=float), obs)
    params = params0
    trace = []
    fp = _filter_const(params, obs)
    L_prev = float(fp.loglik_terms.sum())
    loglik0 = L_prev
    converged = False
    warnings = []
    for i in range(1, opts.max_iters + 1):
        try:
            moments = _smooth_const(fp)
            mu0 = moments.mu_s[0].copy() if "mu0" not in opts.fixed else params.mu0
            if "P0" not in opts.fixed:
                P0 = _psd_repair(moments.Exx[0] - np.outer(mu0, mu0), mu0.shape[0])
            else:
                P0 = params.P0
            if "F" not in opts.fixed:
                F = _solve_right(
                    moments.cross.sum(axis=0), moments.Exx[:-1].sum(axis=0), "transition normal matrix"
                )
            else:
                F = params.F
            if "Q" not in opts.fixed:
                Csum = moments.cross.sum(axis=0)
                Q = (
                    moments.Exx[1:].sum(axis=0)
                    - F @ Csum.T
                    - Csum @ F.T
                    + F @ moments.Exx[:-1].sum(axis=0) @ F.T
                ) / (N - 1)
                Q = _psd_repair(Q, Q.shape[0])
            else:
                Q = params.Q
            H = update_H(moments, data) if "H" not in opts.fixed else params.H
            R = update_R(moments, data, H) if "R" not in opts.fixed else params.R
            params = DiscreteParams(F=F, Q=Q, H=H, R=R, mu0=mu0, P0=P0)
            fp = _filter_const(params, obs)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            warnings.append(f"aborted at iteration {i}: {exc}")
            break
        L_new = float(fp.loglik_terms.sum())
        trace.append(L_new)
        if abs(L_new - L_prev) < opts.tol:
            converged = True
            break
        L_prev = L_new
    return params, np.array(trace), {"converged": converged, "warnings": warnings, "loglik0": loglik0}
