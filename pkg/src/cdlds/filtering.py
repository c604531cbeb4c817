"""Forward continuous-discrete Kalman filter and marginal log-likelihood."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import discretize_steps, require_valid


@dataclass(frozen=True)
class FilterPass:
    """Per-step filter output.

    Arrays are indexed by step k = 0..N-1. ``mu_prior[0]``/``P_prior[0]``
    are the model prior; the transition/noise stacks used for steps k >= 1
    are kept for reuse by the smoother and EM (entry i propagates step i to
    i+1).
    """

    mu_prior: np.ndarray
    P_prior: np.ndarray
    mu_post: np.ndarray
    P_post: np.ndarray
    gains: np.ndarray
    loglik_terms: np.ndarray
    F: np.ndarray
    Q: np.ndarray

    @property
    def N(self):
        return self.mu_post.shape[0]


def forward_filter(params, data, steps=None):
    """Run the forward filter over one observation series.

    The first step applies a measurement update to (mu0, P0) with no
    propagation; each later step propagates through the exact
    discretization over its time gap. ``steps`` optionally supplies
    precomputed (F, Q) stacks.
    """
    require_valid(params)
    if data.m != params.m:
        raise ValueError(
            f"observation dimension mismatch: data has {data.m} channels, H expects {params.m}"
        )
    if steps is None:
        F, Q = discretize_steps(params.A, params.Qc, data.taus)
    else:
        F, Q = steps
    mu_pr, P_pr, mu_po, P_po, K, ll = kernels.filter_forward(
        F, Q, params.H, params.R, params.mu0, params.P0, data.obs
    )
    return FilterPass(
        mu_prior=mu_pr,
        P_prior=P_pr,
        mu_post=mu_po,
        P_post=P_po,
        gains=K,
        loglik_terms=ll,
        F=F,
        Q=Q,
    )


def log_likelihood(fpass):
    """Exact marginal log-likelihood of the observations under the model."""
    return float(np.sum(fpass.loglik_terms))
