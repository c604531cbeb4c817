"""Two-filter smoothing, its initialization, and the RTS equivalence oracle.

The backward pass recursion consumes only future observations, so the
smoothed posterior is a precision-weighted fusion of the forward posterior
and the backward likelihood. Initialization happens at the second-to-last
state through one standard smoothing step, because the backward quantity at
the final state is undefined without a prior on it.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .errors import NumericalError
from .filtering import forward_filter


@dataclass(frozen=True)
class BackwardPass:
    """Backward likelihood moments for states 0..N-2 plus per-step gains.

    ``init_regularized`` records whether the information-difference
    initialization needed a PSD repair.
    """

    mu_b: np.ndarray
    P_b: np.ndarray
    W: np.ndarray
    init_regularized: bool = False


@dataclass(frozen=True)
class SmoothedMoments:
    """Full-data posterior moments.

    ``cross[i]`` is E[x_{i+1} x_i^T]; ``Exx[k]`` is E[x_k x_k^T]. By
    construction Exx - mu_s mu_s^T equals P_s.
    """

    mu_s: np.ndarray
    P_s: np.ndarray
    Exx: np.ndarray
    cross: np.ndarray


def _moments_from(mu_s, P_s, cross):
    Exx = P_s + mu_s[:, :, None] * mu_s[:, None, :]
    return SmoothedMoments(mu_s=mu_s, P_s=P_s, Exx=Exx, cross=cross)


def rts_smoother(params, data, fpass=None):
    """Standard backward-gain smoother, used as the equivalence oracle."""
    if fpass is None:
        fpass = forward_filter(params, data)
    N = fpass.N
    n = params.n
    if N == 1:
        return _moments_from(fpass.mu_post.copy(), fpass.P_post.copy(), np.empty((0, n, n)))
    mu_s, P_s, cross = kernels.rts_moments(
        fpass.F, fpass.mu_post, fpass.P_post, fpass.mu_prior, fpass.P_prior
    )
    return _moments_from(mu_s, P_s, cross)


def _spd_inverse_apply(P, B, context):
    try:
        c = scipy.linalg.cho_factor(P, lower=True)
    except scipy.linalg.LinAlgError:
        raise NumericalError(f"{context}: matrix not positive definite") from None
    return scipy.linalg.cho_solve(c, B)


def rts_tail(fpass):
    """One smoothing step at the second-to-last state; feeds backward_init."""
    N = fpass.N
    if N < 2:
        raise ValueError("tail step needs at least two observations")
    k = N - 2
    G = _spd_inverse_apply(
        fpass.P_prior[k + 1], fpass.F[k] @ fpass.P_post[k].T, f"predicted covariance at step {k + 1}"
    ).T
    mu_tail = fpass.mu_post[k] + G @ (fpass.mu_post[N - 1] - fpass.mu_prior[k + 1])
    P_tail = fpass.P_post[k] + G @ (fpass.P_post[N - 1] - fpass.P_prior[k + 1]) @ G.T
    return mu_tail, 0.5 * (P_tail + P_tail.T)


def backward_init(fpass, mu_tail, P_tail):
    """Backward moments at the second-to-last state by information difference.

    Subtracting the forward posterior information from the smoothed
    information isolates the future-data likelihood. Roundoff can leave the
    difference indefinite; in that case the precision is repaired onto the
    PSD cone with a trace-relative jitter and the result is flagged.
    """
    k = fpass.N - 2
    mu_f = fpass.mu_post[k]
    P_f = fpass.P_post[k]
    n = P_f.shape[0]
    info = _spd_inverse_apply(P_tail, np.eye(n), "smoothed tail covariance")
    info = info - _spd_inverse_apply(P_f, np.eye(n), "forward posterior")
    info = 0.5 * (info + info.T)
    regularized = False
    try:
        c = scipy.linalg.cho_factor(info, lower=True)
    except scipy.linalg.LinAlgError:
        jitter = 1e-10 * max(abs(float(np.trace(info))), 1.0) / n
        info = kernels.nearest_psd(info, jitter)
        regularized = True
        warnings.warn("backward initialization regularized onto the PSD cone")
        try:
            c = scipy.linalg.cho_factor(info, lower=True)
        except scipy.linalg.LinAlgError:
            raise NumericalError("backward initialization is singular") from None
    eta = _spd_inverse_apply(P_tail, mu_tail, "smoothed tail covariance") - _spd_inverse_apply(
        P_f, mu_f, "forward posterior"
    )
    P_b = scipy.linalg.cho_solve(c, np.eye(n))
    P_b = 0.5 * (P_b + P_b.T)
    mu_b = scipy.linalg.cho_solve(c, eta)
    return mu_b, P_b, regularized


def backward_pass(params, data, init, fpass=None):
    """Pure backward recursion over future observations (states 0..N-2).

    ``init`` is the (mu_b, P_b, regularized) triple from
    :func:`backward_init`. Positive definiteness is asserted at every step.
    """
    mu_init, P_init, regularized = init
    N = data.N
    if N < 2:
        raise ValueError("backward pass needs at least two observations")
    if fpass is not None:
        Q = fpass.Q
    else:
        from .model import discretize_steps

        _, Q = discretize_steps(params.A, params.Qc, data.taus)
    Fneg = kernels.expm_multi(params.A, data.taus, sign=-1.0)
    mu_b, P_b, W = kernels.backward_recurse(
        Fneg, Q, params.H, params.R, data.obs, P_init, mu_init
    )
    return BackwardPass(mu_b=mu_b, P_b=P_b, W=W, init_regularized=regularized)


def fuse_two_filter(fpass, back):
    """Combine forward posteriors with the backward pass into smoothed moments.

    The final state keeps its forward posterior (no future information);
    every earlier state fuses the two Gaussians by precision weighting, and
    cross moments follow from the joint posterior of adjacent states.
    """
    mu_s, P_s, cross = kernels.fuse_moments(
        fpass.F,
        fpass.mu_post,
        fpass.P_post,
        fpass.mu_prior,
        fpass.P_prior,
        back.mu_b,
        back.P_b,
    )
    return _moments_from(mu_s, P_s, cross)


def two_filter_smoother(params, data, fpass=None):
    """Full smoothing pipeline: init at N-2, backward recursion, fusion."""
    if fpass is None:
        fpass = forward_filter(params, data)
    if fpass.N == 1:
        n = params.n
        return _moments_from(fpass.mu_post.copy(), fpass.P_post.copy(), np.empty((0, n, n)))
    mu_tail, P_tail = rts_tail(fpass)
    init = backward_init(fpass, mu_tail, P_tail)
    back = backward_pass(params, data, init, fpass=fpass)
    return fuse_two_filter(fpass, back)
