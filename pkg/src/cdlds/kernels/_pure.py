"""Pure NumPy/SciPy backend for the hot kernels.

Index conventions shared with the compiled backend:

* A series of N observations is 0-indexed, ``Z`` has shape (N, m).
* ``taus`` has length N-1; ``taus[i]`` is the gap between states i and i+1.
* Transition stacks ``F``/``Q`` have shape (N-1, n, n); entry ``i``
  propagates state i to state i+1.
* ``cross[i]`` denotes E[x_{i+1} x_i^T] under the smoothed posterior.
* Backward quantities are defined for states 0..N-2 (arrays of length N-1).
"""

import numpy as np
import scipy.linalg

from ..errors import NumericalError


def expm(A):
    return scipy.linalg.expm(A)


def expm_frechet(A, E):
    return scipy.linalg.expm_frechet(A, E)


def expm_multi(A, taus, sign=1.0):
    A = np.asarray(A, dtype=float)
    out = np.empty((len(taus), A.shape[0], A.shape[0]))
    for i, t in enumerate(taus):
        out[i] = scipy.linalg.expm((sign * t) * A)
    return out


def phi1_multi(M, taus):
    """Stack of integral-of-exponential matrices ``int_0^tau e^{Ms} ds``.

    Evaluated through the augmented block matrix [[M, I], [0, 0]]: its
    exponential at time tau carries the integral in the upper-right block,
    which stays well defined for singular M.
    """
    M = np.asarray(M, dtype=float)
    p = M.shape[0]
    G = np.zeros((2 * p, 2 * p))
    G[:p, :p] = M
    G[:p, p:] = np.eye(p)
    out = np.empty((len(taus), p, p))
    for i, t in enumerate(taus):
        out[i] = scipy.linalg.expm(G * t)[:p, p:]
    return out


def _chol(S, context):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{context}: matrix not positive definite") from None


def _chol_solve(L, B):
    y = scipy.linalg.solve_triangular(L, B, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)


def filter_forward(F, Q, H, R, mu0, P0, Z):
    """Forward continuous-discrete Kalman recursion over precomputed steps.

    Step 0 applies the measurement update directly to (mu0, P0); later steps
    propagate with F[k-1], Q[k-1] first. Returns per-step prior/posterior
    moments, gains and log-likelihood terms.
    """
    N, m = Z.shape
    n = mu0.shape[0]
    mu_pr = np.empty((N, n))
    P_pr = np.empty((N, n, n))
    mu_po = np.empty((N, n))
    P_po = np.empty((N, n, n))
    K = np.empty((N, n, m))
    ll = np.empty(N)
    cst = m * np.log(2.0 * np.pi)
    mu, P = mu0, P0
    for k in range(N):
        if k > 0:
            mu = F[k - 1] @ mu
            P = F[k - 1] @ P @ F[k - 1].T + Q[k - 1]
            P = 0.5 * (P + P.T)
        mu_pr[k] = mu
        P_pr[k] = P
        S = H @ P @ H.T + R
        S = 0.5 * (S + S.T)
        L = _chol(S, f"innovation covariance at step {k}")
        nu = Z[k] - H @ mu
        alpha = _chol_solve(L, nu)
        ll[k] = -0.5 * (cst + 2.0 * np.log(np.diag(L)).sum() + nu @ alpha)
        Kk = _chol_solve(L, H @ P.T).T
        K[k] = Kk
        mu = mu + Kk @ nu
        P = (np.eye(n) - Kk @ H) @ P
        P = 0.5 * (P + P.T)
        mu_po[k] = mu
        P_po[k] = P
    return mu_pr, P_pr, mu_po, P_po, K, ll


def backward_recurse(Fneg, Q, H, R, Z, P_init, mu_init):
    """Backward likelihood recursion from the initialized state N-2.

    Returns (mu_b, P_b, W) arrays of length N-1 covering states 0..N-2.
    """
    N = Z.shape[0]
    n = mu_init.shape[0]
    m = Z.shape[1]
    mu_b = np.empty((N - 1, n))
    P_b = np.empty((N - 1, n, n))
    W = np.empty((N - 1, n, m))
    P_b[N - 2] = P_init
    mu_b[N - 2] = mu_init
    for k in range(N - 2, -1, -1):
        Pk = 0.5 * (P_b[k] + P_b[k].T)
        _chol(Pk, f"backward covariance at step {k}")
        S = H @ Pk @ H.T + R
        S = 0.5 * (S + S.T)
        L = _chol(S, f"backward innovation at step {k}")
        Wk = _chol_solve(L, H @ Pk.T).T
        W[k] = Wk
        if k == 0:
            break
        E = Fneg[k - 1]
        inner = Q[k - 1] + (np.eye(n) - Wk @ H) @ Pk
        P_b[k - 1] = E @ (0.5 * (inner + inner.T)) @ E.T
        P_b[k - 1] = 0.5 * (P_b[k - 1] + P_b[k - 1].T)
        mu_b[k - 1] = E @ (mu_b[k] + Wk @ (Z[k] - H @ mu_b[k]))
    return mu_b, P_b, W


def rts_moments(F, mu_po, P_po, mu_pr, P_pr):
    """Standard backward recursion for the full-data posterior moments."""
    N, n = mu_po.shape
    mu_s = np.empty((N, n))
    P_s = np.empty((N, n, n))
    mu_s[N - 1] = mu_po[N - 1]
    P_s[N - 1] = P_po[N - 1]
    for k in range(N - 2, -1, -1):
        L = _chol(P_pr[k + 1], f"predicted covariance at step {k + 1}")
        G = _chol_solve(L, F[k] @ P_po[k].T).T
        mu_s[k] = mu_po[k] + G @ (mu_s[k + 1] - mu_pr[k + 1])
        P_s[k] = P_po[k] + G @ (P_s[k + 1] - P_pr[k + 1]) @ G.T
        P_s[k] = 0.5 * (P_s[k] + P_s[k].T)
    cross = cross_moments(F, mu_s, P_s, P_po, P_pr)
    return mu_s, P_s, cross

def cross_moments(F, mu_s, P_s, P_po, P_pr):
    """E[x_{k+1} x_k^T] from smoothed and forward moments."""
    N, n = mu_s.shape
    cross = np.empty((N - 1, n, n))
    for i in range(N - 1):
        L = _chol(P_pr[i + 1], f"predicted covariance at step {i + 1}")
        cov = P_s[i + 1] @ _chol_solve(L, F[i] @ P_po[i].T)
        cross[i] = cov + np.outer(mu_s[i + 1], mu_s[i])
    return cross


def fuse_moments(F, mu_po, P_po, mu_pr, P_pr, mu_b, P_b):
    """Precision-weighted fusion of forward posteriors and backward pass."""
    N, n = mu_po.shape
    mu_s = np.empty((N, n))
    P_s = np.empty((N, n, n))
    mu_s[N - 1] = mu_po[N - 1]
    P_s[N - 1] = P_po[N - 1]
    for k in range(N - 1):
        Pf = P_po[k]
        Pb = 0.5 * (P_b[k] + P_b[k].T)
        try:
            Psum = np.linalg.solve(Pf + Pb, Pb)
        except np.linalg.LinAlgError:
            raise NumericalError(f"singular fusion at step {k}") from None
        Ps = Pf @ Psum
        Ps = 0.5 * (Ps + Ps.T)
        Lf = _chol(Pf, f"forward posterior at step {k}")
        Lb = _chol(Pb, f"backward covariance at step {k}")
        eta = _chol_solve(Lf, mu_po[k]) + _chol_solve(Lb, mu_b[k])
        mu_s[k] = Ps @ eta
        P_s[k] = Ps
    cross = cross_moments(F, mu_s, P_s, P_po, P_pr)
    return mu_s, P_s, cross


def a_misfit_grad(A, taus, Qinv, Exx, cross, want_grad=True):
    """Trace misfit of the transition fit and its log-density gradient.

    Returns (J, G) where J is the quadratic misfit summed over steps and G
    is the gradient of the expected log-density (−J/2) with respect to A,
    accumulated through Frechet derivatives of the matrix exponential.
    G is None when want_grad is false.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    J = 0.0
    G = np.zeros((n, n)) if want_grad else None
    for i, t in enumerate(taus):
        M = Exx[i]
        X = Exx[i + 1]
        C = cross[i]
        At = A * t
        Ph = scipy.linalg.expm(At)
        B = X - Ph @ C.T - C @ Ph.T + Ph @ M @ Ph.T
        J += float(np.sum(B * Qinv[i]))
        if want_grad:
            V = Qinv[i] @ (C - Ph @ M)
            Lf = scipy.linalg.expm_frechet(At.T, V, compute_expm=False)
            G += t * Lf
    return J, G
