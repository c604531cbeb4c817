"""Dense matrix-exponential and half-vectorization primitives.

The heavy inner loops live in a compiled extension (``cdlds.kernels._native``)
with a pure NumPy/SciPy fallback carrying identical semantics. Selection
happens once at import: the compiled module is preferred when available, and
the environment variable ``CDLDS_BACKEND`` (``native`` or ``pure``) forces a
choice. All functions here are pure; values are never mutated after
construction, so concurrent use needs no locking.

Half-vectorization convention: ``vech`` stacks the lower triangle in
column-major order, and the duplication/elimination matrices are built for
that same ordering, so every identity pairing them holds regardless of the
triangle choice.
"""

import os

import numpy as np

from ..errors import NumericalError

_FORCED = os.environ.get("CDLDS_BACKEND", "").strip().lower()
if _FORCED not in ("", "native", "pure"):
    raise ValueError(f"CDLDS_BACKEND must be 'native' or 'pure', got {_FORCED!r}")

if _FORCED == "pure":
    from . import _pure as _backend

    BACKEND = "pure"
else:
    try:
        from . import _native as _backend

        BACKEND = "native"
    except ImportError:
        if _FORCED == "native":
            raise
        from . import _pure as _backend

        BACKEND = "pure"

# loop kernels consumed by the filtering/smoothing/EM modules
filter_forward = _backend.filter_forward
backward_recurse = _backend.backward_recurse
rts_moments = _backend.rts_moments
fuse_moments = _backend.fuse_moments
cross_moments = _backend.cross_moments
a_misfit_grad = _backend.a_misfit_grad

__all__ = [
    "BACKEND",
    "expm",
    "expm_frechet",
    "expm_multi",
    "phi1",
    "phi1_multi",
    "duplication_matrix",
    "elimination_matrix",
    "vech",
    "unvech",
    "build_AP",
    "noise_covariance_Q",
    "noise_covariance_multi",
    "nearest_psd",
]


def _as_square(M, name="matrix"):
    M = np.ascontiguousarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def expm(M, t=1.0):
    """Matrix exponential ``e^{M t}`` by Pade scaling-and-squaring."""
    M = _as_square(M)
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    return _backend.expm(np.ascontiguousarray(M * t))


def expm_frechet(M, V):
    """Return ``(e^M, L(M, V))`` with L the Frechet derivative of expm at M.

    L is the linear map V -> d/dh expm(M + hV) at h=0, computed by the
    scaling-and-squaring recurrence rather than series truncation.
    """
    M = _as_square(M, "M")
    V = _as_square(V, "V")
    if M.shape != V.shape:
        raise ValueError(f"dimension mismatch: M is {M.shape}, V is {V.shape}")
    return _backend.expm_frechet(M, V)


def expm_multi(M, taus, sign=1.0):
    """Stack of ``e^{sign * M * tau}`` over a vector of time gaps."""
    M = _as_square(M)
    taus = np.ascontiguousarray(taus, dtype=float)
    return _backend.expm_multi(M, taus, sign)


def phi1(M, t):
    """Integral of the exponential: Phi with ``M Phi = e^{Mt} - I``.

    Well defined for singular M (returns ``t I`` at M = 0) through the
    augmented-block evaluation, so no inverse of M is ever formed.
    """
    M = _as_square(M)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _backend.phi1_multi(M, np.array([float(t)]))[0]


def phi1_multi(M, taus):
    M = _as_square(M)
    taus = np.ascontiguousarray(taus, dtype=float)
    return _backend.phi1_multi(M, taus)


def _half_dim(n):
    return n * (n + 1) // 2


def _tri_indices(n):
    # column-major lower triangle: (0,0),(1,0),..,(n-1,0),(1,1),..
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def duplication_matrix(n):
    """Binary matrix D with ``D vech(S) = vec(S)`` for symmetric S."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _half_dim(n)
    rows, cols = _tri_indices(n)
    pos = {}
    for h, (i, j) in enumerate(zip(rows, cols)):
        pos[(i, j)] = h
        pos[(j, i)] = h
    D = np.zeros((n * n, p))
    for j in range(n):
        for i in range(n):
            D[i + j * n, pos[(i, j)]] = 1.0
    return D


def elimination_matrix(n):
    """Binary matrix with ``L vec(S) = vech(S)``; satisfies ``L D = I``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _half_dim(n)
    rows, cols = _tri_indices(n)
    L = np.zeros((p, n * n))
    for h in range(p):
        L[h, rows[h] + cols[h] * n] = 1.0
    return L


def _check_symmetric(S, name="matrix"):
    S = _as_square(S, name)
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return S


def vech(S):
    """Stack the lower triangle of a symmetric matrix, column-major."""
    S = _check_symmetric(S)
    rows, cols = _tri_indices(S.shape[0])
    return S[rows, cols].copy()


def unvech(h):
    """Inverse of :func:`vech`."""
    h = np.asarray(h, dtype=float)
    p = h.shape[0]
    n = int(round((np.sqrt(8.0 * p + 1.0) - 1.0) / 2.0))
    if _half_dim(n) != p:
        raise ValueError(f"invalid half-vector length {p}")
    S = np.zeros((n, n))
    rows, cols = _tri_indices(n)
    S[rows, cols] = h
    S[cols, rows] = h
    return S


def build_AP(A):
    """Generator of the half-vectorized covariance flow.

    Returns the n(n+1)/2-dimensional matrix G with
    ``G vech(S) = vech(A S + S A^T)`` for every symmetric S, so that
    ``expm(G t)`` propagates vech of a Lyapunov flow.
    """
    A = _as_square(A)
    n = A.shape[0]
    I = np.eye(n)
    M = np.kron(I, A) + np.kron(A, I)
    return elimination_matrix(n) @ M @ duplication_matrix(n)


def _repair_psd(Q):
    # jitter only when Cholesky fails; scale-relative magnitude
    try:
        np.linalg.cholesky(Q)
        return Q
    except np.linalg.LinAlgError:
        pass
    n = Q.shape[0]
    jitter = 1e-10 * max(np.trace(Q), 0.0) / n
    return nearest_psd(Q, jitter)


def noise_covariance_Q(A, Qc, tau):
    """Accumulated process noise ``int_0^tau e^{A(tau-s)} Qc e^{A^T(tau-s)} ds``.

    Computed in half-vectorized form through the integral of the covariance
    flow generator, which handles singular generators (e.g. A = 0).
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return noise_covariance_multi(A, Qc, np.array([float(tau)]))[0]


def noise_covariance_multi(A, Qc, taus):
    """Stack of accumulated process-noise covariances over time gaps."""
    A = _as_square(A, "A")
    Qc = _check_symmetric(Qc, "Qc")
    taus = np.ascontiguousarray(taus, dtype=float)
    if np.any(taus < 0):
        raise ValueError("tau must be nonnegative")
    n = A.shape[0]
    G = build_AP(A)
    vq = vech(Qc)
    W = _backend.phi1_multi(G, taus) @ vq
    rows, cols = _tri_indices(n)
    out = np.zeros((len(taus), n, n))
    out[:, rows, cols] = W
    out[:, cols, rows] = W
    try:
        np.linalg.cholesky(out)  # batched check; repair is the rare path
    except np.linalg.LinAlgError:
        for i in range(len(taus)):
            out[i] = _repair_psd(out[i])
    return out


def nearest_psd(S, jitter=0.0):
    """Eigenvalue clamp to the PSD cone plus ``jitter * I``.

    This is the Frobenius-nearest PSD matrix to a symmetric input, shifted
    by the requested diagonal stabilizer.
    """
    S = _check_symmetric(S)
    w, U = np.linalg.eigh(S)
    w = np.maximum(w, 0.0)
    out = (U * w) @ U.T
    out = 0.5 * (out + out.T)
    if jitter:
        out += jitter * np.eye(S.shape[0])
    return out
