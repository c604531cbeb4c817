# Compiled backend for the hot kernels: degree-13 Pade scaling-and-squaring
# for the matrix exponential and its Frechet derivative, plus the per-step
# filter/smoother/EM accumulation loops. Semantics mirror ``_pure``.

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, log, log2, sqrt
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dgesv, dpotrf, dpotrs

from ..errors import NumericalError

cnp.import_array()

cdef double LOG2PI = 1.8378770664093453


# ---------------------------------------------------------------------------
# dense helpers on row-major buffers
# ---------------------------------------------------------------------------

cdef void rm_gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                  double* A, int lda, double* B, int ldb,
                  double beta, double* C, int ldc) noexcept:
    # C (m x n) = alpha * op(A) (m x k) @ op(B) (k x n) + beta * C, row-major;
    # implemented by the transposed column-major product
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    dgemm(&fb, &fa, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef void transpose_copy(double* src, double* dst, int m, int n) noexcept:
    # src (m x n) -> dst (n x m)
    cdef int i, j
    for i in range(m):
        for j in range(n):
            dst[j * m + i] = src[i * n + j]


cdef void mat_copy(double* src, double* dst, int sz) noexcept:
    cdef int i
    for i in range(sz):
        dst[i] = src[i]


cdef void mat_scale_copy(double* src, double* dst, int sz, double a) noexcept:
    cdef int i
    for i in range(sz):
        dst[i] = a * src[i]


cdef void mat_set_identity(double* M, int n) noexcept:
    cdef int i
    for i in range(n * n):
        M[i] = 0.0
    for i in range(n):
        M[i * n + i] = 1.0


cdef void symmetrize(double* M, int n) noexcept:
    cdef int i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (M[i * n + j] + M[j * n + i])
            M[i * n + j] = v
            M[j * n + i] = v


cdef double norm1_rm(double* A, int n) noexcept:
    # 1-norm: max absolute column sum
    cdef int i, j
    cdef double best = 0.0, s
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += A[i * n + j] if A[i * n + j] >= 0 else -A[i * n + j]
        if s > best:
            best = s
    return best


cdef int solve_left(double* M, double* B, int n, int nrhs,
                    double* Mt, double* Bt, int* ipiv) noexcept:
    # B <- M^{-1} B for general M; all row-major; Mt (n*n), Bt (n*nrhs) scratch
    cdef int info = 0
    transpose_copy(M, Mt, n, n)
    transpose_copy(B, Bt, n, nrhs)
    dgesv(&n, &nrhs, Mt, &n, ipiv, Bt, &n, &info)
    if info == 0:
        transpose_copy(Bt, B, nrhs, n)
    return info


cdef int chol_rows(double* S, int n) noexcept:
    # in-place Cholesky of a symmetric row-major matrix (column-major view
    # is the same matrix); factor stored consistently for chol_solve_rows
    cdef int info = 0
    cdef char uplo = b'U'
    dpotrf(&uplo, &n, S, &n, &info)
    return info


cdef void chol_solve_rows(double* S, double* B, int n, int nrhs) noexcept:
    # B holds nrhs right-hand-side ROWS; its column-major view is the
    # (n x nrhs) RHS matrix, solved in place
    cdef int info = 0
    cdef char uplo = b'U'
    dpotrs(&uplo, &n, &nrhs, S, &n, B, &n, &info)


# ---------------------------------------------------------------------------
# matrix exponential, degree-13 Pade with scaling and squaring
# ---------------------------------------------------------------------------

cdef double THETA13 = 5.371920351148152
cdef double ELL13 = 4.74

cdef double B13[14]
_b13_values = [
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
]
for _i in range(14):
    B13[_i] = _b13_values[_i]


cdef int expm_core(double* Ain, double* out, int n,
                   double* As, double* A2, double* A4, double* A6,
                   double* W, double* U, double* V,
                   double* Mt, double* Bt, int* ipiv) noexcept:
    # out <- expm(Ain); returns 0 on success
    cdef int sz = n * n
    cdef int i, s, info
    cdef double nrm = norm1_rm(Ain, n)
    s = 0
    if nrm > THETA13:
        s = <int>ceil(log2(nrm / THETA13))
        if s < 0:
            s = 0
    mat_scale_copy(Ain, As, sz, 1.0 / (2.0 ** s))
    rm_gemm(0, 0, n, n, n, 1.0, As, n, As, n, 0.0, A2, n)
    rm_gemm(0, 0, n, n, n, 1.0, A2, n, A2, n, 0.0, A4, n)
    rm_gemm(0, 0, n, n, n, 1.0, A2, n, A4, n, 0.0, A6, n)
    # W = A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I
    for i in range(sz):
        V[i] = B13[13] * A6[i] + B13[11] * A4[i] + B13[9] * A2[i]
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, V, n, 0.0, W, n)
    for i in range(sz):
        W[i] += B13[7] * A6[i] + B13[5] * A4[i] + B13[3] * A2[i]
    for i in range(n):
        W[i * n + i] += B13[1]
    # U = As W
    rm_gemm(0, 0, n, n, n, 1.0, As, n, W, n, 0.0, U, n)
    # V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    for i in range(sz):
        W[i] = B13[12] * A6[i] + B13[10] * A4[i] + B13[8] * A2[i]
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, W, n, 0.0, V, n)
    for i in range(sz):
        V[i] += B13[6] * A6[i] + B13[4] * A4[i] + B13[2] * A2[i]
    for i in range(n):
        V[i * n + i] += B13[0]
    # out = (V - U)^{-1} (V + U)
    for i in range(sz):
        out[i] = U[i] + V[i]
        W[i] = V[i] - U[i]
    info = solve_left(W, out, n, n, Mt, Bt, ipiv)
    if info != 0:
        return info
    for i in range(s):
        rm_gemm(0, 0, n, n, n, 1.0, out, n, out, n, 0.0, W, n)
        mat_copy(W, out, sz)
    return 0


cdef int frechet_core(double* Ain, double* Ein, double* Rout, double* Lout, int n,
                      double* As, double* Es, double* A2, double* A4, double* A6,
                      double* M2, double* M4, double* M6,
                      double* W1, double* W2, double* Z1, double* Z2,
                      double* W, double* U, double* V,
                      double* Lw, double* Lu, double* Lv,
                      double* Mt, double* Bt, int* ipiv) noexcept:
    # (Rout, Lout) <- (expm(A), Frechet derivative at A in direction E),
    # scaling-Pade-squaring recurrence at degree 13
    cdef int sz = n * n
    cdef int i, s, info
    cdef double nrm = norm1_rm(Ain, n)
    s = 0
    if nrm > ELL13:
        s = <int>ceil(log2(nrm / ELL13))
        if s < 0:
            s = 0
    mat_scale_copy(Ain, As, sz, 1.0 / (2.0 ** s))
    mat_scale_copy(Ein, Es, sz, 1.0 / (2.0 ** s))
    rm_gemm(0, 0, n, n, n, 1.0, As, n, As, n, 0.0, A2, n)
    rm_gemm(0, 0, n, n, n, 1.0, As, n, Es, n, 0.0, M2, n)
    rm_gemm(0, 0, n, n, n, 1.0, Es, n, As, n, 1.0, M2, n)
    rm_gemm(0, 0, n, n, n, 1.0, A2, n, A2, n, 0.0, A4, n)
    rm_gemm(0, 0, n, n, n, 1.0, A2, n, M2, n, 0.0, M4, n)
    rm_gemm(0, 0, n, n, n, 1.0, M2, n, A2, n, 1.0, M4, n)
    rm_gemm(0, 0, n, n, n, 1.0, A2, n, A4, n, 0.0, A6, n)
    rm_gemm(0, 0, n, n, n, 1.0, A4, n, M2, n, 0.0, M6, n)
    rm_gemm(0, 0, n, n, n, 1.0, M4, n, A2, n, 1.0, M6, n)
    for i in range(sz):
        W1[i] = B13[13] * A6[i] + B13[11] * A4[i] + B13[9] * A2[i]
        W2[i] = B13[7] * A6[i] + B13[5] * A4[i] + B13[3] * A2[i]
        Z1[i] = B13[12] * A6[i] + B13[10] * A4[i] + B13[8] * A2[i]
        Z2[i] = B13[6] * A6[i] + B13[4] * A4[i] + B13[2] * A2[i]
    for i in range(n):
        W2[i * n + i] += B13[1]
        Z2[i * n + i] += B13[0]
    # W = A6 W1 + W2 ; U = A W ; V = A6 Z1 + Z2
    mat_copy(W2, W, sz)
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, W1, n, 1.0, W, n)
    rm_gemm(0, 0, n, n, n, 1.0, As, n, W, n, 0.0, U, n)
    mat_copy(Z2, V, sz)
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, Z1, n, 1.0, V, n)
    # Lw = A6 Lw1 + M6 W1 + Lw2 with Lw1/Lw2/Lz1/Lz2 built from M powers
    for i in range(sz):
        Lw[i] = B13[7] * M6[i] + B13[5] * M4[i] + B13[3] * M2[i]
        Lv[i] = B13[6] * M6[i] + B13[4] * M4[i] + B13[2] * M2[i]
    for i in range(sz):
        Z1[i] = B13[12] * M6[i] + B13[10] * M4[i] + B13[8] * M2[i]  # Lz1
        W2[i] = B13[13] * M6[i] + B13[11] * M4[i] + B13[9] * M2[i]  # Lw1
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, W2, n, 1.0, Lw, n)
    rm_gemm(0, 0, n, n, n, 1.0, M6, n, W1, n, 1.0, Lw, n)
    # Lu = A Lw + E W ; Lv += A6 Lz1 + M6 Z1_orig -- Z1 was reused, rebuild
    rm_gemm(0, 0, n, n, n, 1.0, As, n, Lw, n, 0.0, Lu, n)
    rm_gemm(0, 0, n, n, n, 1.0, Es, n, W, n, 1.0, Lu, n)
    rm_gemm(0, 0, n, n, n, 1.0, A6, n, Z1, n, 1.0, Lv, n)
    for i in range(sz):
        Z1[i] = B13[12] * A6[i] + B13[10] * A4[i] + B13[8] * A2[i]
    rm_gemm(0, 0, n, n, n, 1.0, M6, n, Z1, n, 1.0, Lv, n)
    # R = (V - U)^{-1}(V + U); L = (V - U)^{-1}(Lu + Lv + (Lu - Lv) R)
    for i in range(sz):
        Rout[i] = U[i] + V[i]
        W[i] = V[i] - U[i]
    info = solve_left(W, Rout, n, n, Mt, Bt, ipiv)
    if info != 0:
        return info
    for i in range(sz):
        Lout[i] = Lu[i] - Lv[i]
    rm_gemm(0, 0, n, n, n, 1.0, Lout, n, Rout, n, 0.0, W1, n)
    for i in range(sz):
        Lout[i] = Lu[i] + Lv[i] + W1[i]
    for i in range(sz):
        W[i] = V[i] - U[i]
    info = solve_left(W, Lout, n, n, Mt, Bt, ipiv)
    if info != 0:
        return info
    for i in range(s):
        # L <- R L + L R ; R <- R R
        rm_gemm(0, 0, n, n, n, 1.0, Rout, n, Lout, n, 0.0, W1, n)
        rm_gemm(0, 0, n, n, n, 1.0, Lout, n, Rout, n, 1.0, W1, n)
        mat_copy(W1, Lout, sz)
        rm_gemm(0, 0, n, n, n, 1.0, Rout, n, Rout, n, 0.0, W1, n)
        mat_copy(W1, Rout, sz)
    return 0


cdef class _ExpmWork:
    # scratch shared by the expm/frechet cores, sized once per dimension
    cdef double[::1] buf
    cdef int[::1] ipiv
    cdef int n

    def __cinit__(self, int n):
        self.n = n
        self.buf = np.empty(20 * n * n, dtype=np.float64)
        self.ipiv = np.empty(max(n, 1), dtype=np.intc)

    cdef double* slot(self, int i) noexcept:
        return &self.buf[i * self.n * self.n]


cdef int _expm_into(double* A, double* out, int n, _ExpmWork w) noexcept:
    return expm_core(A, out, n, w.slot(0), w.slot(1), w.slot(2), w.slot(3),
                     w.slot(4), w.slot(5), w.slot(6), w.slot(7), w.slot(8),
                     &w.ipiv[0])


cdef int _frechet_into(double* A, double* E, double* R, double* L, int n, _ExpmWork w) noexcept:
    return frechet_core(A, E, R, L, n,
                        w.slot(0), w.slot(1), w.slot(2), w.slot(3), w.slot(4),
                        w.slot(5), w.slot(6), w.slot(7), w.slot(8), w.slot(9),
                        w.slot(10), w.slot(11), w.slot(12), w.slot(13),
                        w.slot(14), w.slot(15), w.slot(16), w.slot(17),
                        w.slot(18), w.slot(19), &w.ipiv[0])


def expm(double[:, ::1] A):
    cdef int n = A.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef _ExpmWork w = _ExpmWork(n)
    if _expm_into(&A[0, 0], &o[0, 0], n, w) != 0:
        raise NumericalError("matrix exponential solve failed")
    return out


def expm_frechet(double[:, ::1] A, double[:, ::1] E):
    cdef int n = A.shape[0]
    R = np.empty((n, n), dtype=np.float64)
    L = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] rv = R
    cdef double[:, ::1] lv = L
    cdef _ExpmWork w = _ExpmWork(n)
    if _frechet_into(&A[0, 0], &E[0, 0], &rv[0, 0], &lv[0, 0], n, w) != 0:
        raise NumericalError("matrix exponential solve failed")
    return R, L


def expm_multi(double[:, ::1] A, double[::1] taus, double sign=1.0):
    cdef int n = A.shape[0]
    cdef int N = taus.shape[0]
    out = np.empty((N, n, n), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef _ExpmWork w = _ExpmWork(n)
    scaled = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] sc = scaled
    cdef int i
    for i in range(N):
        mat_scale_copy(&A[0, 0], &sc[0, 0], n * n, sign * taus[i])
        if _expm_into(&sc[0, 0], &o[i, 0, 0], n, w) != 0:
            raise NumericalError("matrix exponential solve failed")
    return out


def phi1_multi(double[:, ::1] M, double[::1] taus):
    cdef int p = M.shape[0]
    cdef int q = 2 * p
    cdef int N = taus.shape[0]
    out = np.empty((N, p, p), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    G = np.zeros((q, q), dtype=np.float64)
    cdef double[:, ::1] g = G
    cdef int i, r, c
    for r in range(p):
        for c in range(p):
            g[r, c] = M[r, c]
        g[r, p + r] = 1.0
    scaled = np.empty((q, q), dtype=np.float64)
    eg = np.empty((q, q), dtype=np.float64)
    cdef double[:, ::1] sc = scaled
    cdef double[:, ::1] ev = eg
    cdef _ExpmWork w = _ExpmWork(q)
    for i in range(N):
        mat_scale_copy(&g[0, 0], &sc[0, 0], q * q, taus[i])
        if _expm_into(&sc[0, 0], &ev[0, 0], q, w) != 0:
            raise NumericalError("matrix exponential solve failed")
        for r in range(p):
            for c in range(p):
                o[i, r, c] = ev[r, p + c]
    return out


# ---------------------------------------------------------------------------
# filter / smoother / EM loops
# ---------------------------------------------------------------------------

def filter_forward(double[:, :, ::1] F, double[:, :, ::1] Q,
                   double[:, ::1] H, double[:, ::1] R,
                   double[::1] mu0, double[:, ::1] P0, double[:, ::1] Z):
    cdef int N = Z.shape[0]
    cdef int m = Z.shape[1]
    cdef int n = mu0.shape[0]
    mu_pr = np.empty((N, n)); P_pr = np.empty((N, n, n))
    mu_po = np.empty((N, n)); P_po = np.empty((N, n, n))
    K = np.empty((N, n, m)); ll = np.empty(N)
    cdef double[:, ::1] mpr = mu_pr
    cdef double[:, :, ::1] Ppr = P_pr
    cdef double[:, ::1] mpo = mu_po
    cdef double[:, :, ::1] Ppo = P_po
    cdef double[:, :, ::1] Kv = K
    cdef double[::1] llv = ll
    mu = np.empty(n); P = np.empty((n, n))
    S = np.empty((m, m)); HP = np.empty((m, n)); PHt = np.empty((n, m))
    nu = np.empty(m); alpha = np.empty(m)
    T1 = np.empty((n, n))
    cdef double[::1] muv = mu
    cdef double[:, ::1] Pv = P
    cdef double[:, ::1] Sv = S
    cdef double[:, ::1] HPv = HP
    cdef double[:, ::1] PHtv = PHt
    cdef double[::1] nuv = nu
    cdef double[::1] alv = alpha
    cdef double[:, ::1] T1v = T1
    cdef int k, i, j, info
    cdef double logdet, quad

    for i in range(n):
        muv[i] = mu0[i]
    mat_copy(&P0[0, 0], &Pv[0, 0], n * n)
    for k in range(N):
        if k > 0:
            # mu <- F mu ; P <- F P F^T + Q
            rm_gemm(0, 0, n, 1, n, 1.0, &F[k - 1, 0, 0], n, &muv[0], 1, 0.0, &T1v[0, 0], 1)
            for i in range(n):
                muv[i] = T1v[0, i]
            rm_gemm(0, 0, n, n, n, 1.0, &F[k - 1, 0, 0], n, &Pv[0, 0], n, 0.0, &T1v[0, 0], n)
            mat_copy(&Q[k - 1, 0, 0], &Pv[0, 0], n * n)
            rm_gemm(0, 1, n, n, n, 1.0, &T1v[0, 0], n, &F[k - 1, 0, 0], n, 1.0, &Pv[0, 0], n)
            symmetrize(&Pv[0, 0], n)
        for i in range(n):
            mpr[k, i] = muv[i]
        mat_copy(&Pv[0, 0], &Ppr[k, 0, 0], n * n)
        # S = H P H^T + R
        rm_gemm(0, 0, m, n, n, 1.0, &H[0, 0], n, &Pv[0, 0], n, 0.0, &HPv[0, 0], n)
        mat_copy(&R[0, 0], &Sv[0, 0], m * m)
        rm_gemm(0, 1, m, m, n, 1.0, &HPv[0, 0], n, &H[0, 0], n, 1.0, &Sv[0, 0], m)
        symmetrize(&Sv[0, 0], m)
        info = chol_rows(&Sv[0, 0], m)
        if info != 0:
            raise NumericalError(f"innovation covariance at step {k}: matrix not positive definite")
        logdet = 0.0
        for i in range(m):
            logdet += 2.0 * log(Sv[i, i])
        # nu = z - H mu ; alpha = S^{-1} nu
        rm_gemm(0, 0, m, 1, n, 1.0, &H[0, 0], n, &muv[0], 1, 0.0, &nuv[0], 1)
        for i in range(m):
            nuv[i] = Z[k, i] - nuv[i]
            alv[i] = nuv[i]
        chol_solve_rows(&Sv[0, 0], &alv[0], m, 1)
        quad = 0.0
        for i in range(m):
            quad += nuv[i] * alv[i]
        llv[k] = -0.5 * (m * LOG2PI + logdet + quad)
        # K = P H^T S^{-1}: rows of (P H^T) solved against S
        rm_gemm(0, 1, n, m, n, 1.0, &Pv[0, 0], n, &H[0, 0], n, 0.0, &PHtv[0, 0], m)
        chol_solve_rows(&Sv[0, 0], &PHtv[0, 0], m, n)
        mat_copy(&PHtv[0, 0], &Kv[k, 0, 0], n * m)
        # mu += K nu ; P = (I - K H) P
        rm_gemm(0, 0, n, 1, m, 1.0, &PHtv[0, 0], m, &nuv[0], 1, 0.0, &T1v[0, 0], 1)
        for i in range(n):
            muv[i] += T1v[0, i]
        rm_gemm(0, 0, n, n, m, 1.0, &PHtv[0, 0], m, &HPv[0, 0], n, 0.0, &T1v[0, 0], n)
        for i in range(n * n):
            (&Pv[0, 0])[i] -= (&T1v[0, 0])[i]
        symmetrize(&Pv[0, 0], n)
        for i in range(n):
            mpo[k, i] = muv[i]
        mat_copy(&Pv[0, 0], &Ppo[k, 0, 0], n * n)
    return mu_pr, P_pr, mu_po, P_po, K, ll


def backward_recurse(double[:, :, ::1] Fneg, double[:, :, ::1] Q,
                     double[:, ::1] H, double[:, ::1] R, double[:, ::1] Z,
                     double[:, ::1] P_init, double[::1] mu_init):
    cdef int N = Z.shape[0]
    cdef int m = Z.shape[1]
    cdef int n = mu_init.shape[0]
    mu_b = np.empty((N - 1, n)); P_b = np.empty((N - 1, n, n)); W = np.empty((N - 1, n, m))
    cdef double[:, ::1] mb = mu_b
    cdef double[:, :, ::1] Pb = P_b
    cdef double[:, :, ::1] Wv = W
    Pk = np.empty((n, n)); S = np.empty((m, m)); HP = np.empty((m, n)); PHt = np.empty((n, m))
    inner = np.empty((n, n)); T1 = np.empty((n, n)); vec = np.empty(max(n, m))
    chk = np.empty((n, n))
    cdef double[:, ::1] Pkv = Pk
    cdef double[:, ::1] Sv = S
    cdef double[:, ::1] HPv = HP
    cdef double[:, ::1] PHtv = PHt
    cdef double[:, ::1] innv = inner
    cdef double[:, ::1] T1v = T1
    cdef double[::1] vv = vec
    cdef double[:, ::1] chkv = chk
    cdef int k, i, info

    mat_copy(&P_init[0, 0], &Pb[N - 2, 0, 0], n * n)
    for i in range(n):
        mb[N - 2, i] = mu_init[i]
    for k in range(N - 2, -1, -1):
        mat_copy(&Pb[k, 0, 0], &Pkv[0, 0], n * n)
        symmetrize(&Pkv[0, 0], n)
        mat_copy(&Pkv[0, 0], &chkv[0, 0], n * n)
        if chol_rows(&chkv[0, 0], n) != 0:
            raise NumericalError(f"backward covariance at step {k}: matrix not positive definite")
        # S = H Pk H^T + R ; W = Pk H^T S^{-1}
        rm_gemm(0, 0, m, n, n, 1.0, &H[0, 0], n, &Pkv[0, 0], n, 0.0, &HPv[0, 0], n)
        mat_copy(&R[0, 0], &Sv[0, 0], m * m)
        rm_gemm(0, 1, m, m, n, 1.0, &HPv[0, 0], n, &H[0, 0], n, 1.0, &Sv[0, 0], m)
        symmetrize(&Sv[0, 0], m)
        if chol_rows(&Sv[0, 0], m) != 0:
            raise NumericalError(f"backward innovation at step {k}: matrix not positive definite")
        rm_gemm(0, 1, n, m, n, 1.0, &Pkv[0, 0], n, &H[0, 0], n, 0.0, &PHtv[0, 0], m)
        chol_solve_rows(&Sv[0, 0], &PHtv[0, 0], m, n)
        mat_copy(&PHtv[0, 0], &Wv[k, 0, 0], n * m)
        if k == 0:
            break
        # inner = Q[k-1] + (I - W H) Pk
        rm_gemm(0, 0, n, n, m, 1.0, &PHtv[0, 0], m, &HPv[0, 0], n, 0.0, &T1v[0, 0], n)
        for i in range(n * n):
            (&innv[0, 0])[i] = (&Q[k - 1, 0, 0])[i] + (&Pkv[0, 0])[i] - (&T1v[0, 0])[i]
        symmetrize(&innv[0, 0], n)
        # P_b[k-1] = E inner E^T, E = Fneg[k-1]
        rm_gemm(0, 0, n, n, n, 1.0, &Fneg[k - 1, 0, 0], n, &innv[0, 0], n, 0.0, &T1v[0, 0], n)
        rm_gemm(0, 1, n, n, n, 1.0, &T1v[0, 0], n, &Fneg[k - 1, 0, 0], n, 0.0, &Pb[k - 1, 0, 0], n)
        symmetrize(&Pb[k - 1, 0, 0], n)
        # mu_b[k-1] = E (mu_b[k] + W (z_k - H mu_b[k]))
        rm_gemm(0, 0, m, 1, n, 1.0, &H[0, 0], n, &mb[k, 0], 1, 0.0, &vv[0], 1)
        for i in range(m):
            vv[i] = Z[k, i] - vv[i]
        rm_gemm(0, 0, n, 1, m, 1.0, &PHtv[0, 0], m, &vv[0], 1, 0.0, &T1v[0, 0], 1)
        for i in range(n):
            T1v[0, i] += mb[k, i]
        rm_gemm(0, 0, n, 1, n, 1.0, &Fneg[k - 1, 0, 0], n, &T1v[0, 0], 1, 0.0, &mb[k - 1, 0], 1)
    return mu_b, P_b, W


cdef int _gain_like(double[:, :, ::1] Ppr, double[:, :, ::1] F,
                    double[:, :, ::1] Ppo, int idx, double* G, double* scr, int n) noexcept:
    # G <- Ppo[idx] F[idx]^T Ppr[idx+1]^{-1}; the buffer holds Ppo F^T whose
    # column-major view is F Ppo, so the rows-solve lands on the gain
    cdef int info
    mat_copy(&Ppr[idx + 1, 0, 0], scr, n * n)
    info = chol_rows(scr, n)
    if info != 0:
        return info
    rm_gemm(0, 1, n, n, n, 1.0, &Ppo[idx, 0, 0], n, &F[idx, 0, 0], n, 0.0, G, n)
    chol_solve_rows(scr, G, n, n)
    return 0


def rts_moments(double[:, :, ::1] F, double[:, ::1] mu_po, double[:, :, ::1] P_po,
                double[:, ::1] mu_pr, double[:, :, ::1] P_pr):
    cdef int N = mu_po.shape[0]
    cdef int n = mu_po.shape[1]
    mu_s = np.empty((N, n)); P_s = np.empty((N, n, n))
    cdef double[:, ::1] ms = mu_s
    cdef double[:, :, ::1] Ps = P_s
    G = np.empty((n, n)); scr = np.empty((n, n)); T1 = np.empty((n, n)); T2 = np.empty((n, n))
    dvec = np.empty(n)
    cdef double[:, ::1] Gv = G
    cdef double[:, ::1] scrv = scr
    cdef double[:, ::1] T1v = T1
    cdef double[:, ::1] T2v = T2
    cdef double[::1] dv = dvec
    cdef int k, i
    for i in range(n):
        ms[N - 1, i] = mu_po[N - 1, i]
    mat_copy(&P_po[N - 1, 0, 0], &Ps[N - 1, 0, 0], n * n)
    for k in range(N - 2, -1, -1):
        if _gain_like(P_pr, F, P_po, k, &Gv[0, 0], &scrv[0, 0], n) != 0:
            raise NumericalError(f"predicted covariance at step {k + 1}: matrix not positive definite")
        for i in range(n):
            dv[i] = ms[k + 1, i] - mu_pr[k + 1, i]
        rm_gemm(0, 0, n, 1, n, 1.0, &Gv[0, 0], n, &dv[0], 1, 0.0, &T1v[0, 0], 1)
        for i in range(n):
            ms[k, i] = mu_po[k, i] + T1v[0, i]
        for i in range(n * n):
            (&T1v[0, 0])[i] = (&Ps[k + 1, 0, 0])[i] - (&P_pr[k + 1, 0, 0])[i]
        rm_gemm(0, 0, n, n, n, 1.0, &Gv[0, 0], n, &T1v[0, 0], n, 0.0, &T2v[0, 0], n)
        mat_copy(&P_po[k, 0, 0], &Ps[k, 0, 0], n * n)
        rm_gemm(0, 1, n, n, n, 1.0, &T2v[0, 0], n, &Gv[0, 0], n, 1.0, &Ps[k, 0, 0], n)
        symmetrize(&Ps[k, 0, 0], n)
    cross = _cross_impl(F, mu_s, P_s, P_po, P_pr)
    return mu_s, P_s, cross


def _cross_impl(double[:, :, ::1] F, double[:, ::1] mu_s, double[:, :, ::1] P_s,
                double[:, :, ::1] P_po, double[:, :, ::1] P_pr):
    cdef int N = mu_s.shape[0]
    cdef int n = mu_s.shape[1]
    cross = np.empty((N - 1, n, n))
    cdef double[:, :, ::1] cr = cross
    G = np.empty((n, n)); scr = np.empty((n, n))
    cdef double[:, ::1] Gv = G
    cdef double[:, ::1] scrv = scr
    cdef int i, a, b
    for i in range(N - 1):
        if _gain_like(P_pr, F, P_po, i, &Gv[0, 0], &scrv[0, 0], n) != 0:
            raise NumericalError(f"predicted covariance at step {i + 1}: matrix not positive definite")
        # cov = P_s[i+1] (P_pr[i+1]^{-1} F P_po[i]) = P_s[i+1] G^T
        rm_gemm(0, 1, n, n, n, 1.0, &P_s[i + 1, 0, 0], n, &Gv[0, 0], n, 0.0, &cr[i, 0, 0], n)
        for a in range(n):
            for b in range(n):
                cr[i, a, b] += mu_s[i + 1, a] * mu_s[i, b]
    return cross


def cross_moments(F, mu_s, P_s, P_po, P_pr):
    return _cross_impl(F, mu_s, P_s, P_po, P_pr)


def fuse_moments(double[:, :, ::1] F, double[:, ::1] mu_po, double[:, :, ::1] P_po,
                 double[:, ::1] mu_pr, double[:, :, ::1] P_pr,
                 double[:, ::1] mu_b, double[:, :, ::1] P_b):
    cdef int N = mu_po.shape[0]
    cdef int n = mu_po.shape[1]
    mu_s = np.empty((N, n)); P_s = np.empty((N, n, n))
    cdef double[:, ::1] ms = mu_s
    cdef double[:, :, ::1] Ps = P_s
    Pf = np.empty((n, n)); Pb = np.empty((n, n)); Msum = np.empty((n, n))
    Y = np.empty((n, n)); T1 = np.empty((n, n)); eta = np.empty(n); rhs = np.empty(n)
    cdef double[:, ::1] Pfv = Pf
    cdef double[:, ::1] Pbv = Pb
    cdef double[:, ::1] Msv = Msum
    cdef double[:, ::1] Yv = Y
    cdef double[:, ::1] T1v = T1
    cdef double[::1] ev = eta
    cdef double[::1] rv = rhs
    cdef int k, i, info
    for i in range(n):
        ms[N - 1, i] = mu_po[N - 1, i]
    mat_copy(&P_po[N - 1, 0, 0], &Ps[N - 1, 0, 0], n * n)
    for k in range(N - 1):
        mat_copy(&P_po[k, 0, 0], &Pfv[0, 0], n * n)
        mat_copy(&P_b[k, 0, 0], &Pbv[0, 0], n * n)
        symmetrize(&Pbv[0, 0], n)
        for i in range(n * n):
            (&Msv[0, 0])[i] = (&Pfv[0, 0])[i] + (&Pbv[0, 0])[i]
        mat_copy(&Msv[0, 0], &T1v[0, 0], n * n)
        info = chol_rows(&T1v[0, 0], n)
        if info != 0:
            raise NumericalError(f"singular fusion at step {k}")
        # Y = Pb Msum^{-1}  (rows trick on RHS Pb)
        mat_copy(&Pbv[0, 0], &Yv[0, 0], n * n)
        chol_solve_rows(&T1v[0, 0], &Yv[0, 0], n, n)
        # Ps = (Y^T applied to Pf)^T = Pf Msum^{-1} Pb
        rm_gemm(0, 0, n, n, n, 1.0, &Yv[0, 0], n, &Pfv[0, 0], n, 0.0, &T1v[0, 0], n)
        transpose_copy(&T1v[0, 0], &Ps[k, 0, 0], n, n)
        symmetrize(&Ps[k, 0, 0], n)
        # eta = Pf^{-1} mu_f + Pb^{-1} mu_b
        mat_copy(&Pfv[0, 0], &T1v[0, 0], n * n)
        if chol_rows(&T1v[0, 0], n) != 0:
            raise NumericalError(f"forward posterior at step {k}: matrix not positive definite")
        for i in range(n):
            ev[i] = mu_po[k, i]
        chol_solve_rows(&T1v[0, 0], &ev[0], n, 1)
        mat_copy(&Pbv[0, 0], &T1v[0, 0], n * n)
        if chol_rows(&T1v[0, 0], n) != 0:
            raise NumericalError(f"backward covariance at step {k}: matrix not positive definite")
        for i in range(n):
            rv[i] = mu_b[k, i]
        chol_solve_rows(&T1v[0, 0], &rv[0], n, 1)
        for i in range(n):
            ev[i] += rv[i]
        rm_gemm(0, 0, n, 1, n, 1.0, &Ps[k, 0, 0], n, &ev[0], 1, 0.0, &ms[k, 0], 1)
    cross = _cross_impl(F, mu_s, P_s, P_po, P_pr)
    return mu_s, P_s, cross


def a_misfit_grad(double[:, ::1] A, double[::1] taus, double[:, :, ::1] Qinv,
                  double[:, :, ::1] Exx, double[:, :, ::1] cross, bint want_grad):
    cdef int n = A.shape[0]
    cdef int N1 = taus.shape[0]
    G = np.zeros((n, n))
    cdef double[:, ::1] Gv = G
    At = np.empty((n, n)); AtT = np.empty((n, n)); Ph = np.empty((n, n))
    V = np.empty((n, n)); L = np.empty((n, n)); T1 = np.empty((n, n)); T2 = np.empty((n, n))
    cdef double[:, ::1] Atv = At
    cdef double[:, ::1] AtTv = AtT
    cdef double[:, ::1] Phv = Ph
    cdef double[:, ::1] Vv = V
    cdef double[:, ::1] Lv_ = L
    cdef double[:, ::1] T1v = T1
    cdef double[:, ::1] T2v = T2
    cdef _ExpmWork w = _ExpmWork(n)
    cdef double J = 0.0
    cdef double t, acc
    cdef int i, a, b

    for i in range(N1):
        t = taus[i]
        mat_scale_copy(&A[0, 0], &Atv[0, 0], n * n, t)
        if _expm_into(&Atv[0, 0], &Phv[0, 0], n, w) != 0:
            raise NumericalError("matrix exponential solve failed")
        # B = Exx[i+1] - Ph C^T - C Ph^T + Ph M Ph^T ; J += sum(B * Qinv)
        rm_gemm(0, 0, n, n, n, 1.0, &Phv[0, 0], n, &Exx[i, 0, 0], n, 0.0, &T1v[0, 0], n)
        # T2 = (Ph M) Ph^T - Ph C^T => (Ph M - C) Ph^T
        for a in range(n * n):
            (&T1v[0, 0])[a] -= (&cross[i, 0, 0])[a]
        rm_gemm(0, 1, n, n, n, 1.0, &T1v[0, 0], n, &Phv[0, 0], n, 0.0, &T2v[0, 0], n)
        # T2 now = Ph M Ph^T - C Ph^T ; subtract Ph C^T and add Exx[i+1]
        rm_gemm(0, 1, n, n, n, -1.0, &Phv[0, 0], n, &cross[i, 0, 0], n, 1.0, &T2v[0, 0], n)
        acc = 0.0
        for a in range(n * n):
            acc += ((&Exx[i + 1, 0, 0])[a] + (&T2v[0, 0])[a]) * (&Qinv[i, 0, 0])[a]
        J += acc
        if want_grad:
            # V = Qinv (C - Ph M) ; G += t * Lfrechet(At^T, V)
            rm_gemm(0, 0, n, n, n, 1.0, &Phv[0, 0], n, &Exx[i, 0, 0], n, 0.0, &T1v[0, 0], n)
            for a in range(n * n):
                (&T1v[0, 0])[a] = (&cross[i, 0, 0])[a] - (&T1v[0, 0])[a]
            rm_gemm(0, 0, n, n, n, 1.0, &Qinv[i, 0, 0], n, &T1v[0, 0], n, 0.0, &Vv[0, 0], n)
            transpose_copy(&Atv[0, 0], &AtTv[0, 0], n, n)
            if _frechet_into(&AtTv[0, 0], &Vv[0, 0], &T2v[0, 0], &Lv_[0, 0], n, w) != 0:
                raise NumericalError("matrix exponential solve failed")
            for a in range(n * n):
                (&Gv[0, 0])[a] += t * (&Lv_[0, 0])[a]
    if want_grad:
        return J, G
    return J, None
