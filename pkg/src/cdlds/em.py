"""Continuous-time M-step updates and the EM loop.

The dynamics update is a second-order closed form (trace-weighted least
squares, or an analytical variant when the dynamics commute with the step
noise), optionally refined by Newton-CG on the expected transition misfit
whose gradient comes from Frechet derivatives of the matrix exponential.
The diffusion update inverts the integral relation between the differential
covariance and the per-step residual covariance. The remaining parameters
have the familiar closed forms.
"""

import json
import warnings as _warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .errors import NumericalError
from .filtering import forward_filter, log_likelihood
from .model import ModelParams, require_valid
from .smoothing import two_filter_smoother

_PARAM_NAMES = ("A", "Qc", "H", "R", "mu0", "P0")


@dataclass(frozen=True)
class EMOptions:
    """Knobs of the EM loop.

    ``fixed`` names parameters excluded from updating. ``assume_commuting``
    skips the commutator test and takes the analytical dynamics branch.
    """

    tol: float = 1e-6
    max_iters: int = 100
    refine_A: bool = True
    assume_commuting: bool = False
    diagonal_Qc: bool = False
    fixed: frozenset = frozenset()

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        # F and Q are the discrete baseline's parameter names
        unknown = set(self.fixed) - set(_PARAM_NAMES) - {"F", "Q"}
        if unknown:
            raise ValueError(f"unknown fixed parameter names: {sorted(unknown)}")
        object.__setattr__(self, "fixed", frozenset(self.fixed))


@dataclass
class EMReport:
    """Per-iteration iterates and log-likelihood trace.

    ``iterates[0]`` is the initial parameter set, so it has one more entry
    than ``loglik_trace``; ``loglik0`` is the log-likelihood at the initial
    parameters.
    """

    iterates: list
    loglik_trace: np.ndarray
    converged: bool
    iterations: int
    warnings: list
    loglik0: float

    def final_params(self):
        return self.iterates[-1]

    def to_json(self, path):
        p = self.final_params()
        doc = {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "loglik0": float(self.loglik0),
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "warnings": list(self.warnings),
            "final_params": {k: getattr(p, k).tolist() for k in _PARAM_NAMES},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _sym(S):
    return 0.5 * (S + S.T)


def _psd_repair(S, scale_dim):
    """Symmetrize; project onto the PSD cone with a jitter floor when the
    Cholesky factorization fails."""
    S = _sym(S)
    try:
        np.linalg.cholesky(S)
        return S
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(float(np.trace(S)) / scale_dim, 1.0)
        return kernels.nearest_psd(S, jitter)


def _solve_right(B, X, context):
    # A = B X^{-1} without forming the inverse
    try:
        return np.ascontiguousarray(np.linalg.solve(X.T, B.T).T)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{context} is singular; provide more data or regularize") from None


def update_A_lsq(moments, taus):
    """Trace-weighted second-order dynamics update.

    Accurate when the per-step rotation ``A tau`` is small; also the
    initial condition for the Newton-CG refinement.
    """
    if len(taus) < 1:
        raise ValueError("need at least two observations")
    num = 0.0
    den = 0.0
    for i, t in enumerate(taus):
        M = moments.Exx[i]
        w = float(np.trace(M))
        num = num + (t * w) * (moments.cross[i] - M)
        den = den + (t * t * w) * M
    return _solve_right(num, den, "dynamics normal matrix")


def commutator_ok(A, Qtaus, rtol=1e-10):
    """True when A commutes with every per-step noise covariance."""
    nA = np.linalg.norm(A)
    for Q in Qtaus:
        lhs = np.linalg.norm(A @ Q - Q @ A)
        if lhs > rtol * nA * np.linalg.norm(Q):
            return False
    return True


def update_A_commuting(moments, taus, Qtaus, A_prev=None):
    """Analytical second-order dynamics update for commuting noise.

    Valid when the previous dynamics commute with every Q(tau_k); when the
    commutator test fails the trace-weighted update is used instead and a
    warning is emitted.
    """
    if A_prev is not None and not commutator_ok(A_prev, Qtaus):
        _warnings.warn("dynamics do not commute with step noise; using least-squares update")
        return update_A_lsq(moments, taus)
    num = 0.0
    den = 0.0
    for i, t in enumerate(taus):
        c = scipy.linalg.cho_factor(Qtaus[i], lower=True)
        M = moments.Exx[i]
        num = num + scipy.linalg.cho_solve(c, moments.cross[i] - M)
        den = den + t * scipy.linalg.cho_solve(c, M)
    return _solve_right(num, den, "dynamics normal matrix")


def _qinv_stack(Qtaus):
    out = np.empty_like(Qtaus)
    eye = np.eye(Qtaus.shape[1])
    for i in range(Qtaus.shape[0]):
        try:
            c = scipy.linalg.cho_factor(Qtaus[i], lower=True)
        except scipy.linalg.LinAlgError:
            raise NumericalError(f"step noise covariance {i} not positive definite") from None
        out[i] = scipy.linalg.cho_solve(c, eye)
        out[i] = _sym(out[i])
    return out


def expected_loglik_A(A, moments, taus, Qtaus):
    """Expected transition misfit as a function of the dynamics matrix.

    This is the nonnegative trace quadratic whose minimizer is the M-step
    dynamics; the expected log-density equals a constant minus half of it.
    """
    Qinv = _qinv_stack(np.asarray(Qtaus, dtype=float))
    J, _ = kernels.a_misfit_grad(
        np.ascontiguousarray(A, dtype=float), taus, Qinv, moments.Exx, moments.cross, False
    )
    return J


def grad_A(A, moments, taus, Qtaus):
    """Gradient of the expected log-density with respect to the dynamics.

    Equals -1/2 of the misfit gradient; evaluated through Frechet
    derivatives of the matrix exponential, one per time step.
    """
    Qinv = _qinv_stack(np.asarray(Qtaus, dtype=float))
    _, G = kernels.a_misfit_grad(
        np.ascontiguousarray(A, dtype=float), taus, Qinv, moments.Exx, moments.cross, True
    )
    return G


def grad_A_series(A, moments, taus, Qtaus, terms=30):
    """Truncated double-series form of :func:`grad_A` (independent route)."""
    A = np.asarray(A, dtype=float)
    Qinv = _qinv_stack(np.asarray(Qtaus, dtype=float))
    G = np.zeros_like(A)
    for i, t in enumerate(taus):
        T = A.T * t
        V = Qinv[i] @ (moments.cross[i] - kernels.expm(A, t) @ moments.Exx[i])
        S = V.copy()
        Tpow = np.eye(A.shape[0])
        acc = S / 1.0  # r = 0 term, 1/(0+1)!
        fact = 1.0
        for r in range(1, terms + 1):
            Tpow = Tpow @ T
            S = T @ S + V @ Tpow
            fact *= r + 1
            acc = acc + S / fact
        G += t * acc
    return G


def refine_A_newton_cg(A0, moments, taus, Qtaus, grad_tol=1e-8, outer_cap=50, cg_cap=None):
    """Newton-CG refinement of the dynamics matrix.

    Minimizes the expected transition misfit starting from A0.
    Hessian-vector products use central differences of the gradient; the
    line search is Armijo backtracking. The result never has a larger
    misfit than A0; on line-search failure the best iterate so far is
    returned with a warning.
    """
    A0 = np.ascontiguousarray(A0, dtype=float)
    n = A0.shape[0]
    if cg_cap is None:
        cg_cap = n * n
    taus = np.ascontiguousarray(taus, dtype=float)
    Qinv = _qinv_stack(np.asarray(Qtaus, dtype=float))
    Exx, cross = moments.Exx, moments.cross

    def value(A):
        J, _ = kernels.a_misfit_grad(A, taus, Qinv, Exx, cross, False)
        return J

    def val_grad(A):
        J, G = kernels.a_misfit_grad(A, taus, Qinv, Exx, cross, True)
        return J, -2.0 * G  # misfit gradient

    x = A0.copy()
    f, g = val_grad(x)
    for _ in range(outer_cap):
        gnorm = np.linalg.norm(g)
        if gnorm <= grad_tol:
            break
        h = 1e-6 * (1.0 + np.linalg.norm(x))

        def hess_vec(v):
            eps = h / max(1.0, np.linalg.norm(v))
            _, gp = val_grad(np.ascontiguousarray(x + eps * v))
            _, gm = val_grad(np.ascontiguousarray(x - eps * v))
            return (gp - gm) / (2.0 * eps)

        # truncated CG for the Newton direction
        d = np.zeros_like(x)
        r = -g
        p = r.copy()
        rs = float(np.sum(r * r))
        stop = min(0.5, np.sqrt(gnorm)) * gnorm
        for _cg in range(cg_cap):
            Hp = hess_vec(p)
            curv = float(np.sum(p * Hp))
            if curv <= 0.0:
                if _cg == 0:
                    d = r.copy()
                break
            alpha = rs / curv
            d += alpha * p
            r -= alpha * Hp
            rs_new = float(np.sum(r * r))
            if np.sqrt(rs_new) <= stop:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        gd = float(np.sum(g * d))
        if gd >= 0.0 or not np.all(np.isfinite(d)):
            d = -g
            gd = -gnorm * gnorm
        t = 1.0
        accepted = False
        while t >= 1e-12:
            xn = np.ascontiguousarray(x + t * d)
            fn = value(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * t * gd:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            _warnings.warn("dynamics line search stalled; returning best iterate")
            break
        step = t * np.linalg.norm(d)
        x, f = xn, fn
        _, g = val_grad(x)
        if step <= 1e-10 * (1.0 + np.linalg.norm(x)):
            break
    return x


def transition_residual_cov(A, moments, taus):
    """Per-step E[(x_k - F x_{k-1})(x_k - F x_{k-1})^T] from the moments."""
    F = kernels.expm_multi(np.asarray(A, dtype=float), taus)
    N1 = len(taus)
    out = np.empty_like(F)
    for i in range(N1):
        C = moments.cross[i]
        Z = moments.Exx[i + 1] - F[i] @ C.T - C @ F[i].T + F[i] @ moments.Exx[i] @ F[i].T
        out[i] = _sym(Z)
    return out


def update_Qc(A, moments, taus):
    """Closed-form diffusion update: average of per-step integral inversions.

    Each step maps the residual covariance back through the integral of the
    covariance-flow exponential; that integral operator is applied by a
    linear solve so singular flow generators (e.g. A = 0) are handled.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Zs = transition_residual_cov(A, moments, taus)
    G = kernels.build_AP(A)
    Phi = kernels.phi1_multi(G, np.ascontiguousarray(taus, dtype=float))
    rhs = np.stack([kernels.vech(Z) for Z in Zs])
    try:
        ys = np.linalg.solve(Phi, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise NumericalError("integrated covariance map is singular") from None
    Qc = kernels.unvech(ys.mean(axis=0))
    return _psd_repair(Qc, n)


def update_Qc_normal_equations(A, moments, taus):
    """Stacked least-squares variant of the diffusion update.

    Solves the full regression of per-step residual covariances on the
    integral maps; rank deficiency yields the least-norm solution.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Zs = transition_residual_cov(A, moments, taus)
    G = kernels.build_AP(A)
    Phi = kernels.phi1_multi(G, np.ascontiguousarray(taus, dtype=float))
    p = Phi.shape[1]
    Fbig = Phi.reshape(-1, p)
    zbig = np.concatenate([kernels.vech(Z) for Z in Zs])
    sol, *_ = np.linalg.lstsq(Fbig, zbig, rcond=None)
    Qc = kernels.unvech(sol)
    return _psd_repair(Qc, n)


def apply_diagonal_constraint(Qc):
    """Zero the off-diagonal entries (white-noise diffusion structure)."""
    return np.diag(np.diag(np.asarray(Qc, dtype=float)))


def update_H(moments, data):
    """Observation-map update from smoothed first and second moments."""
    Czx = data.obs.T @ moments.mu_s
    S = moments.Exx.sum(axis=0)
    try:
        return np.linalg.solve(S, Czx.T).T
    except np.linalg.LinAlgError:
        raise NumericalError("sum of state second moments is singular") from None


def update_R(moments, data, H):
    """Observation-noise update using the freshly updated H."""
    N = data.N
    Czz = data.obs.T @ data.obs
    Czx = data.obs.T @ moments.mu_s
    S = moments.Exx.sum(axis=0)
    R = (Czz - H @ Czx.T - Czx @ H.T + H @ S @ H.T) / N
    return _psd_repair(R, H.shape[0])


def update_mu0(moments):
    return moments.mu_s[0].copy()


def update_P0(moments, mu0):
    P0 = moments.Exx[0] - np.outer(mu0, mu0)
    return _psd_repair(P0, mu0.shape[0])


def default_init(data, seed, n=None):
    """Random stable initialization for EM.

    Dynamics entries are N(0, 0.1) shifted down the diagonal past their own
    spectral radius; the diffusion scale comes from first differences of
    the observations over the mean gap.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    if n is None:
        n = data.m
    M = rng.normal(0.0, 0.1, size=(n, n))
    rho = max(abs(np.linalg.eigvals(M)))
    A0 = M - (0.5 + rho) * np.eye(n)
    dz = np.diff(data.obs, axis=0)
    scale = float(np.var(dz)) / max(float(np.mean(data.taus)), 1e-12)
    Qc0 = max(scale, 1e-8) * np.eye(n)
    return A0, Qc0


def run_em(params0, data, opts=EMOptions()):
    """Alternate smoothing and parameter updates until the log-likelihood
    stabilizes.

    Per iteration: smoothed moments at the current parameters, then updates
    in the order mu0, P0, A (second-order initializer, optional Newton-CG
    refinement), Qc, H, R, honoring ``opts.fixed``. The per-step noise
    entering the dynamics update stays fixed at the previous iterate.
    Numerical failures abort with a partial report carrying the reason.
    """
    require_valid(params0)
    if data.N < 2:
        raise ValueError("EM needs at least two observations")
    params = params0
    iterates = [params0]
    trace = []
    report_warnings = []
    converged = False
    iterations = 0
    try:
        fp = forward_filter(params, data)
    except NumericalError as exc:
        return EMReport([params0], np.array([]), False, 0, [f"aborted before iteration 1: {exc}"], np.nan)
    loglik0 = log_likelihood(fp)
    L_prev = loglik0
    for i in range(1, opts.max_iters + 1):
        try:
            with _warnings.catch_warnings(record=True) as caught:
                _warnings.simplefilter("always")
                moments = two_filter_smoother(params, data, fp)
                mu0 = update_mu0(moments) if "mu0" not in opts.fixed else params.mu0
                P0 = update_P0(moments, mu0) if "P0" not in opts.fixed else params.P0
                if "A" not in opts.fixed:
                    Qtaus = fp.Q
                    if opts.assume_commuting or commutator_ok(params.A, Qtaus):
                        A = update_A_commuting(moments, data.taus, Qtaus, A_prev=params.A)
                    else:
                        A = update_A_lsq(moments, data.taus)
                    if opts.refine_A:
                        A = refine_A_newton_cg(A, moments, data.taus, Qtaus)
                else:
                    A = params.A
                if "Qc" not in opts.fixed:
                    Qc = update_Qc(A, moments, data.taus)
                    if opts.diagonal_Qc:
                        Qc = apply_diagonal_constraint(Qc)
                        Qc = _psd_repair(Qc, Qc.shape[0])
                else:
                    Qc = params.Qc
                H = update_H(moments, data) if "H" not in opts.fixed else params.H
                R = update_R(moments, data, H) if "R" not in opts.fixed else params.R
                params = ModelParams(A=A, Qc=Qc, H=H, R=R, mu0=mu0, P0=P0)
                fp = forward_filter(params, data)
            report_warnings.extend(f"iteration {i}: {w.message}" for w in caught)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            # ValueError covers updated parameters that fail validation
            # (e.g. overflow to non-finite entries on divergent fits)
            report_warnings.append(f"aborted at iteration {i}: {exc}")
            break
        L_new = log_likelihood(fp)
        iterates.append(params)
        trace.append(L_new)
        iterations = i
        if abs(L_new - L_prev) < opts.tol:
            converged = True
            break
        L_prev = L_new
    return EMReport(
        iterates=iterates,
        loglik_trace=np.array(trace),
        converged=converged,
        iterations=iterations,
        warnings=report_warnings,
        loglik0=loglik0,
    )
