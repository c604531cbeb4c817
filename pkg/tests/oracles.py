"""Independent oracles the implementation is checked against.

Everything here deliberately avoids the package's own computational paths:
series summation instead of Pade, adaptive quadrature instead of the
half-vectorized flow, and dense joint-Gaussian conditioning instead of the
recursive filters.
"""

import numpy as np
import scipy.integrate
import scipy.linalg


def taylor_expm(M, t=1.0):
    """Truncated Taylor series for e^{Mt}, summed to machine precision."""
    X = np.asarray(M, dtype=float) * t
    term = np.eye(X.shape[0])
    total = term.copy()
    for k in range(1, 300):
        term = term @ X / k
        total += term
        if np.linalg.norm(term) <= 1e-18 * max(1.0, np.linalg.norm(total)):
            break
    return total


def quadrature_noise_cov(A, Qc, tau):
    """Adaptive quadrature of the accumulated-noise integrand."""

    def f(s):
        E = scipy.linalg.expm(A * (tau - s))
        return E @ Qc @ E.T

    out, _ = scipy.integrate.quad_vec(f, 0.0, tau, epsabs=1e-12, epsrel=1e-12)
    return out


def quadrature_phi1(M, t):
    def f(s):
        return scipy.linalg.expm(M * s)

    out, _ = scipy.integrate.quad_vec(f, 0.0, t, epsabs=1e-12, epsrel=1e-12)
    return out


def central_diff(f, x, h=1e-6):
    """Entrywise central finite differences of a scalar function of a matrix."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


class JointGaussian:
    """Dense joint distribution of all latent states and observations.

    Built directly from the exact one-step discretizations, so conditioning
    on arbitrary observation subsets gives ground truth for filtering,
    smoothing, and the backward likelihood.
    """

    def __init__(self, params, times):
        from cdlds.model import discretize_steps

        times = np.asarray(times, dtype=float)
        N = len(times)
        n = params.n
        m = params.m
        taus = np.diff(times)
        F, Q = discretize_steps(params.A, params.Qc, taus)
        mu = np.zeros(N * n)
        mu[:n] = params.mu0
        marg = [params.P0]
        for k in range(1, N):
            mu[k * n : (k + 1) * n] = F[k - 1] @ mu[(k - 1) * n : k * n]
            marg.append(F[k - 1] @ marg[-1] @ F[k - 1].T + Q[k - 1])
        C = np.zeros((N * n, N * n))
        # transition products Phi(k, j) = F_{k-1} ... F_j applied to P_j
        for j in range(N):
            C[j * n : (j + 1) * n, j * n : (j + 1) * n] = marg[j]
            block = marg[j]
            for k in range(j + 1, N):
                block = block @ F[k - 1].T
                C[j * n : (j + 1) * n, k * n : (k + 1) * n] = block
                C[k * n : (k + 1) * n, j * n : (j + 1) * n] = block.T
        Hb = np.kron(np.eye(N), params.H)
        self.n, self.m, self.N = n, m, N
        self.mu_x = mu
        self.C_x = C
        self.mu_z = Hb @ mu
        self.C_zx = Hb @ C
        self.C_z = Hb @ C @ Hb.T + np.kron(np.eye(N), params.R)

    def _z_idx(self, obs_steps):
        return np.concatenate([np.arange(k * self.m, (k + 1) * self.m) for k in obs_steps])

    def condition_x(self, z, obs_steps):
        """Mean and covariance of all states given the listed observations."""
        zi = self._z_idx(obs_steps)
        Cz = self.C_z[np.ix_(zi, zi)]
        Czx = self.C_zx[zi, :]
        sol = np.linalg.solve(Cz, np.concatenate([z[k] for k in obs_steps]) - self.mu_z[zi])
        mean = self.mu_x + Czx.T @ sol
        cov = self.C_x - Czx.T @ np.linalg.solve(Cz, Czx)
        return mean, cov

    def state_posterior(self, z, k, obs_steps):
        mean, cov = self.condition_x(z, obs_steps)
        sl = slice(k * self.n, (k + 1) * self.n)
        return mean[sl], cov[sl, sl]

    def pair_posterior(self, z, k, obs_steps):
        """Joint posterior of (x_k, x_{k-1}) given the listed observations."""
        mean, cov = self.condition_x(z, obs_steps)
        a = slice(k * self.n, (k + 1) * self.n)
        b = slice((k - 1) * self.n, k * self.n)
        return mean[a], mean[b], cov[a, b]

    def backward_density(self, z, k):
        """Likelihood of future observations normalized as a Gaussian in x_k.

        Computed by information subtraction: condition x_k on z_{k+1:N-1},
        then remove the prior marginal information.
        """
        future = list(range(k + 1, self.N))
        m1, S1 = self.state_posterior(z, k, future)
        sl = slice(k * self.n, (k + 1) * self.n)
        m0 = self.mu_x[sl]
        S0 = self.C_x[sl, sl]
        I1 = np.linalg.inv(S1)
        I0 = np.linalg.inv(S0)
        P = np.linalg.inv(I1 - I0)
        mu = P @ (I1 @ m1 - I0 @ m0)
        return mu, P

    def log_evidence(self, z, obs_steps=None):
        if obs_steps is None:
            obs_steps = list(range(self.N))
        zi = self._z_idx(obs_steps)
        Cz = self.C_z[np.ix_(zi, zi)]
        r = np.concatenate([z[k] for k in obs_steps]) - self.mu_z[zi]
        sign, logdet = np.linalg.slogdet(Cz)
        quad = r @ np.linalg.solve(Cz, r)
        return -0.5 * (len(zi) * np.log(2 * np.pi) + logdet + quad)
