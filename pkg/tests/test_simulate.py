import numpy as np
import pytest

from cdlds.model import ModelParams
from cdlds.simulate import (
    ToggleRates,
    beta_steps,
    promoter_activity,
    promoter_activity_deriv,
    sample_trajectory,
    toggle_switch_dynamics,
    uniform_breaks,
)


class TestPromoterActivity:
    def test_unrepressed(self):
        assert promoter_activity(0.0, 5.0, 200.0) == 1.0

    def test_value_at_high_occupancy(self):
        assert promoter_activity(341.0 / 5.0, 5.0, 200.0) == pytest.approx(0.021270, abs=1e-6)

    def test_value_in_unit_interval(self):
        g = promoter_activity(11.0 / 5.0, 5.0, 200.0)
        q = (11.0 / 5.0) / 10.0
        direct = (1 + (q / 200.0) * (2 + q)) / (1 + q) ** 2
        assert 0 < g < 1 and g == pytest.approx(direct, rel=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            promoter_activity(-1.0, 5.0, 200.0)

    def test_derivative_values(self):
        assert promoter_activity_deriv(2.0, 5.0, 1.0) == 0.0
        assert promoter_activity_deriv(11.0 / 5.0, 5.0, 200.0) == pytest.approx(-0.109591, abs=1e-6)
        assert promoter_activity_deriv(341.0 / 5.0, 5.0, 200.0) == pytest.approx(-4.1613e-4, abs=1e-8)

    def test_derivative_matches_finite_difference(self):
        h = 1e-7
        r = 3.7
        fd = (promoter_activity(r + h, 5.0, 200.0) - promoter_activity(r - h, 5.0, 200.0)) / (2 * h)
        assert promoter_activity_deriv(r, 5.0, 200.0) == pytest.approx(fd, rel=1e-6)


class TestToggleDynamics:
    def test_matrix_values(self):
        A, B = toggle_switch_dynamics()
        assert A[0, 0] == A[1, 1] == -0.02
        assert A[0, 1] == pytest.approx(-8.3226e-4, abs=1e-7)
        assert A[1, 0] == pytest.approx(-0.219182, abs=1e-6)
        # direct evaluation: 100 * 0.2 * g(341/5) + 0.02 * (11/5)
        assert B[0, 0] == pytest.approx(0.4694165, abs=1e-6)
        assert B[0, 1] == B[1, 0] == 0.0
        assert np.linalg.eigvalsh(B).min() > 0

    def test_spectral_radius(self):
        A, _ = toggle_switch_dynamics()
        rho = max(abs(np.linalg.eigvals(A)))
        assert rho == pytest.approx(0.034, abs=1e-3)

    def test_stability(self):
        A, _ = toggle_switch_dynamics()
        assert np.all(np.linalg.eigvals(A).real < 0)

    def test_scaling_scales_eigenvalues(self):
        A, _ = toggle_switch_dynamics()
        w = np.sort(np.linalg.eigvals(A))
        w30 = np.sort(np.linalg.eigvals(30 * A))
        assert np.allclose(w30, 30 * w)

    def test_no_repression_limit(self):
        rates = ToggleRates(omega=1.0 + 1e-12, r1=3.0, r2=3.0)
        A, _ = toggle_switch_dynamics(rates)
        assert abs(A[0, 1]) < 1e-12 and abs(A[1, 0]) < 1e-12
        assert np.allclose(np.diag(A), -rates.beta_p)

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            ToggleRates(omega=0.5)
        with pytest.raises(ValueError):
            ToggleRates(alpha_m=-1.0)


class TestSampleTrajectory:
    def test_noiseless_flow(self):
        from cdlds import kernels

        A, _ = toggle_switch_dynamics()
        params = ModelParams(
            A=A, Qc=np.zeros((2, 2)), H=np.eye(2), R=np.zeros((2, 2)),
            mu0=np.array([1.0, 2.0]), P0=np.zeros((2, 2)),
        )
        times = np.array([0.0, 0.7, 1.5, 4.0])
        traj = sample_trajectory(params, times, 0)
        for k, t in enumerate(times):
            want = kernels.expm(A, t - times[0]) @ params.mu0
            assert np.allclose(traj.observed[k], want, atol=1e-12)

    def test_deterministic_given_seed(self):
        params = ModelParams(
            A=-0.3 * np.eye(2), Qc=np.eye(2), H=np.eye(2), R=0.5 * np.eye(2),
            mu0=np.zeros(2), P0=np.eye(2),
        )
        times = np.linspace(0.0, 5.0, 20)
        t1 = sample_trajectory(params, times, 99)
        t2 = sample_trajectory(params, times, 99)
        assert np.array_equal(t1.latent, t2.latent)
        assert np.array_equal(t1.observed, t2.observed)
        t3 = sample_trajectory(params, times, 100)
        assert not np.array_equal(t1.latent, t3.latent)

    def test_stationary_variance(self):
        # Ornstein-Uhlenbeck: var -> q / (2|a|)
        a, q = -0.5, 1.0
        params = ModelParams(
            A=np.array([[a]]), Qc=np.array([[q]]), H=np.eye(1), R=np.zeros((1, 1)),
            mu0=np.zeros(1), P0=np.array([[q / (2 * abs(a))]]),
        )
        times = np.arange(10000) * 2.0
        traj = sample_trajectory(params, times, 7)
        assert np.var(traj.latent) == pytest.approx(q / (2 * abs(a)), rel=0.05)

    def test_time_shift_invariance(self):
        params = ModelParams(
            A=-0.4 * np.eye(2), Qc=np.eye(2), H=np.eye(2), R=np.eye(2),
            mu0=np.ones(2), P0=np.eye(2),
        )
        times = np.cumsum(np.random.default_rng(1).uniform(0.1, 1.0, 15))
        t1 = sample_trajectory(params, times, 11)
        t2 = sample_trajectory(params, times + 137.0, 11)
        assert np.allclose(t1.latent, t2.latent, atol=1e-12)

    def test_rejects_unsorted_times(self):
        params = ModelParams(
            A=np.eye(1), Qc=np.eye(1), H=np.eye(1), R=np.eye(1), mu0=np.zeros(1), P0=np.eye(1)
        )
        with pytest.raises(ValueError):
            sample_trajectory(params, np.array([0.0, 0.0]), 0)


class TestStepSamplers:
    def test_uniform_breaks_partition(self):
        taus = uniform_breaks(10.0, 2, 3)
        assert taus.shape == (2,) and taus.sum() == pytest.approx(10.0, abs=1e-12)
        for seed in range(5):
            taus = uniform_breaks(7.5, 40, seed)
            assert np.all(taus > 0)
            assert taus.sum() == pytest.approx(7.5, abs=1e-12)

    def test_uniform_breaks_mean_gap(self):
        means = [uniform_breaks(20.0, 40, s).mean() for s in range(300)]
        assert np.mean(means) == pytest.approx(0.5, rel=0.02)

    def test_beta_delta_limit(self):
        taus = beta_steps(10000.0, 200, 0.5, 21)
        assert np.std(taus) < 0.01 * 0.5
        assert np.mean(taus) == pytest.approx(0.25, rel=0.01)

    def test_beta_uniform_case(self):
        taus = beta_steps(1.0, 4000, 1.0, 5)
        assert np.all((taus >= 0) & (taus <= 1))
        # uniform moments
        assert np.mean(taus) == pytest.approx(0.5, abs=0.02)
        assert np.var(taus) == pytest.approx(1.0 / 12.0, rel=0.1)

    def test_beta_expected_total_time(self):
        totals = [beta_steps(2.0, 40, 0.5, s).sum() for s in range(300)]
        assert np.mean(totals) == pytest.approx(10.0, rel=0.02)

    def test_beta_clamps_tiny_gaps(self):
        taus = beta_steps(0.05, 2000, 0.5, 9)
        assert np.all(taus >= 1e-9 * 0.5)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            uniform_breaks(1.0, 1, 0)
        with pytest.raises(ValueError):
            uniform_breaks(0.0, 5, 0)
        with pytest.raises(ValueError):
            beta_steps(0.0, 10, 0.5, 0)
