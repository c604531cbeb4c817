import numpy as np
import pytest

from cdlds import kernels
from cdlds.bench import (
    ExperimentConfig,
    LossRecord,
    loss_covariance_continuous,
    loss_covariance_discrete,
    loss_dynamics_continuous,
    loss_dynamics_discrete,
    read_records,
    run_uniform_breaks,
    run_beta_steps,
    summarize,
    write_records,
)
from cdlds.simulate import toggle_switch_dynamics

from oracles import quadrature_noise_cov


class TestLosses:
    def test_exact_parameters_give_zero(self, rng):
        A, B = toggle_switch_dynamics()
        tau = 0.5
        assert loss_dynamics_discrete(A, tau, kernels.expm(A, tau)) == 0.0
        assert loss_dynamics_continuous(A, tau, A) == 0.0
        Qt = kernels.noise_covariance_Q(A, B, tau)
        assert loss_covariance_discrete(A, B, tau, Qt) == 0.0
        assert loss_covariance_continuous(A, B, tau, B) == 0.0

    def test_perturbation_norm(self, rng):
        A, _ = toggle_switch_dynamics()
        tau = 0.5
        E = rng.standard_normal((2, 2))
        E *= 0.1 / np.linalg.norm(E)
        got = loss_dynamics_discrete(A, tau, kernels.expm(A, tau) + E)
        assert got == pytest.approx(0.01, rel=1e-10)
        # direct elementwise recomputation
        F = kernels.expm(A, tau) + E
        want = float(((kernels.expm(A, tau) - F) ** 2).sum())
        assert got == pytest.approx(want, rel=1e-12)

    def test_scalar_closed_form(self):
        a, ahat, tau = -0.4, -0.9, 0.5
        got = loss_dynamics_continuous(np.array([[a]]), tau, np.array([[ahat]]))
        assert got == pytest.approx((np.exp(a * tau) - np.exp(ahat * tau)) ** 2, rel=1e-12)

    def test_brownian_covariance_loss(self):
        B = np.diag([1.0, 2.0])
        got = loss_covariance_discrete(np.zeros((2, 2)), B, 0.5, np.zeros((2, 2)))
        assert got == pytest.approx(float(((0.5 * B) ** 2).sum()), abs=1e-12)

    def test_covariance_loss_against_quadrature(self, rng):
        A, B = toggle_switch_dynamics()
        tau = 0.5
        B_l = B * 1.3
        want = float(
            ((quadrature_noise_cov(A, B, tau) - quadrature_noise_cov(A, B_l, tau)) ** 2).sum()
        )
        assert loss_covariance_continuous(A, B, tau, B_l) == pytest.approx(want, rel=1e-7)


class TestSummarize:
    def _records(self, values, sweep=1.0):
        return [
            LossRecord(sweep=sweep, replicate=i, loss_dyn_d=v, loss_dyn_c=v,
                       loss_cov_d=v, loss_cov_c=v)
            for i, v in enumerate(values)
        ]

    def test_identical_values(self):
        rows = summarize(self._records([2.0, 2.0, 2.0]))
        for row in rows:
            assert row["median"] == row["q1"] == row["q3"] == row["wlo"] == row["whi"] == 2.0

    def test_outlier_whisker(self):
        rows = summarize(self._records([1.0, 2.0, 3.0, 4.0, 100.0]))
        row = rows[0]
        assert row["median"] == 3.0
        assert row["q1"] == 2.0 and row["q3"] == 4.0
        assert row["whi"] == 4.0  # 100 lies beyond q3 + 1.5 IQR
        assert row["wlo"] == 1.0

    def test_single_record(self):
        rows = summarize(self._records([7.0]))
        assert all(rows[0][k] == 7.0 for k in ("median", "q1", "q3", "wlo", "whi"))

    def test_failed_replicates_skipped(self):
        recs = self._records([1.0, 2.0, 3.0])
        recs.append(LossRecord(sweep=1.0, replicate=9, failures=1))
        rows = summarize(recs)
        assert rows[0]["median"] == 2.0


def tiny_config(**kw):
    base = dict(
        experiment="uniform_breaks",
        sweep=(1.0,),
        T_list=(10.0,),
        N_list=(20,),
        replicates=1,
        seed=5,
        max_iters=5,
        tol=1e-4,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestExperimentRuns:
    def test_uniform_smoke(self):
        records = run_uniform_breaks(tiny_config())
        assert len(records) == 1
        r = records[0]
        assert r.failures == 0
        for v in (r.loss_dyn_d, r.loss_dyn_c, r.loss_cov_d, r.loss_cov_c):
            assert np.isfinite(v) and v >= 0

    def test_beta_smoke(self):
        config = ExperimentConfig(
            experiment="beta_steps", sweep=(2.0,), N=16, scale=0.5,
            replicates=1, seed=3, max_iters=5, tol=1e-4,
        )
        records = run_beta_steps(config)
        assert len(records) == 1 and records[0].failures == 0

    def test_reproducible_records(self, tmp_path):
        a = run_uniform_breaks(tiny_config())
        b = run_uniform_breaks(tiny_config())
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_records(a, pa)
        write_records(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_records_round_trip(self, tmp_path):
        records = run_uniform_breaks(tiny_config(replicates=2))
        path = tmp_path / "records.csv"
        write_records(records, path)
        back = read_records(path)
        assert len(back) == len(records)
        for x, y in zip(back, records):
            assert x.sweep == y.sweep and x.replicate == y.replicate
            assert x.loss_dyn_c == pytest.approx(y.loss_dyn_c, rel=1e-15)

    def test_worker_pool_matches_serial(self, tmp_path):
        serial = run_uniform_breaks(tiny_config(replicates=2))
        pooled = run_uniform_breaks(tiny_config(replicates=2, threads=2))
        pa, pb = tmp_path / "serial.csv", tmp_path / "pooled.csv"
        write_records(serial, pa)
        write_records(pooled, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_sweep_scaling_hits_target_radius(self):
        A, _ = toggle_switch_dynamics()
        rho1 = max(abs(np.linalg.eigvals(1.0 * A)))
        rho30 = max(abs(np.linalg.eigvals(30.0 * A)))
        assert rho1 == pytest.approx(0.034, abs=1e-3)
        assert rho30 == pytest.approx(30 * rho1, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="nope")
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="uniform_breaks", sweep=(1.0, 2.0), T_list=(10.0,), N_list=(20, 30))
