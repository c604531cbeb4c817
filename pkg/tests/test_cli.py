import json

import numpy as np
import pytest

from cdlds.cli import main
from cdlds.model import TimedObservations


@pytest.fixture
def sim_config(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(
        json.dumps(
            {
                "model": {"preset": "toggle", "omega": 10.0, "obs_noise": 1.0},
                "times": {"kind": "uniform_breaks", "T": 15.0, "N": 30},
            }
        )
    )
    return path


class TestSimulate:
    def test_writes_observation_csv(self, tmp_path, sim_config):
        out = tmp_path / "traj.csv"
        code = main(["simulate", "--config", str(sim_config), "--seed", "3", "--out", str(out)])
        assert code == 0
        data = TimedObservations.from_csv(out)
        assert data.N == 30 and data.m == 2

    def test_emit_latent_adds_columns(self, tmp_path, sim_config):
        out = tmp_path / "traj.csv"
        main(["simulate", "--config", str(sim_config), "--seed", "3", "--out", str(out), "--emit-latent"])
        header = out.read_text().splitlines()[0]
        assert header == "t,z1,z2,x1,x2"

    def test_deterministic(self, tmp_path, sim_config):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simulate", "--config", str(sim_config), "--seed", "9", "--out", str(a)])
        main(["simulate", "--config", str(sim_config), "--seed", "9", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x.csv")])
        assert code == 2


class TestFit:
    def test_continuous_fit_report(self, tmp_path, sim_config):
        traj = tmp_path / "traj.csv"
        main(["simulate", "--config", str(sim_config), "--seed", "3", "--out", str(traj)])
        fit_cfg = tmp_path / "fit.json"
        fit_cfg.write_text(
            json.dumps(
                {
                    "model": {"preset": "toggle", "omega": 10.0},
                    "fixed": ["H", "R", "mu0", "P0"],
                    "max_iters": 4,
                    "tol": 1e-3,
                }
            )
        )
        report = tmp_path / "report.json"
        code = main(
            ["fit", "--in", str(traj), "--out", str(report), "--config", str(fit_cfg)]
        )
        assert code == 0
        doc = json.loads(report.read_text())
        assert doc["iterations"] >= 1
        assert len(doc["loglik_trace"]) == doc["iterations"]
        assert np.array(doc["final_params"]["A"]).shape == (2, 2)

    def test_discrete_fit(self, tmp_path, sim_config):
        traj = tmp_path / "traj.csv"
        main(["simulate", "--config", str(sim_config), "--seed", "4", "--out", str(traj)])
        report = tmp_path / "report.json"
        code = main(
            ["fit", "--in", str(traj), "--out", str(report), "--engine", "discrete",
             "--max-iters", "4", "--tol", "1e-3"]
        )
        assert code == 0
        doc = json.loads(report.read_text())
        assert np.array(doc["final_params"]["F"]).shape == (2, 2)

    def test_missing_input_exits_2(self, tmp_path):
        code = main(["fit", "--in", str(tmp_path / "none.csv"), "--out", str(tmp_path / "r.json")])
        assert code == 2


class TestExperimentAndSummarize:
    def test_tiny_sweep_outputs(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(
            json.dumps(
                {
                    "sweep": [1.0],
                    "T_list": [10.0],
                    "N_list": [20],
                    "max_iters": 4,
                    "tol": 1e-3,
                }
            )
        )
        outdir = tmp_path / "out"
        code = main(
            ["experiment", "uniform-breaks", "--config", str(cfg), "--seed", "2",
             "--replicates", "1", "--out", str(outdir)]
        )
        assert code == 0
        records = (outdir / "records.csv").read_text().splitlines()
        assert records[0] == "sweep,replicate,loss_dyn_d,loss_dyn_c,loss_cov_d,loss_cov_c,failures"
        assert len(records) == 2
        summary = (outdir / "summary.csv").read_text().splitlines()
        assert summary[0] == "sweep,metric,median,q1,q3,wlo,whi"
        assert len(summary) == 5

    def test_summarize_round_trip(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(
            json.dumps(
                {"sweep": [1.0], "T_list": [10.0], "N_list": [20], "max_iters": 3, "tol": 1e-3}
            )
        )
        outdir = tmp_path / "out"
        main(
            ["experiment", "uniform-breaks", "--config", str(cfg), "--seed", "2",
             "--replicates", "2", "--out", str(outdir)]
        )
        redo = tmp_path / "summary2.csv"
        code = main(["summarize", "--in", str(outdir / "records.csv"), "--out", str(redo)])
        assert code == 0
        assert redo.read_text() == (outdir / "summary.csv").read_text()

    def test_unknown_experiment_config_exits_2(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"experiment": "bogus"}))
        code = main(["experiment", "uniform-breaks", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
