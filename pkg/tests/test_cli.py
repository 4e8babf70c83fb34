import json
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from maxstable.cli import (
    EXIT_INPUT,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    LikelihoodConfig,
    ModelConfig,
    build_likelihood,
    build_model,
    exit_code,
    load_run_config,
    main,
    run,
)
from maxstable.combinatorics import Partition
from maxstable.errors import ConfigError
from maxstable.likelihoods import LikelihoodName
from maxstable.matrix_io import read_matrix, write_matrix

FIXTURES = Path(__file__).parent / "fixtures"


class TestCli(unittest.TestCase):
    def setUp(self):
        self.test_dir = Path(tempfile.mkdtemp())
        self.config = self.test_dir / "run.json"
        shutil.copy(FIXTURES / "run_logistic.json", self.config)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def edit_config(self, **sections):
        doc = json.loads(self.config.read_text())
        for key, value in sections.items():
            if value is None:
                doc.pop(key, None)
            elif isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
        self.config.write_text(json.dumps(doc))

    def test_simulate_is_reproducible(self):
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_OK)
        first = (self.test_dir / "data.csv").read_bytes()
        self.assertEqual(main(["simulate", "--config", str(self.config), "--threads", "2"]), EXIT_OK)
        self.assertEqual((self.test_dir / "data.csv").read_bytes(), first)

        data, header = read_matrix(str(self.test_dir / "data.csv"))
        self.assertEqual(data.shape, (200, 2))
        self.assertIsNone(header)
        sidecar = json.loads((self.test_dir / "data.json").read_text())
        self.assertEqual(sidecar["schema"], 1)
        self.assertEqual(sidecar["seed"], 17)
        self.assertEqual(sidecar["n"], 200)
        self.assertEqual(sidecar["generator"]["method"], "mda")
        self.assertEqual(sidecar["config"]["model"]["kind"], "logistic")

    def test_simulate_max_stable_records_truncation_bound(self):
        self.edit_config(simulate={"method": "max_stable", "n": 20, "truncation": 200})
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_OK)
        sidecar = json.loads((self.test_dir / "data.json").read_text())
        self.assertEqual(sidecar["truncation"], 200)
        self.assertGreaterEqual(sidecar["truncation_bound"], 0.0)
        self.assertLessEqual(sidecar["truncation_bound"], 1.0)

    def test_zero_sample_size_is_an_input_error(self):
        self.edit_config(simulate={"n": 0})
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_INPUT)
        self.assertFalse((self.test_dir / "data.csv").exists())

    def test_unknown_config_key_is_rejected(self):
        self.edit_config(colour="blue")
        result = run("simulate", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertIn("colour", result["error"])

    def test_missing_schema_is_rejected(self):
        self.edit_config(schema=None)
        self.assertEqual(run("simulate", str(self.config))["status"], "failed")

    def test_missing_config_file(self):
        self.assertEqual(main(["fit", "--config", str(self.test_dir / "nope.json")]), EXIT_INPUT)

    def test_fit_without_data_is_an_input_error(self):
        result = run("fit", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertEqual(result["step"], "fit")
        self.assertEqual(exit_code(result), EXIT_INPUT)

    def test_fit_with_mismatched_columns(self):
        write_matrix(str(self.test_dir / "data.csv"), np.full((5, 3), 2.0))
        self.assertEqual(main(["fit", "--config", str(self.config)]), EXIT_INPUT)

    def test_empty_data_file_is_reported(self):
        (self.test_dir / "data.csv").write_text("")
        result = run("fit", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertIn("empty", result["error"])

    def test_malformed_data_file_is_reported(self):
        (self.test_dir / "data.csv").write_text("1,2\n3,4,5\n")
        result = run("diagnose", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertEqual(exit_code(result), EXIT_INPUT)

    def test_bad_init_is_an_input_error(self):
        main(["simulate", "--config", str(self.config)])
        self.assertEqual(main(["fit", "--config", str(self.config), "--init", "a,b"]), EXIT_INPUT)

    def test_non_positive_threads(self):
        self.assertEqual(main(["simulate", "--config", str(self.config), "--threads", "0"]), EXIT_INPUT)

    def test_fit_writes_report_with_config(self):
        self.edit_config(model={"fixed": ["alpha"]})
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_OK)
        self.assertEqual(main(["fit", "--config", str(self.config)]), EXIT_OK)
        report = json.loads((self.test_dir / "report.json").read_text())
        self.assertEqual(report["schema"], 1)
        self.assertEqual(report["likelihood"], "full")
        self.assertEqual(report["n_obs"], 200)
        self.assertEqual(report["theta_hat"]["alpha_1"], 2.0)
        self.assertTrue(report["converged"])
        self.assertEqual(report["config"]["io"]["out_json"], str((self.test_dir / "report.json").resolve()))
        self.assertTrue(np.isfinite(report["loglik"]))

    def test_two_step_needs_clustered_model(self):
        self.edit_config(fit={"two_step": True})
        main(["simulate", "--config", str(self.config)])
        result = run("fit", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertIn("two_step", result["error"])

    def test_diagnose(self):
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_OK)
        self.assertEqual(main(["diagnose", "--config", str(self.config)]), EXIT_OK)
        report = json.loads((self.test_dir / "report.json").read_text())
        tau = np.array(report["kendall_tau"])
        self.assertEqual(tau.shape, (2, 2))
        np.testing.assert_allclose(np.diag(tau), 1.0)
        self.assertEqual(report["suggested_clustering"], [[1, 2]])
        self.assertEqual(report["censoring_k"], 20)
        total = sum(e["frequency"] for e in report["exceedance_frequencies"])
        self.assertAlmostEqual(total, 1.0)
        self.assertEqual(report["hill"]["k"], 10)

    def test_diagnose_single_component(self):
        rng = np.random.default_rng(3)
        write_matrix(str(self.test_dir / "data.csv"), 1.0 / rng.random((300, 1)))
        self.assertEqual(main(["diagnose", "--config", str(self.config)]), EXIT_OK)
        report = json.loads((self.test_dir / "report.json").read_text())
        self.assertEqual(report["m"], 1)
        self.assertEqual(report["kendall_tau"], [[1.0]])
        self.assertEqual(report["suggested_clustering"], [[1]])

    def test_study_needs_study_section(self):
        self.assertEqual(main(["study", "--config", str(self.config)]), EXIT_INPUT)

    def test_unknown_study_parameter(self):
        self.edit_config(study={"design": "smle", "params": {"replicate": 2}})
        result = run("study", str(self.config))
        self.assertEqual(result["status"], "failed")
        self.assertIn("replicate", result["error"])

    @pytest.mark.slow
    def test_fit_free_alpha(self):
        self.assertEqual(main(["simulate", "--config", str(self.config)]), EXIT_OK)
        code = main(["fit", "--config", str(self.config), "--init", "1.7"])
        self.assertIn(code, (EXIT_OK, EXIT_NOT_CONVERGED))
        report = json.loads((self.test_dir / "report.json").read_text())
        self.assertLess(abs(report["theta_hat"]["alpha_1"] - 2.0), 0.5)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "maxstable" in capsys.readouterr().out


def test_load_run_config_resolves_relative_paths(tmp_path):
    cfg_path = tmp_path / "run.json"
    shutil.copy(FIXTURES / "run_logistic.json", cfg_path)
    cfg = load_run_config(str(cfg_path))
    assert cfg.schema_version == 1
    assert cfg.io.data_csv == str((tmp_path / "data.csv").resolve())
    assert cfg.to_json_dict()["schema"] == 1


def test_load_run_config_rejects_other_schema(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"schema": 2}))
    with pytest.raises(ConfigError):
        load_run_config(str(cfg_path))


def test_build_gaussian_model_from_sites_and_kmeans_clustering():
    mc = ModelConfig(kind="gaussian", sites_csv=str(FIXTURES / "sites_m4.csv"), matern={"c": 1.0, "nu": 1.0})
    model = build_model(mc)
    assert model.dim == 4
    assert model.theta.free_names == ["c", "nu"]
    kind = build_likelihood(LikelihoodConfig(kind="partition", clustering="kmeans", cap=2), model)
    assert kind.name == LikelihoodName.PARTITION
    assert kind.clustering == Partition.from_assignment([0, 0, 1, 1])


def test_build_likelihood_from_label_lists():
    model = build_model(ModelConfig(kind="logistic", m=3, alpha=2.0))
    kind = build_likelihood(LikelihoodConfig(kind="partition", clustering=[[1, 3], [2]], weights=False), model)
    assert kind.clustering == Partition.from_assignment([0, 1, 0])
    assert not kind.weighted


def test_kmeans_needs_sites():
    model = build_model(ModelConfig(kind="logistic", m=3, alpha=2.0))
    with pytest.raises(ConfigError):
        build_likelihood(LikelihoodConfig(kind="partition", clustering="kmeans"), model)


def test_build_clustered_model_uses_one_based_members():
    mc = ModelConfig(kind="clustered", clusters=[
        {"members": [1, 2], "copula": {"family": "gumbel", "theta": 1.5}, "margin": {"family": "weibull", "alpha": 1.2}},
        {"members": [3], "copula": {"family": "clayton", "theta": 0.5}, "margin": {"family": "frechet", "alpha": 2.0}},
    ])
    model = build_model(mc)
    assert model.dim == 3
    assert [c.members for c in model.clusters] == [(0, 1), (2,)]
    assert model.theta.free_names == ["theta_1", "alpha_1", "theta_2", "alpha_2"]


def test_exit_codes():
    assert exit_code({"status": "success"}) == EXIT_OK
    assert exit_code({"status": "not_converged"}) == EXIT_NOT_CONVERGED
    assert exit_code({"status": "failed"}) == EXIT_INPUT
