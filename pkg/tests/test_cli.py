import csv
import json
import math
from pathlib import Path

import pytest

from mfergo.cli import main
from mfergo.config import canonicalize, config_hash, parse_config


def write_cfg(tmp_path: Path, payload: dict, name="cfg.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def base_cfg(**kw):
    cfg = {"schema_version": 1, "seed": 11, "benchmark": "ou_cos",
           "sim": {"n_particles": 64, "dt": 0.01, "replicas": 2}}
    cfg.update(kw)
    return cfg


PURE_OU_MODEL = {
    "dim": 1, "name": "pure_ou",
    "b0": [0.0], "B": [[-2.0]], "Bbar": [[0.0]], "G": [[0.0]],
    "sigma0": [0.5], "S": [[0.0]], "Sbar": [[0.0]],
    "reward_x": {"kind": "cos", "params": [1.0, 1.0]},
    "reward_mean": None,
    "action_cost": {"kind": "zero", "weight": 0.0},
    "action_set": {"kind": "finite", "points": [[0.0]]},
}


class TestConfig:
    def test_canonicalize_idempotent(self):
        cfg = base_cfg(params={"beta": 0.5})
        c1 = canonicalize(cfg)
        c2 = canonicalize(json.loads(json.dumps(c1)))
        assert c1 == c2
        assert config_hash(c1) == config_hash(c2)

    def test_seed_required(self):
        from mfergo import ConfigError
        with pytest.raises(ConfigError):
            canonicalize({"schema_version": 1, "benchmark": "ou_cos"})

    def test_unknown_key_named(self):
        from mfergo import ConfigError
        with pytest.raises(ConfigError, match="paritcles"):
            canonicalize({"schema_version": 1, "seed": 1,
                          "benchmark": "ou_cos", "paritcles": 9})

    def test_benchmark_xor_model(self):
        from mfergo import ConfigError
        with pytest.raises(ConfigError):
            canonicalize({"schema_version": 1, "seed": 1})
        with pytest.raises(ConfigError):
            canonicalize({"schema_version": 1, "seed": 1,
                          "benchmark": "ou_cos", "model": PURE_OU_MODEL})

    def test_inline_model_parsed(self):
        cfg = parse_config({"schema_version": 1, "seed": 1,
                            "model": PURE_OU_MODEL})
        assert cfg.model.B[0, 0] == -2.0
        assert cfg.benchmark == "pure_ou"

    def test_seed_override_changes_hash_field(self):
        cfg = parse_config(base_cfg(), seed_override=99)
        assert cfg.seed == 99


class TestCheckCommand:
    def test_pure_ou_check_passes_with_eta_two(self, tmp_path):
        path = write_cfg(tmp_path, {"schema_version": 1, "seed": 1,
                                    "model": PURE_OU_MODEL,
                                    "params": {"n_samples": 200},
                                    "out_dir": str(tmp_path / "out")})
        assert main(["check", path]) == 0
        rep = json.loads((tmp_path / "out" / "check.json").read_text())
        assert rep["eta"] == pytest.approx(2.0)
        assert rep["passed"] is True
        assert rep["violations"] == 0

    def test_expanding_drift_fails_check(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            benchmark="expanding_drift_negative_control",
            params={"n_samples": 100}, out_dir=str(tmp_path / "out")))
        assert main(["check", path]) == 0
        rep = json.loads((tmp_path / "out" / "check.json").read_text())
        assert rep["eta"] <= 0.0
        assert rep["passed"] is False

    def test_bad_config_exit_code(self, tmp_path):
        path = write_cfg(tmp_path, {"schema_version": 1, "benchmark": "ou_cos"})
        assert main(["check", path]) == 1

    def test_missing_file_exit_code(self):
        assert main(["check", "/nonexistent/cfg.json"]) == 1


class TestTomlConfig:
    def test_toml_parses(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text('schema_version = 1\nseed = 3\nbenchmark = "ou_cos"\n'
                     f'out_dir = "{tmp_path / "out"}"\n'
                     '[sim]\nn_particles = 64\nreplicas = 2\n'
                     '[params]\nn_samples = 50\n')
        assert main(["check", str(p)]) == 0


class TestLedger:
    def test_value_beta_reproducible_rows(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            params={"beta": 0.5}, out_dir=str(tmp_path / "out")))
        assert main(["value-beta", path, "--threads", "1"]) == 0
        assert main(["value-beta", path, "--threads", "1"]) == 0
        with (tmp_path / "out" / "ledger.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert rows[0]["estimate"] == rows[1]["estimate"]
        assert rows[0]["config_hash"] == rows[1]["config_hash"]
        assert rows[0]["operation"] == "value-beta"
        assert rows[0]["seed"] == "11"

    def test_seed_flag_changes_estimate(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            params={"beta": 0.5}, out_dir=str(tmp_path / "out")))
        assert main(["value-beta", path]) == 0
        assert main(["value-beta", path, "--seed", "12"]) == 0
        with (tmp_path / "out" / "ledger.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["estimate"] != rows[1]["estimate"]


class TestArtifacts:
    def test_simulate_writes_trajectory_columns(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            params={"T": 1.0, "stride": 10}, out_dir=str(tmp_path / "out")))
        assert main(["simulate", path]) == 0
        with (tmp_path / "out" / "trajectory.csv").open() as fh:
            header = next(csv.reader(fh))
        assert header == ["time", "mean", "second_moment", "w2_to_ref",
                          "running_reward"]

    def test_couple_envelope_column_is_formula(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            benchmark="mf_ou_contract",
            params={"T": 1.0, "initial_gap": 1.0},
            out_dir=str(tmp_path / "out")))
        assert main(["couple", path]) == 0
        with (tmp_path / "out" / "gap_curve.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        for r in rows[:: max(1, len(rows) // 7)]:
            t = float(r["time"])
            assert float(r["envelope"]) == pytest.approx(
                1.0 * math.exp(-2.0 * 1.0 * t), rel=1e-9)

    def test_ergodic_pair_and_plot_data(self, tmp_path):
        out = tmp_path / "out"
        path = write_cfg(tmp_path, base_cfg(
            benchmark="const_reward",
            sim={"n_particles": 64, "dt": 0.01, "replicas": 2},
            params={"probes": "none"}, out_dir=str(out)))
        assert main(["ergodic-pair", path]) == 0
        pair = json.loads((out / "ergodic_pair.json").read_text())
        assert pair["lambda_hat"] == pytest.approx(1.0, abs=2e-3)

        plot_cfg = write_cfg(tmp_path, base_cfg(
            params={"kind": "tauberian", "source": str(out / "ergodic_pair.json")},
            out_dir=str(out)), name="plot.json")
        assert main(["emit-plot-data", plot_cfg]) == 0
        with (out / "plot_tauberian.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["beta", "beta_v_beta"]
        betas = [float(r[0]) for r in rows[1:]]
        assert len(betas) == 4
        assert betas == sorted(betas, reverse=True)

    def test_emit_plot_data_empty_header_only(self, tmp_path):
        path = write_cfg(tmp_path, base_cfg(
            params={"kind": "tauberian"}, out_dir=str(tmp_path / "out")))
        assert main(["emit-plot-data", path]) == 0
        with (tmp_path / "out" / "plot_tauberian.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows == [["beta", "beta_v_beta"]]

    def test_emit_plot_data_missing_source_named(self, tmp_path, capsys):
        path = write_cfg(tmp_path, base_cfg(
            params={"kind": "cesaro", "source": "/no/such/file.json"},
            out_dir=str(tmp_path / "out")))
        assert main(["emit-plot-data", path]) == 1
        assert "source" in capsys.readouterr().err

    def test_tauberian_cesaro_round_trip(self, tmp_path):
        out = tmp_path / "out"
        path = write_cfg(tmp_path, base_cfg(
            benchmark="const_reward",
            sim={"n_particles": 64, "dt": 0.01, "replicas": 2},
            params={"T_schedule": [1.0, 2.0, 4.0], "law_b": {"kind": "point",
                                                             "loc": [1.0]}},
            out_dir=str(out)))
        assert main(["tauberian", path]) == 0
        plot_cfg = write_cfg(tmp_path, base_cfg(
            params={"kind": "cesaro", "source": str(out / "tauberian.json")},
            out_dir=str(out)), name="plot2.json")
        assert main(["emit-plot-data", plot_cfg]) == 0
        with (out / "plot_cesaro.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["T", "v_T_over_T"]
        assert len(rows) == 4
        for _, v in rows[1:]:
            assert float(v) == pytest.approx(1.0, abs=1e-6)


class TestBench:
    def test_trivial_suite_passes(self, tmp_path, capsys):
        path = write_cfg(tmp_path, base_cfg(out_dir=str(tmp_path / "out")))
        assert main(["bench", path, "--suite", "trivial"]) == 0
        out = capsys.readouterr().out
        for cid in ("C1", "C4", "C10", "C13"):
            assert f"{cid} " in out and "PASS" in out
        assert (tmp_path / "out" / "bench.csv").exists()
