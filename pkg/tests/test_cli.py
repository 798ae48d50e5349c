import csv
import json

import numpy as np
import pytest

from ordmatch import Instance, analytics
from ordmatch import cli
from ordmatch.cli import main


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return [row for row in csv.reader(f) if not row[0].startswith("#")]


BASE_RUN = {
    "instance": {"quotas": [1] * 10},
    "distribution": {"name": "iid-uniform01"},
    "mechanism": {"name": "rs"},
    "trials": 100_000,
    "seed": 7,
}


class TestRun:
    def test_single_agent_distortion_exactly_one(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "instance": {"quotas": [3]},
                "distribution": {"name": "iid-uniform01"},
                "mechanism": {"name": "rs", "complete": True},
                "trials": 500,
                "seed": 1,
                "output": str(tmp_path / "out.csv"),
            },
        )
        assert main(["run", cfg]) == 0
        header, row = read_rows(tmp_path / "out.csv")
        assert header[:5] == ["n", "m", "quotas", "mechanism", "distribution"]
        assert float(row[header.index("distortion")]) == 1.0
        assert float(row[header.index("gap_ratio")]) == 1.0

    def test_one_to_one_distortion_below_ceiling(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {**BASE_RUN, "output": str(tmp_path / "out.csv")})
        assert main(["run", cfg]) == 0
        header, row = read_rows(tmp_path / "out.csv")
        assert float(row[header.index("distortion")]) <= 1.59

    def test_sweep_produces_cell_rows(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "instances": [{"quotas": [1, 1]}, {"quotas": [2, 1]}],
                "distributions": [
                    {"name": "iid-uniform01"},
                    {"name": "favorite-bundle-uniform", "hi": 1.0, "lo": 0.0},
                ],
                "mechanisms": [{"name": "rs"}, {"name": "hql"}, {"name": "rsbs"}],
                "trials": 400,
                "seed": 3,
                "output": str(tmp_path / "sweep.csv"),
            },
        )
        assert main(["run", cfg]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert len(rows) == 1 + 2 * 2 * 3

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {**BASE_RUN, "trials": 2_000, "output": str(tmp_path / "a.csv")},
        )
        assert main(["run", cfg]) == 0
        assert main(["run", cfg, "--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_flag_overrides(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {**BASE_RUN, "trials": 100, "output": str(tmp_path / "out.csv")},
        )
        assert main(["run", cfg, "--trials", "250", "--seed", "9"]) == 0
        header, row = read_rows(tmp_path / "out.csv")
        assert row[header.index("trials")] == "250"
        assert row[header.index("seed")] == "9"

    def test_generated_quota_vectors(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "instance": {"n": 3, "m": 9, "generator": "uniform-quotas"},
                "distribution": {"name": "iid-uniform01"},
                "mechanism": {"name": "hql"},
                "trials": 200,
                "seed": 2,
                "output": str(tmp_path / "out.csv"),
            },
        )
        assert main(["run", cfg]) == 0
        header, row = read_rows(tmp_path / "out.csv")
        assert row[header.index("quotas")] == "3|3|3"
        cfg2 = write_config(
            tmp_path / "c2.json",
            {
                "instance": {"n": 3, "m": 12, "generator": "geometric-quotas(2.0)"},
                "distribution": {"name": "iid-uniform01"},
                "mechanism": {"name": "hql"},
                "trials": 200,
                "seed": 2,
                "output": str(tmp_path / "out2.csv"),
            },
        )
        assert main(["run", cfg2]) == 0
        header, row = read_rows(tmp_path / "out2.csv")
        quotas = [int(q) for q in row[header.index("quotas")].split("|")]
        assert sum(quotas) == 12 and len(quotas) == 3 and all(q >= 1 for q in quotas)

    def test_emit_flags(self, tmp_path):
        out = tmp_path / "out.csv"
        cfg = write_config(
            tmp_path / "c.json",
            {
                **BASE_RUN,
                "trials": 500,
                "output": str(out),
                "flags": {"emit_probs": True, "emit_curve": True},
            },
        )
        assert main(["run", cfg]) == 0
        assert (tmp_path / "out.csv.probs.csv").exists()
        assert (tmp_path / "out.csv.curve.csv").exists()

    def test_malformed_json_exit_2_with_byte_offset(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"instance": {"quotas": [1, 1]}, ', encoding="utf-8")
        assert main(["run", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "byte" in err

    def test_field_precise_error(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "instance": {"quotas": [1, 0]},
                "distribution": {"name": "iid-uniform01"},
                "mechanism": {"name": "rs"},
                "output": "x.csv",
            },
        )
        assert main(["run", cfg]) == 2
        assert "instance.quotas[1]" in capsys.readouterr().err

    def test_unknown_names_exit_2(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "instance": {"quotas": [1, 1]},
                "distribution": {"name": "mystery"},
                "mechanism": {"name": "rs"},
                "output": "x.csv",
            },
        )
        assert main(["run", cfg]) == 2
        assert "mystery" in capsys.readouterr().err


class TestProbs:
    def run_probs(self, tmp_path, mechanism, quotas=(1, 2, 3), trials=30_000):
        cfg = write_config(
            tmp_path / "p.json",
            {
                "instance": {"quotas": list(quotas)},
                "distribution": {"name": "iid-uniform01"},
                "mechanism": mechanism,
                "trials": trials,
                "seed": 5,
                "output": str(tmp_path / "probs.csv"),
            },
        )
        assert main(["probs", cfg]) == 0
        header, *rows = read_rows(tmp_path / "probs.csv")
        assert header == ["agent", "rank", "q_hat", "ci_half_width", "q_exact"]
        return rows

    def test_hql_exact_column_constant(self, tmp_path):
        rows = self.run_probs(tmp_path, {"name": "hql"})
        inst = Instance((1, 2, 3))
        expected = f"{analytics.hql_q(inst):.12g}"
        assert all(row[4] == expected for row in rows)
        assert len(rows) == 6
        for row in rows:
            assert abs(float(row[2]) - float(row[4])) <= float(row[3])

    def test_rsbs_exact_column_constant(self, tmp_path):
        rows = self.run_probs(tmp_path, {"name": "rsbs"}, quotas=(3, 2, 1))
        expected = f"{analytics.rsbs_q_exact(Instance((3, 2, 1))):.12g}"
        assert all(row[4] == expected for row in rows)

    def test_rs_exact_column_per_agent(self, tmp_path):
        rows = self.run_probs(tmp_path, {"name": "rs"}, quotas=(2, 2, 1))
        inst = Instance((2, 2, 1))
        for row in rows:
            agent = int(row[0])
            assert row[4] == f"{analytics.rs_q_exact(inst, agent):.12g}"
            assert abs(float(row[2]) - float(row[4])) <= float(row[3])

    def test_rejects_multi_cell_config(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "p.json",
            {
                "instance": {"quotas": [1, 1]},
                "distribution": {"name": "iid-uniform01"},
                "mechanisms": [{"name": "rs"}, {"name": "hql"}],
                "output": str(tmp_path / "probs.csv"),
            },
        )
        assert main(["probs", cfg]) == 2
        assert "exactly one" in capsys.readouterr().err


class TestCurve:
    def test_grid_and_trailing_max(self, tmp_path):
        out = tmp_path / "curve.csv"
        assert main(["curve", "--points", "10000", "--out", str(out)]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        comment = lines[-1]
        assert comment.startswith("# max,")
        parts = comment.split(",")
        assert float(parts[1]) == pytest.approx(1.07645, abs=1e-4)
        assert float(parts[3]) == pytest.approx(0.5, abs=1e-12)

        rows = read_rows(out)[1:]
        assert len(rows) == 10000
        xs = np.array([float(r[0]) for r in rows])
        bounds = np.array([float(r[1]) for r in rows])
        assert bounds[-1] == pytest.approx(1.0, abs=1e-12)  # x = 1 endpoint
        half = np.searchsorted(xs, 0.5)
        assert np.argmax(bounds) == half
        # rising half may carry tiny floor-jump teeth; falling half is clean
        assert np.all(np.diff(bounds[: half + 1]) >= -1e-4)
        assert np.all(np.diff(bounds[half:]) <= 1e-12)

    def test_too_few_points_exit_2(self, tmp_path):
        assert main(["curve", "--points", "1", "--out", str(tmp_path / "x.csv")]) == 2


class TestOptcheck:
    def test_agreement_default(self):
        assert main(["optcheck", "--max-m", "7", "--cases", "200", "--seed", "11"]) == 0

    def test_precondition_exit_2(self):
        assert main(["optcheck", "--max-m", "9", "--cases", "5", "--seed", "0"]) == 2

    def test_zero_cases_vacuous(self):
        assert main(["optcheck", "--max-m", "5", "--cases", "0", "--seed", "0"]) == 0

    def test_oracle_mismatch_exit_3(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "brute_force_opt", lambda inst, profile: -1.0)
        assert main(["optcheck", "--max-m", "4", "--cases", "3", "--seed", "1"]) == 3
        assert "mismatch" in capsys.readouterr().err


class TestUfaudit:
    def test_exchangeable_audit(self, tmp_path):
        cfg = write_config(
            tmp_path / "a.json",
            {
                "instance": {"quotas": [2, 2]},
                "distribution": {"name": "exchangeable-permutation", "base": [3.0, 1.0, 1.0, 0.0]},
                "trials": 20_000,
                "seed": 13,
                "output": str(tmp_path / "audit.csv"),
            },
        )
        assert main(["ufaudit", cfg]) == 0
        header, *rows = read_rows(tmp_path / "audit.csv")
        assert header[0] == "agent" and "p_value" in header
        assert len(rows) == 12  # two agents x C(4,2) subsets
        p_col = header.index("p_value")
        assert all(float(r[p_col]) > 0.001 for r in rows)


class TestUsage:
    def test_no_command_exit_2(self):
        assert main([]) == 2

    def test_unknown_command_exit_2(self):
        assert main(["frobnicate"]) == 2

    def test_missing_config_exit_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == 2
        assert "cannot read" in capsys.readouterr().err
