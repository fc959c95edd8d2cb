"""End-to-end CLI behavior: strict configs, provenance, determinism, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from genban.cli import main

TRAIN_CONFIG = {
    "seed": 5,
    "out_dir": None,  # filled per test
    "env": {"type": "synthetic", "horizon": 40, "n_actions": 2, "d_z": 2, "d_x": 3},
    "pool": {"train_arms": 6, "validation_arms": 3, "pairs_per_arm": 30},
    "model": {"hidden": [12, 12, 12], "count_scale": 30},
    "train": {
        "epochs": 2,
        "batch_size": 6,
        "learning_rates": [0.2, 0.02],
        "weight_decay": 0.01,
        "sequence_length": 20,
        "permute_tuples": True,
    },
}

SIM_CONFIG = {
    "seed": 9,
    "out_dir": None,
    "env": {
        "type": "discrete",
        "theta": [[0.25, 0.7], [0.8, 0.35]],
        "n_actions": 2,
        "horizon": 12,
    },
    "n_tasks": 6,
    "context_mode": "fixed",
    "oracle": {"policy_class": "tabular"},
    "agents": [
        {"variant": "oracle", "name": "oracle"},
        {"variant": "ts_gen", "name": "ts_gen", "policy_class": "tabular"},
    ],
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


class TestTrainCommand:
    def test_minimal_run_outputs(self, tmp_path):
        cfg = dict(TRAIN_CONFIG, out_dir=str(tmp_path / "run"))
        code = main(["train", "--config", write_config(tmp_path, cfg)])
        assert code == 0
        model_file = tmp_path / "run" / "model.json"
        curves = tmp_path / "run" / "loss_curves.csv"
        assert model_file.exists() and curves.exists()
        lines = curves.read_text().splitlines()
        assert lines[0].startswith("# genban_version=")
        assert lines[1] == "lr,epoch,split,nll,se"
        # 2 learning rates x 2 epochs x 2 splits.
        assert len(lines) == 2 + 8

    def test_seed_replay_bit_identical(self, tmp_path):
        cfg1 = dict(TRAIN_CONFIG, out_dir=str(tmp_path / "a"))
        cfg2 = dict(TRAIN_CONFIG, out_dir=str(tmp_path / "b"))
        assert main(["train", "--config", write_config(tmp_path, cfg1, "c1.json")]) == 0
        assert main(["train", "--config", write_config(tmp_path, cfg2, "c2.json")]) == 0
        a = (tmp_path / "a" / "model.json").read_bytes()
        b = (tmp_path / "b" / "model.json").read_bytes()
        # Identical apart from the embedded config hash (out_dir differs).
        ja, jb = json.loads(a), json.loads(b)
        assert ja["weights_b64"] == jb["weights_b64"]
        assert ja["meta"]["selected_lr"] == jb["meta"]["selected_lr"]

    def test_grid_selection_is_validation_argmin(self, tmp_path):
        cfg = dict(TRAIN_CONFIG, out_dir=str(tmp_path / "run"))
        main(["train", "--config", write_config(tmp_path, cfg)])
        meta = json.loads((tmp_path / "run" / "model.json").read_text())["meta"]
        rows = (tmp_path / "run" / "loss_curves.csv").read_text().splitlines()[2:]
        val = [r.split(",") for r in rows if r.split(",")[2] == "validation"]
        best = min(val, key=lambda r: float(r[3]))
        assert float(best[0]) == meta["selected_lr"]
        assert int(best[1]) == meta["selected_epoch"]

    def test_unknown_key_rejected(self, tmp_path):
        cfg = dict(TRAIN_CONFIG, out_dir=str(tmp_path / "run"), typo_key=1)
        assert main(["train", "--config", write_config(tmp_path, cfg)]) == 1

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 3


class TestSimulateCommand:
    def test_oracle_agent_zero_regret(self, tmp_path):
        cfg = dict(SIM_CONFIG, out_dir=str(tmp_path / "sim"))
        code = main(["simulate", "--config", write_config(tmp_path, cfg), "--threads", "1"])
        assert code == 0
        summary = json.loads((tmp_path / "sim" / "summary.json").read_text())
        assert summary["agents"]["oracle"]["final_cumulative_regret"] == 0.0
        assert "config_hash" in summary["provenance"]

    def test_trace_row_count(self, tmp_path):
        cfg = dict(SIM_CONFIG, out_dir=str(tmp_path / "sim"))
        main(["simulate", "--config", write_config(tmp_path, cfg), "--threads", "1"])
        lines = (tmp_path / "sim" / "trace.csv").read_text().splitlines()
        # comment + header + n_agents * n_tasks * horizon rows
        assert len(lines) == 2 + 2 * 6 * 12

    def test_seed_replay_identical_bytes(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        cfg = dict(SIM_CONFIG, out_dir=str(out1))
        path = write_config(tmp_path, cfg)
        main(["simulate", "--config", path, "--threads", "1"])
        main(["simulate", "--config", path, "--threads", "2", "--out", str(out2)])
        assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()

    def test_missing_model_is_io_error(self, tmp_path):
        cfg = dict(
            SIM_CONFIG,
            out_dir=str(tmp_path / "sim"),
            env={"type": "synthetic", "horizon": 10, "n_actions": 2},
            agents=[{"variant": "greedy", "model_path": str(tmp_path / "missing.json")}],
        )
        assert main(["simulate", "--config", write_config(tmp_path, cfg)]) == 3

    def test_model_required_for_model_agents(self, tmp_path):
        cfg = dict(
            SIM_CONFIG,
            out_dir=str(tmp_path / "sim"),
            env={"type": "synthetic", "horizon": 10, "n_actions": 2},
            agents=[{"variant": "greedy"}],
        )
        assert main(["simulate", "--config", write_config(tmp_path, cfg)]) == 1


class TestVerifyCommand:
    def test_lossdecomp_suite_passes(self, capsys):
        assert main(["verify", "lossdecomp"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_vc_suite_passes(self, capsys):
        assert main(["verify", "vc"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_unknown_suite_rejected(self):
        assert main(["verify", "nonsense"]) == 1


class TestReportCommand:
    def test_aggregates_traces(self, tmp_path, capsys):
        cfg = dict(SIM_CONFIG, out_dir=str(tmp_path / "sim"))
        main(["simulate", "--config", write_config(tmp_path, cfg), "--threads", "1"])
        out_json = tmp_path / "report.json"
        code = main(["report", str(tmp_path / "sim" / "trace.csv"), "--out", str(out_json)])
        assert code == 0
        report = json.loads(out_json.read_text())
        sim_summary = json.loads((tmp_path / "sim" / "summary.json").read_text())
        for agent, stats in report.items():
            assert stats["final_cumulative_regret"] == pytest.approx(
                sim_summary["agents"][agent]["final_cumulative_regret"]
            )
        assert report["oracle"]["n_tasks"] == 6

    def test_missing_trace_is_io_error(self, tmp_path):
        assert main(["report", str(tmp_path / "absent.csv")]) == 3


class TestImputationDump:
    def test_flag_gated_dump(self, tmp_path):
        dump_dir = tmp_path / "dumps"
        cfg = dict(
            SIM_CONFIG,
            out_dir=str(tmp_path / "sim"),
            n_tasks=1,
            agents=[{
                "variant": "ts_gen",
                "name": "ts_gen",
                "policy_class": "tabular",
                "dump_imputations": str(dump_dir),
            }],
        )
        main(["simulate", "--config", write_config(tmp_path, cfg), "--threads", "1"])
        files = sorted(dump_dir.glob("imputed_*.json"))
        assert len(files) == 12  # one per decision
        payload = json.loads(files[0].read_text())
        assert np.asarray(payload["outcomes"]).shape == (12, 2)
