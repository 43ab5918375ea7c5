import json
from pathlib import Path

import pytest

import neuromesh.wire as wire_mod
from neuromesh.cli import main
from neuromesh.config import validate_config
from neuromesh.errors import ConfigError


def write_config(tmp_path, body):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(body))
    return str(path)


def read_csv_lines(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# neuromesh-csv schema=")
    return lines


class TestConfigValidation:
    def test_unknown_field_is_an_error_with_path(self):
        with pytest.raises(ConfigError, match="network.bandwith"):
            validate_config({"task": "comms", "network": {"bandwith": 1}})

    def test_negative_bandwidth_names_the_field(self):
        with pytest.raises(ConfigError, match="network.per_node_bandwidth"):
            validate_config({"task": "comms", "network": {"per_node_bandwidth": -1}})

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError, match="task"):
            validate_config({"task": "teleport"})

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("NEUROMESH_SEED", "777")
        cfg = validate_config({"task": "timing", "seed": 1})
        assert cfg["seed"] == 777

    def test_missing_weight_file_is_a_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="assignment.weights.encoder"):
            validate_config({
                "task": "assignment",
                "assignment": {
                    "mode": "learned",
                    "weights": {
                        "encoder": str(tmp_path / "missing.mwts"),
                        "attention": str(tmp_path / "missing.mwts"),
                        "decoder": str(tmp_path / "missing.mwts"),
                    },
                },
            })

    def test_defaults_fill_in(self):
        cfg = validate_config({"task": "control"})
        assert cfg["team_size"] == 3
        assert cfg["control"]["success_radius_m"] == 0.15
        assert cfg["network"]["per_node_bandwidth"] == 6_000_000

    def test_min_neighbors_bounded_by_team_size(self):
        with pytest.raises(ConfigError, match="aggregation.min_neighbors"):
            validate_config({
                "task": "control",
                "team_size": 3,
                "aggregation": {"min_neighbors": 3},
            })


class TestCliRun:
    def test_malformed_config_exits_nonzero_with_diagnostic(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "task": "comms",
            "network": {"per_node_bandwidth": -5},
        })
        assert main(["run", cfg]) == 2
        assert "network.per_node_bandwidth" in capsys.readouterr().err

    def test_timing_scenario_emits_parallel_and_sequential_rows(self, tmp_path):
        cfg = write_config(tmp_path, {
            "task": "timing",
            "output_dir": str(tmp_path / "out"),
            "timing": {"delays_ms": [2, 6, 4], "items": 10},
        })
        assert main(["run", cfg]) == 0
        lines = read_csv_lines(tmp_path / "out" / "timing.csv")
        assert lines[1].split(",")[0] == "mode"
        assert lines[2].startswith("parallel,")
        assert lines[3].startswith("sequential,")

    def test_comms_sweep_covers_requested_team_sizes(self, tmp_path):
        cfg = write_config(tmp_path, {
            "task": "comms",
            "output_dir": str(tmp_path / "out"),
            "comms": {"team_sizes": [5, 10, 30, 50], "duration_s": 0.1},
        })
        assert main(["run", cfg]) == 0
        lines = read_csv_lines(tmp_path / "out" / "comms_sweep.csv")
        sizes = [line.split(",")[0] for line in lines[2:]]
        assert sizes == ["5", "10", "30", "50"]

    def test_comms_quality_row(self, tmp_path):
        cfg = write_config(tmp_path, {
            "task": "comms",
            "output_dir": str(tmp_path / "out"),
            "network": {"base_latency_ms": 4.8, "jitter_ms": 0.6, "loss_prob": 0.003},
            "comms": {"scenario": "quality", "duration_s": 2.0},
        })
        assert main(["run", cfg]) == 0
        lines = read_csv_lines(tmp_path / "out" / "comms_quality.csv")
        latency = float(lines[2].split(",")[0])
        assert latency == pytest.approx(4.8, rel=0.15)

    def test_assignment_run_writes_per_test_rows_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "task": "assignment",
            "output_dir": str(out),
            "assignment": {"n_tests": 4},
        })
        assert main(["run", cfg]) == 0
        stdout = capsys.readouterr().out
        assert "SR = 100.00" in stdout
        assert "TCP = 0.0000" in stdout
        lines = read_csv_lines(out / "assignment.csv")
        assert len(lines) == 2 + 4
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["task"] == "assignment"
        assert len(manifest["config_sha256"]) == 64

    def test_control_run_writes_outcome_rows(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "task": "control",
            "output_dir": str(out),
            "control": {
                "n_runs": 2,
                "max_steps": 200,
                "initial_poses": [[-1, 0, 0], [1, 0, 3.14159], [0, 1.5, 0]],
                "goals": [[-1, 2], [1, 2], [0, -1.5]],
            },
        })
        assert main(["run", cfg]) == 0
        lines = read_csv_lines(out / "control_runs.csv")
        assert lines[1] == "run_id,success,steps,min_pairwise_distance_m"
        assert len(lines) == 2 + 2

    def test_csv_output_is_deterministic_modulo_header(self, tmp_path):
        bodies = []
        for run in range(2):
            out = tmp_path / f"out{run}"
            cfg = write_config(tmp_path, {
                "task": "assignment",
                "seed": 5,
                "output_dir": str(out),
                "assignment": {"n_tests": 3},
            })
            assert main(["run", cfg]) == 0
            lines = (out / "assignment.csv").read_text().splitlines()
            bodies.append("\n".join(lines[1:]))
        assert bodies[0] == bodies[1]

    def test_schema_version_in_header_line(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "task": "timing",
            "output_dir": str(out),
            "timing": {"delays_ms": [1, 2, 1], "items": 5},
        })
        assert main(["run", cfg]) == 0
        header = read_csv_lines(out / "timing.csv")[0]
        assert "schema=timing/1" in header

    def test_print_schema_is_valid_json(self, capsys):
        assert main(["print-schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert "network" in schema


class TestSweep:
    def test_assignment_budget_grid(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, {
            "task": "assignment",
            "output_dir": str(out),
            "assignment": {"n_tests": 2},
            "sweep": {"message_budget_bytes": [8, 64]},
        })
        assert main(["sweep", cfg]) == 0
        assert (out / "assignment_budget8.csv").exists()
        assert (out / "assignment_budget64.csv").exists()

    def test_sweep_without_grid_is_an_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"task": "assignment"})
        assert main(["sweep", cfg]) == 2
        assert "sweep.message_budget_bytes" in capsys.readouterr().err


class TestSelftest:
    def test_fresh_checkout_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") >= 8
        assert "SKIP learned-assignment" in out

    def test_corrupted_wire_constant_fails_the_round_trip_criterion(self, monkeypatch, capsys):
        monkeypatch.setattr(wire_mod, "MAGIC", b"XMSH")
        assert main(["selftest"]) == 1
        out = capsys.readouterr().out
        assert "FAIL wire-round-trip" in out

    def test_learned_checks_run_when_weights_exist(self, tmp_path, capsys):
        from neuromesh.assignment import AssignmentModel
        from neuromesh.tensors import save_attention, save_mlp

        model = AssignmentModel.random(n_goals=5, seed=1)
        save_mlp(tmp_path / "assignment_encoder.mwts", model.encoder)
        save_attention(tmp_path / "assignment_attention.mwts", model.attention)
        save_mlp(tmp_path / "assignment_decoder.mwts", model.decoder)
        assert main(["selftest", "--weights-dir", str(tmp_path)]) == 0
        assert "PASS learned-assignment" in capsys.readouterr().out
