import json
from pathlib import Path

import numpy as np
import pytest

from pdrkit.cli import main

SIM_SPEC = {
    "trajectory": {
        "rate_hz": 200.0,
        "segments": [
            {"duration_s": 8.0, "speed_mps": 1.2},
            {"duration_s": 2.0, "speed_mps": 1.2, "turn_rate_radps": 0.1},
            {"duration_s": 8.0, "speed_mps": 1.2},
        ],
    },
    "noise": {
        "gyro_white_std": 1.5e-3,
        "accel_white_std": 2e-3,
        "accel_bias0": [1e-3, -3e-3, 2e-3],
    },
}


def run_cli(*argv):
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse usage errors
        return exc.code


@pytest.fixture
def sim_dir(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SIM_SPEC))
    out = tmp_path / "sim"
    assert run_cli("simulate", "--spec", str(spec), "--out", str(out), "--seed", "3") == 0
    return out


class TestSimulate:
    def test_writes_three_files(self, sim_dir):
        assert (sim_dir / "imu.csv").exists()
        assert (sim_dir / "pose.csv").exists()
        assert (sim_dir / "metadata.json").exists()

    def test_missing_spec_exits_2(self, tmp_path):
        assert run_cli("simulate", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path)) == 2

    def test_invalid_spec_exits_2(self, tmp_path):
        spec = tmp_path / "bad.json"
        spec.write_text(json.dumps({"trajectory": {"segments": [{"duration_s": -1, "speed_mps": 1}]}}))
        assert run_cli("simulate", "--spec", str(spec), "--out", str(tmp_path / "o")) == 2

    def test_repeated_seed_is_byte_identical(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SIM_SPEC))
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--spec", str(spec), "--out", str(a), "--seed", "9") == 0
        assert run_cli("simulate", "--spec", str(spec), "--out", str(b), "--seed", "9") == 0
        assert (a / "imu.csv").read_bytes() == (b / "imu.csv").read_bytes()
        assert (a / "pose.csv").read_bytes() == (b / "pose.csv").read_bytes()


class TestAlign:
    def test_align_produces_uniform_csv(self, sim_dir, tmp_path):
        out = tmp_path / "aligned.csv"
        code = run_cli("align", "--imu", str(sim_dir / "imu.csv"),
                       "--pose", str(sim_dir / "pose.csv"), "--out", str(out))
        assert code == 0
        assert out.exists() and Path(str(out) + ".meta.json").exists()


class TestRun:
    def test_constant_adapter_run(self, sim_dir, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "run", "--imu", str(sim_dir / "imu.csv"), "--pose", str(sim_dir / "pose.csv"),
            "--init-velocity", "1.2,0,0", "--out", str(out), "--with-ndi",
            "--states", str(out / "states.csv"),
        )
        assert code == 0
        for name in ("iekf.csv", "inter.csv", "ndi.csv", "states.csv"):
            assert (out / name).exists()

    def test_missing_init_velocity_exits_2(self, sim_dir, tmp_path):
        code = run_cli("run", "--imu", str(sim_dir / "imu.csv"),
                       "--pose", str(sim_dir / "pose.csv"), "--out", str(tmp_path / "o"))
        assert code == 2

    def test_corrupt_weights_exit_3(self, sim_dir, tmp_path):
        bad = tmp_path / "weights.json"
        bad.write_text(json.dumps({"format_version": 1, "activation": "relu", "window": 23}))
        code = run_cli(
            "run", "--imu", str(sim_dir / "imu.csv"), "--pose", str(sim_dir / "pose.csv"),
            "--init-velocity", "1.2,0,0", "--adapter", str(bad), "--out", str(tmp_path / "o"),
        )
        assert code == 3

    def test_config_override(self, sim_dir, tmp_path):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[measurement]\nforward_var = 5.0\n\n[filter]\nwindow_s = 4\n")
        out = tmp_path / "run"
        code = run_cli(
            "run", "--imu", str(sim_dir / "imu.csv"), "--pose", str(sim_dir / "pose.csv"),
            "--init-velocity", "1.2,0,0", "--config", str(cfg), "--out", str(out),
        )
        assert code == 0


class TestEval:
    @pytest.fixture
    def run_outputs(self, sim_dir, tmp_path):
        out = tmp_path / "run"
        run_cli("run", "--imu", str(sim_dir / "imu.csv"), "--pose", str(sim_dir / "pose.csv"),
                "--init-velocity", "1.2,0,0", "--out", str(out), "--with-ndi")
        gt = tmp_path / "gt.csv"
        # ground truth trajectory = the aligned poses themselves
        from pdrkit import dataio, evaluate
        imu, poses = dataio.load_sequence(sim_dir / "imu.csv", sim_dir / "pose.csv")
        seq = dataio.synchronize(imu, poses)
        evaluate.write_trajectory_csv(
            gt, evaluate.Trajectory(t_ns=seq.t_ns, pos=seq.pos, rot=seq.rot, vel=seq.vel_world)
        )
        return out, gt

    def test_self_eval_is_zero(self, run_outputs, tmp_path, capsys):
        _, gt = run_outputs
        report = tmp_path / "report.csv"
        code = run_cli("eval", "--est", f"gtcopy={gt}", "--gt", str(gt), "--out", str(report))
        assert code == 0
        text = report.read_text()
        assert "gtcopy,0.000000,0.000000" in text

    def test_two_methods_two_rows(self, run_outputs, tmp_path):
        out, gt = run_outputs
        report = tmp_path / "report.csv"
        code = run_cli(
            "eval", "--est", f"iekf={out/'iekf.csv'}", "--est", f"ndi={out/'ndi.csv'}",
            "--gt", str(gt), "--out", str(report),
        )
        assert code == 0
        lines = report.read_text().strip().split("\n")
        assert len(lines) == 3  # header + 2 methods

    def test_interval_longer_than_sequence_sets_fallback(self, run_outputs, tmp_path):
        out, gt = run_outputs
        report = tmp_path / "report.csv"
        code = run_cli("eval", "--est", f"iekf={out/'iekf.csv'}", "--gt", str(gt),
                       "--interval", "60", "--out", str(report))
        assert code == 0
        row = report.read_text().strip().split("\n")[1].split(",")
        assert row[3] == "1"  # rte_is_ate_fallback

    def test_disjoint_timebase_exits_4(self, run_outputs, tmp_path):
        out, gt = run_outputs
        from pdrkit import evaluate
        est = evaluate.load_trajectory_csv(out / "iekf.csv")
        shifted = evaluate.Trajectory(t_ns=est.t_ns + 10**12, pos=est.pos)
        bad = tmp_path / "shifted.csv"
        evaluate.write_trajectory_csv(bad, shifted)
        assert run_cli("eval", "--est", f"x={bad}", "--gt", str(gt)) == 4
