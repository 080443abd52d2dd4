import csv
import json
import subprocess
import sys

import pytest

from irbridge.cli import main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsage:
    def test_no_arguments(self, capsys):
        code, _, err = run([], capsys)
        assert code == 2 and "usage" in err

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(["frobnicate"], capsys)
        assert code == 2 and "usage" in err

    def test_unknown_flag(self, capsys):
        assert run(["paths", "dump", "--path", "rf", "--bogus"], capsys)[0] == 2

    def test_group_without_action(self, capsys):
        code, _, err = run(["schedule"], capsys)
        assert code == 2 and "usage" in err

    def test_missing_seed(self, capsys):
        assert run(["transition", "check"], capsys)[0] == 2

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        assert run(["sde", "check", "--config", str(p), "--seed", "1"], capsys)[0] == 2

    def test_console_script_module(self):
        r = subprocess.run([sys.executable, "-m", "irbridge.cli"], capture_output=True, text=True)
        assert r.returncode == 2 and "usage" in r.stderr


class TestCommands:
    def test_schedule_emit_setting1(self, capsys):
        code, out, _ = run(["schedule", "emit", "--preset", "setting1", "--steps", "100"], capsys)
        rows = list(csv.DictReader(out.splitlines()))
        assert code == 0 and len(rows) == 100
        assert float(rows[0]["j"]) == 0.85

    def test_schedule_validate_round_trip(self, tmp_path, capsys):
        f = tmp_path / "s.csv"
        assert run(["schedule", "emit", "--preset", "setting8", "--steps", "40", "--out", str(f)], capsys)[0] == 0
        code, out, err = run(["schedule", "validate", "--schedule", str(f)], capsys)
        assert code == 0 and "forward violations=0" in err

    def test_schedule_validate_reports_violation(self, capsys):
        code, _, err = run(["schedule", "validate", "--preset", "setting2", "--steps", "20"], capsys)
        assert code == 1 and "forward violations=0" not in err

    def test_paths_dump(self, tmp_path, capsys):
        f = tmp_path / "p.csv"
        assert run(["paths", "dump", "--path", "irsde", "--grid", "11", "--out", str(f)], capsys)[0] == 0
        lines = f.read_text().splitlines()
        assert lines[0] == "tau,f,b_mul,sigma" and len(lines) == 12

    def test_critical_dump(self, capsys):
        code, out, _ = run(["critical", "dump", "--bridge", "goub", "--gen", "rf", "--lambda", "1,2", "--grid", "5"], capsys)
        assert code == 0 and len(out.splitlines()) == 11

    def test_transition_check(self, tmp_path, capsys):
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"mc_samples": 20000, "pairs": [[0.2, 0.3]], "sigmas": [0.5, 50.0]}))
        code, out, _ = run(["transition", "check", "--config", str(cfg), "--seed", "2"], capsys)
        assert code == 0 and "skipped" in out and " pass " in out

    def test_sde_check(self, tmp_path, capsys):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"seed": 0, "sde": {"n_traj": 20000, "n_steps": 400, "checkpoints": [0.5]}}))
        code, out, _ = run(["sde", "check", "--config", str(cfg), "--threads", "2"], capsys)
        assert code == 0 and "goub terminal" in out

    @pytest.mark.parametrize("mode", ["irbridge", "generative", "bridge-native"])
    def test_run_writes_artifacts(self, mode, tmp_path, capsys):
        task = tmp_path / "task.json"
        task.write_text(json.dumps({"name": "gmm", "n_steps": 20}))
        out = tmp_path / "out"
        code, stdout, _ = run(["run", "--mode", mode, "--task", str(task), "--denoiser", "cond", "--seed", "4", "--out", str(out)], capsys)
        assert code == 0 and "final_mse=" in stdout
        doc = json.loads((out / "trajectory.json").read_text())
        assert set(doc) == {"config", "seed", "steps", "final", "metrics"} and doc["seed"] == 4
        assert (out / "steps.csv").read_text().startswith("step,i,j,")

    def test_run_is_reproducible(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(["run", "--mode", "irbridge", "--seed", "9", "--out", str(tmp_path / d)], capsys)
        assert (tmp_path / "a" / "trajectory.json").read_bytes() == (tmp_path / "b" / "trajectory.json").read_bytes()

    def test_compare(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_seeds": 2, "n_steps": 30}))
        code, out, err = run(["compare", "--config", str(cfg), "--seed", "0"], capsys)
        assert code == 0 and len(out.splitlines()) == 5 and "bridge >= generative" in err

    def test_verify_subset(self, capsys):
        code, out, _ = run(["verify", "all", "--seed", "7", "--only", "C2,C3"], capsys)
        assert code == 0 and out.count("[PASS]") == 2

    def test_verify_unknown_criterion(self, capsys):
        assert run(["verify", "all", "--seed", "7", "--only", "C99"], capsys)[0] == 2
