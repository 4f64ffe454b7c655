"""Command-line interface: exit codes, artifacts, locking, round-trips."""
import math
import os
import subprocess
import sys

import pytest

from poissonmlp import cli, config
from poissonmlp.config import PhaseConfig, RunConfig


def _tiny_config_file(tmp_path, **overrides):
    kw = dict(
        kind="linear",
        dimension=2,
        topology=(2, 12, 12, 1),
        theta=math.pi / 6,
        lam=1 / 3,
        phases=[PhaseConfig(4, 2e-4, [(6, 3, True), (4, 3)])],
        test_count=50,
    )
    kw.update(overrides)
    path = tmp_path / "run.cfg"
    config.save_config(path, RunConfig(**kw))
    return str(path)


def test_presets_lists_all(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in config.preset_names():
        assert name in out


def test_solve_writes_artifacts_and_unlocks(tmp_path):
    cfg = _tiny_config_file(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", cfg, "--out", str(out), "--reproducible"]) == 0
    for name in ("config.txt", "weights.txt", "training_log.csv", "grid.csv",
                 "validation.txt"):
        assert (out / name).exists(), name
    assert not (out / ".lock").exists()
    echoed = config.load_config(out / "config.txt")
    assert echoed.reproducible is True
    assert echoed.out == str(out)
    log_lines = (out / "training_log.csv").read_text().splitlines()
    assert len(log_lines) == 11  # header + 10 epochs
    assert all(line.endswith(",0.000") for line in log_lines[1:])


def test_validate_round_trips_solve_metrics(tmp_path, capsys):
    cfg = _tiny_config_file(tmp_path)
    out = tmp_path / "run"
    cli.main(["solve", "--config", cfg, "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["validate", "--config", cfg,
                     "--weights", str(out / "weights.txt")]) == 0
    stdout = capsys.readouterr().out
    stored = (out / "validation.txt").read_text().splitlines()
    assert stdout.splitlines()[0] == stored[0].replace("eps_max:", "eps_max")
    assert stdout.splitlines()[1] == stored[1].replace("eps_median:", "eps_median")


def test_solve_usage_errors(tmp_path, capsys):
    cfg = _tiny_config_file(tmp_path)
    assert cli.main(["solve", "--config", cfg]) == 2  # no output directory
    assert cli.main(["solve"]) == 2  # neither --config nor --preset
    assert cli.main(["solve", "--config", cfg, "--preset", "2d-linear"]) == 2
    assert cli.main(["solve", "--preset", "9d-linear", "--out", str(tmp_path)]) == 2
    assert cli.main(["solve", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_lock_contention(tmp_path, capsys):
    cfg = _tiny_config_file(tmp_path)
    out = tmp_path / "run"
    os.makedirs(out)
    (out / ".lock").write_text("1\n")
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 2
    assert "another run owns" in capsys.readouterr().err
    (out / ".lock").unlink()
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 0


def test_seed_and_precision_overrides_echoed(tmp_path):
    cfg = _tiny_config_file(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", cfg, "--out", str(out),
                     "--seed", "5", "--precision", "32"]) == 0
    echoed = config.load_config(out / "config.txt")
    assert echoed.weight_seed == 5
    assert echoed.precision == 32


def test_gradcheck_passes_at_64_bit(capsys):
    assert cli.main(["gradcheck", "--dimension", "2", "--kind", "nonlinear"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok") == 3


def test_fd_writes_convergence_csv(tmp_path, capsys):
    assert cli.main(["fd", "--levels", "16,32", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    lines = (tmp_path / "fd_convergence.csv").read_text().splitlines()
    assert lines[0] == "h,max_error,predicted_bound"
    assert len(lines) == 3
    assert cli.main(["fd", "--levels", "banana"]) == 2
    assert cli.main(["fd", "--levels", "4"]) == 2
    capsys.readouterr()


def test_costmodel_report(tmp_path, capsys):
    assert cli.main(["costmodel", "--delta", "1e-5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "h: 0.008" in out
    assert (tmp_path / "cost_model.txt").read_text().splitlines()[3] == "h: 0.008"
    assert cli.main(["costmodel", "--delta", "-1"]) == 2
    capsys.readouterr()


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "poissonmlp.cli", "presets"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "2d-linear" in proc.stdout
