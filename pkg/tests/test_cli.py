"""The command line surface: verbs, printed output, exit codes.

Exit codes are contractual (sweep tooling branches on them), so each
failure class gets a test: 2 for config problems, 3 for divergence during
data handling, 4 for a training abort, 1 for a failing verify suite.
"""
import json
import re

import numpy as np
import pytest

from ici.cli import (EXIT_ABORTED, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK,
                     EXIT_SUITE_FAILED, main)

TINY = {"benchmark": "linear_bench", "n_traj": 4, "horizon": 25,
        "epochs": 40, "patience": 40, "n_test": 4, "eval_horizon": 25}


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = dict(TINY)
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_exit_code_values_are_stable():
    assert (EXIT_OK, EXIT_SUITE_FAILED, EXIT_CONFIG, EXIT_DIVERGED,
            EXIT_ABORTED) == (0, 1, 2, 3, 4)


def test_generate_train_evaluate_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path)
    data_dir = tmp_path / "data"
    run_dir = tmp_path / "run"

    assert main(["generate", "--config", str(cfg),
                 "--out", str(data_dir)]) == EXIT_OK
    digest = capsys.readouterr().out.strip()
    assert re.fullmatch(r"[0-9a-f]{64}", digest)

    assert main(["train", "--config", str(cfg), "--dataset", str(data_dir),
                 "--out", str(run_dir)]) == EXIT_OK
    assert "final loss" in capsys.readouterr().out

    assert main(["evaluate", "--config", str(run_dir / "config.json")]) == EXIT_OK
    out = capsys.readouterr().out
    for key in ("ol_mse=", "cl_mse=", "ol_r2=", "cl_r2=", "diverged_ol="):
        assert key in out
    assert (run_dir / "metrics.json").exists()


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, epochss=10)
    assert main(["generate", "--config", str(cfg),
                 "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    capsys.readouterr()


def test_divergence_during_generation_exits_3(tmp_path, capsys):
    # excitation far beyond the overflow guard blows up the scalar loop
    # on the first trajectory
    cfg = write_config(tmp_path, benchmark="scalar_unstable", sigma_r=1e13)
    assert main(["generate", "--config", str(cfg),
                 "--out", str(tmp_path / "d")]) == EXIT_DIVERGED
    assert "divergence" in capsys.readouterr().err


def test_training_abort_exits_4(tmp_path, capsys):
    cfg = write_config(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["generate", "--config", str(cfg),
                 "--out", str(data_dir)]) == EXIT_OK
    capsys.readouterr()
    # poison one measurement: the first full-batch loss is then non-finite
    traj = data_dir / "traj_0.csv"
    lines = traj.read_text().splitlines()
    cells = lines[3].split(",")
    cells[-1] = "nan"
    lines[3] = ",".join(cells)
    traj.write_text("\n".join(lines) + "\n")
    assert main(["train", "--config", str(cfg), "--dataset", str(data_dir),
                 "--out", str(tmp_path / "run")]) == EXIT_ABORTED
    assert "training aborted" in capsys.readouterr().err


def test_sweep_with_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path, strategies=["s3"], n_test=2)
    out_dir = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out_dir),
                 "--seeds", "2"]) == EXIT_OK
    assert "wrote 1 rows" in capsys.readouterr().out
    text = (out_dir / "results.csv").read_text()
    assert text.splitlines()[1].split(",")[3] == "2"


def test_bad_seed_list_is_an_argument_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"),
              "--seeds", "1,x"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_verify_writes_report_and_exits_0(tmp_path, capsys):
    out_dir = tmp_path / "reports"
    assert main(["verify", "--suite", "gradients",
                 "--out", str(out_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS] suite gradients" in out
    report = json.loads((out_dir / "verify_gradients.json").read_text())
    assert report["passed"] is True
    assert report["properties"]


def test_verify_rejects_unknown_suite(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "everything"])
    assert exc.value.code == 2
    capsys.readouterr()
