import subprocess
import sys

import pytest

from coevgan import cli
from coevgan.errors import TrainingError
from coevgan.experiment import read_results, read_scores

from test_experiment import TINY


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def test_budget_table(capsys):
    assert cli.main(["budget", "--dataset-size", "60000", "--batch-size", "100", "--budget", "120000"]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = [line.split() for line in out[2:]]
    assert rows == [["1.00", "600", "200"], ["0.75", "450", "267"], ["0.50", "300", "400"],
                    ["0.25", "150", "800"]]


def test_run_then_heatmap_then_compare(cfg_file, tmp_path, capsys):
    out = tmp_path / "grid"
    code = cli.main(["run", "--config", str(cfg_file), "--grid", "2x2", "--portion", "0.5", "--seed", "3",
                     "--mode", "seq", "--out", str(out)])
    assert code == 0
    result = read_results(out)
    assert result.variant == "Grid-2x2" and result.portion == 0.5 and len(result.cells) == 4
    assert "seeds.run = 3" in (out / "manifest.txt").read_text()

    assert cli.main(["heatmap", str(out), "--column", "evolved_ensemble_score", "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h.csv").exists() and (tmp_path / "h.ppm").exists()

    capsys.readouterr()
    assert cli.main(["compare", str(out), "--out", str(tmp_path / "report.txt")]) == 0
    report = capsys.readouterr().out
    assert "Grid-2x2-Ensemble" in report and "delta Grid-2x2 @ 0.5" in report
    assert (tmp_path / "report.txt").exists()


def test_bootstrap_then_compare(cfg_file, tmp_path, capsys):
    out = tmp_path / "boot"
    assert cli.main(["bootstrap", "--config", str(cfg_file), "--pool", "5", "--repeats", "3", "--out", str(out)]) == 0
    rows = read_scores(out / "scores.csv")
    assert len(rows) == 8
    capsys.readouterr()
    assert cli.main(["compare", str(out / "scores.csv")]) == 0
    report = capsys.readouterr().out
    assert "delta SingleGAN @ 1" in report
    assert "rank-sum SingleGAN@1 vs SingleGAN-Ensemble@1" in report


def test_collect_groups_uses_one_value_per_repeat():
    rows = [dict(variant="Grid-2x1", portion=0.5, repeat=0, cell_row=r, cell_col=0, best_score=b,
                 uniform_ensemble_score=u, evolved_ensemble_score=e)
            for r, (b, u, e) in enumerate([(3.0, 2.0, 1.5), (1.0, 4.0, 2.5)])]
    groups = cli.collect_groups(rows)
    assert groups == {("Grid-2x1", 0.5): [1.0], ("Grid-2x1-Ensemble", 0.5): [1.5]}
    assert cli.collect_groups(rows, "mean")[("Grid-2x1", 0.5)] == [2.0]


@pytest.mark.parametrize("argv", [["budget", "--portion", "abc"], ["run", "--out", "x", "--grid", "3by3"],
                                  ["run", "--out", "x", "--mode", "parallel"], ["frobnicate"],
                                  ["run", "--config", "/nonexistent/x.cfg", "--out", "x"]])
def test_configuration_errors_exit_one(argv, capsys):
    assert cli.main(argv) == 1
    assert "config error" in capsys.readouterr().err


def test_bad_config_key_exits_one(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("coev.colour = blue\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_training_failure_exits_two(cfg_file, tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise TrainingError("diverged")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "coevgan.cli", "budget", "--portion", "0.25"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "0.25" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "coevgan.cli", "run"], capture_output=True, text=True)
    assert proc.returncode == 1
