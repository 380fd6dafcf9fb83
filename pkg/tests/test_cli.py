import json
import subprocess
import sys

import pytest

from srapf.cli import main


@pytest.fixture(scope="module")
def task_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "task"
    assert main(["generate", "--out", str(d), "--classes", "4", "--dim", "8",
                 "--seed", "3"]) == 0
    return d


def test_generate_writes_task_layout(task_dir):
    assert (task_dir / "meta.json").exists()
    assert (task_dir / "id_train" / "data.tsv").exists()
    assert (task_dir / "ood_rotation" / "data.tsv").exists()
    assert (task_dir / "corpus.tsv").exists()
    assert (task_dir / "payloads.tsv").exists()
    meta = json.loads((task_dir / "meta.json").read_text())
    assert meta["num_classes"] == 4


def test_retrieve_command(tmp_path, capsys):
    corpus = tmp_path / "corpus.tsv"
    corpus.write_text("c0\ta photo of a crane\tp0\n"
                      "c1\tan ember glowing\tp1\n"
                      "c2\tcranes are not matched\tp2\n"
                      "c3\tthe crane again\tp3\n", encoding="utf-8")
    classes = tmp_path / "names.txt"
    classes.write_text("crane\nember\n", encoding="utf-8")
    out = tmp_path / "retrieved.tsv"
    assert main(["retrieve", "--corpus", str(corpus), "--classes", str(classes),
                 "--cap", "1", "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "crane\t1" in stdout and "ember\t1" in stdout
    lines = out.read_text().splitlines()
    assert len(lines) == 2  # cap 1 per class


def test_train_and_report_commands(task_dir, tmp_path, capsys):
    runs = []
    for seed in ("0", "1"):
        run_dir = tmp_path / f"run{seed}"
        rc = main(["train", "--recipe", "PFT", "--task", str(task_dir),
                   "--out", str(run_dir), "--seed", seed, "--shots", "4",
                   "--pretrain-epochs", "1", "--set", "epochs=2",
                   "--set", "warmup_iters=2"])
        assert rc == 0
        assert (run_dir / "checkpoint.npz").exists()
        assert (run_dir / "report.tsv").exists()
        runs.append(str(run_dir))
    out = capsys.readouterr().out
    assert "selected epoch" in out
    scatter = tmp_path / "scatter.tsv"
    assert main(["report", "--runs", *runs, "--scatter", str(scatter)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("method\tseeds")
    assert any(line.startswith("PFT\t2\t") for line in out.splitlines())
    assert scatter.read_text().startswith("method\tparams_trained")


def test_sweep_command(task_dir, tmp_path, capsys):
    out = tmp_path / "sweep.tsv"
    rc = main(["sweep", "--task", str(task_dir), "--epsilons", "0,0.01",
               "--shots", "4", "--pretrain-epochs", "1", "--out", str(out),
               "--set", "epochs=1", "--set", "warmup_iters=1"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("epsilon\tid_top1\tood_mean_top1")
    assert len(lines) == 3


def test_bad_set_syntax_exits():
    with pytest.raises(SystemExit):
        main(["train", "--recipe", "PFT", "--task", "x", "--out", "y",
              "--set", "notkeyvalue"])


def test_console_help_runs():
    proc = subprocess.run([sys.executable, "-m", "srapf.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate" in proc.stdout and "sweep" in proc.stdout
