import csv

import pytest

from eqtp.bench.dataset import read_dataset
from eqtp.cli import main


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_demo_gen_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.eqpd", tmp_path / "b.eqpd"
    assert run(capsys, "demo-gen", "--task", "align-corner", "--count", "3", "--seed", "4", "--out", a)[0] == 0
    assert run(capsys, "demo-gen", "--task", "align-corner", "--count", "3", "--seed", "4", "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert [d.seed for d in read_dataset(a)] == [4, 5, 6]


def test_demo_gen_rejects_bad_count(tmp_path, capsys):
    rc, _, err = run(capsys, "demo-gen", "--task", "align-corner", "--count", "0", "--out", tmp_path / "x")
    assert rc == 2 and err.startswith("error:")


def test_train_eval_plot(tmp_path, capsys):
    data = tmp_path / "d.eqpd"
    run(capsys, "demo-gen", "--task", "block-insertion", "--count", "10", "--out", data)
    cfg = tmp_path / "run.txt"
    cfg.write_text(f"task=block-insertion\ndataset={data}\nsteps=4\neval_interval=2\neval_episodes=2\n")
    out = tmp_path / "run"
    rc, text, _ = run(capsys, "train", "--config", cfg, "--out", out)
    assert rc == 0 and "best score" in text
    for f in ("report.csv", "report.png", "report_resampled.csv", "best.eqck", "losses.csv", "timing.csv"):
        assert (out / f).exists(), f
    ev = tmp_path / "eval.csv"
    assert run(capsys, "eval", "--checkpoint", out / "best.eqck", "--task", "block-insertion",
               "--episodes", "2", "--csv", ev)[0] == 0
    assert run(capsys, "eval", "--oracle", "--task", "block-insertion", "--episodes", "3", "--csv", ev)[0] == 0
    rows = list(csv.DictReader(ev.open()))
    assert len(rows) == 2 and rows[1]["policy"] == "oracle" and float(rows[1]["score"]) == 1.0
    rc, _, err = run(capsys, "eval", "--checkpoint", out / "best.eqck", "--task", "align-corner", "--csv", ev)
    assert rc == 2 and "trained on block-insertion" in err
    rc, text, _ = run(capsys, "plot", "--csv", out / "report.csv", "--out", tmp_path / "p.png")
    assert rc == 0 and (tmp_path / "p.png").exists()


def test_train_rejects_goal_flag_without_goal_task(tmp_path, capsys):
    cfg = tmp_path / "run.txt"
    cfg.write_text("task=block-insertion\ndataset=x\n")
    rc, _, err = run(capsys, "train", "--config", cfg, "--goal")
    assert rc == 2 and "goal" in err


def test_eval_argument_errors(tmp_path, capsys):
    rc, _, err = run(capsys, "eval", "--task", "align-corner", "--csv", tmp_path / "e.csv")
    assert rc == 2 and "exactly one" in err
    rc, _, err = run(capsys, "eval", "--oracle", "--task", "align-corner", "--episodes", "0",
                     "--csv", tmp_path / "e.csv")
    assert rc == 2


def test_plot_reports_bad_line(tmp_path, capsys):
    (tmp_path / "r.csv").write_text("step,score\n1,0.5\n2,abc\n")
    rc, _, err = run(capsys, "plot", "--csv", tmp_path / "r.csv", "--out", tmp_path / "p.png")
    assert rc == 2 and "r.csv:3" in err


def test_verify_rejects_bad_group(capsys):
    rc, _, err = run(capsys, "verify", "--group", "1")
    assert rc == 2 and "group" in err


def test_unknown_task_is_an_argparse_error(capsys):
    with pytest.raises(SystemExit):
        main(["demo-gen", "--task", "nope", "--count", "1", "--out", "x"])
