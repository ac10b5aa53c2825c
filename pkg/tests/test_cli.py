"""Command-line interface: exit codes, config plumbing, and the artifact
bundle each subcommand leaves behind."""

import csv

import pytest

from detrend.cli import (
    EXIT_CHECK_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    main,
    make_parser,
)

TINY = [
    "--set", "task.grid=10,10",
    "--set", "task.modifiers=1,2",
    "--set", "task.subjects=2",
    "--set", "task.repetitions=1",
    "--set", "task.t_min=12",
    "--set", "task.t_max=14",
    "--set", "net.channels=2,3,4",
    "--set", "train.epochs=1",
    "--set", "norm.method=ad",
]


def run_train(out):
    return main(["train", *TINY, "--out", str(out)])


def test_gradcheck_pass_exit_code(capsys):
    code = main(["gradcheck", "--cell", "gru", "--norm", "ad", "--T", "2"])
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("PASS")


def test_gradcheck_corrupt_fails(capsys, tmp_path):
    report = tmp_path / "report.csv"
    code = main(["gradcheck", "--cell", "gru", "--T", "2", "--corrupt", "W_h",
                 "--report-csv", str(report)])
    assert code == EXIT_CHECK_FAILURE
    assert capsys.readouterr().out.startswith("FAIL")
    assert report.exists()


def test_config_error_exit_code(capsys):
    code = main(["train", "--set", "bogus.key=1"])
    assert code == EXIT_CONFIG_ERROR
    assert "config error" in capsys.readouterr().err


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        make_parser().parse_args(["frobnicate"])


def test_train_writes_bundle(tmp_path):
    out = tmp_path / "run"
    assert run_train(out) == EXIT_OK
    assert (out / "config.txt").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "timing.txt").exists()
    assert (out / "fold1" / "final.ckpt").exists()
    with open(out / "metrics.csv") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 2  # header + 1 epoch


def test_eval_reads_checkpoint(tmp_path, capsys):
    out = tmp_path / "run"
    run_train(out)
    capsys.readouterr()
    code = main(["eval", *TINY, str(out / "fold1" / "final.ckpt")])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "joint_acc=" in text and "head0_acc=" in text


def test_diagnose_writes_csvs(tmp_path, capsys):
    out = tmp_path / "run"
    run_train(out)
    code = main(["diagnose", *TINY, "--out", str(out), str(out / "fold1" / "final.ckpt")])
    assert code == EXIT_OK
    assert (out / "histograms.csv").exists()
    assert (out / "neuron_trace.csv").exists()  # detrending model has a y stream


def test_gen_data_exports(tmp_path, capsys):
    data_dir = tmp_path / "data"
    code = main(["gen-data", *TINY, "--data-dir", str(data_dir)])
    assert code == EXIT_OK
    assert (data_dir / "manifest.csv").exists()
    assert (data_dir / "frames.bin").exists()


def test_plot_renders_png(tmp_path, capsys):
    out = tmp_path / "run"
    run_train(out)
    img = tmp_path / "curves.png"
    code = main(["plot", str(out / "metrics.csv"), str(img)])
    assert code == EXIT_OK
    assert img.stat().st_size > 0


def test_plot_empty_csv_fails(tmp_path, capsys):
    csv_path = tmp_path / "empty.csv"
    csv_path.write_text("epoch,loss\n")
    code = main(["plot", str(csv_path), str(tmp_path / "x.png")])
    assert code == EXIT_CHECK_FAILURE


def test_seed_override_changes_metrics(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["train", *TINY, "--out", str(a), "--seed", "0"])
    main(["train", *TINY, "--out", str(b), "--seed", "0"])
    main(["train", *TINY, "--out", str(c), "--seed", "1"])
    bytes_a = (a / "metrics.csv").read_bytes()
    assert bytes_a == (b / "metrics.csv").read_bytes()
    assert bytes_a != (c / "metrics.csv").read_bytes()
