import csv
import io

import numpy as np
import pytest

from blockboost.bench import make_binary_task
from blockboost.cli import main
from blockboost.data import serialize_libsvm
from blockboost.metrics import auc
from blockboost.trainer import load_model, predict


@pytest.fixture()
def libsvm_file(tmp_path):
    matrix = make_binary_task(400, 4, seed=50)
    path = tmp_path / "train.libsvm"
    with open(path, "w") as f:
        serialize_libsvm(matrix, f)
    return str(path), matrix


def run(argv):
    return main(argv)


def test_train_predict_eval_round_trip(libsvm_file, tmp_path, capsys):
    data_path, matrix = libsvm_file
    model_path = str(tmp_path / "m.model")
    assert run(["train", "--data", data_path, "--model", model_path,
                "--rounds", "5", "--max-depth", "3", "--loss", "logistic"]) == 0

    out_path = str(tmp_path / "preds.txt")
    assert run(["predict", "--data", data_path, "--model", model_path,
                "--output", out_path]) == 0
    with open(out_path) as f:
        scores = np.asarray([float(line) for line in f])
    assert len(scores) == matrix.n_rows
    ens = load_model(model_path)
    np.testing.assert_array_equal(scores, predict(ens, matrix))

    assert run(["eval", "--data", data_path, "--model", model_path,
                "--metric", "auc"]) == 0
    name, value = capsys.readouterr().out.strip().split(",")
    assert name == "auc"
    margin = predict(ens, matrix, output_margin=True)
    assert float(value) == pytest.approx(auc(matrix.labels, margin))


def test_predict_output_margin(libsvm_file, tmp_path, capsys):
    data_path, matrix = libsvm_file
    model_path = str(tmp_path / "m.model")
    run(["train", "--data", data_path, "--model", model_path,
         "--rounds", "3", "--loss", "logistic"])
    assert run(["predict", "--data", data_path, "--model", model_path,
                "--output-margin"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    got = np.asarray([float(l) for l in lines])
    ens = load_model(model_path)
    np.testing.assert_array_equal(got, predict(ens, matrix, output_margin=True))


def test_train_deterministic(libsvm_file, tmp_path):
    data_path, _ = libsvm_file
    p1, p2 = str(tmp_path / "a.model"), str(tmp_path / "b.model")
    args = ["--data", data_path, "--rounds", "4", "--loss", "logistic",
            "--seed", "3", "--subsample", "0.7"]
    assert run(["train", "--model", p1] + args) == 0
    assert run(["train", "--model", p2] + args) == 0
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_config_file_and_flag_precedence(libsvm_file, tmp_path):
    data_path, _ = libsvm_file
    cfg = tmp_path / "run.conf"
    cfg.write_text("rounds = 2\nloss = logistic\nmax-depth = 3  # comment\n")
    m_file = str(tmp_path / "file.model")
    m_flag = str(tmp_path / "flag.model")
    m_plain = str(tmp_path / "plain.model")
    # config file alone
    assert run(["train", "--data", data_path, "--model", m_file,
                "--config", str(cfg)]) == 0
    ens = load_model(m_file)
    assert len(ens.trees) == 2
    # explicit flag overrides the file
    assert run(["train", "--data", data_path, "--model", m_flag,
                "--config", str(cfg), "--rounds", "5"]) == 0
    assert len(load_model(m_flag).trees) == 5
    # defaults apply when neither names the key
    assert run(["train", "--data", data_path, "--model", m_plain,
                "--loss", "logistic"]) == 0
    assert len(load_model(m_plain).trees) == 10


def test_unknown_config_key_fails(libsvm_file, tmp_path, capsys):
    data_path, _ = libsvm_file
    cfg = tmp_path / "bad.conf"
    cfg.write_text("learning_rate = 0.5\n")
    rc = run(["train", "--data", data_path, "--model", str(tmp_path / "x.model"),
              "--config", str(cfg)])
    assert rc == 1
    assert "learning_rate" in capsys.readouterr().err


def test_malformed_config_line_fails(libsvm_file, tmp_path, capsys):
    data_path, _ = libsvm_file
    cfg = tmp_path / "bad.conf"
    cfg.write_text("rounds 5\n")
    rc = run(["train", "--data", data_path, "--model", str(tmp_path / "x.model"),
              "--config", str(cfg)])
    assert rc == 1
    assert "key = value" in capsys.readouterr().err


def test_train_with_spill_dirs(libsvm_file, tmp_path):
    data_path, _ = libsvm_file
    d1, d2 = tmp_path / "s1", tmp_path / "s2"
    d1.mkdir(), d2.mkdir()
    model = str(tmp_path / "ooc.model")
    assert run(["train", "--data", data_path, "--model", model,
                "--rounds", "3", "--loss", "logistic", "--block-size", "256",
                "--compress", "--spill-dir", str(d1), "--spill-dir", str(d2),
                "--memory-budget-blocks", "2"]) == 0
    # equivalent in-memory run produces the identical model
    model2 = str(tmp_path / "mem.model")
    assert run(["train", "--data", data_path, "--model", model2,
                "--rounds", "3", "--loss", "logistic", "--block-size", "256"]) == 0
    assert open(model, "rb").read() == open(model2, "rb").read()


def test_eval_log_file(libsvm_file, tmp_path):
    data_path, _ = libsvm_file
    log_path = tmp_path / "log.csv"
    assert run(["train", "--data", data_path, "--model", str(tmp_path / "m.model"),
                "--rounds", "4", "--loss", "logistic",
                "--eval-data", data_path, "--log-file", str(log_path)]) == 0
    lines = log_path.read_text().strip().splitlines()
    assert len(lines) == 4
    for i, line in enumerate(lines):
        rnd, name, value = line.split(",")
        assert int(rnd) == i
        assert name == "logloss"
        float(value)


def test_bench_csv_output(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert run(["bench", "sketch-guarantee", "--out", str(out)]) == 0
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["experiment", "key", "value"]
    assert all(r[0] == "sketch-guarantee" for r in rows[1:])
    assert len(rows) > 1


def test_bench_higgs_requires_data(capsys):
    rc = run(["bench", "higgs-reference"])
    assert rc == 1
    assert "requires --data" in capsys.readouterr().err


def test_missing_data_file_reports_error(tmp_path, capsys):
    rc = run(["train", "--data", str(tmp_path / "nope.libsvm"),
              "--model", str(tmp_path / "m.model")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")
