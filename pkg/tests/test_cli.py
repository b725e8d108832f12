import json

import pytest

from ddpredict import dataset as ds
from ddpredict.cli import main
from ddpredict.persist import load_estimator
from ddpredict.report import read_report_csv

SMALL = ["--set", "n_samples=40", "--set", "test_samples=10", "--set", "d_model=8", "--set", "depth=1",
         "--set", "heads=2", "--set", "epochs=2"]


def _pipeline(root, method="physics"):
    data, ckpt, out = root / "d.ddp", root / "m.ddpc", root / "ev"
    assert main(["gen", "--out", str(data)] + SMALL) == 0
    assert main(["train", "--method", method, "--data", str(data), "--out", str(ckpt)] + SMALL) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--out-dir", str(out)]) == 0
    return data, ckpt, out / "eval_test.csv"


def test_gen_train_eval(tmp_path, capsys):
    data, ckpt, csv = _pipeline(tmp_path)
    split = ds.load_dataset(data)
    assert (len(split.train), len(split.val), len(split.test)) == (32, 4, 4)
    assert load_estimator(ckpt).n_f_ == 4
    (rep,) = read_report_csv(csv)
    assert rep.sweep_variable == "velocity_kmh" and rep.points
    man = json.load(open(str(ckpt) + ".manifest.json"))
    assert man["command"] == "train" and man["config"]["epochs"] == 2
    assert str(data) in man["inputs"] and str(ckpt) in man["outputs"]
    assert len(man["loss_curve"]) == 2


def test_pipeline_deterministic(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_samples = 30\nrng_seed = 5\n")
    out = tmp_path / "d.ddp"
    assert main(["gen", "--config", str(cfg), "--set", "n_samples=50", "--out", str(out)]) == 0
    man = json.load(open(str(out) + ".manifest.json"))
    assert man["config"]["n_samples"] == 50 and man["seed"]["rng_seed"] == 5
    assert sum(man["counts"]) == 50


def test_sweep_and_report(tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--variable", "horizon", "--methods", "persistence,linear_ar", "--seeds", "1",
            "--grid", "1,2", "--retrain", "no", "--out-dir", str(out)] + SMALL
    assert main(args) == 0
    csv = out / "nmse_vs_horizon.csv"
    assert (out / "nmse_vs_horizon.svg").exists()
    assert (out / "nmse_vs_horizon.csv.manifest.json").exists()
    assert [r.method for r in read_report_csv(csv)] == ["persistence", "linear_ar"]
    assert main(["report", "--csv", str(csv), "--out", str(tmp_path / "c.svg")]) == 0
    assert (tmp_path / "c.svg").exists()


def test_errors_exit_code(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "x"), "--set", "bogus=1"]) == 2
    assert "unknown key" in capsys.readouterr().err
    bad = tmp_path / "bad.ddp"
    bad.write_bytes(b"nope" * 10)
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m")]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--method", "rnn", "--data", "x", "--out", "y"])
