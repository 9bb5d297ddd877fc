import csv
import json

import pytest

from emocil.cli import main
from emocil.ingestion import AU_COLUMNS

FAST = ["--covariance-kind", "diagonal", "--max-components", "2", "--n-restarts", "1"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--preset", "cfee6", "--samples", "30", "--out", str(out)]) == 0
    return out


def _train(data_dir, out, *extra):
    args = ["train", "--data", str(data_dir / "features.csv"), "--manifest", str(data_dir / "manifest.csv"),
            "--schedule", "builtin:cfee6", "--out", str(out), *FAST, *extra]  # fmt: skip
    return main(args)


def test_synth_two_class_and_repeatable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--k", "2", "--separation", "10", "--seed", "3", "--out", str(d)]) == 0
    for name in ("features.csv", "manifest.csv", "schedule.txt", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len(json.loads((a / "truth.json").read_text())) == 2


def test_train_checkpoints_and_order_invariance(synth_dir, tmp_path):
    assert _train(synth_dir, tmp_path / "r1") == 0
    assert _train(synth_dir, tmp_path / "r2", "--task-order", "1,5,3,6,2,4") == 0
    names = sorted(p.name for p in (tmp_path / "r1").glob("model_t*.json"))
    assert names == [f"model_t{t}.json" for t in range(1, 7)]
    doc = json.loads((tmp_path / "r1" / "model.json").read_text())
    assert sum(len(e["classes"]) for e in doc["experts"]) == 22
    assert (tmp_path / "r1" / "model.json").read_bytes() == (tmp_path / "r2" / "model.json").read_bytes()
    log = (tmp_path / "r1" / "train_log.txt").read_text().splitlines()
    assert len(log) == 22 and "components" in log[0]


def test_eval_model_and_seeds(synth_dir, tmp_path, capsys):
    assert _train(synth_dir, tmp_path / "m") == 0
    data = ["--data", str(synth_dir / "features.csv"), "--manifest", str(synth_dir / "manifest.csv")]
    assert main(["eval", "--model", str(tmp_path / "m" / "model.json"), *data, "--out", str(tmp_path / "e")]) == 0
    out = capsys.readouterr().out
    assert "6,732" in out and "aware" in out  # (17 + 136) * 2 * 22 with --max-components 2
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert len(metrics["acc_curve"]) == 6 and metrics["acc_curve"][-1] >= 0.95
    assert main(["eval", *data, "--seeds", "2", "--schedule", "builtin:cfee6", *FAST, "--out", str(tmp_path / "s")]) == 0
    metrics = json.loads((tmp_path / "s" / "metrics.json").read_text())
    assert metrics["n_runs"] == 2 and len(metrics["acc_curve_std"]) == 6


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EMOCIL_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["synth", "--k", "2", "--samples", "5"]) == 0
    assert (tmp_path / "env" / "features.csv").exists()


def test_missing_au_column_fails(tmp_path, capsys):
    p = tmp_path / "S1_happy.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [c for c in AU_COLUMNS if c != "AU17_r"]
        w.writerow(cols)
        w.writerow([1.0] * len(cols))
    code = main(["train", "--data", str(p), "--out", str(tmp_path / "o")])
    assert code != 0
    err = capsys.readouterr().err
    assert "AU17_r" in err and "ingestion" in err


def test_bad_task_order(synth_dir, tmp_path, capsys):
    assert _train(synth_dir, tmp_path / "x", "--task-order", "1,2,3") == 2
    assert "permutation" in capsys.readouterr().err


def test_split_command(synth_dir, tmp_path):
    data = ["--data", str(synth_dir / "features.csv"), "--manifest", str(synth_dir / "manifest.csv")]
    assert main(["split", *data, "--out", str(tmp_path)]) == 0
    train = (tmp_path / "train_manifest.csv").read_text().splitlines()[1:]
    test = (tmp_path / "test_manifest.csv").read_text().splitlines()[1:]
    assert {r.split(",")[-1] for r in train}.isdisjoint({r.split(",")[-1] for r in test})
    assert len(train) + len(test) == 22 * 30


def test_param_report_at_ten_components(synth_dir, tmp_path, capsys):
    assert _train(synth_dir, tmp_path / "m", "--max-components", "10") == 0
    data = ["--data", str(synth_dir / "features.csv"), "--manifest", str(synth_dir / "manifest.csv")]
    assert main(["eval", "--model", str(tmp_path / "m" / "model.json"), *data, "--out", str(tmp_path / "e")]) == 0
    out = capsys.readouterr().out
    assert "paper_formula_count: 33,660" in out and "exact_count: 37,598" in out
