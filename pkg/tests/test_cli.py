import json
from pathlib import Path

import pytest

from tde.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err.strip()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    assert main(["synth", "--n", "120", "--dims", "5", "--seed", "7", "--out", str(base)]) == 0
    return next(base.iterdir())


def data_args(d):
    return ["--events", d / "events.csv", "--labels", d / "labels.csv", "--schema", d / "schema.json"]


def test_synth_is_reproducible(tmp_path, capsys, synth_dir):
    code, out, _ = run(capsys, "synth", "--n", 120, "--dims", 5, "--seed", 7, "--out", tmp_path)
    assert code == 0
    again = Path(out)
    for name in ("events.csv", "labels.csv", "schema.json"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()
    manifest = json.loads((again / "manifest.json").read_text())
    assert manifest["datasets"]["synthetic"]["instances"] == 120
    assert manifest["seed"] == 7


def train_once(capsys, tmp_path, synth_dir, *extra):
    code, out, err = run(capsys, "train", *data_args(synth_dir), "--epochs", 2, "--batch", 32,
                         "--bootstrap", 100, "--hidden", 8, "--var-dim", 8, "--time-dim", 8,
                         "--out", tmp_path, *extra)
    assert code == 0, err
    return Path(out)


def test_train_eval_report_and_determinism(tmp_path, capsys, synth_dir):
    a = train_once(capsys, tmp_path, synth_dir, "--mode", "attention", "--no-softmax")
    b = train_once(capsys, tmp_path, synth_dir, "--mode", "attention", "--no-softmax")
    assert a != b
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    report = json.loads((a / "metrics.json").read_text())
    assert len(report["auroc_ci"]) == 2 and len(report["auprc_ci"]) == 2
    assert sorted(p.name for p in a.iterdir()) == ["history.csv", "manifest.json", "metrics.json", "model.json"]

    code, out, _ = run(capsys, "eval", "--checkpoint", a / "model.json", *data_args(synth_dir),
                       "--subset", "test", "--bootstrap", 100, "--out", tmp_path)
    assert code == 0
    assert (Path(out) / "metrics.json").read_bytes() == (a / "metrics.json").read_bytes()

    code, out, _ = run(capsys, "predict-online", "--checkpoint", a / "model.json", *data_args(synth_dir),
                       "--subset", "val", "--out", tmp_path)
    assert code == 0
    lines = (Path(out) / "online.csv").read_text().splitlines()
    assert lines[0] == "instance_id,time,probability" and len(lines) > 24

    code, out, _ = run(capsys, "export-emb", "--checkpoint", a / "model.json", *data_args(synth_dir),
                       "--which", "global", "--out", tmp_path)
    assert code == 0
    assert len((Path(out) / "embeddings_global.csv").read_text().splitlines()) == 121


def test_gru_checkpoint(tmp_path, capsys, synth_dir):
    a = train_once(capsys, tmp_path, synth_dir, "--model", "gru")
    code, out, err = run(capsys, "predict-online", "--checkpoint", a / "model.json", *data_args(synth_dir),
                         "--out", tmp_path)
    assert code == 2 and err.startswith("error:") and "\n" not in err


def test_ablate(tmp_path, capsys, synth_dir):
    code, out, _ = run(capsys, "ablate", *data_args(synth_dir), "--epochs", 1, "--batch", 64,
                       "--bootstrap", 100, "--hidden", 8, "--var-dim", 8, "--time-dim", 8, "--out", tmp_path)
    assert code == 0
    rep = json.loads((Path(out) / "ablation.json").read_text())
    assert [a["attention"] for a in rep["arms"]] == ["softmax", "non-softmax"]


def test_bench_epoch(tmp_path, capsys):
    code, out, _ = run(capsys, "bench-epoch", "--synth-n", 60, "--k", 2, "--hidden", 8, "--out", tmp_path)
    assert code == 0
    bench = json.loads((Path(out.splitlines()[-1]) / "bench.json").read_text())
    assert set(bench) >= {"tde-mean", "tde-attn", "gru-baseline", "ratio_tde_mean_to_gru"}
    assert bench["tde-mean"]["epochs"] == 2


def test_errors_are_one_line(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--events", tmp_path / "missing.csv", "--labels", tmp_path / "x.csv",
                       "--out", tmp_path)
    assert code == 2
    assert err.startswith("error:") and len(err.splitlines()) == 1


def test_bad_thread_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TDE_THREADS", "many")
    code, _, err = run(capsys, "synth", "--n", 10, "--out", tmp_path)
    assert code == 2 and "TDE_THREADS" in err


def test_thread_cap(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TDE_THREADS", "1")
    code, out, _ = run(capsys, "synth", "--n", 10, "--out", tmp_path)
    assert code == 0
    assert [p.name for p in Path(out).iterdir() if p.name == "manifest.json"] == ["manifest.json"]
