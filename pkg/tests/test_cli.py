import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import SMALL_RUN_CONFIG
from skytrace.adsb import CSV_COLUMNS, AdsbRecord, Trajectory, write_store
from skytrace.cli import main
from skytrace.config import load_config
from skytrace.preprocess import load_dataset

TABLE1_ROW = "1478874138,aaa83f,33.79832,-84.40912,3275.0,221.5576,348.4813,-0.32512,EJA786,1478872800"


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_RUN_CONFIG)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def pipeline(tmp_path, cfg_path, capsys):
    """synth -> ingest -> preprocess with the small config."""
    raw, store, ds = tmp_path / "raw.csv", tmp_path / "store.csv", tmp_path / "ds.bin"
    assert run(capsys, "synth", "--config", cfg_path, "--seed", 7, "--out", raw)[0] == 0
    assert run(capsys, "ingest", "--config", cfg_path, raw, "--out", store)[0] == 0
    assert run(capsys, "preprocess", "--config", cfg_path, store, "--out", ds)[0] == 0
    return raw, store, ds


def test_synth_is_reproducible(tmp_path, cfg_path, capsys):
    for name, seed in (("a", 7), ("b", 7), ("c", 8)):
        assert run(capsys, "synth", "--config", cfg_path, "--seed", seed, "--out", tmp_path / f"{name}.csv")[0] == 0
    a, b, c = ((tmp_path / f"{n}.csv").read_bytes() for n in "abc")
    assert a == b and a != c


def test_ingest_table1_row(tmp_path, capsys):
    src = tmp_path / "t1.csv"
    src.write_text(",".join(CSV_COLUMNS) + "\n" + TABLE1_ROW + "\n")
    code, out, err = run(capsys, "ingest", src, "--out", tmp_path / "store.csv")
    assert "1 record ingested" in out
    # a lone record cannot form a trajectory
    assert code == 3 and err.strip() == "error: data: no trajectories"


def test_ingest_empty_file(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("")
    code, _, err = run(capsys, "ingest", src, "--out", tmp_path / "store.csv")
    assert code != 0 and "no trajectories" in err and len(err.strip().splitlines()) == 1


def test_ingest_mixed_rows_reports_rejects(tmp_path, capsys):
    good = [TABLE1_ROW.replace("1478874138", str(1478874138 + 10 * i)) for i in range(4)]
    bad = [
        TABLE1_ROW.replace("33.79832", "95.0"),
        TABLE1_ROW.replace("aaa83f", "nothex"),
        "1478874138,aaa83f",
    ]
    src = tmp_path / "mixed.csv"
    src.write_text("\n".join([",".join(CSV_COLUMNS), *good[:2], *bad, *good[2:]]) + "\n")
    store = tmp_path / "store.csv"
    code, out, _ = run(capsys, "ingest", src, "--out", store)
    assert code == 0 and "4 records ingested, 3 rejected" in out
    rejects = (tmp_path / "store.csv.rejects.txt").read_text().splitlines()
    assert [r.split("\t")[0] for r in rejects] == ["4", "5", "6"]
    assert store.read_text().splitlines()[0].startswith("traj_id,time,icao24")


def _straight_store(path, steps):
    t0 = 1478872800
    recs = [
        AdsbRecord(t0 + 10 * i, "abcdef", 33.0 + 1e-3 * i, -84.0 + 5e-4 * i, 10000.0 + 5.0 * i, 250.0,
                   90.0, 30.0, "TST1", t0 + 10 * i - (t0 + 10 * i) % 3600)
        for i in range(steps)
    ]
    write_store([Trajectory("abcdef", "TST1", recs)], path)


def test_preprocess_110_steps_gives_two_samples(tmp_path, capsys):
    store = tmp_path / "store.csv"
    _straight_store(store, 110)
    code, out, _ = run(capsys, "preprocess", store, "--out", tmp_path / "ds.bin")
    assert code == 0 and out.splitlines()[0] == "2 samples"


def test_preprocess_rerun_identical_and_echoes_config(pipeline, tmp_path, cfg_path, capsys):
    _, store, ds = pipeline
    again = tmp_path / "ds2.bin"
    run(capsys, "preprocess", "--config", cfg_path, store, "--out", again)
    assert ds.read_bytes() == again.read_bytes()
    assert load_dataset(ds).config == load_config(cfg_path).preprocess


def test_preprocess_all_degenerate(tmp_path, capsys):
    store = tmp_path / "store.csv"
    _straight_store(store, 3)
    code, _, err = run(capsys, "preprocess", store, "--out", tmp_path / "ds.bin")
    assert code == 3 and err.startswith("error: ")


def test_train_rejects_zero_epochs(pipeline, tmp_path, cfg_path, capsys):
    _, _, ds = pipeline
    code, _, err = run(capsys, "train", "--config", cfg_path, ds, "--out", tmp_path / "m.ckpt", "--epochs", 0)
    assert code == 2
    assert err == "error: config: train.epochs must be >= 1, got 0\n"
    assert not (tmp_path / "m.ckpt").exists()


def test_train_evaluate_mc_predict(pipeline, tmp_path, cfg_path, capsys):
    _, _, ds = pipeline
    ckpt = tmp_path / "m.ckpt"
    for name in ("h1.csv", "h2.csv"):
        code, _, _ = run(capsys, "train", "--config", cfg_path, ds, "--out", ckpt, "--history", tmp_path / name, "--quiet")
        assert code == 0
    assert (tmp_path / "h1.csv").read_bytes() == (tmp_path / "h2.csv").read_bytes()
    assert len((tmp_path / "h1.csv").read_text().splitlines()) == 3

    code, out, _ = run(capsys, "evaluate", "--config", cfg_path, ckpt, ds, "--mc-samples", 3)
    report = json.loads(out)
    assert code == 0 and report["subset"] == "validation" and report["mc"]["samples"] == 3
    assert report["model"]["rmse"] >= report["model"]["mae"]

    pred = tmp_path / "mc.json"
    code, _, _ = run(capsys, "mc-predict", "--config", cfg_path, ckpt, ds, "--index", 0, "--index", 2, "--out", pred)
    doc = json.loads(pred.read_text())
    assert code == 0 and [p["index"] for p in doc["predictions"]] == [0, 2]
    assert np.array(doc["predictions"][0]["std"]).shape == (5, 4)

    code, _, _ = run(capsys, "mc-predict", "--config", cfg_path, ckpt, ds, "--dropout", 0, "--index", 1, "--out", pred)
    assert not np.any(json.loads(pred.read_text())["predictions"][0]["std"])


def test_compare_report(pipeline, tmp_path, cfg_path, capsys):
    _, _, ds = pipeline
    outs = []
    for name in ("r1.json", "r2.json"):
        code, stdout, _ = run(capsys, "compare", "--config", cfg_path, ds, "--out", tmp_path / name, "--quiet")
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    rows = json.loads(outs[0])["rows"]
    assert [r["model"] for r in rows] == ["CG3D", "3D CNN", "CNN-GRU", "CG3D+MC"]
    assert "MC-dropout relative error change" in stdout


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "ingest", tmp_path / "nope.csv", "--out", tmp_path / "s.csv")
    assert code == 1 and err.startswith("error: io:")


def test_inputs_are_not_mutated(pipeline, tmp_path, cfg_path, capsys):
    raw, store, ds = pipeline
    before = [p.read_bytes() for p in (raw, store, ds, cfg_path)]
    run(capsys, "ingest", "--config", cfg_path, raw, "--out", tmp_path / "s2.csv")
    run(capsys, "train", "--config", cfg_path, ds, "--out", tmp_path / "m.ckpt", "--quiet")
    assert before == [p.read_bytes() for p in (raw, store, ds, cfg_path)]


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "skytrace.cli", "train", str(tmp_path / "missing.bin"), "--out", str(tmp_path / "m")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1 and proc.stderr.startswith("error: io:")
