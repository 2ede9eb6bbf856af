import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from pathdev import io as fio
from pathdev.cli import loglog_fit, main, run_bench
from pathdev.config import materialize
from pathdev.errors import InvalidArgument
from pathdev.liealg import AlgebraSpec, random_init
from pathdev.sigpath import TimeSeries, sig_dim

DATA = Path(__file__).parent / "data"


@pytest.fixture
def runner():
    return CliRunner()


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(finite, min_size=2, max_size=2), min_size=1, max_size=6))
def test_series_csv_roundtrip_exact(rows):
    ts = TimeSeries(np.array(rows), np.arange(len(rows)) * 0.1)
    (sid, back), = fio.read_series_csv(fio.write_series_csv([("a", ts)]))
    assert sid == "a"
    np.testing.assert_array_equal(back.values, ts.values)
    np.testing.assert_array_equal(back.times, ts.times)


def test_series_csv_errors():
    with pytest.raises(InvalidArgument, match="line 1"):
        fio.read_series_csv("id,t,x1\n")
    with pytest.raises(InvalidArgument, match="line 3: non-numeric"):
        fio.read_series_csv("series_id,t,x1\na,0,1\na,1,oops\n")
    with pytest.raises(InvalidArgument, match="line 3: t must increase"):
        fio.read_series_csv("series_id,t,x1\na,1,1\na,1,2\n")
    with pytest.raises(InvalidArgument, match="line 4: rows of series 'a'"):
        fio.read_series_csv("series_id,t,x1\na,0,1\nb,0,2\na,1,3\n")
    with pytest.raises(InvalidArgument, match="line 2: expected 3 fields"):
        fio.read_series_csv("series_id,t,x1\na,0\n")


def test_labels_roundtrip():
    text = fio.write_labels_csv(["a", "b"], [1, 0], "classification")
    targets, task = fio.read_labels_csv(text, ["b", "a"])
    assert task == "classification" and targets.tolist() == [0, 1]
    text = fio.write_labels_csv(["a"], [[0.1, -2.5]], "regression")
    targets, task = fio.read_labels_csv(text)
    assert task == "regression" and targets.tolist() == [[0.1, -2.5]]
    with pytest.raises(InvalidArgument, match="no label"):
        fio.read_labels_csv(text, ["zzz"])


def test_develop_malformed_csv_exit_2(runner, tmp_path):
    src = write(tmp_path, "bad.csv", "series_id,t,x1\na,0,1\na,1,\n")
    res = runner.invoke(main, ["develop", "--input", src, "--algebra", "SO", "--order", "2"])
    assert res.exit_code == 2
    assert "line 3" in res.output


def test_develop_bad_weights_exit_3(runner, tmp_path):
    w = random_init(AlgebraSpec("SO", 2), 3, seed=0).to_dict()
    w["theta"][0][0][0] = 0.5
    wpath = write(tmp_path, "w.json", json.dumps(w))
    res = runner.invoke(main, ["develop", "--input", str(DATA / "golden_series.csv"), "--weights", wpath])
    assert res.exit_code == 3


def test_signature_resource_limit_exit_4(runner, tmp_path):
    header = "series_id,t," + ",".join(f"x{j}" for j in range(1, 21))
    src = write(tmp_path, "wide.csv", header + "\na,0," + ",".join(["0"] * 20) + "\n")
    res = runner.invoke(main, ["signature", "--input", src, "--depth", "6"])
    assert res.exit_code == 4


def test_develop_constant_series_identity(runner, tmp_path):
    src = write(tmp_path, "c.csv", "series_id,t,x1,x2\na,0,1,2\na,1,1,2\na,2,1,2\n")
    res = runner.invoke(main, ["develop", "--input", src, "--algebra", "LORENTZ", "--order", "3", "--mode", "seq"])
    assert res.exit_code == 0
    records, m = fio.read_matrices_csv(res.output)
    assert m == 3 and len(records) == 3
    for _, _, Z in records:
        np.testing.assert_array_equal(Z, np.eye(3))


@pytest.mark.parametrize("family, order", [("SO", 4), ("SP", 4), ("SE2", 3), ("LORENTZ", 3), ("GL", 2)])
def test_develop_piped_into_check_group(runner, tmp_path, family, order):
    out = tmp_path / "z.csv"
    res = runner.invoke(
        main,
        ["develop", "--input", str(DATA / "golden_series.csv"), "--algebra", family,
         "--order", str(order), "--mode", "seq", "--scale", "0.5", "--output", str(out)],
    )
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["check-group", "--input", str(out), "--algebra", family, "--json"])
    assert res.exit_code == 0
    assert json.loads(res.output) == {"checked": 16, "failed": []}


def test_check_group_flags_outsiders(runner, tmp_path):
    bad = fio.write_matrices_csv([("a", 0, np.eye(2)), ("a", 1, np.diag([2.0, 1.0]))], 2)
    res = runner.invoke(main, ["check-group", "--input", write(tmp_path, "m.csv", bad), "--algebra", "SO"])
    assert res.exit_code == 3
    assert "a step 1" in res.output


def test_develop_matches_golden(runner):
    res = runner.invoke(
        main,
        ["develop", "--input", str(DATA / "golden_series.csv"),
         "--weights", str(DATA / "golden_weights.json"), "--mode", "seq"],
    )
    assert res.exit_code == 0
    assert res.output == (DATA / "golden_develop_seq.csv").read_text()


def test_develop_json_output(runner):
    res = runner.invoke(
        main,
        ["develop", "--input", str(DATA / "golden_series.csv"),
         "--weights", str(DATA / "golden_weights.json"), "--json"],
    )
    doc = json.loads(res.output)
    assert doc["family"] == "SO" and len(doc["matrices"]) == 3
    golden, _ = fio.read_matrices_csv((DATA / "golden_develop_seq.csv").read_text())
    last = [Z for sid, n, Z in golden if n == {"s0": 4, "s1": 7, "s2": 2}[sid]]
    for rec, Z in zip(doc["matrices"], last):
        np.testing.assert_array_equal(np.array(rec["z"]), Z)


def test_develop_needs_weights_or_algebra(runner):
    res = runner.invoke(main, ["develop", "--input", str(DATA / "golden_series.csv"), "--algebra", "SO"])
    assert res.exit_code == 2


def test_signature_matches_golden(runner):
    res = runner.invoke(main, ["signature", "--input", str(DATA / "golden_series.csv"), "--depth", "3"])
    assert res.exit_code == 0
    assert res.output == (DATA / "golden_signature_k3.csv").read_text()


def test_signature_width_d20_k3(runner, tmp_path):
    rng = np.random.default_rng(0)
    items = [("a", TimeSeries(rng.normal(size=(4, 20))))]
    src = write(tmp_path, "d20.csv", fio.write_series_csv(items))
    res = runner.invoke(main, ["signature", "--input", src, "--depth", "3", "--exclude-constant"])
    header, row = res.output.splitlines()
    assert len(header.split(",")) - 1 == 8420 == sig_dim(20, 3, include_constant=False)
    assert len(row.split(",")) - 1 == 8420


def test_signature_depth_one_is_total_increment(runner):
    res = runner.invoke(
        main, ["signature", "--input", str(DATA / "golden_series.csv"), "--depth", "1", "--exclude-constant"]
    )
    items = fio.read_series_csv((DATA / "golden_series.csv").read_text())
    for line, (sid, ts) in zip(res.output.splitlines()[1:], items):
        fields = line.split(",")
        assert fields[0] == sid
        np.testing.assert_allclose([float(v) for v in fields[1:]], ts.values[-1] - ts.values[0], rtol=1e-14)


def test_gradcheck_default_passes(runner):
    res = runner.invoke(main, ["gradcheck", "--json"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["pass"] and sorted(doc["families"]) == ["GL", "LORENTZ", "SE2", "SO", "SP"]


def test_gradcheck_zero_trials(runner):
    res = runner.invoke(main, ["gradcheck", "--trials", "0", "--json"])
    assert res.exit_code == 0
    assert json.loads(res.output)["families"] == {}


def test_gradcheck_scalar_gl(runner):
    res = runner.invoke(main, ["gradcheck", "--algebra", "GL", "--order", "1", "--dim", "1", "--trials", "5"])
    assert res.exit_code == 0
    assert "PASS" in res.output


def test_gradcheck_scalar_gl_hand_calculus():
    from pathdev.devlayer import develop_backward, develop_forward, LossPartials
    from pathdev.liealg import DevWeights

    # z_N = exp(a * (x_N - x_0)), loss = z_N, d loss / d a = (x_N - x_0) z_N
    w = DevWeights(AlgebraSpec("GL", 1), np.array([[[0.3]]]))
    x = TimeSeries([0.0, 0.4, -0.2, 1.0])
    z = develop_forward(w, x)
    g = develop_backward(w, x, z, LossPartials.at_last(np.ones((1, 1)), 4))
    assert g.dtheta.item() == pytest.approx(1.0 * np.exp(0.3), rel=1e-14)


def _train_config(tmp_path, **train):
    cfg = {
        "algebra": {"family": "SO", "order": 3},
        "data": {"generator": {"name": "rotation", "n": 60, "splits": {"train": 30, "val": 20, "test": 10}}},
        "train": {"epochs": 3, "batch_size": 8, **train},
    }
    return write(tmp_path, "cfg.json", json.dumps(cfg))


def test_train_deterministic_and_eval_checkpoint(runner, tmp_path):
    cfg = _train_config(tmp_path)
    for name in ("a", "b"):
        res = runner.invoke(main, ["train", "--config", cfg, "--output-dir", str(tmp_path / name)])
        assert res.exit_code == 0, res.output
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
    effective = json.loads((a / "effective_config.json").read_text())
    assert effective["train"]["lr_decay"] == 0.997 and effective["model"]["seed"] == 0
    summary = json.loads((a / "summary.json").read_text())
    res = runner.invoke(
        main,
        ["eval", "--model", str(a / "model.json"), "--input", str(a / "val.csv"),
         "--labels", str(a / "val_labels.csv"), "--json"],
    )
    assert json.loads(res.output)["accuracy"] == summary["best_val_metric"]
    records = [json.loads(line) for line in (a / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert set(records[0]) == {"epoch", "train_loss", "val_loss", "val_metric", "lr"}
    timing = [json.loads(line) for line in (a / "timing.jsonl").read_text().splitlines()]
    assert all(t["wall_ms"] > 0 for t in timing)


def test_train_from_csv_files(runner, tmp_path):
    rng = np.random.default_rng(0)
    items = [(f"q{i}", TimeSeries(np.cumsum(rng.normal(size=(6, 2)), axis=0))) for i in range(12)]
    labels = [i % 2 for i in range(12)]
    data = {
        "train_csv": write(tmp_path, "tr.csv", fio.write_series_csv(items[:8])),
        "train_labels": write(tmp_path, "trl.csv", fio.write_labels_csv([s for s, _ in items[:8]], labels[:8], "classification")),
        "val_csv": write(tmp_path, "va.csv", fio.write_series_csv(items[8:])),
        "val_labels": write(tmp_path, "val.csv", fio.write_labels_csv([s for s, _ in items[8:]], labels[8:], "classification")),
    }
    cfg = {"algebra": {"family": "SP", "order": 2}, "data": data, "train": {"epochs": 2}}
    res = runner.invoke(
        main,
        ["train", "--config", write(tmp_path, "c.json", json.dumps(cfg)), "--output-dir", str(tmp_path / "o")],
    )
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["epochs_run"] == 2


def test_train_regression_reports_baseline(runner, tmp_path):
    cfg = {
        "algebra": {"family": "SE2", "order": 3},
        "data": {"generator": {"name": "rigid_motion", "n": 40, "splits": {"train": 20, "val": 10, "test": 10}}},
        "model": {"head": "se2", "init_scale": 0.1},
        "train": {"epochs": 2},
    }
    res = runner.invoke(
        main,
        ["train", "--config", write(tmp_path, "c.json", json.dumps(cfg)), "--output-dir", str(tmp_path / "o")],
    )
    assert res.exit_code == 0, res.output
    summary = json.loads(res.output)
    assert summary["test_static_baseline_mse"] > 0
    res = runner.invoke(
        main,
        ["eval", "--model", str(tmp_path / "o" / "model.json"), "--input", str(tmp_path / "o" / "test.csv"),
         "--labels", str(tmp_path / "o" / "test_labels.csv")],
    )
    assert res.output.startswith("mse ")
    assert float(res.output.split()[1]) == summary["test_metric"]


def test_config_rejects_unknown_keys(runner, tmp_path):
    with pytest.raises(InvalidArgument, match="unknown key"):
        materialize({"train": {"learning_rat": 0.1}, "data": {"generator": {"name": "rotation"}}})
    with pytest.raises(InvalidArgument, match="unknown key"):
        materialize({"extra": 1})
    with pytest.raises(InvalidArgument, match="generator"):
        materialize({"data": {"generator": {"name": "spiral"}}})
    cfg = write(tmp_path, "c.json", json.dumps({"algebra": {"family": "SO", "size": 3}}))
    res = runner.invoke(main, ["train", "--config", cfg])
    assert res.exit_code == 2 and "unknown key" in res.output


def test_bench_forward_linear_in_length():
    rows = run_bench("SO", 6, 3, 1024, 16, repeats=3)
    assert [r["len"] for r in rows] == [128, 256, 512, 1024]
    slope, r2 = loglog_fit([r["len"] for r in rows], [r["forward_ms"] for r in rows])
    assert 0.8 < slope < 1.2 and r2 > 0.99
    assert all(r["ratio"] > 0 for r in rows)


def test_bench_cli(runner):
    res = runner.invoke(main, ["bench", "--len", "16", "--batch", "2", "--repeats", "1", "--json"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert [r["len"] for r in doc["rows"]] == [2, 4, 8, 16]
    assert {"forward_ms", "backward_ms", "ratio"} <= set(doc["rows"][0])
    res = runner.invoke(main, ["bench", "--len", "0"])
    assert res.exit_code == 2
