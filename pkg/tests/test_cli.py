import json
import subprocess
import sys

import numpy as np
import pytest

from egd.cli import main
from egd.gede import compressed_size
from egd.imgpipe import write_idx


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _kv(line):
    return dict(tok.split("=", 1) for tok in line.split())


@pytest.fixture
def housing(tmp_path):
    rng = np.random.default_rng(0)
    n = 1500
    x1, x2 = np.round(rng.uniform(0, 10, n), 2), np.round(rng.normal(30, 5, n), 1)
    y = np.round(0.5 * x1 - 0.1 * x2 + rng.normal(0, 0.3, n), 3)
    lines = ["income:float64,age:float64,median_value:float64"]
    lines += [f"{float(a)!r},{float(b)!r},{float(c)!r}" for a, b, c in zip(x1, x2, y)]
    path = tmp_path / "housing.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_compress_stats_decompress(capsys, housing, tmp_path):
    out = tmp_path / "h.egd"
    code, stdout, _ = _run(capsys, "compress", housing, "--beta", 12, "--tau", 32, "--target", "median_value",
                           "--decimals", "--out", out)
    assert code == 0
    kv = _kv(stdout)
    assert {"n", "m", "n_b", "l_b", "l_d", "S", "ratio"} <= set(kv)
    assert int(kv["n"]) == 1500 and float(kv["ratio"]) < 1

    code, stdout, _ = _run(capsys, "stats", out, "--json")
    st = json.loads(stdout)
    assert st["consistent"] is True
    assert st["S"] == compressed_size(st["n_b"], st["l_b"], st["l_d"], st["n"], st["m"])

    csv_out = tmp_path / "back.csv"
    code, _, _ = _run(capsys, "decompress", out, "--out", csv_out)
    assert code == 0
    assert csv_out.read_text().splitlines()[1:] == housing.read_text().splitlines()[1:]

    code, stdout, err = _run(capsys, "decompress", out, "--index", 7)
    assert stdout.splitlines()[1] == housing.read_text().splitlines()[8]
    assert "rows=1" in err


def test_beta_zero_and_no_condensed(capsys, housing, tmp_path):
    _, stdout, _ = _run(capsys, "compress", housing, "--beta", 0, "--out", tmp_path / "a.egd")
    assert _kv(stdout)["m"] == "1"
    _, stdout, _ = _run(capsys, "compress", housing, "--condensed", "none", "--out", tmp_path / "b.egd")
    assert _kv(stdout)["m"] == "0"


def test_train_modes_and_exit_codes(capsys, housing, tmp_path):
    full_c = tmp_path / "full.egd"
    _run(capsys, "compress", housing, "--beta", 99, "--target", "median_value", "--decimals", "--out", full_c)
    code, stdout, _ = _run(capsys, "train", full_c, "--mode", "both", "--lr", 0.1, "--standardize",
                           "--test", housing, "--json", "--report", tmp_path / "r.json")
    assert code == 0
    rec = json.loads(stdout)
    # every distinct feature row is its own cluster; rows with equal features
    # merge, which leaves the gradient (and so theta) unchanged
    rows = {tuple(r.split(",")[:2]) for r in housing.read_text().splitlines()[1:]}
    assert rec["m"] == len(rows)
    assert rec["condensed_test_mse"] == pytest.approx(rec["full_test_mse"], rel=1e-9)
    assert rec["mse_ratio"] == pytest.approx(1.0, rel=1e-9)
    assert set(json.loads((tmp_path / "r.json").read_text())) == {"full", "condensed"}

    none_c = tmp_path / "none.egd"
    _run(capsys, "compress", housing, "--condensed", "none", "--target", "median_value", "--out", none_c)
    assert _run(capsys, "train", none_c, "--mode", "condensed")[0] == 4
    assert _run(capsys, "train", housing, "--mode", "condensed", "--target", "median_value")[0] == 4
    lazy = tmp_path / "lazy.egd"
    _run(capsys, "compress", housing, "--condensed", "on-demand", "--target", "median_value", "--out", lazy)
    code, stdout, _ = _run(capsys, "train", lazy, "--mode", "condensed", "--lr", 0.1, "--standardize",
                           "--max-iter", 50)
    assert code == 0 and "m=" in stdout

    code, stdout, _ = _run(capsys, "train", housing, "--target", "median_value", "--test", "split:0.2",
                           "--lr", 0.1, "--standardize")
    assert code == 0 and "test_mse=" in stdout


def test_error_exit_codes(capsys, tmp_path, housing):
    assert _run(capsys, "stats", tmp_path / "missing.egd")[0] == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("x:float64\nnot-a-number\n")
    assert _run(capsys, "compress", bad)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["compress", str(housing), "--no-such-flag"])
    assert exc.value.code == 2
    corrupt = tmp_path / "c.egd"
    corrupt.write_bytes(b"EGD1" + b"\x00" * 40)
    assert _run(capsys, "stats", corrupt)[0] == 3
    div = tmp_path / "div.csv"
    div.write_text("x:float64,y:float64\n" + "".join(f"{1000 * i},{i}\n" for i in range(50)))
    assert _run(capsys, "train", div, "--target", "y", "--lr", 10, "--max-iter", 1000)[0] == 5


def test_entropy_verb(capsys, housing):
    code, stdout, err = _run(capsys, "entropy", housing)
    assert code == 0 and "column=income" in err and "l_t=192" in stdout
    code, stdout, _ = _run(capsys, "entropy", housing, "--json", "--bits")
    rec = json.loads(stdout)
    assert len(rec["h"]) == 192 and rec["columns"][0]["column"] == "income"


def _digits(tmp_path, n=600):
    rng = np.random.default_rng(1)
    imgs = np.zeros((n, 8, 8), np.uint8)
    labels = np.arange(n) % 3
    for i, c in enumerate(labels):
        imgs[i, 2:6, 1 + c:3 + c] = 200 + rng.integers(0, 2)
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labels.astype(np.uint8))
    return imgs, labels


def test_images_and_sample(capsys, tmp_path, monkeypatch):
    imgs, labels = _digits(tmp_path)
    arch = tmp_path / "arch"
    code, stdout, _ = _run(capsys, "images", "compress", tmp_path / "img.idx", "--labels", tmp_path / "lab.idx",
                           "--out", arch, "--jobs", 2)
    assert code == 0 and float(_kv(stdout)["ratio"]) < 0.9
    assert (arch / "manifest").exists() and (arch / "class_2.egd").exists()
    code, stdout, _ = _run(capsys, "images", "info", arch, "--json")
    assert json.loads(stdout)["classes"] == [0, 1, 2]

    code, _, _ = _run(capsys, "images", "decode", arch, "--out", tmp_path / "dec")
    from egd.imgpipe import load_image_dir

    x, y = load_image_dir(tmp_path / "dec")
    order = np.argsort(labels, kind="stable")
    assert np.array_equal(x[..., 0], imgs[order]) and np.array_equal(y, labels[order])

    monkeypatch.setenv("EGD_SEED", "11")
    _run(capsys, "sample", arch, "--fraction", 0.5, "--out", tmp_path / "s1")
    _run(capsys, "sample", arch, "--fraction", 0.5, "--seed", 11, "--out", tmp_path / "s2")
    a = sorted(p.read_bytes() for p in (tmp_path / "s1").rglob("*.pgm"))
    b = sorted(p.read_bytes() for p in (tmp_path / "s2").rglob("*.pgm"))
    assert a == b and len(a) == 300
    assert (tmp_path / "s1" / "labels.txt").read_text() == (tmp_path / "s2" / "labels.txt").read_text()
    code, stdout, _ = _run(capsys, "sample", arch, "--fraction", 1.0)
    assert _kv(stdout)["images"] == "600"
    monkeypatch.setenv("EGD_SEED", "nope")
    assert _run(capsys, "sample", arch)[0] == 2


def test_images_need_out(capsys, tmp_path):
    _digits(tmp_path)
    assert _run(capsys, "images", "compress", tmp_path / "img.idx", "--labels", tmp_path / "lab.idx")[0] == 2


def test_bench_small(capsys):
    code, stdout, _ = _run(capsys, "bench", "--task", "gd-iter", "--n", 2000, "--d", 3, "--json")
    rec = json.loads(stdout)
    assert code == 0 and rec["m"] == 100 and rec["ratio"] > 0
    code, stdout, _ = _run(capsys, "bench", "--task", "closed-form", "--n", 2000, "--d", 3)
    assert "predicted_speedup=" in stdout
    code, stdout, _ = _run(capsys, "bench", "--task", "compress", "--n", 500, "--d", 2)
    assert "size_bits=" in stdout


def test_console_script_entry_point(housing):
    res = subprocess.run([sys.executable, "-m", "egd.cli", "stats", str(housing) + ".missing"],
                         capture_output=True, text=True)
    assert res.returncode == 3 and "I/O error" in res.stderr
