import json
import subprocess
import sys

import numpy as np
import pytest

from scanadapt.cli import main
from scanadapt.container import read_container


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps({"height": 16, "width": 16, "ncoils": 2, "n_train": 5, "n_val": 0, "n_test": 2}))
    (d / "run.json").write_text(json.dumps({"schema": "suno-manifest/1", "rounds": 1, "lambda_grid": [1e-3, 1e-1]}))
    assert main(["phantom", "gen", "--spec", str(d / "spec.json"), "--out", str(d / "data.suno")]) == 0
    assert main(["train", "--data", str(d / "data.suno"), "--manifest", str(d / "run.json"), "--out", str(d / "dict")]) == 0
    return d


def test_phantom_gen_honors_spec_and_seed(workdir, tmp_path):
    ds = read_container(workdir / "data.suno")
    assert len(ds.split("train")) == 5 and len(ds.split("test")) == 2 and ds.shape == (16, 16)
    assert main(["--seed", "3", "phantom", "gen", "--spec", str(workdir / "spec.json"), "--out", str(tmp_path / "s.suno")]) == 0
    assert read_container(tmp_path / "s.suno").meta["phantom_spec"]["seed"] == 3


def test_train_select_recon_eval(workdir, tmp_path, capsys):
    assert (workdir / "dict" / "manifest.json").exists() and (workdir / "dict" / "training.json").exists()
    capsys.readouterr()
    assert main(["select", "--dict", str(workdir / "dict"), "--data", str(workdir / "data.suno"),
                 "--scan", "scan0000", "--out", str(tmp_path / "m.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["neighbor"] == "scan0000" and out["distance"] <= 1e-9
    assert main(["recon", "--data", str(workdir / "data.suno"), "--scan", "scan0005", "--mask", str(tmp_path / "m.json"),
                 "--lambda", "0.001", "--out", str(tmp_path / "p.npy")]) == 0
    rec = json.loads(capsys.readouterr().out)
    gt = read_container(workdir / "data.suno").get("scan0005").ground_truth
    np.save(tmp_path / "ref.npy", gt)
    assert main(["eval", "--pred", str(tmp_path / "p.npy"), "--ref", str(tmp_path / "ref.npy")]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["nrmse"] == rec["nrmse"]
    assert main(["eval", "--pred", str(tmp_path / "p.npy"), "--data", str(workdir / "data.suno"), "--scan", "scan0005"]) == 0
    assert json.loads(capsys.readouterr().out)["ssim"] == ev["ssim"]


def test_bench_threads_bit_identical(workdir, tmp_path):
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"b{threads}"
        assert main(["--threads", threads, "bench", "--data", str(workdir / "data.suno"),
                     "--manifest", str(workdir / "run.json"), "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    names = sorted(p.name for p in (a / "masks").iterdir())
    assert names == sorted(p.name for p in (b / "masks").iterdir()) and names
    for n in names:
        assert (a / "masks" / n).read_bytes() == (b / "masks" / n).read_bytes()


def test_bench_with_prebuilt_dictionary(workdir, tmp_path):
    assert main(["bench", "--data", str(workdir / "data.suno"), "--manifest", str(workdir / "run.json"),
                 "--dict", str(workdir / "dict"), "--kinds", "suno,lf", "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2


def test_exit_codes(workdir, tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert "usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", "x"])
    assert info.value.code == 1
    # data errors
    (tmp_path / "junk.suno").write_bytes(b"JUNKJUNKJUNKJUNK")
    assert main(["train", "--data", str(tmp_path / "junk.suno"), "--out", str(tmp_path / "d")]) == 2
    assert main(["select", "--dict", str(workdir / "dict"), "--data", str(workdir / "data.suno"), "--scan", "nope"]) == 2
    assert main(["train", "--data", str(tmp_path / "missing.suno"), "--out", str(tmp_path / "d")]) == 2
    # usage errors from validation
    (tmp_path / "bad.json").write_text(json.dumps({"accel": 0.1}))
    assert main(["train", "--data", str(workdir / "data.suno"), "--manifest", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "d")]) == 1
    assert main(["bench", "--data", str(workdir / "data.suno"), "--kinds", "loupe", "--out", str(tmp_path / "o")]) == 1


def test_numerical_exit_code(monkeypatch, workdir, tmp_path):
    from scanadapt import cli
    from scanadapt.errors import NumericalError

    def explode(*a, **k):
        raise NumericalError("non-finite residual at iteration 4", iteration=4)

    monkeypatch.setattr(cli, "alternating_train", explode)
    assert main(["train", "--data", str(workdir / "data.suno"), "--out", str(tmp_path / "d")]) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "scanadapt.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "bench" in out.stdout
