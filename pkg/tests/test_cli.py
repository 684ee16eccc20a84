import json

import numpy as np
import pytest

from mediasplat import io
from mediasplat.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds, ck = root / "ds", root / "ck.bin"
    assert main(["simulate", "--out", str(ds), "--views", "4", "--resolution", "16", "--seed", "3"]) == 0
    assert main(["train", "--data", str(ds), "--out", str(ck), "--steps", "20", "--quiet",
                 "--log", str(root / "log.jsonl"), "--densify-from", "1000"]) == 0
    return root, ds, ck


def test_round_trip(pipeline, capsys):
    root, ds, ck = pipeline
    assert main(["restore", "--checkpoint", str(ck), "--data", str(ds), "--out", str(root / "rest"),
                 "--align"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(root / "rest"), "--data", str(ds),
                 "--json", str(root / "eval.json")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["view", "psnr", "ssim"]
    assert lines[-1].split()[0] == "mean"
    rep = json.loads((root / "eval.json").read_text())
    assert np.isfinite(rep["mean"]["psnr"]) and 0 < rep["mean"]["ssim"] <= 1


def test_log_lines_are_json(pipeline):
    root, _, _ = pipeline
    recs = [json.loads(l) for l in (root / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == list(range(1, 21))


def test_evaluate_identical_is_inf(pipeline, capsys):
    root, ds, _ = pipeline
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(ds / "views"), "--ref", str(ds / "views"),
                 "--suffix", "_clean"]) == 0
    mean = capsys.readouterr().out.strip().splitlines()[-1].split()
    assert mean[1] == "inf" and float(mean[2]) == 1.0


def test_render_twice_byte_identical(pipeline):
    root, ds, ck = pipeline
    for name in ("r1", "r2"):
        assert main(["render", "--checkpoint", str(ck), "--data", str(ds), "--out", str(root / name),
                     "--maps", "--split", "all"]) == 0
    files = sorted(p.name for p in (root / "r1").iterdir())
    assert len(files) == 4 * 4
    for f in files:
        assert (root / "r1" / f).read_bytes() == (root / "r2" / f).read_bytes()


def test_render_matches_worker_count(pipeline):
    root, ds, ck = pipeline
    for name, w in (("w1", "1"), ("w3", "3")):
        assert main(["render", "--checkpoint", str(ck), "--data", str(ds), "--out", str(root / name),
                     "--workers", w]) == 0
    for p in (root / "w1").glob("*.pfm"):
        assert p.read_bytes() == (root / "w3" / p.name).read_bytes()


def test_complement_report(pipeline, capsys):
    root, ds, ck = pipeline
    capsys.readouterr()
    assert main(["complement", "--checkpoint", str(ck), "--data", str(ds),
                 "--save", str(root / "ck2.bin")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["after"] == rep["before"] + rep["inserted"]
    assert {"k", "b", "inserted"} <= set(rep["views"][0])
    assert len(io.load_checkpoint(root / "ck2.bin").scene) == rep["after"]


def test_error_is_single_line(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert err.startswith("error: IoFailure: ")


def test_restore_align_needs_clean(pipeline, tmp_path, capsys):
    root, ds, ck = pipeline
    man = json.loads((ds / "manifest.json").read_text())
    for v in man["views"]:
        v.pop("clean_path", None)
    import shutil
    shutil.copytree(ds, tmp_path / "ds")
    (tmp_path / "ds" / "manifest.json").write_text(json.dumps(man))
    assert main(["restore", "--checkpoint", str(ck), "--data", str(tmp_path / "ds"),
                 "--out", str(tmp_path / "o"), "--align"]) == 1
    assert "MissingReference" in capsys.readouterr().err


def test_unknown_mode_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["train", "--data", str(tmp_path), "--out", "x", "--medium-mode", "bogus"])
