import shlex

import numpy as np
import pytest

from seedembed.augment import group_2d, transform_fieldstack
from seedembed.cli import main
from seedembed.dataio import read_labels, read_tensor, write_labels, write_tensor
from seedembed.embedding import ideal_fieldstack
from seedembed.grid import FieldStack


def records(text, kind):
    out = []
    for line in text.splitlines():
        parts = dict(p.split("=", 1) for p in shlex.split(line))
        if parts.get("record") == kind:
            out.append(parts)
    return out


@pytest.fixture
def ideal_file(tmp_path, two_blobs):
    path = tmp_path / "fields.eseg"
    write_tensor(path, ideal_fieldstack(two_blobs, "medoid", 1.0).to_array())
    return path


def test_cluster_ideal(tmp_path, ideal_file, two_blobs, capsys):
    out = tmp_path / "pred.tif"
    assert main(["cluster", "--fields", str(ideal_file), "--out", str(out), "--report", str(tmp_path / "r.txt")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("record=config")
    assert records(text, "summary")[0]["instances"] == "2"
    assert (tmp_path / "r.txt").read_text() == text
    assert main(["eval", "--gt", str(tmp_path / "gt.eseg"), "--pred", str(out)]) == 2  # gt missing
    write_labels(tmp_path / "gt.eseg", two_blobs)
    capsys.readouterr()
    assert main(["eval", "--gt", str(tmp_path / "gt.eseg"), "--pred", str(out)]) == 0
    text = capsys.readouterr().out
    aps = records(text, "ap")
    assert len(aps) == 9 and all(float(r["score"]) == 1.0 for r in aps)


def test_cluster_empty_seeds(tmp_path, capsys):
    path = tmp_path / "zero.eseg"
    write_tensor(path, FieldStack.constant((10, 10), seed=0.0).to_array())
    assert main(["cluster", "--fields", str(path), "--out", str(tmp_path / "o.eseg")]) == 0
    assert records(capsys.readouterr().out, "summary")[0]["instances"] == "0"
    assert not read_labels(tmp_path / "o.eseg").any()


def test_cluster_min_size_auto(tmp_path, ideal_file, two_blobs, capsys):
    gt_dir = tmp_path / "gt"
    gt_dir.mkdir()
    big = np.zeros_like(two_blobs)
    big[two_blobs == 7] = 7
    write_labels(gt_dir / "a.eseg", big)
    # the smallest GT object (label 7, 37 voxels) removes the 29-voxel instance
    assert main(["cluster", "--fields", str(ideal_file), "--out", str(tmp_path / "o.eseg"),
                 "--min-size", f"auto:{gt_dir}"]) == 0
    assert records(capsys.readouterr().out, "summary")[0]["instances"] == "1"
    assert main(["cluster", "--fields", str(ideal_file), "--out", str(tmp_path / "o.eseg"),
                 "--min-size", f"auto:{tmp_path / 'none'}"]) == 1


def test_cluster_tta(tmp_path, two_blobs, capsys):
    fs = ideal_fieldstack(two_blobs, "medoid", 1.0)
    paths = []
    for g in group_2d():
        p = tmp_path / f"f{g.id}.eseg"
        write_tensor(p, transform_fieldstack(fs, g).to_array())
        paths.append(str(p))
    assert main(["cluster", "--fields", *paths, "--tta", "2d", "--out", str(tmp_path / "o.eseg")]) == 0
    capsys.readouterr()
    pred = read_labels(tmp_path / "o.eseg")
    write_labels(tmp_path / "gt.eseg", two_blobs)
    assert main(["eval", "--gt", str(tmp_path / "gt.eseg"), "--pred", str(tmp_path / "o.eseg")]) == 0
    assert float(records(capsys.readouterr().out, "mean")[0]["score"]) == 1.0
    assert pred.max() == 2
    assert main(["cluster", "--fields", *paths[:3], "--tta", "2d", "--out", str(tmp_path / "o.eseg")]) == 1
    assert main(["cluster", "--fields", *paths[:2], "--out", str(tmp_path / "o.eseg")]) == 1


def test_eval_half_overlap(tmp_path, capsys):
    g = np.zeros((8, 10), np.uint16)
    p = np.zeros((8, 10), np.uint16)
    g[0:4, 0:4] = 1
    p[0:4, 2:6] = 1
    write_labels(tmp_path / "g.eseg", g)
    write_labels(tmp_path / "p.eseg", p)
    assert main(["eval", "--gt", str(tmp_path / "g.eseg"), "--pred", str(tmp_path / "p.eseg"),
                 "--thresholds", "0.3", "0.34"]) == 0
    scores = [float(r["score"]) for r in records(capsys.readouterr().out, "ap")]
    assert scores == [1.0, 0.0]
    assert main(["eval", "--gt", str(tmp_path / "g.eseg"), "--pred", str(tmp_path / "p.eseg"),
                 "--thresholds", "1.5"]) == 1
    assert main(["eval", "--gt", str(tmp_path / "g.eseg"), "--pred", str(tmp_path / "p.eseg"),
                 "--dim", "3"]) == 0
    assert len(records(capsys.readouterr().out, "ap")) == 9


def test_usage_and_data_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["cluster"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1
    (tmp_path / "junk.eseg").write_bytes(b"nope")
    assert main(["cluster", "--fields", str(tmp_path / "junk.eseg"), "--out", str(tmp_path / "o.eseg")]) == 2
    assert "not an ESEG file" in capsys.readouterr().err


def test_fit_demo_initial_only(capsys):
    assert main(["fit-demo", "--shape", "32", "32", "--objects", "2", "--epochs", "0"]) == 0
    text = capsys.readouterr().out
    assert len(records(text, "loss")) == 1
    assert records(text, "mean")[0]["instances"] == "0"


def test_fit_demo_short_run(capsys):
    assert main(["fit-demo", "--shape", "32", "32", "--objects", "2", "--min-radius", "3", "--max-radius", "5",
                 "--epochs", "60", "--steps-per-epoch", "5"]) == 0
    text = capsys.readouterr().out
    assert len(records(text, "loss")) == 60
    assert float(records(text, "ap")[0]["score"]) == 1.0


def test_fit_demo_divergence(capsys):
    code = main(["fit-demo", "--shape", "16", "16", "--objects", "1", "--min-radius", "3", "--max-radius", "4",
                 "--epochs", "3", "--base-lr", "1e300"])
    assert code == 3
    (err,) = records(capsys.readouterr().out, "error")
    assert err["message"].startswith("fit diverged at epoch 0")


def test_crops(tmp_path, two_blobs, capsys):
    write_labels(tmp_path / "l.tif", two_blobs)
    raw = np.random.default_rng(0).random(two_blobs.shape).astype(np.float32)
    write_tensor(tmp_path / "raw.eseg", raw)
    out = tmp_path / "crops"
    assert main(["crops", "--labels", str(tmp_path / "l.tif"), "--raw", str(tmp_path / "raw.eseg"),
                 "--crop", "8", "8", "--out-dir", str(out)]) == 0
    assert records(capsys.readouterr().out, "summary")[0]["crops"] == "2"
    assert sorted(p.name for p in out.iterdir()) == [
        "crop_00001_labels.eseg", "crop_00001_raw.eseg", "crop_00007_labels.eseg", "crop_00007_raw.eseg"]
    assert read_tensor(out / "crop_00007_labels.eseg").shape == (8, 8)
    assert main(["crops", "--labels", str(tmp_path / "l.tif"), "--crop", "30", "8", "--out-dir", str(out)]) == 2


def test_diag(tmp_path, ideal_file, capsys):
    out = tmp_path / "d"
    assert main(["diag", "--fields", str(ideal_file), "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    inst = records(text, "instance")
    assert len(inst) == 2
    # ideal offsets collapse every member onto its centre
    assert all(float(r["embedding_spread"]) < 1e-6 for r in inst)
    acc = read_tensor(out / "acceptance.eseg")
    assert acc.shape == (2, 24, 24) and acc.dtype == np.uint16
    assert read_tensor(out / "embeddings.eseg").shape == (2, 24, 24)
    assert read_tensor(out / "labels.eseg").max() == 2


def test_diag_empty(tmp_path, capsys):
    write_tensor(tmp_path / "z.eseg", FieldStack.constant((6, 6), seed=0.0).to_array())
    assert main(["diag", "--fields", str(tmp_path / "z.eseg"), "--out-dir", str(tmp_path / "d")]) == 0
    assert records(capsys.readouterr().out, "summary")[0]["seeds_used"] == "0"
    assert read_tensor(tmp_path / "d" / "acceptance.eseg").shape == (0, 6, 6)
