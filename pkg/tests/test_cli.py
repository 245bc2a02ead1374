import matplotlib.image as mpimg
import numpy as np
import pytest
import yaml

from rangeseg.cli import main
from rangeseg.config import load_config
from rangeseg.errors import ConfigError
from rangeseg.kitti_io import PanopticResult, load_class_config, read_labels, write_labels, write_point_cloud

from .conftest import labeled_frame

SMALL = {
    "geometry": {"width": 64, "height": 16, "fov_up_deg": 3.0, "fov_down_deg": 25.0},
    "head": {
        "feat_channels": 8,
        "embed_channels": 16,
        "pixel_channels": 8,
        "decoder": {"num_layers": 2, "num_queries": 6, "embed_dim": 16, "num_heads": 4, "ffn_dim": 32},
    },
    "inference": {"object_threshold": 0.0},
}


def write_config(tmp_path, **extra):
    doc = {**SMALL, **extra}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def make_sequence(root, seq, frames, seed=0, n=400):
    cfg = load_class_config()
    rng = np.random.default_rng(seed)
    (root / "sequences" / seq / "velodyne").mkdir(parents=True)
    (root / "sequences" / seq / "labels").mkdir(parents=True)
    scans = []
    for i in range(frames):
        fr = labeled_frame(rng, n)
        scan = root / "sequences" / seq / "velodyne" / f"{i:06d}.bin"
        write_point_cloud(scan, fr)
        write_labels(root / "sequences" / seq / "labels" / f"{i:06d}.label", PanopticResult(fr.semantic, fr.instance), cfg)
        scans.append(scan)
    return scans


def test_config_overrides_and_env(tmp_path, monkeypatch):
    path = write_config(tmp_path, knn={"k": 3, "enabled": True}, seed=5)
    cfg = load_config(path, knn_k=7, seed=None)
    assert cfg.knn.k == 7 and cfg.seed == 5 and cfg.geometry.width == 64
    monkeypatch.setenv("RANGESEG_DATASET_ROOT", str(tmp_path))
    assert load_config(path).dataset_root == tmp_path
    monkeypatch.setenv("RANGESEG_DATASET_ROOT", str(tmp_path / "nope"))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("knn: [1, 2")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, knn={"neighbours": 3}))
    with pytest.raises(ConfigError):
        load_config(None, task="instance")


def test_stats_published(tmp_path, capsys):
    assert main(["stats", "--published", "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "motorcyclist" in out and "963.86" in out
    for name in ("stats.yaml", "stats.tsv", "weights.png"):
        assert (tmp_path / name).stat().st_size > 0
    header = (tmp_path / "stats.tsv").read_text().splitlines()[0].split("\t")
    assert header[:3] == ["id", "name", "thing"]


def test_stats_dataset_shards_equal(tmp_path, monkeypatch):
    root = tmp_path / "ds"
    make_sequence(root, "00", 3, seed=1)
    make_sequence(root, "01", 2, seed=2)
    monkeypatch.setenv("RANGESEG_DATASET_ROOT", str(root))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["stats", "--sequences", "00", "01", "--output-dir", str(a)]) == 0
    assert main(["stats", "--sequences", "00", "01", "--workers", "3", "--output-dir", str(b)]) == 0
    assert (a / "stats.yaml").read_bytes() == (b / "stats.yaml").read_bytes()


def test_stats_errors(tmp_path, monkeypatch):
    root = tmp_path / "ds"
    make_sequence(root, "00", 1)
    monkeypatch.setenv("RANGESEG_DATASET_ROOT", str(root))
    assert main(["stats", "--sequences", "--output-dir", str(tmp_path / "o")]) == 4
    (root / "sequences" / "00" / "labels" / "000000.label").unlink()
    assert main(["stats", "--sequences", "00", "--output-dir", str(tmp_path / "o")]) == 4
    monkeypatch.delenv("RANGESEG_DATASET_ROOT")
    assert main(["stats", "--output-dir", str(tmp_path / "o")]) == 3


def test_augment(tmp_path, capsys):
    root = tmp_path / "ds"
    make_sequence(root, "00", 2)
    seq = root / "sequences" / "00"
    files = [seq / "velodyne/000000.bin", seq / "labels/000000.label", seq / "velodyne/000001.bin", seq / "labels/000001.label"]
    cfg = write_config(tmp_path)
    args = ["augment", *map(str, files), "--config", str(cfg), "--seed", "3"]
    assert main(args + ["--output-dir", str(tmp_path / "x")]) == 3  # no stats yet
    assert "run `rangeseg stats`" in capsys.readouterr().err
    main(["stats", "--published", "--output-dir", str(tmp_path / "st")])
    stats = str(tmp_path / "st" / "stats.yaml")
    for d in ("x", "y"):
        assert main(args + ["--stats", stats, "--output-dir", str(tmp_path / d)]) == 0
    for name in ("000000.bin", "000000.label", "000000.png"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    assert mpimg.imread(tmp_path / "x" / "000000.png").shape[:2] == (16, 64)


def test_eval(tmp_path, capsys):
    root = tmp_path / "ds"
    make_sequence(root, "00", 2)
    gt = root / "sequences" / "00" / "labels"
    assert main(["eval-sem", str(gt), str(gt), "--output-dir", str(tmp_path / "o")]) == 0
    rep = yaml.safe_load((tmp_path / "o" / "semantic_report.yaml").read_text())
    assert rep["miou"] == 1.0
    assert main(["eval-pan", str(gt), str(gt), "--output-dir", str(tmp_path / "o")]) == 0
    rep = yaml.safe_load((tmp_path / "o" / "panoptic_report.yaml").read_text())
    assert rep["pq_all"] == 1.0
    assert (tmp_path / "o" / "panoptic_pq.png").exists()

    pred = tmp_path / "pred"
    pred.mkdir()
    (pred / "000000.label").write_bytes((gt / "000000.label").read_bytes())
    (pred / "000009.label").write_bytes((gt / "000000.label").read_bytes())
    capsys.readouterr()
    assert main(["eval-sem", str(pred), str(gt), "--output-dir", str(tmp_path / "o")]) == 5
    err = capsys.readouterr().err
    assert "000001.label" in err and "000009.label" in err

    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval-sem", str(empty), str(empty)]) == 5


def test_infer_merge_end_to_end(tmp_path):
    root = tmp_path / "ds"
    scans = make_sequence(root, "00", 3)
    cfg = write_config(tmp_path)
    fixture = tmp_path / "head.rspt"
    assert main(["infer-merge", str(fixture), "--init-fixture", "--config", str(cfg), "--seed", "1"]) == 0
    classes = load_class_config()
    for task in ("semantic", "panoptic"):
        out = tmp_path / task
        args = ["infer-merge", str(fixture), *map(str, scans), "--config", str(cfg), "--task", task, "--output-dir", str(out)]
        assert main(args + ["--temporal-K", "1", "--temporal-L", "1"]) == 0
        for s in scans:
            sem, inst = read_labels(out / (s.stem + ".label"), classes)
            assert len(sem) == 400
            assert ((sem >= 0) & (sem <= 19)).all()
            if task == "semantic":
                assert (sem >= 1).all() and (inst == 0).all()


def test_infer_merge_fixture_mismatch(tmp_path):
    cfg = write_config(tmp_path)
    fixture = tmp_path / "head.rspt"
    main(["infer-merge", str(fixture), "--init-fixture", "--config", str(cfg)])
    (tmp_path / "other").mkdir()
    other = write_config(tmp_path / "other", head={**SMALL["head"], "feat_channels": 4})
    scans = make_sequence(tmp_path / "ds", "00", 1)
    assert main(["infer-merge", str(fixture), str(scans[0]), "--config", str(other)]) == 6
    (tmp_path / "junk.rspt").write_bytes(b"junk")
    assert main(["infer-merge", str(tmp_path / "junk.rspt"), str(scans[0]), "--config", str(cfg)]) == 6


def test_postprocess(tmp_path):
    scans = make_sequence(tmp_path / "ds", "00", 2)
    maps = tmp_path / "maps"
    maps.mkdir()
    np.save(maps / "000000.npy", np.full((16, 64), 9))
    cfg = write_config(tmp_path)
    args = ["postprocess", str(maps), *map(str, scans), "--config", str(cfg), "--output-dir", str(tmp_path / "o")]
    assert main(args) == 5
    np.save(maps / "000001.npy", np.full((16, 64), 9))
    assert main(args + ["--knn-k", "3"]) == 0
    sem, _ = read_labels(tmp_path / "o" / "000001.label", load_class_config())
    assert (sem == 9).all()


def test_loss_audit(capsys):
    assert main(["loss-audit", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "focal(gamma=0,N) vs cross-entropy" in out and "FAIL" not in out
    assert main(["loss-audit", "--instances", "1", "--inject-sign-flip"]) == 7


def test_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
