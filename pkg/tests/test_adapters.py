import logging

import numpy as np
import pytest

from resyn.adapters import adapter_cityscapes_like, adapter_generic, adapter_lostandfound_like, load_dataset
from resyn.datamodel import ANOMALY, CITYSCAPES, NORMAL, TOY, save_dataset, save_image, save_raster
from resyn.errors import ConfigError, DataError
from resyn.toyworld import ToySceneConfig, generate_split


def test_generic_round_trip(tmp_path):
    train, test = generate_split(ToySceneConfig(), 3, 3, seed=5)
    save_dataset(test, tmp_path / "test", TOY)
    ds = adapter_generic(tmp_path, "test")
    assert ds.spec == TOY and len(ds) == 3
    for a, b in zip(sorted(test, key=lambda s: s.id), ds.samples):
        assert a.id == b.id
        np.testing.assert_array_equal(a.image, b.image)
        for name in ("semantic", "instances", "anomaly", "roi", "freespace"):
            va, vb = getattr(a, name), getattr(b, name)
            assert (va is None) == (vb is None), name
            if va is not None:
                np.testing.assert_array_equal(np.asarray(va).astype(np.int64), np.asarray(vb).astype(np.int64))


def test_generic_resize_policy(tmp_path):
    _, test = generate_split(ToySceneConfig(), 1, 2, seed=1)
    save_dataset(test, tmp_path, TOY)
    ds = load_dataset("generic", tmp_path, resize=[32, 16])
    assert ds.samples[0].image.shape == (16, 32, 3)
    assert ds.samples[0].semantic.shape == (16, 32)


def test_generic_missing_layout_names_path(tmp_path):
    with pytest.raises(DataError, match="label_spec.json"):
        adapter_generic(tmp_path)
    with pytest.raises(ConfigError):
        load_dataset("nope", tmp_path)


def _write_frame(root, kind, split, seq, stem, image, gt, suffix):
    img_dir = root / "leftImg8bit" / split / seq
    gt_dir = root / kind / split / seq
    img_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    save_image(image, img_dir / f"{stem}_leftImg8bit.png")
    if gt is not None:
        save_raster(gt, gt_dir / f"{stem}_{kind}_{suffix}.png")
    return gt_dir


def test_cityscapes_layout(tmp_path, rng):
    raw = np.full((4, 6), 7)          # road
    raw[0] = 23                       # sky
    raw[2, 2:4] = 26                  # car
    raw[3, 5] = 0                     # unlabelled -> void
    inst = raw.copy()
    inst[2, 2:4] = 26001
    gt_dir = _write_frame(tmp_path, "gtFine", "train", "aachen", "a_000001", rng.random((4, 6, 3)), raw, "labelIds")
    save_raster(inst, gt_dir / "a_000001_gtFine_instanceIds.png")
    ds = adapter_cityscapes_like(tmp_path, "train")
    s = ds.samples[0]
    assert s.id == "a_000001"
    assert s.semantic[1, 0] == CITYSCAPES.id_of("road")
    assert s.semantic[0, 0] == CITYSCAPES.id_of("sky")
    assert s.semantic[2, 2] == CITYSCAPES.id_of("car")
    assert s.semantic[3, 5] == CITYSCAPES.void_id
    assert s.instances[2, 2] == s.instances[2, 3] == 1 and s.instances.sum() == 2


def test_cityscapes_undeclared_id(tmp_path, rng):
    raw = np.full((4, 4), 7)
    raw[0, 0] = 40
    _write_frame(tmp_path, "gtFine", "train", "x", "b", rng.random((4, 4, 3)), raw, "labelIds")
    with pytest.raises(DataError, match="undeclared"):
        adapter_cityscapes_like(tmp_path, "train")


def test_cityscapes_missing_label_file(tmp_path, rng):
    _write_frame(tmp_path, "gtFine", "train", "x", "b", rng.random((4, 4, 3)), None, "labelIds")
    with pytest.raises(DataError, match="b_gtFine_labelIds.png"):
        adapter_cityscapes_like(tmp_path, "train")


def test_lostandfound_skips_unannotated_frames(tmp_path, rng, caplog):
    gt = np.ones((6, 8), np.int64)
    gt[:2] = 0
    gt[3:5, 3:5] = 2
    _write_frame(tmp_path, "gtCoarse", "test", "s01", "f0", rng.random((6, 8, 3)), gt, "labelIds")
    _write_frame(tmp_path, "gtCoarse", "test", "s01", "f1", rng.random((6, 8, 3)), None, "labelIds")
    roi = np.ones((6, 8), np.uint8)
    roi[-1] = 0
    save_raster(roi, tmp_path / "roi.png")
    with caplog.at_level(logging.WARNING, logger="resyn.adapters"):
        ds = adapter_lostandfound_like(tmp_path, "test")
    assert len(ds) == 1 and ds.skipped == ["f1"]
    assert any("f1" in r.getMessage() for r in caplog.records)
    assert any("skipped 1 of 2" in r.getMessage() for r in caplog.records)
    s = ds.samples[0]
    assert s.anomaly[3, 3] == ANOMALY and s.anomaly[0, 0] == NORMAL
    assert s.freespace.sum() == (gt == 1).sum()
    assert not s.roi[-1].any() and s.roi[0].all()


def test_lostandfound_all_missing(tmp_path, rng):
    _write_frame(tmp_path, "gtCoarse", "test", "s", "f", rng.random((4, 4, 3)), None, "labelIds")
    with pytest.raises(DataError):
        adapter_lostandfound_like(tmp_path, "test")
