import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import spearmanr

from resyn.datamodel import (
    ANOMALY, CITYSCAPES, IGNORE, NORMAL, TOY, ClassDef, LabelSpec, Sample, load_score_map, one_hot,
    resize_labels, resize_sample, save_score_map,
)
from resyn.errors import DataError


def test_label_spec_validation():
    with pytest.raises(ValueError):
        LabelSpec((ClassDef("a", 0, True, (0, 0, 0)), ClassDef("b", 2, False, (0, 0, 0))))
    with pytest.raises(ValueError):
        LabelSpec((ClassDef("a", 0, False, (0, 0, 0)), ClassDef("b", 1, False, (0, 0, 0))))
    with pytest.raises(ValueError):
        LabelSpec((ClassDef("a", 0, True, (0, 0, 0)),), void_id=0)
    assert CITYSCAPES.num_classes == 19
    assert TOY.foreground_ids.tolist() == [2, 3, 4]


def test_label_spec_round_trip():
    assert LabelSpec.from_dict(json.loads(json.dumps(TOY.to_dict()))) == TOY


def test_sample_validates_shapes_and_freezes():
    img = np.zeros((4, 5, 3))
    with pytest.raises(DataError):
        Sample("x", img, semantic=np.zeros((4, 4), np.int64), spec=TOY)
    s = Sample("x", img, semantic=np.zeros((4, 5), np.int64), spec=TOY)
    with pytest.raises(ValueError):
        s.image[0, 0, 0] = 1.0
    with pytest.raises(DataError):
        Sample("x", img + 2.0)


def test_instances_must_be_single_class():
    sem = np.array([[2, 3]])
    with pytest.raises(DataError):
        Sample("x", np.zeros((1, 2, 3)), semantic=sem, instances=np.array([[1, 1]]), spec=TOY)


def test_anomaly_mask_values():
    with pytest.raises(DataError):
        Sample("x", np.zeros((1, 2, 3)), anomaly=np.array([[0, 2]], np.uint8))


def test_resize_identity_and_downscale(rng):
    img = rng.random((8, 6, 3))
    sem = rng.integers(0, 2, (8, 6))
    s = Sample("x", img, semantic=sem, anomaly=np.where(sem == 1, ANOMALY, NORMAL).astype(np.uint8), spec=TOY)
    same = resize_sample(s, 6, 8)
    np.testing.assert_array_equal(same.image, s.image)
    np.testing.assert_array_equal(same.semantic, s.semantic)
    small = resize_sample(s, 3, 4)
    assert small.image.shape == (4, 3, 3)
    assert set(np.unique(small.semantic)) <= {0, 1}
    with pytest.raises(ValueError):
        resize_sample(s, 0, 4)


def test_resize_cityscapes_resolution():
    img = np.full((1024, 2048, 3), 0.5)
    s = resize_sample(Sample("c", img, semantic=np.zeros((1024, 2048), np.int64), spec=CITYSCAPES), 1024, 512)
    assert s.image.shape == (512, 1024, 3)
    assert s.semantic.shape == (512, 1024)
    np.testing.assert_allclose(s.image, 0.5, atol=1e-6)


def test_resize_4x4_labels_to_2x2():
    sem = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]])
    out = resize_labels(sem, 2, 2)
    assert out.tolist() == [[0, 1], [1, 0]]


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.sampled_from([0, 1, 4, 255])),
       st.integers(1, 12), st.integers(1, 12))
def test_nearest_resize_never_invents_labels(sem, w, h):
    out = resize_labels(sem, w, h)
    assert out.shape == (h, w)
    assert set(np.unique(out)) <= set(np.unique(sem))


def test_one_hot_examples():
    assert one_hot(np.array([[2]]), TOY)[0, 0, :3].tolist() == [0, 0, 1]
    two = LabelSpec((ClassDef("road", 0, False, (0, 0, 0)), ClassDef("car", 1, True, (1, 1, 1))))
    assert one_hot(np.array([[255, 0]]), two).tolist() == [[[0, 0], [1, 0]]]
    with pytest.raises(DataError):
        one_hot(np.array([[7]]), TOY)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.sampled_from([0, 1, 2, 3, 4, 255])))
def test_one_hot_argmax_reconstructs(sem):
    oh = one_hot(sem, TOY)
    assert set(np.unique(oh.sum(-1))) <= {0.0, 1.0}
    known = sem != 255
    np.testing.assert_array_equal(oh.argmax(-1)[known], sem[known])
    assert np.all(oh[~known] == 0)


def test_score_map_constant_round_trip(tmp_path):
    p = tmp_path / "s.png"
    save_score_map(np.full((3, 4), 0.5), p)
    np.testing.assert_array_equal(load_score_map(p), np.full((3, 4), 0.5))


def test_score_map_binary_order(tmp_path):
    p = tmp_path / "s.png"
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    save_score_map(s, p)
    np.testing.assert_array_equal(load_score_map(p), s)


def test_score_map_random_rank_preserved(tmp_path, rng):
    p = tmp_path / "s.png"
    s = rng.normal(size=(10, 10))
    save_score_map(s, p)
    back = load_score_map(p)
    np.testing.assert_array_equal(np.argsort(s.ravel()), np.argsort(back.ravel()))
    assert spearmanr(s.ravel(), back.ravel()).statistic == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(back, s, atol=(s.max() - s.min()) / 65535)


def test_score_map_missing_sidecar(tmp_path):
    p = tmp_path / "s.png"
    save_score_map(np.zeros((2, 2)) + np.eye(2), p)
    p.with_suffix(".json").unlink()
    with pytest.raises(DataError):
        load_score_map(p)


def test_score_map_rejects_nonfinite(tmp_path):
    with pytest.raises(DataError):
        save_score_map(np.array([[0.0, np.nan]]), tmp_path / "s.png")


def test_ignore_constant():
    assert (NORMAL, ANOMALY, IGNORE) == (0, 1, 255)
