from dataclasses import replace

import numpy as np
import pytest

from resyn.datamodel import ANOMALY, NORMAL, TOY
from resyn.segmentation import predict_labels
from resyn.synthesis import ToyGenerator
from resyn.toyworld import SceneError, ToySceneConfig, generate_scene, generate_split

CFG = ToySceneConfig()


def test_zero_anomalies_gives_normal_mask():
    s = generate_scene(replace(CFG, n_anomalies=(0, 0)), np.random.default_rng(3))
    assert np.all(s.anomaly == NORMAL)


def test_same_seed_same_scene():
    a = generate_scene(CFG, np.random.default_rng(9))
    b = generate_scene(CFG, np.random.default_rng(9))
    for name in ("image", "semantic", "instances", "anomaly", "freespace"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_anomaly_fraction_within_configured_range():
    lo, hi = CFG.anomaly_fraction_bounds()
    fr = np.array([np.mean(generate_scene(CFG, np.random.default_rng(s)).anomaly == ANOMALY) for s in range(500)])
    assert fr.min() >= lo - 1e-12 and fr.max() <= hi + 1e-12
    assert lo < fr.mean() < hi


def test_split_contracts():
    train, test = generate_split(CFG, 100, 60, seed=5)
    assert all(not np.any(s.anomaly == ANOMALY) for s in train)
    assert not {s.id for s in train} & {s.id for s in test}
    assert np.mean([np.any(s.anomaly == ANOMALY) for s in test]) >= 0.95
    with pytest.raises(ValueError):
        generate_split(CFG, 0, 5, seed=0)


def test_small_dims_rejected():
    with pytest.raises(ValueError):
        ToySceneConfig(height=16)


def test_unplaceable_anomalies_raise():
    cfg = replace(CFG, n_anomalies=(30, 30), anomaly_size=(20, 20), max_attempts=5)
    with pytest.raises(SceneError):
        generate_scene(cfg, np.random.default_rng(0))


def test_freespace_is_clean_road():
    s = generate_scene(CFG, np.random.default_rng(1))
    assert np.all(s.semantic[s.freespace] == TOY.id_of("road"))
    assert not np.any(s.freespace & (s.anomaly == ANOMALY))


def test_resynthesis_faithful_on_known_and_off_on_anomalies(toy_split, toy_segmenter):
    _, test = toy_split
    gen = ToyGenerator(TOY, CFG.style_seed, CFG.texture_amplitude)
    known_err, anom_err = [], []
    for s in test:
        pred = predict_labels(toy_segmenter, s.image)
        diff = np.abs(gen.generate(pred) - s.image).mean(-1)
        ok = (pred == s.semantic) & (s.anomaly == NORMAL)
        known_err.append(diff[ok])
        anom_err.append(diff[s.anomaly == ANOMALY])
    assert np.concatenate(known_err).mean() < CFG.texture_amplitude
    assert np.concatenate(anom_err).mean() > 3 * CFG.texture_amplitude
