import math

import numpy as np
import pytest
import torch

from resyn.datamodel import TOY, one_hot
from resyn.discrepancy import (
    DiscrepancyConfig, DiscrepancyNet, TrainConfig, class_weights, forward, load_checkpoint, loss_fn,
    pointwise_correlation, save_checkpoint, stack_pairs, target_fractions, train, write_loss_csv,
)
from resyn.errors import ConfigError, DataError
from resyn.synthesis import ToyGenerator, build_training_pair

TINY = dict(num_classes=3, pyramid_levels=2, extractor_channels=(4, 6), label_channels=(3, 4),
            reduce_channels=(4, 5), upconv_channels=(4, 6))


def n_params(net):
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def test_config_validation():
    with pytest.raises(ConfigError):
        DiscrepancyConfig(num_classes=3, pyramid_levels=1)
    with pytest.raises(ConfigError):
        DiscrepancyConfig(num_classes=3, label_channels=(1, 2))
    with pytest.raises(ConfigError):
        DiscrepancyConfig(num_classes=3, num_output_classes=3)
    assert DiscrepancyConfig(num_classes=3).freeze_extractor is False


def test_output_shape_odd_dims():
    net = DiscrepancyNet(DiscrepancyConfig(**TINY))
    r = np.random.default_rng(0)
    sem = r.integers(0, 3, (13, 10))
    spec3 = TOY  # one-hot width follows num_classes below
    out = forward(net, r.random((13, 10, 3)), r.random((13, 10, 3)), np.eye(3)[sem])
    assert out.shape == (13, 10) and np.all((out >= 0) & (out <= 1))
    with pytest.raises(DataError):
        forward(net, r.random((13, 10, 3)), r.random((12, 10, 3)), np.eye(3)[sem])
    del spec3


def test_correlation_channel():
    a = torch.tensor([[[[1.0]], [[0.0]]]])
    assert pointwise_correlation(a, a).item() == pytest.approx(1.0)
    assert pointwise_correlation(a, -a).item() == pytest.approx(-1.0)
    assert pointwise_correlation(a, torch.zeros_like(a)).item() == 0.0


def test_class_weights_values():
    got = class_weights([0.0, 0.1, 1.0], 1.02)
    want = [1 / math.log(1.02), 1 / math.log(1.12), 1 / math.log(2.02)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        class_weights([0.0], c=1.0)


def test_target_fractions():
    t = [np.array([[0, 1], [255, 0]], np.uint8)]
    np.testing.assert_allclose(target_fractions(t), [2 / 3, 1 / 3])
    with pytest.raises(DataError):
        target_fractions([np.full((2, 2), 255, np.uint8)])


def _pairs(toy_split, n=6):
    train_s, _ = toy_split
    gen = ToyGenerator(TOY)
    rng = np.random.default_rng(0)
    return [build_training_pair(s, gen, TOY, 0.5, rng) for s in train_s[:n]]


def test_finite_difference_gradients():
    torch.manual_seed(0)
    cfg = DiscrepancyConfig(**TINY)
    net = DiscrepancyNet(cfg).double()
    assert n_params(net) <= 5000
    r = np.random.default_rng(1)
    h = w = 16
    x = torch.from_numpy(r.random((1, 3, h, w)))
    res = torch.from_numpy(r.random((1, 3, h, w)))
    lab = torch.from_numpy(np.eye(3)[r.integers(0, 3, (h, w))].transpose(2, 0, 1)[None].copy())
    t = torch.from_numpy(r.integers(0, 2, (1, h, w)))
    t[0, 0, :4] = 255
    weights = torch.tensor(class_weights([0.7, 0.3]), dtype=torch.float64)
    net.zero_grad()
    loss_fn(net, x, res, lab, t, weights).backward()
    eps = 1e-6
    worst = 0.0
    for p in net.parameters():
        flat = p.data.view(-1)
        gflat = p.grad.view(-1)
        for i in r.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
            old = flat[i].item()
            flat[i] = old + eps
            lp = loss_fn(net, x, res, lab, t, weights).item()
            flat[i] = old - eps
            lm = loss_fn(net, x, res, lab, t, weights).item()
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            an = gflat[i].item()
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-7))
    assert worst < 1e-3


def test_training_reduces_loss_and_checkpoint_round_trip(tmp_path, toy_split):
    pairs = _pairs(toy_split)
    net = DiscrepancyNet(DiscrepancyConfig(num_classes=5, pyramid_levels=2, extractor_channels=(8, 8),
                                           label_channels=(4, 4), reduce_channels=(8, 8),
                                           upconv_channels=(8, 8)))
    net, hist = train(net, pairs, TrainConfig(epochs=4, learning_rate=1e-3, batch_size=2), TOY)
    assert len(hist) == 4 and hist[-1] < hist[0]
    write_loss_csv(hist, tmp_path / "loss.csv")
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 5
    save_checkpoint(net, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    x, r, lab, _ = stack_pairs(pairs[:2], TOY)
    with torch.no_grad():
        torch.testing.assert_close(back(x, r, lab), net(x, r, lab), rtol=0, atol=0)


def test_training_is_seeded(toy_split):
    pairs = _pairs(toy_split, 4)
    cfg = DiscrepancyConfig(**{**TINY, "num_classes": 5})
    a = train(DiscrepancyNet(cfg), pairs, TrainConfig(epochs=2, batch_size=2), TOY)[1]
    b = train(DiscrepancyNet(cfg), pairs, TrainConfig(epochs=2, batch_size=2), TOY)[1]
    assert a == b


def test_train_rejects_empty():
    with pytest.raises(DataError):
        train(DiscrepancyNet(DiscrepancyConfig(**TINY)), [], TrainConfig(), TOY)
    with pytest.raises(DataError):
        load_checkpoint("/nonexistent/ck")


def test_frozen_extractor_not_trained(toy_split):
    cfg = DiscrepancyConfig(**{**TINY, "num_classes": 5, "freeze_extractor": True})
    net = DiscrepancyNet(cfg)
    before = [p.clone() for p in net.extractor.parameters()]
    train(net, _pairs(toy_split, 2), TrainConfig(epochs=1, batch_size=2), TOY)
    for a, b in zip(before, net.extractor.parameters()):
        assert torch.equal(a, b)


def test_score_uses_one_hot(toy_split):
    s = toy_split[1][0]
    net = DiscrepancyNet(DiscrepancyConfig(**{**TINY, "num_classes": 5}))
    out = forward(net, s.image, s.image, one_hot(s.semantic, TOY))
    assert out.dtype == np.float64 and np.all(np.isfinite(out))
