"""Segmentation backends and the dropout / ensemble uncertainty baselines."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._torchio import image_to_tensor, load_weights, save_weights, seeded
from .datamodel import IGNORE, LabelSpec, Sample, check_score_map
from .errors import CapabilityError, ConfigError, DataError


@dataclass(frozen=True)
class Capabilities:
    stochastic_forward: bool = False
    gradient_access: bool = False
    concurrent_safe: bool = False


@runtime_checkable
class SegmentationBackend(Protocol):
    """Anything that maps an image to per-pixel class logits.

    ``predict_logits`` returns an ``(H, W, C)`` float array with
    ``C == label_spec.num_classes``. With ``stochastic=True`` a backend that
    advertises ``stochastic_forward`` draws a fresh stochastic pass (e.g. with
    dropout active). Backends advertising ``gradient_access`` also provide
    ``logits_torch(x)`` mapping a ``1x3xHxW`` tensor to ``1xCxHxW`` logits
    differentiably.
    """

    label_spec: LabelSpec
    capabilities: Capabilities

    def predict_logits(self, image: np.ndarray, stochastic: bool = False) -> np.ndarray: ...


class ToySegmenterNet(nn.Module):
    def __init__(self, num_classes: int, hidden: int = 16, dropout: float = 0.0):
        super().__init__()
        self.conv1 = nn.Conv2d(3, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.head = nn.Conv2d(hidden, num_classes, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        # ELU keeps the logit landscape smooth off the training color manifold.
        x = F.elu(self.conv1(x - 0.5))
        x = self.drop(F.elu(self.conv2(x)))
        x = self.drop(F.elu(self.conv3(x)))
        return self.head(x)


class ToySegmenter:
    """Small fully convolutional classifier used as a desk-scale backend."""

    def __init__(self, spec: LabelSpec, hidden: int = 16, dropout: float = 0.0, seed: int = 0):
        self.label_spec = spec
        self.hidden = hidden
        self.dropout = float(dropout)
        self.seed = int(seed)
        with seeded(seed):
            self.net = ToySegmenterNet(spec.num_classes, hidden, dropout)
        self.net.eval()
        self.capabilities = Capabilities(
            stochastic_forward=self.dropout > 0, gradient_access=True, concurrent_safe=self.dropout == 0
        )

    def logits_torch(self, x: torch.Tensor) -> torch.Tensor:
        self.net.eval()
        return self.net(x)

    def predict_logits(self, image: np.ndarray, stochastic: bool = False) -> np.ndarray:
        if stochastic and not self.capabilities.stochastic_forward:
            raise CapabilityError("this segmenter has no dropout; stochastic passes are unavailable")
        self.net.train(stochastic)
        try:
            with torch.no_grad():
                out = self.net(image_to_tensor(image))
        finally:
            self.net.eval()
        return out[0].permute(1, 2, 0).double().numpy()

    def save(self, d) -> None:
        d = Path(d)
        d.mkdir(parents=True, exist_ok=True)
        arch = {"kind": "toy_segmenter", "hidden": self.hidden, "dropout": self.dropout, "seed": self.seed,
                "label_spec": self.label_spec.to_dict()}
        (d / "architecture.json").write_text(json.dumps(arch, indent=1, sort_keys=True))
        save_weights(self.net, d / "weights.npz")

    @classmethod
    def load(cls, d) -> "ToySegmenter":
        d = Path(d)
        arch_path = d / "architecture.json"
        if not arch_path.is_file():
            raise DataError(f"missing segmenter checkpoint: {arch_path}")
        arch = json.loads(arch_path.read_text())
        seg = cls(LabelSpec.from_dict(arch["label_spec"]), arch["hidden"], arch["dropout"], arch["seed"])
        load_weights(seg.net, d / "weights.npz")
        seg.net.eval()
        return seg


@dataclass(frozen=True)
class SegTrainConfig:
    epochs: int = 8
    lr: float = 3e-3
    batch_size: int = 8
    hidden: int = 16
    dropout: float = 0.0
    input_noise: float = 0.1  # std of Gaussian pixel noise added to training batches
    seed: int = 0


def train_toy_segmenter(samples: Sequence[Sample], spec: LabelSpec, cfg: SegTrainConfig = SegTrainConfig()):
    """Fit a :class:`ToySegmenter` on ground-truth semantic maps; returns (model, losses)."""
    if not samples:
        raise DataError("no training samples")
    seg = ToySegmenter(spec, cfg.hidden, cfg.dropout, cfg.seed)
    x = torch.cat([image_to_tensor(s.image) for s in samples])
    y = torch.from_numpy(np.stack([np.where(s.semantic == spec.void_id, IGNORE, s.semantic) for s in samples]))
    opt = torch.optim.Adam(seg.net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    losses = []
    seg.net.train()
    with seeded(cfg.seed):
        for _ in range(cfg.epochs):
            order = torch.randperm(len(samples), generator=gen)
            total = 0.0
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                xb = x[idx]
                if cfg.input_noise > 0:
                    xb = xb + cfg.input_noise * torch.randn(xb.shape, generator=gen)
                loss = F.cross_entropy(seg.net(xb), y[idx], ignore_index=IGNORE)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            losses.append(total / len(order))
    seg.net.eval()
    return seg, losses


def predict_labels(backend: SegmentationBackend, image: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class index."""
    return np.argmax(backend.predict_logits(image), axis=-1).astype(np.int64)


def pixel_accuracy(backend: SegmentationBackend, samples: Sequence[Sample]) -> float:
    hit = tot = 0
    for s in samples:
        valid = s.semantic != backend.label_spec.void_id
        if s.anomaly is not None:
            valid &= s.anomaly == 0
        pred = predict_labels(backend, s.image)
        hit += int(np.sum((pred == s.semantic) & valid))
        tot += int(valid.sum())
    return hit / tot


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_variance(probs: np.ndarray) -> np.ndarray:
    """``(S, H, W, C)`` -> per-pixel mean over classes of the population variance across S."""
    return check_score_map(probs.var(axis=0).mean(axis=-1))


def mc_dropout_uncertainty(backend: SegmentationBackend, image: np.ndarray, n_samples: int = 16,
                           seed: int = 0) -> np.ndarray:
    if not backend.capabilities.stochastic_forward:
        raise CapabilityError("MC dropout needs a backend with stochastic forward passes")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    with seeded(seed):
        probs = np.stack([softmax(backend.predict_logits(image, stochastic=True)) for _ in range(n_samples)])
    return softmax_variance(probs)


def ensemble_uncertainty(backends: Sequence[SegmentationBackend], image: np.ndarray) -> np.ndarray:
    if len(backends) < 2:
        raise ConfigError("an ensemble needs at least two members")
    spec = backends[0].label_spec
    if any(b.label_spec != spec for b in backends[1:]):
        raise ConfigError("ensemble members disagree on the label specification")
    probs = np.stack([softmax(b.predict_logits(image)) for b in backends])
    return softmax_variance(probs)


def train_ensemble(samples: Sequence[Sample], spec: LabelSpec, size: int = 4,
                   cfg: SegTrainConfig = SegTrainConfig()) -> list[ToySegmenter]:
    """Independently initialised members (seeds ``cfg.seed + k``)."""
    members = []
    for k in range(size):
        seg, _ = train_toy_segmenter(samples, spec, SegTrainConfig(**{**asdict(cfg), "seed": cfg.seed + k}))
        members.append(seg)
    return members
