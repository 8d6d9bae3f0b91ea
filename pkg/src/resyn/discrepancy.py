"""
Discrepancy network: scores per-pixel meaningful differences between an image
and its resynthesis, given the label map the resynthesis was made from.

Three streams feed a feature pyramid: a shared (by default frozen) image
extractor applied to the real and the resynthesized image, and a small CNN over
the one-hot labels. At every level the three feature maps are concatenated and
reduced by a 1x1 convolution; the cosine correlation between real and
resynthesized features is appended as one extra channel. A SELU up-convolution
decoder merges the levels coarse-to-fine and ends in a 2-class head
(no-discrepancy, discrepancy).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._torchio import image_to_tensor, load_weights, save_weights, seeded
from .datamodel import ANOMALY, IGNORE, NORMAL, LabelSpec, one_hot
from .errors import ConfigError, DataError

VGG16_CHANNELS = (64, 128, 256, 512, 512)
# Index of the last ReLU of each VGG16 block in torchvision's ``features``.
_VGG16_CUTS = (3, 8, 15, 22, 29)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class DiscrepancyConfig:
    num_classes: int
    extractor: str = "toy"  # "toy" or "vgg16"
    pyramid_levels: int = 3
    extractor_channels: tuple[int, ...] = (16, 32, 32)  # ignored for vgg16
    label_channels: tuple[int, ...] = (8, 16, 16)
    reduce_channels: tuple[int, ...] = (16, 24, 32)
    upconv_channels: tuple[int, ...] = (16, 24, 32)
    num_output_classes: int = 2
    correlation: str = "cosine"  # or "dot"
    freeze_extractor: Optional[bool] = None  # None: frozen for vgg16, trained for toy
    pretrained_weights: Optional[str] = None  # npz/pt state dict for vgg16 features
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("extractor_channels", "label_channels", "reduce_channels", "upconv_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        n = self.pyramid_levels
        if n < 2:
            raise ConfigError("pyramid_levels must be >= 2")
        if self.extractor not in ("toy", "vgg16"):
            raise ConfigError(f"unknown extractor {self.extractor!r}")
        if self.extractor == "vgg16" and n > len(VGG16_CHANNELS):
            raise ConfigError("vgg16 provides at most 5 pyramid levels")
        lists = [self.label_channels, self.reduce_channels, self.upconv_channels]
        if self.extractor == "toy":
            lists.append(self.extractor_channels)
        if any(len(l) != n for l in lists):
            raise ConfigError("every per-level channel list must have pyramid_levels entries")
        if self.correlation not in ("cosine", "dot"):
            raise ConfigError(f"unknown correlation {self.correlation!r}")
        if self.num_output_classes != 2:
            raise ConfigError("the discrepancy head is binary")
        if self.freeze_extractor is None:
            object.__setattr__(self, "freeze_extractor", self.extractor == "vgg16")

    @property
    def feature_channels(self) -> tuple[int, ...]:
        if self.extractor == "vgg16":
            return VGG16_CHANNELS[: self.pyramid_levels]
        return self.extractor_channels


class ConvPyramid(nn.Module):
    """Two 3x3 convs per level; every level after the first halves resolution."""

    def __init__(self, in_ch: int, channels: Sequence[int]):
        super().__init__()
        blocks = []
        prev = in_ch
        for i, ch in enumerate(channels):
            blocks.append(nn.Sequential(
                nn.Conv2d(prev, ch, 3, stride=1 if i == 0 else 2, padding=1),
                nn.ReLU(),
                nn.Conv2d(ch, ch, 3, padding=1),
                nn.ReLU(),
            ))
            prev = ch
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for b in self.blocks:
            x = b(x)
            feats.append(x)
        return feats


class VGG16Pyramid(nn.Module):
    def __init__(self, levels: int, weights: Optional[str] = None):
        super().__init__()
        from torchvision.models import vgg16

        features = vgg16(weights=None).features
        if weights:
            state = _load_state(weights)
            features.load_state_dict({k.removeprefix("features."): v for k, v in state.items()
                                      if not k.startswith("classifier")})
        cuts = (-1,) + _VGG16_CUTS[:levels]
        self.stages = nn.ModuleList(features[cuts[i] + 1:cuts[i + 1] + 1] for i in range(levels))
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, x):
        x = (x - self.mean) / self.std
        feats = []
        for s in self.stages:
            x = s(x)
            feats.append(x)
        return feats


def _load_state(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing pretrained weights: {path}")
    if path.suffix == ".npz":
        with np.load(path) as blob:
            return {k: torch.from_numpy(blob[k]) for k in blob.files}
    return torch.load(path, map_location="cpu", weights_only=True)


def pointwise_correlation(feat_a: torch.Tensor, feat_b: torch.Tensor, mode: str = "cosine") -> torch.Tensor:
    """Per-location similarity of ``N x D x H x W`` feature maps -> ``N x 1 x H x W``.

    Cosine similarity by default; locations where either vector is zero give 0.
    """
    if feat_a.shape != feat_b.shape:
        raise ValueError(f"feature shapes differ: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}")
    dot = (feat_a * feat_b).sum(dim=1, keepdim=True)
    if mode == "dot":
        return dot
    denom = feat_a.norm(dim=1, keepdim=True) * feat_b.norm(dim=1, keepdim=True)
    nonzero = denom > 0
    return torch.where(nonzero, dot / torch.where(nonzero, denom, torch.ones_like(denom)), torch.zeros_like(dot))


class FuseLevel(nn.Module):
    def __init__(self, in_ch: int, reduce_to: int, correlation: str = "cosine"):
        super().__init__()
        self.reduce = nn.Conv2d(in_ch, reduce_to, 1)
        self.correlation = correlation

    def forward(self, real_f, resynth_f, label_f):
        if not (real_f.shape[2:] == resynth_f.shape[2:] == label_f.shape[2:]):
            raise ValueError("streams disagree on resolution at this pyramid level")
        reduced = self.reduce(torch.cat([real_f, resynth_f, label_f], dim=1))
        return torch.cat([reduced, pointwise_correlation(real_f, resynth_f, self.correlation)], dim=1)


class DiscrepancyNet(nn.Module):
    def __init__(self, cfg: DiscrepancyConfig):
        super().__init__()
        self.cfg = cfg
        n = cfg.pyramid_levels
        with seeded(cfg.seed):
            if cfg.extractor == "vgg16":
                self.extractor = VGG16Pyramid(n, cfg.pretrained_weights)
            else:
                self.extractor = ConvPyramid(3, cfg.extractor_channels)
            self.label_stream = ConvPyramid(cfg.num_classes, cfg.label_channels)
            fc = cfg.feature_channels
            self.fuse = nn.ModuleList(
                FuseLevel(2 * fc[i] + cfg.label_channels[i], cfg.reduce_channels[i], cfg.correlation)
                for i in range(n)
            )
            up = cfg.upconv_channels
            self.bottom = nn.Conv2d(cfg.reduce_channels[-1] + 1, up[-1], 3, padding=1)
            self.upsample = nn.ModuleList(nn.ConvTranspose2d(up[i + 1], up[i], 2, stride=2) for i in range(n - 1))
            self.merge = nn.ModuleList(
                nn.Conv2d(up[i] + cfg.reduce_channels[i] + 1, up[i], 3, padding=1) for i in range(n - 1)
            )
            self.head = nn.Conv2d(up[0], cfg.num_output_classes, 1)
        if cfg.freeze_extractor:
            for p in self.extractor.parameters():
                p.requires_grad_(False)

    def forward(self, image, resynth, labels):
        """Inputs ``N x 3 x H x W`` (x2) and ``N x C x H x W``; returns 2-class logits."""
        if not (image.shape[2:] == resynth.shape[2:] == labels.shape[2:]):
            raise ValueError("image, resynthesis and labels must share height and width")
        h, w = image.shape[2:]
        m = 2 ** (self.cfg.pyramid_levels - 1)
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            pad = (0, pw, 0, ph)
            image = F.pad(image, pad, mode="replicate")
            resynth = F.pad(resynth, pad, mode="replicate")
            labels = F.pad(labels, pad, mode="replicate")
        real_f = self.extractor(image)
        resyn_f = self.extractor(resynth)
        label_f = self.label_stream(labels)
        fused = [f(a, b, c) for f, a, b, c in zip(self.fuse, real_f, resyn_f, label_f)]
        x = F.selu(self.bottom(fused[-1]))
        for i in range(self.cfg.pyramid_levels - 2, -1, -1):
            x = F.selu(self.upsample[i](x))
            x = F.selu(self.merge[i](torch.cat([x, fused[i]], dim=1)))
        return self.head(x)[:, :, :h, :w]


def _inputs(image, resynth, sem_onehot, dtype):
    x = image_to_tensor(image, dtype)
    r = image_to_tensor(resynth, dtype)
    lab = image_to_tensor(sem_onehot, dtype)
    return x, r, lab


def forward(net: DiscrepancyNet, image: np.ndarray, resynth: np.ndarray, sem_onehot: np.ndarray) -> np.ndarray:
    """Probability of the discrepancy class per pixel (an ``H x W`` score map)."""
    if not (image.shape[:2] == resynth.shape[:2] == sem_onehot.shape[:2]):
        raise DataError("image, resynthesis and one-hot labels must share height and width")
    dtype = next(net.parameters()).dtype
    net.eval()
    with torch.no_grad():
        logits = net(*_inputs(image, resynth, sem_onehot, dtype))
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite activations in the discrepancy network")
    return torch.softmax(logits, dim=1)[0, 1].double().numpy()


def score_image(net: DiscrepancyNet, image, resynth, sem, spec: LabelSpec) -> np.ndarray:
    return forward(net, image, resynth, one_hot(sem, spec))


def class_weights(fractions, c: float = 1.02) -> np.ndarray:
    """Inverse log-frequency weights ``1 / ln(c + p_k)``."""
    p = np.asarray(fractions, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("class fractions must lie in [0, 1]")
    arg = c + p
    if np.any(arg <= 1.0):
        raise ValueError(f"c + p must exceed 1 for every class (c={c})")
    return 1.0 / np.log(arg)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 4
    weight_c: float = 1.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def target_fractions(targets: Sequence[np.ndarray]) -> np.ndarray:
    """Fraction of (no-discrepancy, discrepancy) among non-IGNORE target pixels."""
    neg = sum(int(np.sum(t == NORMAL)) for t in targets)
    pos = sum(int(np.sum(t == ANOMALY)) for t in targets)
    if pos + neg == 0:
        raise DataError("every target pixel is IGNORE")
    return np.array([neg, pos], dtype=np.float64) / (pos + neg)


def stack_pairs(pairs, spec: LabelSpec, dtype=torch.float32):
    """Tensors (images, resynths, one-hot labels, targets) for a list of TrainingPair."""
    x = torch.cat([image_to_tensor(p.image, dtype) for p in pairs])
    r = torch.cat([image_to_tensor(p.resynth, dtype) for p in pairs])
    lab = torch.cat([image_to_tensor(one_hot(p.altered_sem, spec), dtype) for p in pairs])
    t = torch.from_numpy(np.stack([p.target.astype(np.int64) for p in pairs]))
    return x, r, lab, t


def loss_fn(net: DiscrepancyNet, x, r, lab, t, weights: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(net(x, r, lab), t, weight=weights, ignore_index=IGNORE)


def train(net: DiscrepancyNet, pairs, cfg: TrainConfig, spec: LabelSpec, log=None):
    """Adam on class-weighted per-pixel cross-entropy; returns (net, per-epoch mean loss)."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("no training pairs")
    fractions = target_fractions([p.target for p in pairs])
    dtype = next(net.parameters()).dtype
    weights = torch.tensor(class_weights(fractions, cfg.weight_c), dtype=dtype)
    x, r, lab, t = stack_pairs(pairs, spec, dtype)
    params = [p for p in net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    n = len(pairs)
    net.train()
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        total = 0.0
        seen = 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss = loss_fn(net, x[idx], r[idx], lab[idx], t[idx], weights)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        history.append(total / seen)
        if log is not None:
            log(epoch + 1, history[-1])
    net.eval()
    return net, history


# -- checkpoints -----------------------------------------------------------------
#
# <dir>/architecture.json  (DiscrepancyConfig fields)
# <dir>/weights.npz        (state dict keyed by layer name)

def save_checkpoint(net: DiscrepancyNet, d) -> Path:
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    (d / "architecture.json").write_text(json.dumps(asdict(net.cfg), indent=1, sort_keys=True) + "\n")
    save_weights(net, d / "weights.npz")
    return d


def load_checkpoint(d) -> DiscrepancyNet:
    d = Path(d)
    arch = d / "architecture.json"
    if not arch.is_file():
        raise DataError(f"missing discrepancy checkpoint: {arch}")
    cfg = DiscrepancyConfig(**{**json.loads(arch.read_text()), "pretrained_weights": None})
    net = DiscrepancyNet(cfg)
    load_weights(net, d / "weights.npz")
    net.eval()
    return net


def write_loss_csv(history: Sequence[float], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])
