"""Gaussian-Bernoulli RBM trained on clean road patches as a texture autoencoder.

Visible units are standardized RGB patches (unit variance Gaussian), hidden
units are binary. Training uses CD-k with the positive phase driven by
noise-corrupted visibles; scoring reconstructs every stride-spaced patch with
one deterministic mean-field up-down pass.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .datamodel import LabelSpec, Sample, check_image, check_score_map
from .errors import DataError


@dataclass(frozen=True)
class RbmConfig:
    patch_size: int = 8
    stride: int = 6
    hidden_units: int = 20
    noise_sigma: float = 0.1
    cd_steps: int = 1
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 64
    momentum: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1 or self.hidden_units < 1:
            raise ValueError("patch_size, stride and hidden_units must be >= 1")
        if self.cd_steps < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("cd_steps, epochs and batch_size must be >= 1")
        if self.noise_sigma < 0 or self.learning_rate <= 0:
            raise ValueError("noise_sigma must be >= 0 and learning_rate > 0")


@dataclass
class RbmModel:
    cfg: RbmConfig
    weights: np.ndarray  # (visible, hidden)
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    mean: np.ndarray  # per-channel standardization
    std: np.ndarray
    history: list = field(default_factory=list)

    @property
    def visible_dim(self) -> int:
        return 3 * self.cfg.patch_size ** 2

    def standardize(self, patches: np.ndarray) -> np.ndarray:
        p = patches.reshape(len(patches), -1, 3)
        return ((p - self.mean) / self.std).reshape(len(patches), -1)

    def hidden_probs(self, v: np.ndarray) -> np.ndarray:
        return _sigmoid(v @ self.weights + self.hidden_bias)

    def visible_mean(self, h: np.ndarray) -> np.ndarray:
        return h @ self.weights.T + self.visible_bias

    def reconstruct(self, v: np.ndarray) -> np.ndarray:
        """Mean-field up-down pass in standardized units."""
        return self.visible_mean(self.hidden_probs(v))

    def patch_errors(self, patches: np.ndarray) -> np.ndarray:
        v = self.standardize(patches)
        return np.mean((v - self.reconstruct(v)) ** 2, axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def patch_grid(height: int, width: int, patch: int, stride: int) -> tuple[int, int]:
    """Number of stride-spaced patch positions fully inside the image, per axis."""
    ny = (height - patch) // stride + 1 if height >= patch else 0
    nx = (width - patch) // stride + 1 if width >= patch else 0
    return ny, nx


def image_patches(image: np.ndarray, patch: int, stride: int) -> np.ndarray:
    """``(ny, nx, patch*patch*3)`` array of flattened patches on the stride grid."""
    win = np.lib.stride_tricks.sliding_window_view(image, (patch, patch), axis=(0, 1))[::stride, ::stride]
    # (ny, nx, 3, p, p) -> (ny, nx, p, p, 3)
    win = np.moveaxis(win, 2, -1)
    return win.reshape(win.shape[0], win.shape[1], -1)


def extract_road_patches(samples: Sequence[Sample], spec: LabelSpec, cfg: RbmConfig = RbmConfig()) -> np.ndarray:
    """All grid patches lying entirely on ground-truth road pixels, as ``(N, 3*p*p)``."""
    try:
        road = spec.id_of("road")
    except KeyError as e:
        raise DataError("the label specification declares no 'road' class") from e
    p, s = cfg.patch_size, cfg.stride
    out = []
    for smp in samples:
        if smp.semantic is None:
            raise DataError(f"sample {smp.id} has no semantic map")
        h, w = smp.semantic.shape
        ny, nx = patch_grid(h, w, p, s)
        if ny == 0 or nx == 0:
            continue
        on_road = (smp.semantic == road).astype(np.int64)
        full = np.lib.stride_tricks.sliding_window_view(on_road, (p, p))[::s, ::s].sum(axis=(-1, -2)) == p * p
        out.append(image_patches(smp.image, p, s)[full])
    patches = np.concatenate(out) if out else np.empty((0, 3 * p * p))
    if len(patches) == 0:
        raise DataError("no patch lies entirely on road pixels")
    return patches


def train_rbm(patches: np.ndarray, cfg: RbmConfig = RbmConfig(), rng: np.random.Generator | None = None) -> RbmModel:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or len(patches) == 0:
        raise DataError("empty patch set")
    if patches.shape[1] != 3 * cfg.patch_size ** 2:
        raise DataError(f"patch vectors have length {patches.shape[1]}, expected {3 * cfg.patch_size ** 2}")
    if len(patches) < cfg.hidden_units:
        raise DataError(f"need at least {cfg.hidden_units} patches, got {len(patches)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pix = patches.reshape(-1, 3)
    mean = pix.mean(axis=0)
    std = np.maximum(pix.std(axis=0), 1.0 / 255.0)
    n_vis, n_hid = patches.shape[1], cfg.hidden_units
    model = RbmModel(cfg, rng.normal(0.0, 0.01, (n_vis, n_hid)), np.zeros(n_vis), np.zeros(n_hid), mean, std)
    data = model.standardize(patches)
    vel = [np.zeros_like(model.weights), np.zeros(n_vis), np.zeros(n_hid)]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        err = 0.0
        for i in range(0, len(order), cfg.batch_size):
            v0 = data[order[i:i + cfg.batch_size]]
            v0 = v0 + rng.normal(0.0, cfg.noise_sigma, v0.shape)
            h0 = model.hidden_probs(v0)
            hk, vk = h0, v0
            for _k in range(cfg.cd_steps):
                hs = (rng.random(hk.shape) < hk).astype(np.float64)
                vk = model.visible_mean(hs)
                hk = model.hidden_probs(vk)
            n = len(v0)
            grads = ((v0.T @ h0 - vk.T @ hk) / n, (v0 - vk).mean(axis=0), (h0 - hk).mean(axis=0))
            for g, vel_i, param in zip(grads, vel, (model.weights, model.visible_bias, model.hidden_bias)):
                vel_i *= cfg.momentum
                vel_i += cfg.learning_rate * g
                param += vel_i
            err += float(np.sum((v0 - model.reconstruct(v0)) ** 2)) / v0.shape[1]
        model.history.append(err / len(data))
    return model


def rbm_score(model: RbmModel, image: np.ndarray) -> np.ndarray:
    """Per-pixel mean of the reconstruction errors of all covering patches."""
    image = check_image(image)
    p, s = model.cfg.patch_size, model.cfg.stride
    h, w = image.shape[:2]
    if h < p or w < p:
        raise DataError(f"image {h}x{w} is smaller than one {p}x{p} patch")
    grid = image_patches(image, p, s)
    ny, nx = grid.shape[:2]
    patch_scores = model.patch_errors(grid.reshape(ny * nx, -1)).reshape(ny, nx)
    return check_score_map(coverage_average(patch_scores, s, p, h, w))


def coverage_average(patch_scores: np.ndarray, stride: int, patch: int, height: int, width: int) -> np.ndarray:
    """Average covering patch scores per pixel; uncovered pixels get the max patch score."""
    patch_scores = np.ascontiguousarray(patch_scores, dtype=np.float64)
    total, count = kernels.patch_coverage(patch_scores, stride, patch, height, width)
    out = np.full((height, width), patch_scores.max())
    covered = count > 0
    out[covered] = total[covered] / count[covered]
    return out


def save_rbm(model: RbmModel, d) -> Path:
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"kind": "rbm", "config": asdict(model.cfg), "visible_dim": model.visible_dim,
            "mean": model.mean.tolist(), "std": model.std.tolist(), "history": model.history}
    (d / "rbm.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    with open(d / "rbm_weights.npz", "wb") as f:
        np.savez(f, weights=model.weights, visible_bias=model.visible_bias, hidden_bias=model.hidden_bias)
    return d


def load_rbm(d) -> RbmModel:
    d = Path(d)
    meta_path, blob_path = d / "rbm.json", d / "rbm_weights.npz"
    for path in (meta_path, blob_path):
        if not path.is_file():
            raise DataError(f"missing RBM file: {path}")
    meta = json.loads(meta_path.read_text())
    with np.load(blob_path) as blob:
        model = RbmModel(RbmConfig(**meta["config"]), blob["weights"], blob["visible_bias"], blob["hidden_bias"],
                         np.array(meta["mean"]), np.array(meta["std"]), list(meta["history"]))
    if not all(np.all(np.isfinite(a)) for a in (model.weights, model.visible_bias, model.hidden_bias)):
        raise DataError("RBM parameters are not finite")
    return model
