"""Procedural road scenes with exact ground truth.

A scene is sky above a horizon and road below, with foreground objects (boxes,
blobs, posts) standing on the road. Test scenes additionally contain anomaly
objects: a known class's color overlaid with a high-contrast pattern (checker,
stripes or dots) that no known class uses, which a color-driven segmenter
confidently mistakes for that class. Known classes
are rendered with :class:`~resyn.synthesis.ToyGenerator` plus per-object
color jitter and pixel noise, so a correct label map resynthesizes the scene
closely while anomalies do not.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .datamodel import ANOMALY, NORMAL, TOY, LabelSpec, Sample
from .synthesis import ToyGenerator

ANOMALY_PATTERNS = ("checker", "stripes", "dots")


class SceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToySceneConfig:
    height: int = 64
    width: int = 64
    horizon: tuple[float, float] = (0.30, 0.45)
    n_foreground: tuple[int, int] = (1, 4)
    box_size: tuple[int, int] = (8, 16)
    blob_radius: tuple[int, int] = (4, 8)
    post_size: tuple[tuple[int, int], tuple[int, int]] = ((3, 4), (12, 22))
    n_anomalies: tuple[int, int] = (1, 2)
    anomaly_size: tuple[int, int] = (7, 13)
    anomaly_contrast: tuple[float, float] = (0.20, 0.30)
    anomaly_color_shift: tuple[float, float] = (0.25, 0.35)
    texture_amplitude: float = 0.06
    jitter: float = 0.02
    antialias: bool = True
    noise_sigma: float = 0.01
    style_seed: int = 0
    max_attempts: int = 100

    def __post_init__(self) -> None:
        if self.height < 32 or self.width < 32:
            raise ValueError("toy scenes must be at least 32x32")
        if self.n_anomalies[0] < 0 or self.n_anomalies[0] > self.n_anomalies[1]:
            raise ValueError(f"bad anomaly count range {self.n_anomalies}")

    def anomaly_fraction_bounds(self) -> tuple[float, float]:
        """Bounds on the anomalous pixel fraction (anomalies never overlap)."""
        lo_s, hi_s = self.anomaly_size
        lo = self.n_anomalies[0] * int(_disc(lo_s).sum())
        hi = self.n_anomalies[1] * hi_s * hi_s
        return lo / (self.height * self.width), hi / (self.height * self.width)


def _disc(size: int) -> np.ndarray:
    r = size / 2.0
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return (yy - r) ** 2 + (xx - r) ** 2 <= r * r


def _nearest_known(color, spec: LabelSpec) -> int:
    d = np.sum((spec.palette() - np.asarray(color)) ** 2, axis=1)
    return int(np.argmin(d))


def _box3(image: np.ndarray) -> np.ndarray:
    p = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = image.shape[:2]
    return sum(p[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def _boundary(sem: np.ndarray) -> np.ndarray:
    b = np.zeros(sem.shape, dtype=bool)
    d = sem[1:] != sem[:-1]
    b[1:] |= d
    b[:-1] |= d
    d = sem[:, 1:] != sem[:, :-1]
    b[:, 1:] |= d
    b[:, :-1] |= d
    return b


def _pattern(kind: str, yy: np.ndarray, xx: np.ndarray, period: int) -> np.ndarray:
    """Zero-mean +-1 pattern."""
    if kind == "checker":
        return ((yy // period + xx // period) % 2) * 2.0 - 1.0
    if kind == "stripes":
        return ((yy + xx) // period % 2) * 2.0 - 1.0
    return np.where(((yy % (2 * period)) < period) & ((xx % (2 * period)) < period), 1.0, -1.0 / 3.0)


def generate_scene(
    cfg: ToySceneConfig,
    rng: np.random.Generator,
    spec: LabelSpec = TOY,
    generator: Optional[ToyGenerator] = None,
    scene_id: str = "scene",
) -> Sample:
    """Draw one scene. Anomaly pixels are labelled with the known class of
    nearest palette color, the way a color-driven segmenter confuses them."""
    gen = generator or ToyGenerator(spec, cfg.style_seed, cfg.texture_amplitude)
    h, w = cfg.height, cfg.width
    road, sky = spec.id_of("road"), spec.id_of("sky")
    horizon = int(round(rng.uniform(*cfg.horizon) * h))

    sem = np.full((h, w), road, dtype=np.int64)
    sem[:horizon] = sky
    inst = np.zeros((h, w), dtype=np.int64)
    jitter = np.zeros((h, w, 3))
    jitter[:horizon] = rng.uniform(-cfg.jitter, cfg.jitter, 3)
    jitter[horizon:] = rng.uniform(-cfg.jitter, cfg.jitter, 3)

    kinds = [k for k in ("box", "blob", "post") if k in {c.name for c in spec.classes}]
    n_fg = int(rng.integers(cfg.n_foreground[0], cfg.n_foreground[1] + 1))
    next_id = 1
    for _ in range(n_fg):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "box":
            bh, bw = rng.integers(cfg.box_size[0], cfg.box_size[1] + 1, size=2)
            shape = np.ones((bh, bw), dtype=bool)
        elif kind == "blob":
            shape = _disc(2 * int(rng.integers(cfg.blob_radius[0], cfg.blob_radius[1] + 1)))
        else:
            pw = int(rng.integers(cfg.post_size[0][0], cfg.post_size[0][1] + 1))
            ph = int(rng.integers(cfg.post_size[1][0], cfg.post_size[1][1] + 1))
            shape = np.ones((ph, pw), dtype=bool)
        sh, sw = shape.shape
        # Objects stand on the road: their bottom edge lies below the horizon.
        bottom = int(rng.integers(min(horizon + 2, h), h + 1))
        top = max(bottom - sh, 0)
        shape = shape[sh - (bottom - top):]
        left = int(rng.integers(0, w - sw + 1))
        region = (slice(top, bottom), slice(left, left + sw))
        sem[region][shape] = spec.id_of(kind)
        inst[region][shape] = next_id
        jitter[region][shape] = rng.uniform(-cfg.jitter, cfg.jitter, 3)
        next_id += 1

    image = gen.generate(sem) + jitter
    if cfg.antialias:
        edge = _boundary(sem)
        image[edge] = _box3(image)[edge]
    anomaly = np.full((h, w), NORMAL, dtype=np.uint8)

    n_an = int(rng.integers(cfg.n_anomalies[0], cfg.n_anomalies[1] + 1))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_an):
        for _attempt in range(cfg.max_attempts):
            s = int(rng.integers(cfg.anomaly_size[0], cfg.anomaly_size[1] + 1))
            shape = _disc(s) if rng.random() < 0.5 else np.ones((s, s), dtype=bool)
            if h - s < horizon + 1:
                continue
            top = int(rng.integers(horizon + 1, h - s + 1))
            left = int(rng.integers(0, w - s + 1))
            region = (slice(top, top + s), slice(left, left + s))
            if np.any(anomaly[region][shape] == ANOMALY):
                continue
            break
        else:
            raise SceneError(f"could not place an anomaly after {cfg.max_attempts} attempts")
        base = int(rng.integers(spec.num_classes))
        direction = rng.normal(size=3)
        shift = rng.uniform(*cfg.anomaly_color_shift) * direction / np.linalg.norm(direction)
        color = np.clip(spec.palette()[base] + shift, 0.0, 1.0)
        kind = ANOMALY_PATTERNS[int(rng.integers(len(ANOMALY_PATTERNS)))]
        contrast = rng.uniform(*cfg.anomaly_contrast)
        tex = contrast * _pattern(kind, yy[region], xx[region], int(rng.integers(2, 4)))
        patch = image[region]
        patch[shape] = color + tex[shape][:, None]
        sem[region][shape] = _nearest_known(color, spec)
        inst[region][shape] = 0
        anomaly[region][shape] = ANOMALY

    image = image + rng.normal(0.0, cfg.noise_sigma, image.shape)
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0

    # Instances partially covered by later objects keep only their visible part;
    # fully hidden ones simply vanish from the map.
    freespace = (sem == road) & (inst == 0) & (anomaly == NORMAL)
    return Sample(scene_id, image, sem, inst, anomaly, None, freespace, spec=spec)


def generate_split(
    cfg: ToySceneConfig,
    n_train: int,
    n_test: int,
    seed: int,
    spec: LabelSpec = TOY,
) -> tuple[list[Sample], list[Sample]]:
    """Anomaly-free training scenes and anomaly-bearing test scenes.

    The two splits draw from disjoint child seed streams.
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError("split sizes must be positive")
    gen = ToyGenerator(spec, cfg.style_seed, cfg.texture_amplitude)
    train_seq, test_seq = np.random.SeedSequence(seed).spawn(2)
    train_cfg = replace(cfg, n_anomalies=(0, 0))
    test_cfg = cfg if cfg.n_anomalies[0] > 0 else replace(cfg, n_anomalies=(1, max(1, cfg.n_anomalies[1])))
    train = [
        generate_scene(train_cfg, np.random.default_rng(s), spec, gen, f"train_{i:04d}")
        for i, s in enumerate(train_seq.spawn(n_train))
    ]
    test = [
        generate_scene(test_cfg, np.random.default_rng(s), spec, gen, f"test_{i:04d}")
        for i, s in enumerate(test_seq.spawn(n_test))
    ]
    return train, test
