"""Semantic map -> image generators and synthetic label-swap training data."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .datamodel import (
    ANOMALY,
    IGNORE,
    NORMAL,
    LabelSpec,
    Sample,
    check_semantic,
    load_image,
    load_raster,
    save_image,
    save_mask,
    save_raster,
)
from .errors import DataError


@runtime_checkable
class GeneratorBackend(Protocol):
    """Renders an image from a semantic map.

    Must be deterministic for fixed weights and return an image with the same
    height and width as the map. ``concurrent_safe`` advertises whether
    ``generate`` may be called from several workers at once.
    """

    label_spec: LabelSpec
    concurrent_safe: bool

    def generate(self, sem: np.ndarray) -> np.ndarray: ...


class ToyGenerator:
    """Palette color plus a per-class oriented grating.

    The texture at a pixel depends only on its class and absolute coordinates,
    so changing the label of a region changes the rendering only inside it.
    """

    concurrent_safe = True

    def __init__(self, spec: LabelSpec, style_seed: int = 0, amplitude: float = 0.06, period: float = 6.0):
        self.label_spec = spec
        self.style_seed = int(style_seed)
        self.amplitude = float(amplitude)
        self.period = float(period)
        rng = np.random.default_rng(self.style_seed)
        n = spec.num_classes
        # Evenly spread orientations, randomly assigned to classes.
        self.angles = rng.permutation(n) * (np.pi / n)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
        self._palette = spec.palette()

    def texture(self, class_id: int, h: int, w: int) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        a = self.angles[class_id]
        u = xx * np.cos(a) + yy * np.sin(a)
        return self.amplitude * np.sin(2.0 * np.pi * u / self.period + self.phases[class_id])

    def generate(self, sem: np.ndarray) -> np.ndarray:
        sem = check_semantic(sem, self.label_spec)
        h, w = sem.shape
        out = np.zeros((h, w, 3))
        for c in np.unique(sem):
            if c == self.label_spec.void_id:
                continue
            m = sem == c
            tex = self.texture(int(c), h, w)[m]
            out[m] = self._palette[c] + tex[:, None]
        return np.clip(out, 0.0, 1.0)


def toy_generator(spec: LabelSpec, style_seed: int = 0, amplitude: float = 0.06) -> ToyGenerator:
    return ToyGenerator(spec, style_seed=style_seed, amplitude=amplitude)


@dataclass(frozen=True)
class SwapRecord:
    instance_id: int
    old_class: int
    new_class: int
    pixel_count: int


@dataclass(frozen=True)
class TrainingPair:
    id: str
    image: np.ndarray
    resynth: np.ndarray
    altered_sem: np.ndarray
    target: np.ndarray
    swaps: tuple[SwapRecord, ...] = field(default_factory=tuple)


def swap_instance_labels(
    sem: np.ndarray,
    inst: np.ndarray,
    spec: LabelSpec,
    swap_prob: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, list[SwapRecord]]:
    """Relabel randomly chosen foreground instances with another known class.

    Each foreground instance (in increasing id order) is selected with
    probability ``swap_prob``; a selected one gets a class drawn uniformly from
    the known classes minus its own. Returns the altered map, a mask that is
    ANOMALY exactly on swapped pixels, and one record per swap.
    """
    if not 0.0 < swap_prob <= 1.0:
        raise ValueError(f"swap_prob must be in (0, 1], got {swap_prob}")
    if spec.num_classes < 2:
        raise ValueError("need at least two known classes to swap labels")
    sem = np.asarray(sem, dtype=np.int64)
    inst = np.asarray(inst, dtype=np.int64)
    if sem.shape != inst.shape:
        raise DataError("semantic and instance maps differ in shape")

    altered = sem.copy()
    mask = np.full(sem.shape, NORMAL, dtype=np.uint8)
    records: list[SwapRecord] = []
    fg = set(spec.foreground_ids.tolist())
    ids = np.unique(inst)
    for iid in ids[ids > 0]:
        pix = inst == iid
        old = int(sem[pix][0])
        if old not in fg:
            continue
        # Draw for every foreground instance so the stream stays aligned.
        u = rng.random()
        choice = int(rng.integers(spec.num_classes - 1))
        if u >= swap_prob:
            continue
        new = choice if choice < old else choice + 1
        altered[pix] = new
        mask[pix] = ANOMALY
        records.append(SwapRecord(int(iid), old, new, int(pix.sum())))
    return altered, mask, records


def build_training_pair(
    sample: Sample,
    gen: GeneratorBackend,
    spec: LabelSpec,
    swap_prob: float,
    rng: np.random.Generator,
) -> TrainingPair:
    if sample.semantic is None or sample.instances is None:
        raise DataError(f"{sample.id}: training pairs need semantic and instance maps")
    altered, mask, records = swap_instance_labels(sample.semantic, sample.instances, spec, swap_prob, rng)
    target = mask.copy()
    target[altered == spec.void_id] = IGNORE
    resynth = gen.generate(altered)
    return TrainingPair(sample.id, sample.image, resynth, altered, target, tuple(records))


# -- pair directory layout -------------------------------------------------------
#
# <root>/<id>/image.png resynth.png altered_labels.png target.png swaps.json

def save_pair(pair: TrainingPair, root) -> Path:
    d = Path(root) / pair.id
    d.mkdir(parents=True, exist_ok=True)
    save_image(pair.image, d / "image.png")
    save_image(pair.resynth, d / "resynth.png")
    save_raster(pair.altered_sem, d / "altered_labels.png")
    save_mask(pair.target, d / "target.png")
    (d / "swaps.json").write_text(json.dumps([asdict(r) for r in pair.swaps]))
    return d


def load_pair(d) -> TrainingPair:
    d = Path(d)
    swaps = tuple(SwapRecord(**r) for r in json.loads((d / "swaps.json").read_text()))
    return TrainingPair(
        d.name,
        load_image(d / "image.png"),
        load_image(d / "resynth.png"),
        load_raster(d / "altered_labels.png"),
        load_raster(d / "target.png").astype(np.uint8),
        swaps,
    )


def load_pairs(root) -> list[TrainingPair]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"pair directory does not exist: {root}")
    dirs = sorted(p for p in root.iterdir() if (p / "swaps.json").is_file())
    if not dirs:
        raise DataError(f"no training pairs found in {root}")
    return [load_pair(p) for p in dirs]
