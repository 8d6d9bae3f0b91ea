"""Dataset adapters: directory layouts -> lists of :class:`~resyn.datamodel.Sample`.

Three layouts are understood:

generic
    ``root/label_spec.json``, ``root/images/<id>.png`` and optional
    ``semantic/ instances/ anomaly/ roi/ freespace/`` rasters with the same stem
    (written by :func:`resyn.datamodel.save_dataset`).
cityscapes_like
    ``root/leftImg8bit/<split>/<city>/<stem>_leftImg8bit.png`` with
    ``root/gtFine/<split>/<city>/<stem>_gtFine_labelIds.png`` and optional
    ``..._gtFine_instanceIds.png``. Raw label ids are mapped to train ids.
lostandfound_like
    same image layout with ``root/gtCoarse/<split>/<seq>/<stem>_gtCoarse_labelIds.png``
    where 0 = unlabelled, 1 = free space and >= 2 = obstacle. Frames without
    annotation are skipped. An optional static ``root/roi.png`` (nonzero =
    valid) excludes the frame border and ego-vehicle.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .datamodel import (
    ANOMALY, CITYSCAPES, CITYSCAPES_LABEL_TO_TRAIN, NORMAL, LabelSpec, Sample, load_image, load_raster,
    resize_labels, resize_sample,
)
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    name: str
    spec: Optional[LabelSpec]
    samples: list[Sample]
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"malformed dataset layout, missing: {path}")
    return path


def _resized(samples, resize):
    if resize is None:
        return samples
    w, h = (int(v) for v in resize)
    return [resize_sample(s, w, h) for s in samples]


def adapter_generic(root, split: Optional[str] = None, spec: Optional[LabelSpec] = None,
                    resize=None) -> Dataset:
    root = Path(root) / split if split else Path(root)
    spec_path = root / "label_spec.json"
    if spec is None:
        spec = LabelSpec.from_dict(json.loads(_require(spec_path).read_text()))
    images = sorted(_require(root / "images").glob("*.png"))
    if not images:
        raise DataError(f"malformed dataset layout, no images in {root / 'images'}")
    samples = []
    for p in images:
        kw = {}
        for name in ("semantic", "instances", "anomaly", "roi", "freespace"):
            f = root / name / p.name
            if f.is_file():
                kw[name] = load_raster(f)
        if "anomaly" in kw:
            kw["anomaly"] = kw["anomaly"].astype(np.uint8)
        samples.append(Sample(p.stem, load_image(p), spec=spec, **kw))
    return Dataset(root.name, spec, _resized(samples, resize))


def _frames(root: Path, split: str):
    img_root = _require(root / "leftImg8bit" / split)
    frames = sorted(img_root.glob("*/*_leftImg8bit.png"))
    if not frames:
        raise DataError(f"malformed dataset layout, no *_leftImg8bit.png under {img_root}")
    for f in frames:
        yield f, f.parent.name, f.name[: -len("_leftImg8bit.png")]


def _cityscapes_instances(raw: np.ndarray, sem: np.ndarray, void_id: int) -> np.ndarray:
    # ids >= 1000 encode label_id * 1000 + k; smaller values carry no instance
    out = np.zeros(raw.shape, dtype=np.int64)
    ids = np.unique(raw[raw >= 1000])
    for k, v in enumerate(ids, 1):
        out[raw == v] = k
    out[sem == void_id] = 0
    return out


def adapter_cityscapes_like(root, split: str = "train", spec: LabelSpec = CITYSCAPES, resize=None,
                            label_map: Optional[dict] = None) -> Dataset:
    root = Path(root)
    label_map = CITYSCAPES_LABEL_TO_TRAIN if label_map is None else label_map
    lut = np.full(34, spec.void_id, dtype=np.int64)
    for raw_id, train_id in label_map.items():
        lut[raw_id] = train_id
    samples = []
    for img, city, stem in _frames(root, split):
        gt = root / "gtFine" / split / city
        raw = load_raster(_require(gt / f"{stem}_gtFine_labelIds.png"))
        if raw.max() >= len(lut):
            raise DataError(f"{stem}: undeclared label ids {np.unique(raw[raw >= len(lut)]).tolist()}")
        sem = lut[raw]
        inst_path = gt / f"{stem}_gtFine_instanceIds.png"
        inst = None
        if inst_path.is_file():
            inst = _cityscapes_instances(load_raster(inst_path), sem, spec.void_id)
        samples.append(Sample(stem, load_image(img), sem, inst, spec=spec))
    return Dataset(f"cityscapes_{split}", spec, _resized(samples, resize))


def adapter_lostandfound_like(root, split: str = "test", spec: Optional[LabelSpec] = None,
                              resize=None) -> Dataset:
    root = Path(root)
    roi_path = root / "roi.png"
    static_roi = load_raster(roi_path) > 0 if roi_path.is_file() else None
    samples, skipped = [], []
    for img, seq, stem in _frames(root, split):
        gt_path = root / "gtCoarse" / split / seq / f"{stem}_gtCoarse_labelIds.png"
        if not gt_path.is_file():
            log.warning("skipping %s: missing annotation %s", stem, gt_path)
            skipped.append(stem)
            continue
        gt = load_raster(gt_path)
        image = load_image(img)
        roi = static_roi
        if roi is not None and roi.shape != gt.shape:
            roi = resize_labels(roi, gt.shape[1], gt.shape[0])
        anomaly = np.where(gt >= 2, ANOMALY, NORMAL).astype(np.uint8)
        samples.append(Sample(stem, image, anomaly=anomaly, roi=roi, freespace=gt == 1, spec=spec))
    if skipped:
        log.warning("lost-and-found adapter skipped %d of %d frames", len(skipped), len(skipped) + len(samples))
    if not samples:
        raise DataError(f"no annotated frames under {root}")
    return Dataset(f"lostandfound_{split}", spec, _resized(samples, resize), skipped)


ADAPTERS: dict[str, Callable[..., Dataset]] = {
    "generic": adapter_generic,
    "cityscapes_like": adapter_cityscapes_like,
    "lostandfound_like": adapter_lostandfound_like,
}


def load_dataset(adapter: str, root, split: Optional[str] = None, spec: Optional[LabelSpec] = None,
                 resize=None) -> Dataset:
    if adapter not in ADAPTERS:
        raise ConfigError(f"unknown dataset adapter {adapter!r}; choose from {sorted(ADAPTERS)}")
    if root is None:
        raise ConfigError(f"no root path configured for the {adapter} adapter")
    kw = {"spec": spec, "resize": resize}
    if split is not None:
        kw["split"] = split
    elif adapter == "generic":
        kw["split"] = None
    if adapter == "cityscapes_like" and spec is None:
        kw.pop("spec")
    return ADAPTERS[adapter](root, **kw)
