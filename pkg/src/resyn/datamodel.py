"""Core value types, label specifications, resizing and raster persistence.

Rasters are plain numpy arrays; the dataclasses here validate them once at
construction and then mark them read-only.

* image: ``(H, W, 3)`` float64 in ``[0, 1]``
* semantic map: ``(H, W)`` integer train ids or ``void_id``
* instance map: ``(H, W)`` non-negative integers, 0 = no instance
* anomaly mask: ``(H, W)`` uint8 in ``{NORMAL, ANOMALY, IGNORE}``
* score map: ``(H, W)`` finite float64, higher = more anomalous
* roi mask: ``(H, W)`` bool
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DataError

NORMAL = 0
ANOMALY = 1
IGNORE = 255


@dataclass(frozen=True)
class ClassDef:
    name: str
    train_id: int
    is_foreground: bool
    color: tuple[int, int, int]


@dataclass(frozen=True)
class LabelSpec:
    """Ordered set of known classes plus the void id."""

    classes: tuple[ClassDef, ...]
    void_id: int = 255

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        ids = sorted(c.train_id for c in self.classes)
        if ids != list(range(len(self.classes))):
            raise ValueError(f"train ids must be contiguous from 0, got {ids}")
        if 0 <= self.void_id < len(self.classes):
            raise ValueError(f"void_id {self.void_id} collides with a train id")
        if not any(c.is_foreground for c in self.classes):
            raise ValueError("at least one class must be foreground")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "classes", tuple(sorted(self.classes, key=lambda c: c.train_id)))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def known_ids(self) -> np.ndarray:
        return np.arange(self.num_classes)

    @property
    def foreground_ids(self) -> np.ndarray:
        return np.array([c.train_id for c in self.classes if c.is_foreground], dtype=np.int64)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.train_id
        raise KeyError(name)

    def palette(self) -> np.ndarray:
        """``(num_classes, 3)`` float colors in [0, 1]."""
        return np.array([c.color for c in self.classes], dtype=np.float64) / 255.0

    def to_dict(self) -> dict:
        return {
            "void_id": self.void_id,
            "classes": [
                {"name": c.name, "train_id": c.train_id, "is_foreground": c.is_foreground, "color": list(c.color)}
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpec":
        classes = tuple(
            ClassDef(c["name"], int(c["train_id"]), bool(c["is_foreground"]), tuple(int(v) for v in c["color"]))
            for c in d["classes"]
        )
        return cls(classes, int(d.get("void_id", 255)))


# Cityscapes train ids; "thing" classes are the foreground ones.
CITYSCAPES = LabelSpec((
    ClassDef("road", 0, False, (128, 64, 128)),
    ClassDef("sidewalk", 1, False, (244, 35, 232)),
    ClassDef("building", 2, False, (70, 70, 70)),
    ClassDef("wall", 3, False, (102, 102, 156)),
    ClassDef("fence", 4, False, (190, 153, 153)),
    ClassDef("pole", 5, False, (153, 153, 153)),
    ClassDef("traffic light", 6, False, (250, 170, 30)),
    ClassDef("traffic sign", 7, False, (220, 220, 0)),
    ClassDef("vegetation", 8, False, (107, 142, 35)),
    ClassDef("terrain", 9, False, (152, 251, 152)),
    ClassDef("sky", 10, False, (70, 130, 180)),
    ClassDef("person", 11, True, (220, 20, 60)),
    ClassDef("rider", 12, True, (255, 0, 0)),
    ClassDef("car", 13, True, (0, 0, 142)),
    ClassDef("truck", 14, True, (0, 0, 70)),
    ClassDef("bus", 15, True, (0, 60, 100)),
    ClassDef("train", 16, True, (0, 80, 100)),
    ClassDef("motorcycle", 17, True, (0, 0, 230)),
    ClassDef("bicycle", 18, True, (119, 11, 32)),
))

# Cityscapes raw label id -> train id (everything else is void).
CITYSCAPES_LABEL_TO_TRAIN = {
    7: 0, 8: 1, 11: 2, 12: 3, 13: 4, 17: 5, 19: 6, 20: 7, 21: 8, 22: 9, 23: 10,
    24: 11, 25: 12, 26: 13, 27: 14, 28: 15, 31: 16, 32: 17, 33: 18,
}

TOY = LabelSpec((
    ClassDef("road", 0, False, (128, 128, 128)),
    ClassDef("sky", 1, False, (90, 153, 230)),
    ClassDef("box", 2, True, (217, 51, 51)),
    ClassDef("blob", 3, True, (51, 191, 64)),
    ClassDef("post", 4, True, (242, 217, 51)),
))


# -- validation ----------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a = a.view()
    a.flags.writeable = False
    return a


def check_image(image) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"image must be HxWx3, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise DataError("image values must lie in [0, 1]")
    return a


def check_semantic(sem, spec: LabelSpec) -> np.ndarray:
    a = np.asarray(sem)
    if a.ndim != 2 or not np.issubdtype(a.dtype, np.integer):
        raise DataError(f"semantic map must be a 2-D integer array, got {a.dtype} {a.shape}")
    valid = (a >= 0) & (a < spec.num_classes) | (a == spec.void_id)
    if not valid.all():
        bad = np.unique(a[~valid])
        raise DataError(f"undeclared label values {bad.tolist()}")
    return a.astype(np.int64, copy=False)


def check_instances(inst, sem: Optional[np.ndarray] = None) -> np.ndarray:
    a = np.asarray(inst)
    if a.ndim != 2 or not np.issubdtype(a.dtype, np.integer) or (a.size and a.min() < 0):
        raise DataError("instance map must be a 2-D non-negative integer array")
    a = a.astype(np.int64, copy=False)
    if sem is not None:
        if sem.shape != a.shape:
            raise DataError("instance and semantic maps differ in shape")
        nz = a > 0
        ids, first = np.unique(a[nz], return_index=True)
        cls_first = sem[nz][first]
        lookup = np.zeros(int(a.max()) + 1 if a.size else 1, dtype=np.int64)
        lookup[ids] = cls_first
        if np.any(lookup[a[nz]] != sem[nz]):
            raise DataError("an instance spans more than one semantic class")
    return a


def check_anomaly_mask(mask) -> np.ndarray:
    a = np.asarray(mask)
    if a.ndim != 2:
        raise DataError("anomaly mask must be 2-D")
    if not np.isin(a, (NORMAL, ANOMALY, IGNORE)).all():
        raise DataError("anomaly mask may only contain 0, 1 and 255")
    return a.astype(np.uint8, copy=False)


def check_score_map(scores) -> np.ndarray:
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 2:
        raise DataError("score map must be 2-D")
    if not np.all(np.isfinite(a)):
        raise DataError("score map contains NaN or Inf")
    return a


@dataclass(frozen=True)
class Sample:
    """One image with whatever ground truth is available.

    ``freespace`` is only used to build the road-only evaluation region.
    """

    id: str
    image: np.ndarray
    semantic: Optional[np.ndarray] = None
    instances: Optional[np.ndarray] = None
    anomaly: Optional[np.ndarray] = None
    roi: Optional[np.ndarray] = None
    freespace: Optional[np.ndarray] = None
    spec: Optional[LabelSpec] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        img = check_image(self.image)
        hw = img.shape[:2]
        object.__setattr__(self, "image", _frozen(img))
        sem = None
        if self.semantic is not None:
            sem = check_semantic(self.semantic, self.spec) if self.spec else np.asarray(self.semantic, np.int64)
            object.__setattr__(self, "semantic", _frozen(sem))
        if self.instances is not None:
            object.__setattr__(self, "instances", _frozen(check_instances(self.instances, sem)))
        if self.anomaly is not None:
            object.__setattr__(self, "anomaly", _frozen(check_anomaly_mask(self.anomaly)))
        for name in ("roi", "freespace"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(np.asarray(v, dtype=bool)))
        for name in ("semantic", "instances", "anomaly", "roi", "freespace"):
            v = getattr(self, name)
            if v is not None and v.shape != hw:
                raise DataError(f"{self.id}: {name} has shape {v.shape}, image is {hw}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


# -- raster ops ----------------------------------------------------------------

def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.minimum(idx, n_in - 1)


def resize_labels(raster: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Nearest-neighbour resize; never introduces new values."""
    h, w = raster.shape[:2]
    return raster[_nearest_index(h, target_h)[:, None], _nearest_index(w, target_w)[None, :]]


def resize_image(image: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    h, w = image.shape[:2]
    if (h, w) == (target_h, target_w):
        return image.copy()
    chans = []
    for c in range(image.shape[2]):
        im = Image.fromarray(image[:, :, c].astype(np.float32), mode="F")
        chans.append(np.asarray(im.resize((target_w, target_h), Image.BILINEAR), dtype=np.float64))
    return np.clip(np.stack(chans, axis=-1), 0.0, 1.0)


def resize_sample(sample: Sample, target_w: int, target_h: int) -> Sample:
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target dims must be >= 1, got {target_w}x{target_h}")
    if (sample.height, sample.width) == (target_h, target_w):
        return sample
    kw = {"image": resize_image(sample.image, target_w, target_h)}
    for name in ("semantic", "instances", "anomaly", "roi", "freespace"):
        v = getattr(sample, name)
        if v is not None:
            kw[name] = resize_labels(v, target_w, target_h)
    return replace(sample, **kw)


def one_hot(sem: np.ndarray, spec: LabelSpec) -> np.ndarray:
    """``(H, W, C)`` float64 one-hot encoding; void pixels are all-zero."""
    sem = check_semantic(sem, spec)
    out = np.zeros(sem.shape + (spec.num_classes,), dtype=np.float64)
    known = sem != spec.void_id
    rows, cols = np.nonzero(known)
    out[rows, cols, sem[known]] = 1.0
    return out


def colorize(sem: np.ndarray, spec: LabelSpec) -> np.ndarray:
    """Palette rendering for visual inspection; void is black."""
    pal = np.vstack([spec.palette(), np.zeros((1, 3))])
    idx = np.where(sem == spec.void_id, spec.num_classes, sem)
    return pal[idx]


# -- persistence ---------------------------------------------------------------

def _read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as e:
        raise DataError(f"unreadable image {path}: {e}") from e


def save_image(image: np.ndarray, path) -> None:
    """8-bit RGB PNG."""
    a = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(a, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    a = _read_png(path)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    a = a[:, :, :3]
    scale = 65535.0 if a.dtype == np.uint16 else 255.0
    return a.astype(np.float64) / scale


def save_raster(raster: np.ndarray, path) -> None:
    """Integer raster as 8-bit PNG, or 16-bit when values exceed 255."""
    a = np.asarray(raster)
    if a.size and (a.min() < 0 or a.max() > 65535):
        raise DataError(f"raster values out of PNG range in {path}")
    if a.size and a.max() > 255:
        Image.fromarray(a.astype(np.uint16)).save(path)
    else:
        Image.fromarray(a.astype(np.uint8), mode="L").save(path)


def load_raster(path) -> np.ndarray:
    a = _read_png(path)
    if a.ndim != 2:
        raise DataError(f"expected a single-channel raster: {path}")
    return a.astype(np.int64)


def save_mask(mask: np.ndarray, path) -> None:
    """Anomaly or roi mask as 8-bit PNG (bool masks stored as 0/1)."""
    save_raster(np.asarray(mask).astype(np.uint8), path)


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_score_map(scores: np.ndarray, path) -> None:
    """16-bit PNG of scores linearly quantised over [min, max] + JSON sidecar."""
    s = check_score_map(scores)
    lo, hi = float(s.min()), float(s.max())
    if hi > lo:
        q = np.round((s - lo) / (hi - lo) * 65535.0)
    else:
        q = np.zeros_like(s)
    Image.fromarray(q.astype(np.uint16)).save(path)
    _sidecar(path).write_text(json.dumps({"min": lo, "max": hi}))


def load_score_map(path) -> np.ndarray:
    side = _sidecar(path)
    if not side.is_file():
        raise DataError(f"missing score-map sidecar: {side}")
    meta = json.loads(side.read_text())
    q = _read_png(path).astype(np.float64)
    lo, hi = float(meta["min"]), float(meta["max"])
    if hi == lo:
        return np.full(q.shape, lo)
    return lo + q / 65535.0 * (hi - lo)


# -- generic dataset layout ------------------------------------------------------
#
# root/
#   label_spec.json
#   images/<id>.png
#   semantic/<id>.png    instances/<id>.png    anomaly/<id>.png
#   roi/<id>.png         freespace/<id>.png

_OPTIONAL = ("semantic", "instances", "anomaly", "roi", "freespace")


def save_sample(sample: Sample, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    save_image(sample.image, root / "images" / f"{sample.id}.png")
    for name in _OPTIONAL:
        v = getattr(sample, name)
        if v is None:
            continue
        (root / name).mkdir(exist_ok=True)
        if name in ("roi", "freespace", "anomaly"):
            save_mask(v, root / name / f"{sample.id}.png")
        else:
            save_raster(v, root / name / f"{sample.id}.png")


def save_dataset(samples: Sequence[Sample], root, spec: LabelSpec) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "label_spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    for s in samples:
        save_sample(s, root)
