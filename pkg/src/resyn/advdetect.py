"""Adversarial attacks on segmenters and their detection by resynthesis.

The attack is an iterative dense targeted attack: at every step only pixels
not yet converted to their target label contribute to the objective
``sum(logit[target] - logit[pred])``, and the image moves by a signed gradient
step, projected back into an L-inf ball around the original and into [0, 1].

Detection compares HOG descriptors of an image and of its resynthesis from
the predicted labels; a 1-D logistic regression on the distance decides.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import kernels
from ._torchio import image_to_tensor
from .datamodel import LabelSpec, check_image, check_semantic
from .errors import CapabilityError, ConfigError, DataError
from .evalharness import auroc, roc_from_pooled
from .segmentation import SegmentationBackend, predict_labels
from .synthesis import GeneratorBackend


class TargetKind(str, enum.Enum):
    SHIFT = "shift"
    PURE = "pure"


@dataclass(frozen=True)
class AttackConfig:
    max_iter: int = 200
    step_linf: float = 0.05
    total_linf_budget: float = 0.05
    target_kind: TargetKind = TargetKind.SHIFT
    shift_offset: int = 1
    pure_label: Optional[int] = None  # None: drawn at random per image

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not (self.step_linf > 0 and self.total_linf_budget > 0):
            raise ConfigError("attack step and budget must be positive")
        object.__setattr__(self, "target_kind", TargetKind(self.target_kind))


def make_shift_target(pred: np.ndarray, offset: int, spec: LabelSpec) -> np.ndarray:
    pred = check_semantic(pred, spec)
    c = spec.num_classes
    if offset % c == 0:
        raise ConfigError(f"offset {offset} is a multiple of {c} classes and changes nothing")
    void = pred == spec.void_id
    return np.where(void, pred, (pred + offset) % c).astype(np.int64)


def make_pure_target(h: int, w: int, label: int, spec: LabelSpec) -> np.ndarray:
    if label not in spec.known_ids:
        raise ConfigError(f"pure target label {label} is not a known class")
    return np.full((h, w), int(label), dtype=np.int64)


@dataclass(frozen=True)
class AttackResult:
    image: np.ndarray
    iterations_used: int
    success_rate: float
    linf_norm: float


def _project(adv: np.ndarray, balls, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Clamp into the intersection of L-inf balls ``(center, radius)`` and [lo, hi].

    ``center +- radius`` is rounded in float64, so values that still violate a
    bound are nudged inward one ulp at a time until every bound holds exactly.
    """
    for center, radius in balls:
        adv = np.clip(adv, center - radius, center + radius)
    adv = np.clip(adv, lo, hi)
    for _ in range(16):
        bad = False
        for center, radius in balls:
            up = adv - center > radius
            down = center - adv > radius
            if up.any() or down.any():
                bad = True
                adv[up] = np.nextafter(adv[up], -np.inf)
                adv[down] = np.nextafter(adv[down], np.inf)
        if not bad:
            break
    return adv


def dag_attack(image: np.ndarray, backend: SegmentationBackend, target: np.ndarray,
               cfg: AttackConfig = AttackConfig()) -> AttackResult:
    if not getattr(backend.capabilities, "gradient_access", False):
        raise CapabilityError("the attack needs a backend with gradient access")
    orig = check_image(image).astype(np.float64)
    spec = backend.label_spec
    target = check_semantic(target, spec)
    if target.shape != orig.shape[:2]:
        raise DataError(f"target {target.shape} does not match image {orig.shape[:2]}")
    valid = torch.from_numpy(target != spec.void_id)
    tgt = torch.from_numpy(np.where(target == spec.void_id, 0, target))
    n_valid = int(valid.sum())
    adv = orig.copy()

    def predict(x):
        t = image_to_tensor(x).requires_grad_(True)
        logits = backend.logits_torch(t)[0]
        return t, logits, logits.argmax(0)

    iters = 0
    while True:
        t, logits, pred = predict(adv)
        active = (pred != tgt) & valid
        if not bool(active.any()) or iters == cfg.max_iter:
            break
        picked_t = logits.gather(0, tgt[None])[0]
        picked_p = logits.gather(0, pred[None])[0]
        obj = ((picked_t - picked_p) * active).sum()
        (grad,) = torch.autograd.grad(obj, t)
        step = np.sign(grad[0].permute(1, 2, 0).double().numpy())
        adv = _project(adv + cfg.step_linf * step, [(adv, cfg.step_linf), (orig, cfg.total_linf_budget)])
        iters += 1
    success = float(((pred == tgt) & valid).sum()) / max(n_valid, 1) if n_valid else 1.0
    return AttackResult(adv, iters, success, float(np.max(np.abs(adv - orig))))


def attack_target(pred: np.ndarray, cfg: AttackConfig, spec: LabelSpec, rng: np.random.Generator) -> np.ndarray:
    if cfg.target_kind is TargetKind.SHIFT:
        return make_shift_target(pred, cfg.shift_offset, spec)
    label = cfg.pure_label
    if label is None:
        label = int(rng.choice(spec.known_ids))
    return make_pure_target(*pred.shape, label, spec)


# -- HOG -----------------------------------------------------------------------

@dataclass(frozen=True)
class HogConfig:
    cell: int = 8
    block: int = 2
    bins: int = 9
    clip: float = 0.2
    eps: float = 1e-5


LUMA = np.array([0.2125, 0.7154, 0.0721])


def luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image if image.ndim == 2 else image @ LUMA


def hog_features(image: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Unsigned-orientation HOG with L2-Hys block normalisation, flattened."""
    lum = luminance(image)
    h, w = lum.shape
    side = cfg.cell * cfg.block
    if h < side or w < side:
        raise DataError(f"image {h}x{w} is smaller than one {side}x{side} block")
    gy = np.zeros_like(lum)
    gx = np.zeros_like(lum)
    gy[1:-1] = lum[2:] - lum[:-2]
    gx[:, 1:-1] = lum[:, 2:] - lum[:, :-2]
    hc, wc = (h // cfg.cell) * cfg.cell, (w // cfg.cell) * cfg.cell
    gy, gx = gy[:hc, :wc], gx[:hc, :wc]
    magnitude = np.hypot(gy, gx)
    orientation = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    hist = kernels.hog_cell_histograms(np.ascontiguousarray(magnitude), np.ascontiguousarray(orientation),
                                       cfg.cell, cfg.bins)
    return kernels.hog_blocks(hist, cfg.block, cfg.clip, cfg.eps).ravel()


def hog_distance(a: np.ndarray, b: np.ndarray, cfg: HogConfig = HogConfig()) -> float:
    return float(np.linalg.norm(hog_features(a, cfg) - hog_features(b, cfg)))


def resynth_distance(image: np.ndarray, backend: SegmentationBackend, gen: GeneratorBackend,
                     cfg: HogConfig = HogConfig()) -> float:
    resynth = gen.generate(predict_labels(backend, image))
    if resynth.shape != np.shape(image):
        raise DataError(f"resynthesis {resynth.shape} does not match image {np.shape(image)}")
    return hog_distance(image, resynth, cfg)


# -- logistic detector ---------------------------------------------------------

@dataclass(frozen=True)
class LogisticDetector:
    weight: float
    bias: float
    threshold: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.weight) and np.isfinite(self.bias)):
            raise DataError("detector parameters must be finite")

    def prob(self, d) -> np.ndarray:
        z = self.weight * np.asarray(d, dtype=np.float64) + self.bias
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def predict(self, d) -> np.ndarray:
        return self.prob(d) >= self.threshold

    def to_json(self) -> str:
        return json.dumps({"weight": self.weight, "bias": self.bias}, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LogisticDetector":
        d = json.loads(text)
        return cls(float(d["weight"]), float(d["bias"]))


def fit_logistic(x: np.ndarray, y: np.ndarray, ridge: float = 1e-4, tol: float = 1e-12,
                 max_iter: int = 200) -> LogisticDetector:
    """Newton iterations on the (slightly ridge-penalised) mean log-loss.

    The ridge term keeps separable data from driving the weight to infinity.
    Inputs are standardized internally and the result mapped back.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu, sd = x.mean(), x.std()
    sd = sd if sd > 0 else 1.0
    z = (x - mu) / sd
    a = np.stack([z, np.ones_like(z)], axis=1)
    theta = np.zeros(2)
    reg = np.diag([ridge, 0.0])
    for _ in range(max_iter):
        p = 0.5 * (1.0 + np.tanh(0.5 * (a @ theta)))
        grad = a.T @ (p - y) / len(y) + reg @ theta
        hess = (a.T * (p * (1 - p))) @ a / len(y) + reg + 1e-12 * np.eye(2)
        delta = np.linalg.solve(hess, grad)
        theta -= delta
        if np.max(np.abs(delta)) < tol:
            break
    w = theta[0] / sd
    return LogisticDetector(float(w), float(theta[1] - w * mu))


@dataclass(frozen=True)
class DetectorMetrics:
    train_accuracy: float
    test_accuracy: float
    test_auroc: float
    n_train_pairs: int
    n_test_pairs: int
    test_indices: tuple


def paired_split(n: int, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise DataError(f"a {train_fraction:.2f} split of {n} pairs leaves one side empty")
    order = rng.permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def fit_detector(distances_clean: Sequence[float], distances_adv: Sequence[float], train_fraction: float = 0.8,
                 rng: Optional[np.random.Generator] = None) -> tuple[LogisticDetector, DetectorMetrics]:
    """Fit on a random paired split; a clean sample and its attacked copy share a side."""
    dc = np.asarray(distances_clean, dtype=np.float64)
    da = np.asarray(distances_adv, dtype=np.float64)
    if len(dc) == 0 or len(da) == 0:
        raise DataError("need clean and attacked distances")
    if len(dc) != len(da):
        raise DataError("clean and attacked distances must be paired")
    rng = rng if rng is not None else np.random.default_rng(0)
    tr, te = paired_split(len(dc), train_fraction, rng)

    def xy(idx):
        return np.concatenate([dc[idx], da[idx]]), np.concatenate([np.zeros(len(idx)), np.ones(len(idx))])

    xtr, ytr = xy(tr)
    xte, yte = xy(te)
    det = fit_logistic(xtr, ytr)
    metrics = DetectorMetrics(
        float(np.mean(det.predict(xtr) == ytr)),
        float(np.mean(det.predict(xte) == yte)),
        auroc(roc_from_pooled(det.prob(xte), yte.astype(bool))),
        len(tr), len(te), tuple(int(i) for i in te),
    )
    return det, metrics


# -- spatial consistency baseline ---------------------------------------------

def overlap_miou(a: np.ndarray, b: np.ndarray) -> float:
    """Mean IoU over classes present in either map."""
    classes = np.union1d(np.unique(a), np.unique(b))
    ious = [np.sum((a == c) & (b == c)) / np.sum((a == c) | (b == c)) for c in classes]
    return float(np.mean(ious))


def sc_score(image: np.ndarray, backend: SegmentationBackend, n_pairs: int = 50, patch: int = 256,
             rng: Optional[np.random.Generator] = None) -> float:
    """Mean overlap mIoU of independently segmented random overlapping crops (low = suspicious)."""
    image = check_image(image)
    h, w = image.shape[:2]
    if h < patch or w < patch:
        raise DataError(f"image {h}x{w} is smaller than the {patch}x{patch} crop")
    rng = rng if rng is not None else np.random.default_rng(0)

    def second(p, n):
        lo, hi = max(0, p - patch + 1), min(n - patch, p + patch - 1)
        return int(rng.integers(lo, hi + 1))

    scores = []
    for _ in range(n_pairs):
        y1, x1 = int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))
        y2, x2 = second(y1, h), second(x1, w)
        p1 = predict_labels(backend, image[y1:y1 + patch, x1:x1 + patch])
        p2 = predict_labels(backend, image[y2:y2 + patch, x2:x2 + patch])
        oy0, oy1 = max(y1, y2), min(y1, y2) + patch
        ox0, ox1 = max(x1, x2), min(x1, x2) + patch
        a = p1[oy0 - y1:oy1 - y1, ox0 - x1:ox1 - x1]
        b = p2[oy0 - y2:oy1 - y2, ox0 - x2:ox1 - x2]
        scores.append(overlap_miou(a, b))
    return float(np.mean(scores))


# -- per-image records ---------------------------------------------------------

ATTACK_FIELDS = ("id", "target_kind", "iterations_used", "success_rate", "linf_norm", "hog_distance")


@dataclass(frozen=True)
class AttackRecord:
    id: str
    target_kind: str  # "clean" for the unattacked counterpart
    iterations_used: int
    success_rate: float
    linf_norm: float
    hog_distance: float


def write_attack_csv(records: Sequence[AttackRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ATTACK_FIELDS)
        for r in records:
            d = asdict(r)
            w.writerow([d["id"], d["target_kind"], d["iterations_used"], repr(d["success_rate"]),
                        repr(d["linf_norm"]), repr(d["hog_distance"])])


def read_attack_csv(path) -> list[AttackRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing attack record file: {path}")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [AttackRecord(r["id"], r["target_kind"], int(r["iterations_used"]), float(r["success_rate"]),
                         float(r["linf_norm"]), float(r["hog_distance"])) for r in rows]
