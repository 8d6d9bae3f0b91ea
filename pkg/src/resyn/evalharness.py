"""Pooled per-pixel ROC / AUROC evaluation and report files."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .datamodel import ANOMALY, IGNORE, NORMAL, check_score_map
from .errors import DataError


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; first entry is +inf
    fpr: np.ndarray
    tpr: np.ndarray
    positives: int
    negatives: int


def pool_pixels(scores: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                rois: Optional[Sequence[np.ndarray]] = None) -> tuple[np.ndarray, np.ndarray]:
    """Flatten valid pixels (roi true, mask not IGNORE) into (scores, is_anomaly)."""
    if len(scores) != len(masks) or (rois is not None and len(rois) != len(scores)):
        raise DataError("scores, masks and rois must be aligned lists")
    s_out, y_out = [], []
    for i, (s, m) in enumerate(zip(scores, masks)):
        s = check_score_map(s)
        m = np.asarray(m)
        if s.shape != m.shape:
            raise DataError(f"sample {i}: score map {s.shape} vs mask {m.shape}")
        valid = m != IGNORE
        if rois is not None:
            r = np.asarray(rois[i], dtype=bool)
            if r.shape != m.shape:
                raise DataError(f"sample {i}: roi {r.shape} vs mask {m.shape}")
            valid &= r
        s_out.append(s[valid])
        y_out.append(m[valid] == ANOMALY)
    return np.concatenate(s_out), np.concatenate(y_out)


def roc_from_pooled(scores: np.ndarray, labels: np.ndarray, bins: Optional[int] = None) -> RocCurve:
    """ROC over distinct score values (or ``bins`` equal-width quantisation levels)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = int(labels.sum())
    neg = int(labels.size - pos)
    if pos == 0:
        raise DataError("no anomalous (positive) pixels in the evaluation region")
    if neg == 0:
        raise DataError("no normal (negative) pixels in the evaluation region")
    if bins is not None:
        lo, hi = scores.min(), scores.max()
        if hi > lo:
            scores = np.floor((scores - lo) / (hi - lo) * (bins - 1) + 0.5)
    order = np.argsort(-scores, kind="stable")
    thr, tp, fp = kernels.roc_counts(scores[order], labels[order])
    thresholds = np.concatenate([[np.inf], thr])
    tpr = np.concatenate([[0.0], tp / pos])
    fpr = np.concatenate([[0.0], fp / neg])
    return RocCurve(thresholds, fpr, tpr, pos, neg)


def roc_curve(scores: Sequence[np.ndarray], masks: Sequence[np.ndarray],
              rois: Optional[Sequence[np.ndarray]] = None, bins: Optional[int] = None) -> RocCurve:
    s, y = pool_pixels(scores, masks, rois)
    return roc_from_pooled(s, y, bins)


def auroc(curve: RocCurve) -> float:
    """Trapezoidal area; equals P(pos > neg) + P(pos == neg) / 2 over pooled pixels."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def road_only_roi(mask: np.ndarray, freespace: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    freespace = np.asarray(freespace, dtype=bool)
    if mask.shape != freespace.shape:
        raise DataError(f"mask {mask.shape} and freespace {freespace.shape} differ in shape")
    return (mask == ANOMALY) | freespace


@dataclass(frozen=True)
class EvalReport:
    method: str
    dataset: str
    roi_mode: str
    auroc: float
    curve: RocCurve
    config_hash: str = ""

    @property
    def stem(self) -> str:
        return f"{self.dataset}_{self.method}_{self.roi_mode}"

    def summary(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "roi": self.roi_mode,
            "auroc": self.auroc,
            "positives": self.curve.positives,
            "negatives": self.curve.negatives,
            "config_hash": self.config_hash,
        }


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_curve_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, x, y in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    a = np.array([[float(v) for v in r] for r in rows])
    return a[:, 0], a[:, 1], a[:, 2]


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def roc_svg(reports: Sequence[EvalReport], title: str = "") -> str:
    """Minimal hand-written SVG so output bytes depend only on the curves."""
    size, pad = 360, 40
    span = size - 2 * pad

    def pt(x, y):
        return f"{pad + x * span:.2f},{pad + (1.0 - y) * span:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(reports)}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<polyline points="{pt(0, 0)} {pt(1, 1)}" fill="none" stroke="#bbbbbb" stroke-dasharray="4"/>',
        f'<text x="{size / 2}" y="{pad - 15}" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="11">false positive rate</text>',
        f'<text x="12" y="{size / 2}" font-size="11" transform="rotate(-90 12 {size / 2})" '
        f'text-anchor="middle">true positive rate</text>',
    ]
    for k, r in enumerate(reports):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(pt(x, y) for x, y in zip(r.curve.fpr, r.curve.tpr))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad}" y="{size + 20 * k + 5}" font-size="12" fill="{color}">'
                     f'{r.method} (AUROC {r.auroc:.4f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create report directory {out}: {e}") from e
    csv_path = out / f"{report.stem}.csv"
    json_path = out / f"{report.stem}.json"
    svg_path = out / f"{report.stem}.svg"
    write_curve_csv(report.curve, csv_path)
    json_path.write_text(json.dumps(report.summary(), indent=1, sort_keys=True) + "\n")
    svg_path.write_text(roc_svg([report], f"{report.dataset} ({report.roi_mode})"))
    return [csv_path, json_path, svg_path]


def emit_combined(reports: Sequence[EvalReport], out_dir) -> Path:
    """One SVG with a labelled curve per method (all reports share dataset and roi)."""
    if not reports:
        raise ValueError("no reports to combine")
    r0 = reports[0]
    path = Path(out_dir) / f"{r0.dataset}_combined_{r0.roi_mode}.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(roc_svg(reports, f"{r0.dataset} ({r0.roi_mode})"))
    return path


def evaluate(method: str, dataset: str, roi_mode: str, scores, masks, rois=None, cfg_hash: str = "",
             bins: Optional[int] = None) -> EvalReport:
    curve = roc_curve(scores, masks, rois, bins)
    return EvalReport(method, dataset, roi_mode, auroc(curve), curve, cfg_hash)


__all__ = [
    "ANOMALY", "NORMAL", "IGNORE", "RocCurve", "EvalReport", "pool_pixels", "roc_from_pooled", "roc_curve",
    "auroc", "road_only_roi", "emit_report", "emit_combined", "evaluate", "config_hash", "read_curve_csv",
]
