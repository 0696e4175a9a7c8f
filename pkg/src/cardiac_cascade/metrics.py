"""Segmentation and classification metrics.

Masks are boolean arrays of equal shape.  Hausdorff distances are measured
between voxel centres, scaled by spacing, and are ``nan`` ("undefined") when
either mask is empty.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .volume import (
    INFARCTION,
    LESION,
    NO_REFLOW,
    WHOLE_LV,
    LabelMap,
    Spacing,
    label_mask,
    voxel_volume,
)

MYOCARDIUM_WITH_LESIONS = frozenset({2, 3, 4})
MYOCARDIUM_HEALTHY = frozenset({2})

# target name -> label set; "myocardium" can be swapped for MYOCARDIUM_HEALTHY
DEFAULT_TARGETS = {
    "myocardium": MYOCARDIUM_WITH_LESIONS,
    "infarction": frozenset({INFARCTION}),
    "no_reflow": frozenset({NO_REFLOW}),
    "whole_lv": WHOLE_LV,
    "lesion": LESION,
}
# targets reported with a volume-difference ratio
RATIO_TARGETS = ("infarction", "no_reflow", "lesion")


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice(pred, gt) -> float:
    """``2|A & B| / (|A| + |B|)``; 1.0 when both are empty."""
    pred, gt = _pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def sensitivity_specificity(pred, gt) -> tuple[float, float]:
    pred, gt = _pair(pred, gt)
    tp = int(np.logical_and(pred, gt).sum())
    fn = int(np.logical_and(~pred, gt).sum())
    tn = int(np.logical_and(~pred, ~gt).sum())
    fp = int(np.logical_and(pred, ~gt).sum())
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return sens, spec


def _directed(a, b, sampling) -> float:
    # distance from every voxel to the nearest voxel of b, read off at a
    dist = ndimage.distance_transform_edt(~b, sampling=sampling)
    return float(dist[a].max())


def hausdorff_mm(pred, gt, spacing: Spacing) -> float:
    """Symmetric Hausdorff distance in mm; ``nan`` if either mask is empty."""
    pred, gt = _pair(pred, gt)
    if not pred.any() or not gt.any():
        return math.nan
    sampling = spacing.as_tuple()[-pred.ndim:]
    return max(_directed(pred, gt, sampling), _directed(gt, pred, sampling))


def volumes(pred, gt, spacing: Spacing) -> tuple[float, float, float]:
    """``(V_pred, V_gt, |V_pred - V_gt|)`` in mm^3."""
    pred, gt = _pair(pred, gt)
    vox = voxel_volume(spacing)
    vp = int(pred.sum()) * vox
    vg = int(gt.sum()) * vox
    return vp, vg, abs(vp - vg)


def volume_diff_ratio(lesion_pred, lesion_gt, myo_total_gt, spacing: Spacing) -> float:
    """Absolute difference of lesion volume as a percentage of ground-truth myocardium."""
    lesion_pred, lesion_gt = _pair(lesion_pred, lesion_gt)
    myo = np.asarray(myo_total_gt, dtype=bool)
    if myo.shape != lesion_gt.shape:
        raise ValueError("myocardium mask shape differs from the lesion masks")
    if not myo.any():
        raise ValueError("myocardium mask is empty")
    vox = voxel_volume(spacing)
    v_myo = int(myo.sum()) * vox
    pct_pred = 100.0 * int(lesion_pred.sum()) * vox / v_myo
    pct_gt = 100.0 * int(lesion_gt.sum()) * vox / v_myo
    return abs(pct_pred - pct_gt)


def accuracy(predictions: Sequence, truths: Sequence) -> float:
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(truths)} truths")
    if not predictions:
        raise ValueError("accuracy of an empty list is undefined")
    return sum(p == t for p, t in zip(predictions, truths)) / len(predictions)


@dataclass(frozen=True)
class TargetMetrics:
    dice: float
    sensitivity: float
    specificity: float
    hausdorff_mm: float
    volume_pred_mm3: float
    volume_gt_mm3: float
    volume_diff_mm3: float
    volume_diff_ratio_pct: float


METRIC_FIELDS = tuple(TargetMetrics.__dataclass_fields__)


@dataclass(frozen=True)
class SegReport:
    case_id: str
    targets: dict[str, TargetMetrics]

    def rows(self) -> list[dict]:
        return [{"case_id": self.case_id, "target": name, **asdict(m)} for name, m in self.targets.items()]


def evaluate_case(pred: LabelMap, gt: LabelMap, case_id: str = "", targets: dict | None = None) -> SegReport:
    """Every metric for every target label set."""
    if pred.shape != gt.shape or pred.spacing != gt.spacing:
        raise ValueError(f"{case_id}: prediction and ground truth grids differ")
    targets = targets or DEFAULT_TARGETS
    myo_total = label_mask(gt, MYOCARDIUM_WITH_LESIONS)
    out = {}
    for name, labels in targets.items():
        p = label_mask(pred, labels)
        g = label_mask(gt, labels)
        sens, spec = sensitivity_specificity(p, g)
        vp, vg, dv = volumes(p, g, gt.spacing)
        ratio = math.nan
        if name in RATIO_TARGETS and myo_total.any():
            ratio = volume_diff_ratio(p, g, myo_total, gt.spacing)
        out[name] = TargetMetrics(
            dice=dice(p, g),
            sensitivity=sens,
            specificity=spec,
            hausdorff_mm=hausdorff_mm(p, g, gt.spacing),
            volume_pred_mm3=vp,
            volume_gt_mm3=vg,
            volume_diff_mm3=dv,
            volume_diff_ratio_pct=ratio,
        )
    return SegReport(case_id, out)


@dataclass(frozen=True)
class ClassReport:
    case_ids: list[str]
    predicted: list[str]
    truth: list[str]

    @property
    def accuracy(self) -> float:
        return accuracy(self.predicted, self.truth)


def _fmt(v: float) -> str:
    return "undefined" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def write_report_csv(reports: list[SegReport], path: str | Path) -> None:
    """One row per (case, target), sorted by case id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "target", *METRIC_FIELDS])
        for report in sorted(reports, key=lambda r: r.case_id):
            for row in report.rows():
                writer.writerow([row["case_id"], row["target"], *(_fmt(row[f]) for f in METRIC_FIELDS)])


def _mean_std(values: list[float]) -> dict:
    vals = np.array([v for v in values if not math.isnan(v)], dtype=np.float64)
    if vals.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}


def summarize(reports: list[SegReport], classes: ClassReport | None = None) -> dict:
    """Mean and std per target and metric; rates also as ``"xx.xx ± yy.yy"`` percentages.

    Undefined values (``nan``) are left out of the statistics.
    """
    reports = sorted(reports, key=lambda r: r.case_id)
    summary: dict = {"cases": len(reports), "targets": {}}
    names = list(reports[0].targets) if reports else []
    for name in names:
        entry = {}
        for f in METRIC_FIELDS:
            stats = _mean_std([getattr(r.targets[name], f) for r in reports])
            if stats["n"] and f in ("dice", "sensitivity", "specificity"):
                stats["percent"] = f"{100 * stats['mean']:.2f} ± {100 * stats['std']:.2f}"
            elif stats["n"]:
                stats["formatted"] = f"{stats['mean']:.2f} ± {stats['std']:.2f}"
            entry[f] = stats
        summary["targets"][name] = entry
    if classes is not None:
        summary["classification"] = {
            "accuracy": classes.accuracy,
            "cases": len(classes.case_ids),
            "correct": sum(p == t for p, t in zip(classes.predicted, classes.truth)),
        }
    return summary


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
