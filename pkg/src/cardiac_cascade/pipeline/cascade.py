"""Fold assignment, stage targets, ROI cropping, label composition, classification."""
from __future__ import annotations

from enum import Enum

import numpy as np

from ..volume import (
    BACKGROUND,
    INFARCTION,
    LV_CAVITY,
    MYOCARDIUM,
    NO_REFLOW,
    WHOLE_LV,
    BBox,
    LabelMap,
    ProbMap,
    Volume,
    label_mask,
)
from .records import CaseRecord, ClassifierRule, RoiSpec

# stage-2 class index -> final label
STAGE2_LABELS = np.array([BACKGROUND, INFARCTION, NO_REFLOW], dtype=np.uint8)


class Diagnosis(str, Enum):
    NORMAL = "normal"
    PATHOLOGICAL = "pathological"


def make_folds(cases: list[CaseRecord], k: int = 5, seed: int = 0) -> dict[str, int]:
    """Seeded, pathology-stratified assignment of case ids to ``k`` folds.

    Each stratum is shuffled and dealt round-robin; the dealer position carries
    over between strata so fold sizes differ by at most one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cases) < k:
        raise ValueError(f"need at least {k} cases for {k} folds, got {len(cases)}")
    ids = sorted(c.case_id for c in cases)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case ids")
    flag = {c.case_id: c.pathological for c in cases}
    strata: dict[object, list[str]] = {}
    for cid in ids:
        strata.setdefault(flag[cid], []).append(cid)
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    slot = 0
    # fixed stratum order: pathological, normal, unknown
    for key in (True, False, None):
        members = strata.get(key, [])
        for i in rng.permutation(len(members)):
            assignment[members[i]] = slot % k
            slot += 1
    return {cid: assignment[cid] for cid in ids}


def stage1_targets(labels: LabelMap, num_classes: int = 2) -> LabelMap:
    """Whole-LV target.

    ``num_classes=2``: 1 for any label in {1, 2, 3, 4}.  ``num_classes=3``:
    1 for the cavity, 2 for the myocardial wall including lesions.
    """
    if num_classes == 2:
        return LabelMap(label_mask(labels, WHOLE_LV).astype(np.uint8), labels.spacing)
    if num_classes == 3:
        lut = np.array([0, 1, 2, 2, 2], dtype=np.uint8)
        return LabelMap(lut[labels.data], labels.spacing)
    raise ValueError("stage 1 has 2 or 3 classes")


def stage2_targets(labels: LabelMap) -> np.ndarray:
    """0 background, 1 infarction, 2 no-reflow."""
    lut = np.array([0, 0, 0, 1, 2], dtype=np.uint8)
    return lut[labels.data]


def compute_roi(stage1_pred: LabelMap | np.ndarray, margin: int = 5) -> RoiSpec:
    """Bounding box of the foreground, grown by ``margin`` in-plane only.

    An empty prediction yields the full grid.
    """
    data = stage1_pred.data if isinstance(stage1_pred, LabelMap) else np.asarray(stage1_pred)
    if margin < 0:
        raise ValueError("margin must be >= 0")
    shape = tuple(data.shape)
    fg = np.argwhere(data != 0)
    if fg.size == 0:
        return RoiSpec(BBox.full(shape), margin, shape)
    lo = fg.min(axis=0)
    hi = fg.max(axis=0)
    box = BBox(
        int(lo[0]), int(hi[0]),
        max(0, int(lo[1]) - margin), min(shape[1] - 1, int(hi[1]) + margin),
        max(0, int(lo[2]) - margin), min(shape[2] - 1, int(hi[2]) + margin),
    )
    return RoiSpec(box, margin, shape)


def crop(grid, roi: RoiSpec):
    """Sub-grid copy of a Volume, LabelMap or bare array inside the ROI box."""
    data = grid.data if isinstance(grid, (Volume, LabelMap)) else np.asarray(grid)
    if tuple(data.shape[-3:]) != roi.source_shape:
        raise ValueError(f"roi built for {roi.source_shape}, grid is {data.shape}")
    sub = data[(Ellipsis, *roi.bbox.slices())].copy()
    if isinstance(grid, Volume):
        return Volume(sub, grid.spacing)
    if isinstance(grid, LabelMap):
        return LabelMap(sub, grid.spacing)
    return sub


def paste_back(sub: np.ndarray, roi: RoiSpec, fill=0, dtype=None) -> np.ndarray:
    """Place a cropped array back into a full grid of the source shape."""
    sub = np.asarray(sub)
    if tuple(sub.shape[-3:]) != roi.bbox.extent:
        raise ValueError("sub-grid does not match the roi extent")
    out = np.full(sub.shape[:-3] + roi.source_shape, fill, dtype=dtype or sub.dtype)
    out[(Ellipsis, *roi.bbox.slices())] = sub
    return out


def compose_final(stage1: ProbMap, stage2: ProbMap, roi: RoiSpec) -> LabelMap:
    """Merge stage-1 anatomy with stage-2 lesions.

    Stage-1 argmax gives {0, 1, 2} (a two-class stage 1 maps its foreground
    to myocardium).  Stage-2 infarction/no-reflow overwrite voxels inside the
    ROI that stage 1 marks as LV foreground.
    """
    s1 = stage1.argmax()
    if stage1.num_classes == 2:
        base = np.where(s1 == 1, MYOCARDIUM, BACKGROUND).astype(np.uint8)
    elif stage1.num_classes == 3:
        base = s1.astype(np.uint8)
    else:
        raise ValueError("stage-1 map must have 2 or 3 classes")
    if tuple(s1.shape) != roi.source_shape:
        raise ValueError("roi does not belong to the stage-1 grid")
    if tuple(stage2.shape[1:]) != roi.bbox.extent:
        raise ValueError(f"stage-2 grid {stage2.shape[1:]} does not match roi extent {roi.bbox.extent}")
    if stage2.num_classes != 3:
        raise ValueError("stage-2 map must have 3 classes")
    lesion = STAGE2_LABELS[stage2.argmax()]
    final = base.copy()
    window = final[roi.bbox.slices()]
    overwrite = (lesion != BACKGROUND) & np.isin(window, (LV_CAVITY, MYOCARDIUM))
    window[overwrite] = lesion[overwrite]
    return LabelMap(final, stage1.spacing)


def classify(final: LabelMap, rule: ClassifierRule | None = None) -> Diagnosis:
    """Pathological iff at least ``rule.min_voxels`` lesion voxels."""
    rule = rule or ClassifierRule()
    count = int(label_mask(final, rule.lesion_labels).sum())
    return Diagnosis.NORMAL if count < rule.min_voxels else Diagnosis.PATHOLOGICAL
