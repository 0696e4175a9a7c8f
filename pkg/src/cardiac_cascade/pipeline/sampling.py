"""2D patch sampling with foreground oversampling."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..volume import WHOLE_LV, label_mask
from .cascade import compute_roi, crop, stage1_targets, stage2_targets
from .records import CaseRecord, StageConfig

DEFAULT_ROI_MARGIN = 5


def stage_arrays(case: CaseRecord, stage: StageConfig, margin: int = DEFAULT_ROI_MARGIN):
    """Image and integer target arrays ``(Z, Y, X)`` a stage trains on.

    Stage 2 sees the ground-truth whole-LV ROI only.
    """
    if case.labels is None:
        raise ValueError(f"{case.case_id}: no ground truth to derive targets from")
    image = case.image.data
    if stage.stage == 1:
        return image, stage1_targets(case.labels, stage.num_classes).data
    roi = compute_roi(label_mask(case.labels, WHOLE_LV), margin)
    return crop(image, roi), crop(stage2_targets(case.labels), roi)


def _window_range(size: int, patch: int) -> tuple[int, int]:
    # inclusive range of window starts; negative starts pad the low side
    return min(0, size - patch), max(0, size - patch)


def _extract(arr: np.ndarray, z: int, y0: int, x0: int, patch: tuple[int, int]) -> np.ndarray:
    ph, pw = patch
    _, h, w = arr.shape
    out = np.zeros((ph, pw), dtype=arr.dtype)
    ys, ye = max(y0, 0), min(y0 + ph, h)
    xs, xe = max(x0, 0), min(x0 + pw, w)
    out[ys - y0:ye - y0, xs - x0:xe - x0] = arr[z, ys:ye, xs:xe]
    return out


def draw_patch(image, target, patch_size, rng: np.random.Generator, foreground_fraction=0.5,
               fg_index=None):
    """One ``(image_patch, target_patch)`` pair.

    With probability ``foreground_fraction`` (and if the target has any
    foreground) the window is placed to contain a random foreground voxel;
    otherwise slice and window are uniform.
    """
    nz, h, w = image.shape
    ph, pw = patch_size
    ylo, yhi = _window_range(h, ph)
    xlo, xhi = _window_range(w, pw)
    if fg_index is None:
        fg_index = np.flatnonzero(target)
    if fg_index.size and rng.uniform() < foreground_fraction:
        z, y, x = np.unravel_index(fg_index[rng.integers(fg_index.size)], target.shape)
        y0 = int(rng.integers(max(ylo, y - ph + 1), min(yhi, y) + 1))
        x0 = int(rng.integers(max(xlo, x - pw + 1), min(xhi, x) + 1))
    else:
        z = rng.integers(nz)
        y0 = int(rng.integers(ylo, yhi + 1))
        x0 = int(rng.integers(xlo, xhi + 1))
    return _extract(image, int(z), y0, x0, patch_size), _extract(target, int(z), y0, x0, patch_size)


def sample_patches(case: CaseRecord, stage: StageConfig, seed: int,
                   margin: int = DEFAULT_ROI_MARGIN) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless seeded stream of ``(image (1, H, W), target (H, W))`` patches from one case."""
    image, target = stage_arrays(case, stage, margin)
    fg_index = np.flatnonzero(target)
    rng = np.random.default_rng(seed)
    while True:
        img, tgt = draw_patch(image, target, stage.patch_size, rng, stage.foreground_fraction, fg_index)
        yield img[None], tgt
