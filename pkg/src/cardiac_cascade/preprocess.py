"""Intensity normalisation and anisotropic resampling.

Images are resampled with a cubic spline in-plane and nearest neighbour
through-plane; label maps are resampled channel-wise on their one-hot
encoding (linear in-plane, nearest through-plane) and re-labelled by argmax.
Sample ``k`` of the output maps to source coordinate
``(k + 0.5) * new / old - 0.5`` (voxel centres aligned), borders are clamped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import NUM_LABELS, TARGET_SPACING, LabelMap, Spacing, Volume

RESAMPLE_THEN_ZSCORE = "resample,zscore"


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing: Spacing = field(default=TARGET_SPACING)
    zscore_epsilon: float = 1e-8

    def __post_init__(self):
        if not self.zscore_epsilon > 0:
            raise ValueError("zscore_epsilon must be > 0")


def zscore(image: Volume, epsilon: float = 1e-8) -> Volume:
    """Standardise intensities with the population mean and std."""
    x = image.data.astype(np.float64)
    mean = x.mean()
    std = x.std()
    out = (x - mean) / max(std, epsilon)
    return Volume(out, image.spacing)


def resampled_shape(shape, source: Spacing, target: Spacing) -> tuple[int, int, int]:
    """``round(n * old / new)`` per axis, at least 1."""
    out = []
    for n, old, new in zip(shape, source.as_tuple(), target.as_tuple()):
        out.append(max(1, int(round(n * old / new))))
    return tuple(out)


def _source_coords(n_out: int, n_in: int, old: float, new: float) -> np.ndarray:
    k = np.arange(n_out, dtype=np.float64)
    return (k + 0.5) * (new / old) - 0.5


def _nearest_index(n_out: int, n_in: int, old: float, new: float) -> np.ndarray:
    src = _source_coords(n_out, n_in, old, new)
    return np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_in - 1)


def _resample_plane(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray, order: int) -> np.ndarray:
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(
        plane, [yy, xx], order=order, mode="nearest", prefilter=order > 1
    )


def _resample_array(
    data: np.ndarray,
    source: Spacing,
    target: Spacing,
    order: int,
    out_shape: tuple[int, int, int] | None,
) -> np.ndarray:
    """Nearest along Z, spline of ``order`` in (Y, X); untouched axes are copied."""
    nz, ny, nx = data.shape
    oz, oy, ox = out_shape if out_shape is not None else resampled_shape(data.shape, source, target)
    if oz == nz and source.dz == target.dz:
        zi = np.arange(nz)
    else:
        zi = _nearest_index(oz, nz, source.dz, target.dz)
    data = data[zi]
    if (oy, ox) == (ny, nx) and (source.dy, source.dx) == (target.dy, target.dx):
        return data.copy()
    ys = _source_coords(oy, ny, source.dy, target.dy)
    xs = _source_coords(ox, nx, source.dx, target.dx)
    out = np.empty((oz, oy, ox), dtype=np.float64)
    for z in range(oz):
        out[z] = _resample_plane(data[z].astype(np.float64), ys, xs, order)
    return out


def resample_image(
    image: Volume, target: Spacing, out_shape: tuple[int, int, int] | None = None
) -> Volume:
    """Resample an image to ``target`` spacing (cubic in-plane, nearest in Z)."""
    out = _resample_array(image.data, image.spacing, target, 3, out_shape)
    return Volume(out, target)


def resample_onehot(
    channels: np.ndarray,
    source: Spacing,
    target: Spacing,
    out_shape: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Resample a (C, Z, Y, X) stack of class channels, linear in-plane."""
    return np.stack([
        _resample_array(ch, source, target, 1, out_shape) for ch in channels
    ])


def resample_label(
    labels: LabelMap, target: Spacing, out_shape: tuple[int, int, int] | None = None
) -> LabelMap:
    """One-hot resampling followed by argmax; ties go to the smallest label."""
    data = labels.data
    shape = out_shape if out_shape is not None else resampled_shape(data.shape, labels.spacing, target)
    present = [c for c in range(NUM_LABELS) if np.any(data == c)]
    if not present:
        return LabelMap(np.zeros(shape, dtype=np.uint8), target)
    onehot = np.stack([(data == c).astype(np.float64) for c in present])
    interp = resample_onehot(onehot, labels.spacing, target, shape)
    # absent channels are identically zero, so argmax over present ones suffices
    winner = np.argmax(interp, axis=0)
    return LabelMap(np.asarray(present, dtype=np.uint8)[winner], target)


def preprocess_image(image: Volume, config: PreprocessConfig | None = None) -> Volume:
    """Resample to the target spacing, then z-score."""
    config = config or PreprocessConfig()
    return zscore(resample_image(image, config.target_spacing), config.zscore_epsilon)


def preprocess_label(labels: LabelMap, config: PreprocessConfig | None = None) -> LabelMap:
    config = config or PreprocessConfig()
    return resample_label(labels, config.target_spacing)
