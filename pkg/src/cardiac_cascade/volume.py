"""Grid data model and the MIV container format.

Grids are numpy arrays in (Z, Y, X) order, Z being the short-axis slice
stack.  A MIV file is::

    b"MIV1\\n" + <one-line JSON header> + b"\\n" + <little-endian payload>

with header fields ``shape``, ``spacing`` and ``dtype`` (``"f32"`` or ``"u8"``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

MIV_MAGIC = b"MIV1\n"

BACKGROUND = 0
LV_CAVITY = 1
MYOCARDIUM = 2
INFARCTION = 3
NO_REFLOW = 4
LABELS = (BACKGROUND, LV_CAVITY, MYOCARDIUM, INFARCTION, NO_REFLOW)
NUM_LABELS = len(LABELS)

WHOLE_LV = frozenset({LV_CAVITY, MYOCARDIUM, INFARCTION, NO_REFLOW})
LESION = frozenset({INFARCTION, NO_REFLOW})

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class MIVFormatError(ValueError):
    """Raised for malformed MIV files."""


class GridError(ValueError):
    """Raised when a grid violates its invariants."""


@dataclass(frozen=True)
class Spacing:
    """Voxel size in mm along (Z, Y, X)."""

    dz: float
    dy: float
    dx: float

    def __post_init__(self):
        for name in ("dz", "dy", "dx"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise GridError(f"spacing.{name} must be positive and finite, got {v!r}")

    @classmethod
    def of(cls, values: Iterable[float]) -> "Spacing":
        dz, dy, dx = (float(v) for v in values)
        return cls(dz, dy, dx)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dz, self.dy, self.dx)


TARGET_SPACING = Spacing(10.0, 1.458, 1.458)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar image on a (Z, Y, X) grid, held as float32."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise GridError(f"volume must be 3D, got shape {data.shape}")
        data = data.astype(np.float32, copy=False)
        if not np.all(np.isfinite(data)):
            raise GridError("volume contains non-finite intensities")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer label grid over {0..4}, stored as uint8."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise GridError(f"label map must be 3D, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() >= NUM_LABELS):
            raise GridError(f"label values must lie in 0..{NUM_LABELS - 1}")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8, copy=False)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Per-class probabilities, shape (C, Z, Y, X)."""

    data: np.ndarray
    spacing: Spacing
    tol: float = field(default=1e-5, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] < 1:
            raise GridError(f"probability map must be (C, Z, Y, X), got {data.shape}")
        if data.size:
            if data.min() < -self.tol or data.max() > 1 + self.tol:
                raise GridError("probabilities outside [0, 1]")
            if np.abs(data.sum(axis=0) - 1.0).max() > self.tol:
                raise GridError("class probabilities do not sum to 1")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.data, axis=0)


@dataclass(frozen=True)
class BBox:
    """Inclusive voxel bounds per axis."""

    z0: int
    z1: int
    y0: int
    y1: int
    x0: int
    x1: int

    def __post_init__(self):
        if self.z0 > self.z1 or self.y0 > self.y1 or self.x0 > self.x1:
            raise GridError(f"bbox lower bound exceeds upper bound: {self}")
        if min(self.z0, self.y0, self.x0) < 0:
            raise GridError(f"bbox has negative index: {self}")

    @classmethod
    def full(cls, shape: tuple[int, int, int]) -> "BBox":
        z, y, x = shape
        return cls(0, z - 1, 0, y - 1, 0, x - 1)

    @property
    def extent(self) -> tuple[int, int, int]:
        return (self.z1 - self.z0 + 1, self.y1 - self.y0 + 1, self.x1 - self.x0 + 1)

    def fits(self, shape: tuple[int, int, int]) -> bool:
        return self.z1 < shape[0] and self.y1 < shape[1] and self.x1 < shape[2]

    def slices(self) -> tuple[slice, slice, slice]:
        return (
            slice(self.z0, self.z1 + 1),
            slice(self.y0, self.y1 + 1),
            slice(self.x0, self.x1 + 1),
        )


Grid = Union[Volume, LabelMap]


def voxel_volume(spacing: Spacing) -> float:
    """Volume of one voxel in mm^3."""
    return spacing.dz * spacing.dy * spacing.dx


def label_mask(labels: LabelMap | np.ndarray, selected: Iterable[int]) -> np.ndarray:
    """Boolean mask of voxels whose label is in ``selected``."""
    data = labels.data if isinstance(labels, LabelMap) else np.asarray(labels)
    selected = sorted(set(int(s) for s in selected))
    bad = [s for s in selected if s not in LABELS]
    if bad:
        raise GridError(f"unknown labels {bad}")
    lut = np.zeros(256, dtype=bool)
    lut[selected] = True
    return lut[data.astype(np.uint8, copy=False)]


def write_miv(grid: Grid, path: str | Path) -> None:
    """Write a Volume or LabelMap to ``path`` in MIV format."""
    if isinstance(grid, Volume):
        dtype = "f32"
    elif isinstance(grid, LabelMap):
        dtype = "u8"
    else:
        raise TypeError(f"cannot write {type(grid).__name__} as MIV")
    header = {
        "shape": [int(s) for s in grid.shape],
        "spacing": [float(s) for s in grid.spacing.as_tuple()],
        "dtype": dtype,
    }
    payload = np.ascontiguousarray(grid.data, dtype=_DTYPES[dtype]).tobytes()
    blob = MIV_MAGIC + json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n" + payload
    Path(path).write_bytes(blob)


def read_miv(path: str | Path) -> Grid:
    """Decode a MIV file; ``f32`` gives a Volume, ``u8`` a LabelMap."""
    blob = Path(path).read_bytes()
    return decode_miv(blob, source=str(path))


def decode_miv(blob: bytes, source: str = "<bytes>") -> Grid:
    if not blob.startswith(MIV_MAGIC):
        raise MIVFormatError(f"{source}: missing MIV1 magic")
    end = blob.find(b"\n", len(MIV_MAGIC))
    if end < 0:
        raise MIVFormatError(f"{source}: unterminated header")
    try:
        header = json.loads(blob[len(MIV_MAGIC):end].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
        spacing = Spacing.of(header["spacing"])
        dtype = _DTYPES[header["dtype"]]
    except (ValueError, KeyError, TypeError, GridError) as exc:
        raise MIVFormatError(f"{source}: malformed header ({exc})") from exc
    if len(shape) != 3 or min(shape) < 0:
        raise MIVFormatError(f"{source}: shape must be [Z, Y, X], got {list(shape)}")
    payload = blob[end + 1:]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise MIVFormatError(
            f"{source}: payload is {len(payload)} bytes, expected {expected} for shape {list(shape)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if header["dtype"] == "u8":
        if data.size and data.max() >= NUM_LABELS:
            raise MIVFormatError(f"{source}: label value {int(data.max())} outside 0..{NUM_LABELS - 1}")
        return LabelMap(data.copy(), spacing)
    try:
        return Volume(data.astype(np.float32), spacing)
    except GridError as exc:
        raise MIVFormatError(f"{source}: {exc}") from exc
