"""Case bookkeeping and stage/classifier configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from ..optim import TrainHyper
from ..unet import UNetConfig
from ..volume import LESION, BBox, LabelMap, Volume


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image: Volume
    labels: Optional[LabelMap] = None
    fold: Optional[int] = None
    pathological: Optional[bool] = None

    def __post_init__(self):
        if self.labels is not None:
            if self.labels.shape != self.image.shape or self.labels.spacing != self.image.spacing:
                raise ValueError(f"{self.case_id}: image and labels disagree on shape or spacing")
        if self.fold is not None and self.fold < 0:
            raise ValueError(f"{self.case_id}: negative fold index")

    def with_fold(self, fold: int) -> "CaseRecord":
        return replace(self, fold=fold)


@dataclass(frozen=True)
class StageConfig:
    """Per-stage training/inference setup.

    Stage 1 learns {background, LV cavity, myocardium} on whole slices; stage 2
    learns {background, infarction, no-reflow} on ROI crops.
    """

    stage: int
    unet: UNetConfig
    hyper: TrainHyper = field(default_factory=TrainHyper)
    patch_size: tuple[int, int] = (64, 64)
    batch_size: int = 8
    foreground_fraction: float = 0.5
    iterations_per_epoch: Optional[int] = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ph, pw = self.patch_size
        if ph < 1 or pw < 1:
            raise ValueError("patch_size must be positive")
        if not 0 <= self.foreground_fraction <= 1:
            raise ValueError("foreground_fraction must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ValueError("iterations_per_epoch must be >= 1")
        object.__setattr__(self, "patch_size", (int(ph), int(pw)))

    @property
    def num_classes(self) -> int:
        return self.unet.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_size"] = list(self.patch_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        d = dict(d)
        d["unet"] = UNetConfig(**d["unet"])
        d["hyper"] = TrainHyper(**d.get("hyper", {}))
        if "patch_size" in d:
            d["patch_size"] = tuple(d["patch_size"])
        return cls(**d)


# Momentum 0.99 leaves the small stage-2 lesion classes stuck at background on
# phantom-sized data; a larger step with lighter momentum trains both stages.
DESK_HYPER = TrainHyper(lr0=0.1, momentum=0.9, max_epochs=30)


def default_stage(stage: int, **overrides) -> StageConfig:
    """Desk-scale defaults: depth 3, base 8, 64x64 patches for stage 1, 48x48 for stage 2."""
    patch = (64, 64) if stage == 1 else (48, 48)
    cfg = StageConfig(stage=stage, unet=UNetConfig(num_classes=3), hyper=DESK_HYPER, patch_size=patch)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class ClassifierRule:
    lesion_labels: frozenset = LESION
    min_voxels: int = 10

    def __post_init__(self):
        if self.min_voxels < 1:
            raise ValueError("min_voxels must be >= 1")
        object.__setattr__(self, "lesion_labels", frozenset(int(v) for v in self.lesion_labels))


@dataclass(frozen=True)
class RoiSpec:
    bbox: BBox
    margin: int
    source_shape: tuple[int, int, int]

    def __post_init__(self):
        if not self.bbox.fits(self.source_shape):
            raise ValueError(f"roi {self.bbox} exceeds grid {self.source_shape}")
