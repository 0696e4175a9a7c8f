"""Ensemble inference and the end-to-end cascade."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import unet
from ..preprocess import PreprocessConfig, preprocess_image, resample_label
from ..volume import LabelMap, ProbMap, Volume
from .cascade import Diagnosis, classify, compose_final, compute_roi, crop
from .records import ClassifierRule, StageConfig, default_stage
from .sampling import DEFAULT_ROI_MARGIN


class ArchitectureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    stage1: StageConfig = field(default_factory=lambda: default_stage(1))
    stage2: StageConfig = field(default_factory=lambda: default_stage(2))
    roi_margin: int = DEFAULT_ROI_MARGIN
    classifier: ClassifierRule = field(default_factory=ClassifierRule)


def member_probs(params: unet.UNetParams, image: np.ndarray, stage: StageConfig) -> np.ndarray:
    """Softmax ``(C, Z, Y, X)`` of one model applied slice by slice.

    Slices smaller than the training patch are zero-padded up to it, matching
    what the network saw during training.
    """
    x = np.asarray(image, dtype=params.dtype)[:, None]
    padded, crop_rec = unet.pad_to_grid(x, params.config.depth, min_size=stage.patch_size)
    logits, _ = unet.forward(params, padded)
    probs = unet.softmax(unet.crop_from_grid(logits, crop_rec).astype(np.float64))
    return probs.transpose(1, 0, 2, 3)


def predict_stage(checkpoints: list[unet.UNetParams], image: Volume, stage: StageConfig) -> ProbMap:
    """Mean softmax over ensemble members.

    Member values are sorted per voxel before summation, so the result is
    bit-identical for any member order.
    """
    if not checkpoints:
        raise ArchitectureMismatch("at least one checkpoint is required")
    for params in checkpoints:
        if params.config != checkpoints[0].config:
            raise ArchitectureMismatch("ensemble members have different architectures")
        if params.config.num_classes != stage.num_classes:
            raise ArchitectureMismatch(
                f"checkpoint has {params.config.num_classes} classes, stage {stage.stage} expects {stage.num_classes}"
            )
    members = np.sort(np.stack([member_probs(p, image.data, stage) for p in checkpoints]), axis=0)
    total = members[0].copy()
    for p in members[1:]:
        total += p
    return ProbMap(total / len(checkpoints), image.spacing)


@dataclass(frozen=True)
class PipelineOutput:
    labels: LabelMap
    diagnosis: Diagnosis
    roi: object
    stage1: ProbMap
    stage2: ProbMap


def run_pipeline(
    image: Volume,
    stage1_models: list[unet.UNetParams],
    stage2_models: list[unet.UNetParams],
    config: PipelineConfig | None = None,
) -> PipelineOutput:
    """Preprocess, segment the LV, crop, segment lesions, compose, map back, classify."""
    config = config or PipelineConfig()
    pre = preprocess_image(image, config.preprocess)
    p1 = predict_stage(stage1_models, pre, config.stage1)
    roi = compute_roi(p1.argmax() != 0, config.roi_margin)
    p2 = predict_stage(stage2_models, crop(pre, roi), config.stage2)
    final = compose_final(p1, p2, roi)
    labels = resample_label(final, image.spacing, out_shape=image.shape)
    return PipelineOutput(labels, classify(labels, config.classifier), roi, p1, p2)
