"""Two-stage cascade: LV segmentation, ROI cropping, lesion segmentation."""
from .cascade import (
    Diagnosis,
    classify,
    compose_final,
    compute_roi,
    crop,
    make_folds,
    paste_back,
    stage1_targets,
    stage2_targets,
)
from .infer import ArchitectureMismatch, PipelineConfig, PipelineOutput, predict_stage, run_pipeline
from .records import CaseRecord, ClassifierRule, RoiSpec, StageConfig, default_stage
from .sampling import sample_patches, stage_arrays
from .train import TrainingError, TrainResult, train_stage

__all__ = [
    "ArchitectureMismatch",
    "CaseRecord",
    "ClassifierRule",
    "Diagnosis",
    "PipelineConfig",
    "PipelineOutput",
    "RoiSpec",
    "StageConfig",
    "TrainResult",
    "TrainingError",
    "classify",
    "compose_final",
    "compute_roi",
    "crop",
    "default_stage",
    "make_folds",
    "paste_back",
    "predict_stage",
    "run_pipeline",
    "sample_patches",
    "stage1_targets",
    "stage2_targets",
    "stage_arrays",
    "train_stage",
]
