"""Run configuration: one JSON file covering every stage of the workflow."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .optim import TrainHyper
from .phantom import PhantomConfig
from .pipeline import ClassifierRule, PipelineConfig, StageConfig, default_stage
from .preprocess import PreprocessConfig
from .unet import UNetConfig
from .volume import Spacing


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    n_cases: int = 100
    pathological_fraction: float = 0.67
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    folds: int = 5
    stage1: StageConfig = field(default_factory=lambda: default_stage(1))
    stage2: StageConfig = field(default_factory=lambda: default_stage(2))
    roi_margin: int = 5
    classifier: ClassifierRule = field(default_factory=ClassifierRule)
    seed: int = 0

    def __post_init__(self):
        if self.n_cases < 1:
            raise ConfigError(f"n_cases must be >= 1, got {self.n_cases}")
        if not 0 <= self.pathological_fraction <= 1:
            raise ConfigError(f"pathological_fraction must lie in [0, 1], got {self.pathological_fraction}")
        if self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")
        if self.roi_margin < 0:
            raise ConfigError(f"roi_margin must be >= 0, got {self.roi_margin}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    def stage(self, stage: int) -> StageConfig:
        return self.stage1 if stage == 1 else self.stage2

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.preprocess, self.stage1, self.stage2, self.roi_margin, self.classifier)

    def to_dict(self) -> dict:
        return {
            "phantom": self.phantom.to_dict(),
            "n_cases": self.n_cases,
            "pathological_fraction": self.pathological_fraction,
            "preprocess": {
                "target_spacing": list(self.preprocess.target_spacing.as_tuple()),
                "zscore_epsilon": self.preprocess.zscore_epsilon,
            },
            "folds": self.folds,
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "roi_margin": self.roi_margin,
            "classifier": {
                "lesion_labels": sorted(self.classifier.lesion_labels),
                "min_voxels": self.classifier.min_voxels,
            },
            "seed": self.seed,
        }


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key '{section}.{unknown[0]}'")


def _stage_from(base: StageConfig, d: dict, section: str) -> StageConfig:
    _check_keys(section, d, [f.name for f in fields(StageConfig)])
    d = dict(d)
    if "unet" in d:
        _check_keys(f"{section}.unet", d["unet"], [f.name for f in fields(UNetConfig)])
        d["unet"] = replace(base.unet, **d["unet"])
    if "hyper" in d:
        _check_keys(f"{section}.hyper", d["hyper"], [f.name for f in fields(TrainHyper)])
        d["hyper"] = replace(base.hyper, **d["hyper"])
    if "patch_size" in d:
        d["patch_size"] = tuple(d["patch_size"])
    if d.get("stage", base.stage) != base.stage:
        raise ConfigError(f"{section}.stage must be {base.stage}")
    return replace(base, **d)


def config_from_dict(d: dict) -> RunConfig:
    """Build a RunConfig from a (possibly partial) nested dict; missing keys keep defaults."""
    _check_keys("config", d, [f.name for f in fields(RunConfig)])
    base = RunConfig()
    kw = {k: d[k] for k in ("n_cases", "pathological_fraction", "folds", "roi_margin", "seed") if k in d}
    try:
        if "phantom" in d:
            _check_keys("phantom", d["phantom"], [f.name for f in fields(PhantomConfig)])
            kw["phantom"] = PhantomConfig.from_dict({**base.phantom.to_dict(), **d["phantom"]})
        if "preprocess" in d:
            p = d["preprocess"]
            _check_keys("preprocess", p, [f.name for f in fields(PreprocessConfig)])
            kw["preprocess"] = PreprocessConfig(
                target_spacing=Spacing.of(p.get("target_spacing", base.preprocess.target_spacing.as_tuple())),
                zscore_epsilon=p.get("zscore_epsilon", base.preprocess.zscore_epsilon),
            )
        for name in ("stage1", "stage2"):
            if name in d:
                kw[name] = _stage_from(getattr(base, name), d[name], name)
        if "classifier" in d:
            c = d["classifier"]
            _check_keys("classifier", c, [f.name for f in fields(ClassifierRule)])
            kw["classifier"] = ClassifierRule(
                lesion_labels=frozenset(c.get("lesion_labels", base.classifier.lesion_labels)),
                min_voxels=c.get("min_voxels", base.classifier.min_voxels),
            )
        return RunConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(d)
