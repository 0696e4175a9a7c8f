"""Synthetic short-axis DE-MRI phantoms with exact ground truth.

Each slice holds a blood-pool disk (label 1) inside a myocardial annulus
(label 2).  Pathological cases add a sub-endocardial infarct wedge (label 3)
spanning a run of slices, optionally with a dark no-reflow core (label 4)
carved from the wedge interior.  Intensities are per-label means plus
Gaussian noise: blood bright, myocardium dark, infarct brighter than blood,
no-reflow darkest.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .pipeline.records import CaseRecord
from .volume import (
    INFARCTION,
    LESION,
    LV_CAVITY,
    MYOCARDIUM,
    NO_REFLOW,
    LabelMap,
    Spacing,
    TARGET_SPACING,
    Volume,
    label_mask,
    write_miv,
)


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (6, 64, 64)
    spacing: Spacing = field(default=TARGET_SPACING)
    cavity_radius: tuple[float, float] = (6.0, 9.0)
    myo_thickness: tuple[float, float] = (4.0, 6.0)
    infarct_probability: float = 0.67
    infarct_angle_deg: tuple[float, float] = (70.0, 140.0)
    no_reflow_probability: float = 0.5
    background_mean: float = 0.4
    blood_mean: float = 0.8
    myocardium_mean: float = 0.15
    infarct_mean: float = 1.1
    no_reflow_mean: float = 0.0
    noise_sigma: float = 0.05
    min_lesion_voxels: int = 30
    center_jitter: float = 6.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if not isinstance(self.spacing, Spacing):
            object.__setattr__(self, "spacing", Spacing.of(self.spacing))
        for name in ("cavity_radius", "myo_thickness", "infarct_angle_deg"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise PhantomError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        for name in ("infarct_probability", "no_reflow_probability"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise PhantomError(f"{name} must lie in [0, 1], got {p}")
        if self.noise_sigma < 0:
            raise PhantomError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise PhantomError(f"shape must be three positive sizes, got {self.shape}")
        if self.infarct_angle_deg[1] > 360:
            raise PhantomError("infarct_angle_deg upper bound exceeds 360")
        # annulus plus centre drift must stay inside the slice
        outer = self.cavity_radius[1] + self.myo_thickness[1]
        reach = outer + self.center_jitter + 2.0 * (self.shape[0] - 1) + 1
        if 2 * reach > min(self.shape[1], self.shape[2]):
            raise PhantomError(
                f"geometry infeasible: outer radius {outer} with jitter does not fit a "
                f"{self.shape[1]}x{self.shape[2]} slice"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spacing"] = list(self.spacing.as_tuple())
        d["shape"] = list(self.shape)
        for k in ("cavity_radius", "myo_thickness", "infarct_angle_deg"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        d = dict(d)
        if "spacing" in d:
            d["spacing"] = Spacing.of(d["spacing"])
        for k in ("shape", "cavity_radius", "myo_thickness", "infarct_angle_deg"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def intensity_means(self) -> np.ndarray:
        return np.array([
            self.background_mean,
            self.blood_mean,
            self.myocardium_mean,
            self.infarct_mean,
            self.no_reflow_mean,
        ])


def _angle_diff(a, b):
    d = np.abs(a - b) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def _anatomy(config: PhantomConfig, rng: np.random.Generator):
    """Per-slice centres and radii, plus the distance/angle fields."""
    nz, ny, nx = config.shape
    r_cav = rng.uniform(*config.cavity_radius)
    thick = rng.uniform(*config.myo_thickness)
    cy = (ny - 1) / 2 + rng.uniform(-config.center_jitter, config.center_jitter)
    cx = (nx - 1) / 2 + rng.uniform(-config.center_jitter, config.center_jitter)
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    dist = np.empty(config.shape)
    theta = np.empty(config.shape)
    radii = np.empty(nz)
    for z in range(nz):
        if z > 0:
            # drift of at most 2 voxels between neighbouring slices
            cy += rng.uniform(-1.0, 1.0)
            cx += rng.uniform(-1.0, 1.0)
        # cavity narrows towards the apex (last slices)
        radii[z] = r_cav * (1.0 - 0.3 * z / max(nz - 1, 1))
        dist[z] = np.hypot(yy - cy, xx - cx)
        theta[z] = np.arctan2(yy - cy, xx - cx)
    return radii, thick, dist, theta


def _render_labels(config, rng, pathological: bool) -> np.ndarray:
    nz = config.shape[0]
    radii, thick, dist, theta = _anatomy(config, rng)
    labels = np.zeros(config.shape, dtype=np.uint8)
    cavity = dist <= radii[:, None, None]
    annulus = (~cavity) & (dist <= radii[:, None, None] + thick)
    labels[cavity] = LV_CAVITY
    labels[annulus] = MYOCARDIUM
    if not pathological:
        return labels
    for _ in range(100):
        lab = labels.copy()
        angle0 = rng.uniform(-np.pi, np.pi)
        half = np.deg2rad(rng.uniform(*config.infarct_angle_deg)) / 2
        transmural = rng.uniform(0.5, 1.0)
        run = int(rng.integers(max(1, nz // 2), nz + 1))
        z_start = int(rng.integers(0, nz - run + 1))
        in_run = np.zeros(nz, dtype=bool)
        in_run[z_start:z_start + run] = True
        depth = radii[:, None, None] + transmural * thick
        wedge = annulus & (dist <= depth) & (_angle_diff(theta, angle0) <= half) & in_run[:, None, None]
        lab[wedge] = INFARCTION
        if rng.uniform() < config.no_reflow_probability:
            inner = radii[:, None, None] + 0.2 * transmural * thick
            outer = radii[:, None, None] + 0.8 * transmural * thick
            core = wedge & (dist >= inner) & (dist <= outer) & (_angle_diff(theta, angle0) <= 0.5 * half)
            # keep the core strictly inside the wedge, slice by slice
            interior = ndimage.binary_erosion(wedge, structure=np.array([[[0, 1, 0], [1, 1, 1], [0, 1, 0]]], bool))
            lab[core & interior] = NO_REFLOW
        if label_mask(lab, LESION).sum() >= config.min_lesion_voxels:
            return lab
    raise PhantomError("could not place an infarct of the minimum lesion size; enlarge the geometry")


def _render_image(config, labels, rng) -> np.ndarray:
    image = config.intensity_means()[labels]
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=labels.shape)
    return image


def _make_case(config: PhantomConfig, case_seed: int, pathological: bool, case_id: str) -> CaseRecord:
    rng = np.random.default_rng(case_seed)
    labels = _render_labels(config, rng, pathological)
    image = _render_image(config, labels, rng)
    path = bool(label_mask(labels, LESION).any())
    return CaseRecord(
        case_id=case_id,
        image=Volume(image, config.spacing),
        labels=LabelMap(labels, config.spacing),
        pathological=path,
    )


def generate_case(config: PhantomConfig, case_seed: int, case_id: str | None = None) -> CaseRecord:
    """One phantom; pathological with probability ``config.infarct_probability``."""
    rng = np.random.default_rng([case_seed, 1])
    pathological = bool(rng.uniform() < config.infarct_probability)
    return _make_case(config, case_seed, pathological, case_id or f"case_{case_seed}")


def generate_dataset(
    config: PhantomConfig, n_cases: int, pathological_fraction: float, seed: int
) -> list[CaseRecord]:
    """``n_cases`` phantoms with exactly ``round(n * fraction)`` pathological ones."""
    if not 0 <= pathological_fraction <= 1:
        raise PhantomError(f"pathological_fraction must lie in [0, 1], got {pathological_fraction}")
    if n_cases < 0:
        raise PhantomError("n_cases must be >= 0")
    n_path = int(round(n_cases * pathological_fraction))
    seeds = case_seeds(n_cases, seed)
    flags = np.zeros(n_cases, dtype=bool)
    flags[np.random.default_rng([seed, 7]).permutation(n_cases)[:n_path]] = True
    return [
        _make_case(config, s, bool(f), case_name(i, n_cases))
        for i, (s, f) in enumerate(zip(seeds, flags))
    ]


def case_seeds(n_cases: int, seed: int) -> list[int]:
    """Per-case generator seeds used by ``generate_dataset``."""
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n_cases)]


def case_name(index: int, n_cases: int) -> str:
    width = max(3, len(str(max(n_cases - 1, 0))))
    return f"case_{index:0{width}d}"


def write_dataset(
    cases: list[CaseRecord],
    out_dir: str | Path,
    extra: dict | None = None,
    seeds: dict[str, int] | None = None,
) -> Path:
    """Write MIV image/label pairs plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        entry = {"case_id": case.case_id, "image": f"{case.case_id}_image.miv"}
        write_miv(case.image, out / entry["image"])
        if case.labels is not None:
            entry["label"] = f"{case.case_id}_label.miv"
            write_miv(case.labels, out / entry["label"])
        if case.pathological is not None:
            entry["pathological"] = bool(case.pathological)
        if case.fold is not None:
            entry["fold"] = int(case.fold)
        if seeds and case.case_id in seeds:
            entry["seed"] = int(seeds[case.case_id])
        entries.append(entry)
    manifest = dict(extra or {})
    manifest["cases"] = entries
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def threshold_whole_lv(image: Volume, config: PhantomConfig) -> np.ndarray:
    """Noise-free oracle: whole LV is everything not at the background intensity."""
    means = config.intensity_means()
    gap = np.min(np.abs(means[1:] - means[0]))
    return np.abs(image.data - np.float32(config.background_mean)) > gap / 2
