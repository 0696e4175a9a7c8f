"""Dataset directories: MIV files listed in a ``manifest.json``."""
from __future__ import annotations

import json
from pathlib import Path

from .pipeline import CaseRecord
from .volume import LabelMap, MIVFormatError, Volume, read_miv

MANIFEST = "manifest.json"


class DatasetError(ValueError):
    pass


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"no {MANIFEST} in {directory}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("cases"), list):
        raise DatasetError(f"{path}: expected an object with a 'cases' list")
    ids = [e.get("case_id") for e in manifest["cases"]]
    if any(not isinstance(i, str) for i in ids) or len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: case ids missing or duplicated")
    return manifest


def read_grid(path: Path, kind: type):
    try:
        grid = read_miv(path)
    except FileNotFoundError as exc:
        raise DatasetError(f"{path}: file not found") from exc
    except MIVFormatError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if not isinstance(grid, kind):
        raise DatasetError(f"{path}: expected a {kind.__name__}")
    return grid


def read_case(directory: Path, entry: dict, require_labels: bool = False) -> CaseRecord:
    if "image" not in entry:
        raise DatasetError(f"{entry['case_id']}: manifest entry has no image")
    image = read_grid(directory / entry["image"], Volume)
    labels = None
    if "label" in entry:
        labels = read_grid(directory / entry["label"], LabelMap)
    elif require_labels:
        raise DatasetError(f"{entry['case_id']}: no ground-truth label")
    try:
        return CaseRecord(
            case_id=entry["case_id"],
            image=image,
            labels=labels,
            fold=entry.get("fold"),
            pathological=entry.get("pathological"),
        )
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc


def read_dataset(directory: str | Path, require_labels: bool = False) -> tuple[dict, list[CaseRecord]]:
    """Manifest plus every case, in manifest order."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    return manifest, [read_case(directory, e, require_labels) for e in manifest["cases"]]
