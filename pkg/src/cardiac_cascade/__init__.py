"""Cascaded two-stage segmentation of DE-MRI phantoms: LV first, then infarct and no-reflow."""
from .volume import (
    LabelMap,
    ProbMap,
    Spacing,
    TARGET_SPACING,
    Volume,
    read_miv,
    write_miv,
)

__version__ = "0.1.0"

__all__ = [
    "LabelMap",
    "ProbMap",
    "Spacing",
    "TARGET_SPACING",
    "Volume",
    "__version__",
    "read_miv",
    "write_miv",
]
