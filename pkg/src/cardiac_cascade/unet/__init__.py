"""From-scratch 2D U-Net with analytic gradients."""
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .model import (
    Cache,
    ShapeError,
    UNetConfig,
    UNetParams,
    backward,
    crop_from_grid,
    forward,
    init_params,
    pad_to_grid,
    param_shapes,
    softmax,
)

__all__ = [
    "Cache",
    "CheckpointError",
    "ShapeError",
    "UNetConfig",
    "UNetParams",
    "backward",
    "crop_from_grid",
    "forward",
    "init_params",
    "pad_to_grid",
    "param_shapes",
    "read_checkpoint",
    "softmax",
    "write_checkpoint",
]
