"""2D U-Net: encoder/decoder with skip connections.

Every resolution level holds two (3x3 conv -> instance norm -> leaky ReLU)
units.  Levels are joined by a 2x2 stride-2 conv on the way down and a 2x2
stride-2 transposed conv on the way up; the decoder concatenates the
encoder output of the same level (skip first) before its two units.  A 1x1
conv maps the top decoder level to class logits.

Public tensors are ``(N, C, H, W)``; internally everything runs channels-last.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L


class ShapeError(ValueError):
    """Input or cache does not match the network."""


@dataclass(frozen=True)
class UNetConfig:
    num_classes: int
    in_channels: int = 1
    depth: int = 3
    base_channels: int = 8
    negative_slope: float = 0.01
    norm_epsilon: float = 1e-5

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")

    def channels(self, level: int) -> int:
        return self.base_channels * min(2 ** level, 16)

    @property
    def grid(self) -> int:
        """H and W must be multiples of this."""
        return 2 ** (self.depth - 1)

    def to_dict(self) -> dict:
        return asdict(self)


class UNetParams:
    """Named trainable tensors of a U-Net plus its config."""

    def __init__(self, config: UNetConfig, tensors: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            raise ShapeError("parameter names do not match the config")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "UNetParams":
        return UNetParams(self.config, {k: v.astype(dtype) for k, v in self.items()})

    def copy(self) -> "UNetParams":
        return UNetParams(self.config, {k: v.copy() for k, v in self.items()})


def _block_shapes(prefix: str, c_in: int, c_out: int) -> dict:
    return {
        f"{prefix}.conv1.w": (c_out, c_in, 3, 3),
        f"{prefix}.conv1.b": (c_out,),
        f"{prefix}.norm1.gamma": (c_out,),
        f"{prefix}.norm1.beta": (c_out,),
        f"{prefix}.conv2.w": (c_out, c_out, 3, 3),
        f"{prefix}.conv2.b": (c_out,),
        f"{prefix}.norm2.gamma": (c_out,),
        f"{prefix}.norm2.beta": (c_out,),
    }


def param_shapes(config: UNetConfig) -> dict[str, tuple]:
    """Ordered mapping of parameter name to shape."""
    shapes: dict[str, tuple] = {}
    ch = config.channels
    for level in range(config.depth):
        if level > 0:
            shapes[f"down{level}.w"] = (ch(level), ch(level - 1), 2, 2)
            shapes[f"down{level}.b"] = (ch(level),)
        c_in = config.in_channels if level == 0 else ch(level)
        shapes.update(_block_shapes(f"enc{level}", c_in, ch(level)))
    for level in reversed(range(config.depth - 1)):
        shapes[f"up{level}.w"] = (ch(level + 1), ch(level), 2, 2)
        shapes[f"up{level}.b"] = (ch(level),)
        shapes.update(_block_shapes(f"dec{level}", 2 * ch(level), ch(level)))
    shapes["head.w"] = (config.num_classes, ch(0), 1, 1)
    shapes["head.b"] = (config.num_classes,)
    return shapes


def _fan_in(name: str, shape: tuple) -> int:
    if name.startswith("up"):
        # each output pixel of a stride-2 2x2 transposed conv sees one tap per input channel
        return shape[0]
    return int(np.prod(shape[1:]))


def init_params(config: UNetConfig, seed: int, dtype=np.float64) -> UNetParams:
    """He-normal kernels, zero biases and shifts, unit norm scales."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".w"):
            std = np.sqrt(2.0 / _fan_in(name, shape))
            tensors[name] = (rng.standard_normal(shape) * std).astype(dtype)
        elif name.endswith(".gamma"):
            tensors[name] = np.ones(shape, dtype=dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return UNetParams(config, tensors)


class Cache:
    """Intermediates of one forward pass; consumed by ``backward``."""

    def __init__(self, config: UNetConfig, input_shape: tuple):
        self.config = config
        self.input_shape = input_shape
        self.layers: dict[str, tuple] = {}


def _block_forward(p, prefix, x, cfg, cache):
    for k in (1, 2):
        x, cache.layers[f"{prefix}.conv{k}"] = L.conv3x3_forward(
            x, p[f"{prefix}.conv{k}.w"], p[f"{prefix}.conv{k}.b"]
        )
        x, cache.layers[f"{prefix}.norm{k}"] = L.instance_norm_forward(
            x, p[f"{prefix}.norm{k}.gamma"], p[f"{prefix}.norm{k}.beta"], cfg.norm_epsilon
        )
        x, cache.layers[f"{prefix}.act{k}"] = L.leaky_relu_forward(x, cfg.negative_slope)
    return x


def _block_backward(prefix, g, cache, grads):
    for k in (2, 1):
        g = L.leaky_relu_backward(g, cache.layers[f"{prefix}.act{k}"])
        g, grads[f"{prefix}.norm{k}.gamma"], grads[f"{prefix}.norm{k}.beta"] = (
            L.instance_norm_backward(g, cache.layers[f"{prefix}.norm{k}"])
        )
        g, grads[f"{prefix}.conv{k}.w"], grads[f"{prefix}.conv{k}.b"] = L.conv3x3_backward(
            g, cache.layers[f"{prefix}.conv{k}"]
        )
    return g


def forward(params: UNetParams, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Logits ``(N, num_classes, H, W)`` for input ``(N, in_channels, H, W)``."""
    cfg = params.config
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"expected (N, {cfg.in_channels}, H, W), got {x.shape}")
    n, _, h, w = x.shape
    if h % cfg.grid or w % cfg.grid:
        raise ShapeError(f"H and W must be multiples of {cfg.grid}; got {h}x{w} (use pad_to_grid)")
    cache = Cache(cfg, x.shape)
    p = params.tensors
    hcur = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=params.dtype)
    skips = []
    for level in range(cfg.depth):
        if level > 0:
            hcur, cache.layers[f"down{level}"] = L.down_forward(
                hcur, p[f"down{level}.w"], p[f"down{level}.b"]
            )
        hcur = _block_forward(p, f"enc{level}", hcur, cfg, cache)
        skips.append(hcur)
    for level in reversed(range(cfg.depth - 1)):
        hcur, cache.layers[f"up{level}"] = L.up_forward(hcur, p[f"up{level}.w"], p[f"up{level}.b"])
        hcur, cache.layers[f"cat{level}"] = L.concat_forward(skips[level], hcur)
        hcur = _block_forward(p, f"dec{level}", hcur, cfg, cache)
    logits, cache.layers["head"] = L.conv1x1_forward(hcur, p["head.w"], p["head.b"])
    return logits.transpose(0, 3, 1, 2), cache


def backward(
    params: UNetParams, cache: Cache, grad_logits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of ``sum(logits * grad_logits)`` w.r.t. every parameter and the input.

    Returns ``(param_grads, input_grad)``; ``param_grads`` has the same keys
    and order as ``params``.
    """
    cfg = params.config
    if cache.config != cfg:
        raise ShapeError("cache was produced by a different network config")
    n, _, h, w = cache.input_shape
    if grad_logits.shape != (n, cfg.num_classes, h, w):
        raise ShapeError(f"grad_logits shape {grad_logits.shape} does not match the cached forward")
    grads: dict[str, np.ndarray] = {}
    g = np.ascontiguousarray(grad_logits.transpose(0, 2, 3, 1), dtype=params.dtype)
    g, grads["head.w"], grads["head.b"] = L.conv1x1_backward(g, cache.layers["head"])
    skip_grads: dict[int, np.ndarray] = {}
    for level in range(cfg.depth - 1):
        g = _block_backward(f"dec{level}", g, cache, grads)
        skip_grads[level], g = L.concat_backward(g, cache.layers[f"cat{level}"])
        g, grads[f"up{level}.w"], grads[f"up{level}.b"] = L.up_backward(g, cache.layers[f"up{level}"])
    for level in reversed(range(cfg.depth)):
        if level in skip_grads:
            g = g + skip_grads[level]
        g = _block_backward(f"enc{level}", g, cache, grads)
        if level > 0:
            g, grads[f"down{level}.w"], grads[f"down{level}.b"] = L.down_backward(
                g, cache.layers[f"down{level}"]
            )
    ordered = {name: grads[name] for name in params}
    return ordered, g.transpose(0, 3, 1, 2)


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    """Channel softmax with max subtraction."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pad_to_grid(x: np.ndarray, depth: int, min_size: tuple[int, int] | None = None):
    """Zero-pad H and W up to a multiple of ``2 ** (depth - 1)``.

    Padding is split evenly with the odd voxel on the high side.  Returns
    ``(padded, crop)`` where ``crop = (top, left, H, W)`` undoes it.
    """
    mult = 2 ** (depth - 1)
    _, _, h, w = x.shape
    th, tw = h, w
    if min_size is not None:
        th, tw = max(th, min_size[0]), max(tw, min_size[1])
    th = -(-th // mult) * mult
    tw = -(-tw // mult) * mult
    top, left = (th - h) // 2, (tw - w) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (top, th - h - top), (left, tw - w - left)))
    return padded, (top, left, h, w)


def crop_from_grid(x: np.ndarray, crop: tuple[int, int, int, int]) -> np.ndarray:
    top, left, h, w = crop
    return x[:, :, top:top + h, left:left + w]
