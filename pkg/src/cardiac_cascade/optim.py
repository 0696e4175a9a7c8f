"""SGD with classical momentum and polynomial learning-rate decay."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class TrainHyper:
    lr0: float = 0.01
    momentum: float = 0.99
    max_epochs: int = 30
    poly_exponent: float = 0.9
    dice_epsilon: float = 1e-5

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.dice_epsilon > 0:
            raise ValueError("dice_epsilon must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def poly_lr(epoch: int, hyper: TrainHyper) -> float:
    """``lr0 * (1 - epoch / max_epochs) ** poly_exponent``."""
    if not 0 <= epoch < hyper.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {hyper.max_epochs})")
    return hyper.lr0 * (1.0 - epoch / hyper.max_epochs) ** hyper.poly_exponent


def sgd_step(params, grads, velocity, hyper: TrainHyper, lr: float):
    """``v <- momentum * v - lr * g``; ``w <- w + v``.

    ``params``, ``grads`` and ``velocity`` are dicts of arrays keyed alike;
    new dicts are returned and the inputs are left untouched.
    """
    if params.keys() != grads.keys() or params.keys() != velocity.keys():
        raise ValueError("params, grads and velocity must share keys")
    new_params, new_velocity = {}, {}
    for name, w in params.items():
        g, v = grads[name], velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ValueError(f"{name}: shape mismatch {w.shape} / {g.shape} / {v.shape}")
        v = hyper.momentum * v - lr * g
        new_velocity[name] = v.astype(w.dtype, copy=False)
        new_params[name] = (w + v).astype(w.dtype, copy=False)
    return new_params, new_velocity


def zeros_like(params) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}
