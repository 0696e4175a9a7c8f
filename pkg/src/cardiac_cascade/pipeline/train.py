"""Single-fold training of one cascade stage."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import unet
from ..losses import one_hot, total_loss
from ..optim import poly_lr, sgd_step, zeros_like
from .records import CaseRecord, StageConfig
from .sampling import DEFAULT_ROI_MARGIN, draw_patch, stage_arrays

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: unet.UNetParams
    # (epoch, iteration, lr, loss) per optimiser step
    trace: list[tuple[int, int, float, float]] = field(default_factory=list)

    def trace_lines(self) -> list[str]:
        return [f"{e}\t{i}\t{lr!r}\t{loss!r}" for e, i, lr, loss in self.trace]


def training_step(params: unet.UNetParams, velocity, images, targets, stage: StageConfig, lr: float):
    """Forward, loss, backward and one SGD update on a batch.

    ``images`` is ``(B, 1, H, W)``, ``targets`` ``(B, H, W)``.  Returns
    ``(params, velocity, loss)``.
    """
    cfg = params.config
    x, crop = unet.pad_to_grid(images.astype(params.dtype), cfg.depth)
    logits, cache = unet.forward(params, x)
    logits = unet.crop_from_grid(logits, crop)
    probs = unet.softmax(logits.astype(np.float64))
    loss, grad = total_loss(probs, one_hot(targets, cfg.num_classes), stage.hyper.dice_epsilon)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}")
    grad_full = np.zeros(logits.shape[:2] + x.shape[2:], dtype=params.dtype)
    top, left, h, w = crop
    grad_full[:, :, top:top + h, left:left + w] = grad
    grads, _ = unet.backward(params, cache, grad_full)
    new_tensors, velocity = sgd_step(params.tensors, grads, velocity, stage.hyper, lr)
    return unet.UNetParams(cfg, new_tensors), velocity, loss


def train_stage(
    cases: list[CaseRecord],
    stage: StageConfig,
    fold: int,
    seed: int,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    margin: int = DEFAULT_ROI_MARGIN,
) -> TrainResult:
    """Train on every case whose fold differs from ``fold``.

    Deterministic for fixed inputs and seed.  Writes the checkpoint and a
    tab-separated loss trace (one line per iteration) when paths are given.
    """
    if any(c.fold is None for c in cases):
        missing = [c.case_id for c in cases if c.fold is None]
        raise TrainingError(f"cases without fold assignment: {', '.join(missing[:5])}")
    train_cases = sorted((c for c in cases if c.fold != fold), key=lambda c: c.case_id)
    if not train_cases:
        raise TrainingError(f"no training cases outside fold {fold}")
    if stage.stage == 2 and stage.unet.num_classes != 3:
        raise TrainingError("stage 2 needs 3 classes")
    arrays = [stage_arrays(c, stage, margin) for c in train_cases]
    fg_indices = [np.flatnonzero(t) for _, t in arrays]
    dtype = np.dtype(stage.dtype)
    params = unet.init_params(stage.unet, seed, dtype=dtype)
    velocity = zeros_like(params.tensors)
    rng = np.random.default_rng([seed, stage.stage, fold])
    n_slices = sum(img.shape[0] for img, _ in arrays)
    iters = stage.iterations_per_epoch or math.ceil(n_slices / stage.batch_size)
    result = TrainResult(params)
    log.info("stage %d fold %d: %d cases, %d epochs x %d iterations",
             stage.stage, fold, len(train_cases), stage.hyper.max_epochs, iters)
    for epoch in range(stage.hyper.max_epochs):
        lr = poly_lr(epoch, stage.hyper)
        for it in range(iters):
            imgs, tgts = [], []
            for _ in range(stage.batch_size):
                k = int(rng.integers(len(arrays)))
                img, tgt = draw_patch(*arrays[k], stage.patch_size, rng,
                                      stage.foreground_fraction, fg_indices[k])
                imgs.append(img)
                tgts.append(tgt)
            batch = np.stack(imgs)[:, None]
            params, velocity, loss = training_step(params, velocity, batch, np.stack(tgts), stage, lr)
            result.trace.append((epoch, it, lr, loss))
        log.debug("epoch %d loss %.4f", epoch, result.trace[-1][3])
    result.params = params
    if checkpoint_path is not None:
        meta = {"stage": stage.stage, "fold": fold, "seed": seed}
        unet.write_checkpoint(params, checkpoint_path, meta=meta)
    if log_path is not None:
        Path(log_path).write_text("\n".join(result.trace_lines()) + "\n")
    return result
