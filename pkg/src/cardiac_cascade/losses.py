"""Soft Dice + cross-entropy training objective.

All tensors are ``(N, C, H, W)`` with class 0 the background.  Dice sums are
pooled over the whole batch and averaged over the foreground classes.
"""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def _check(probs, target):
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs target {target.shape}")
    if probs.ndim != 4 or probs.shape[1] < 2:
        raise ValueError(f"expected (N, C>=2, H, W), got {probs.shape}")


def dice_loss(probs: np.ndarray, target: np.ndarray, eps: float = 1e-5):
    """``1 - mean_c (2 sum p g + eps) / (sum p + sum g + eps)`` over c >= 1.

    Returns ``(loss, d loss / d probs)``.
    """
    _check(probs, target)
    axes = (0, 2, 3)
    p = probs[:, 1:]
    g = target[:, 1:]
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes) + eps
    numer = 2.0 * inter + eps
    k = p.shape[1]
    loss = 1.0 - float(np.mean(numer / denom))
    # d(numer/denom)/dp = (2 g denom - numer) / denom^2
    dd = (2.0 * g * denom[None, :, None, None] - numer[None, :, None, None]) / (
        denom[None, :, None, None] ** 2
    )
    grad = np.zeros_like(probs)
    grad[:, 1:] = -dd / k
    return loss, grad


def cross_entropy(probs: np.ndarray, target: np.ndarray):
    """Mean ``-log p_true`` per voxel.

    The returned gradient is the fused softmax+CE gradient w.r.t. the logits,
    ``(probs - target) / num_voxels``.
    """
    _check(probs, target)
    n, _, h, w = probs.shape
    voxels = n * h * w
    p_true = (probs * target).sum(axis=1)
    loss = float(-np.log(np.maximum(p_true, PROB_FLOOR)).sum() / voxels)
    return loss, (probs - target) / voxels


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    inner = (probs * grad_probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def total_loss(probs: np.ndarray, target: np.ndarray, eps: float = 1e-5):
    """Dice + CE; returns ``(loss, d loss / d logits)``."""
    ld, gd = dice_loss(probs, target, eps)
    lc, gc = cross_entropy(probs, target)
    return ld + lc, softmax_backward(probs, gd) + gc


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """``(N, H, W)`` integer labels to ``(N, C, H, W)``."""
    eye = np.eye(num_classes, dtype=dtype)
    return np.moveaxis(eye[labels], -1, 1)
