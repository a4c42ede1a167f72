"""Segmentation losses: soft dice, cross-entropy, and their weighted blend.

The blended loss is lam * dice + (1 - lam) * cross-entropy on the main head;
auxiliary heads (deep supervision) contribute the same blend at their native
resolutions against nearest-downsampled targets, with weights 1/2, 1/4, ...
normalized so all head weights sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (Tensor, add, add_scalar, div, log_softmax, mul, scale,
                     softmax, tensor_mean, tensor_sum)

DICE_EPS = 1e-5


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")


def one_hot(label: np.ndarray, num_classes: int) -> np.ndarray:
    """[H, W] integer mask -> [C, H, W] float64 indicator."""
    out = np.zeros((num_classes,) + label.shape)
    for c in range(num_classes):
        out[c] = label == c
    return out


def dice_loss(logits: Tensor, label_onehot: Tensor | np.ndarray,
              eps: float = DICE_EPS) -> Tensor:
    """1 - mean over all classes of the soft dice coefficient.

    Softmax over the class axis is applied internally; the per-class
    coefficient is (2 * sum(p*g) + eps) / (sum(p) + sum(g) + eps).
    """
    g = label_onehot if isinstance(label_onehot, Tensor) else Tensor(label_onehot)
    if logits.shape != g.shape:
        raise DimensionError(
            f"logits {logits.shape} and one-hot labels {g.shape} disagree")
    axes = tuple(range(1, logits.ndim))
    p = softmax(logits, axis=0)
    inter = tensor_sum(mul(p, g), axis=axes)
    psum = tensor_sum(p, axis=axes)
    gsum = tensor_sum(g, axis=axes)
    per_class = div(add_scalar(scale(inter, 2.0), eps), add_scalar(add(psum, gsum), eps))
    return add_scalar(scale(tensor_mean(per_class), -1.0), 1.0)


def cross_entropy(logits: Tensor, label: np.ndarray) -> Tensor:
    """Mean per-pixel negative log-likelihood of the integer labels."""
    num_classes = logits.shape[0]
    if label.shape != logits.shape[1:]:
        raise DimensionError(f"labels {label.shape} do not match logits {logits.shape}")
    lsm = log_softmax(logits, axis=0)
    picked = tensor_sum(mul(lsm, Tensor(one_hot(label, num_classes))))
    return scale(picked, -1.0 / label.size)


def _head_loss(logits: Tensor, label: np.ndarray, lam: float) -> Tensor:
    d = dice_loss(logits, one_hot(label, logits.shape[0]))
    ce = cross_entropy(logits, label)
    return add(scale(d, lam), scale(ce, 1.0 - lam))


def combined_loss(logits: Tensor, aux_logits: list[Tensor], label: np.ndarray,
                  cfg: LossConfig) -> Tensor:
    """Blended loss over the main head plus any auxiliary heads.

    Aux targets are the labels nearest-downsampled (top-left rule) to each
    aux resolution; head weights are 1, 1/2, 1/4, ... normalized to sum 1.
    """
    weights = [1.0] + [0.5 ** (i + 1) for i in range(len(aux_logits))]
    total_w = sum(weights)
    total = scale(_head_loss(logits, label, cfg.lam), weights[0] / total_w)
    for aux, wgt in zip(aux_logits, weights[1:]):
        factor = label.shape[0] // aux.shape[1]
        if factor * aux.shape[1] != label.shape[0]:
            raise DimensionError(
                f"aux logits {aux.shape} incompatible with labels {label.shape}")
        target = label[::factor, ::factor]
        total = add(total, scale(_head_loss(aux, target, cfg.lam), wgt / total_w))
    return total
