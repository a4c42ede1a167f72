"""Synthetic multi-class segmentation samples.

Each sample paints one random ellipse or rectangle per foreground class
(random center, axes and rotation) onto a zero background, in class order so
later classes overwrite earlier ones.  The image is a class-dependent base
intensity plus Gaussian noise (sigma 0.1), clipped to [0, 1].  Everything is
a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng, split
from .tensor import Tensor

NOISE_STD = 0.1


@dataclass
class SegmentationSample:
    image: Tensor          # [1, H, W] in [0, 1]
    label: np.ndarray      # [H, W] int64 in [0, num_classes)
    num_classes: int


def gen_synthetic(seed: int, num_classes: int, height: int, width: int) -> SegmentationSample:
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if height < 8 or width < 8:
        raise ConfigError(f"degenerate extent {height}x{width}; need at least 8x8")
    rng = Rng(seed)
    label = np.zeros((height, width), dtype=np.int64)
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    short = min(height, width)
    for cls in range(1, num_classes):
        is_ellipse = rng.uniform() < 0.5
        cy = rng.uniform(low=0.25, high=0.75) * height
        cx = rng.uniform(low=0.25, high=0.75) * width
        a = rng.uniform(low=0.10, high=0.20) * short
        b = rng.uniform(low=0.10, high=0.20) * short
        theta = rng.uniform(low=0.0, high=np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        if is_ellipse:
            mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        else:
            mask = (np.abs(u) <= a) & (np.abs(v) <= b)
        label[mask] = cls
    base = (label + 0.5) / num_classes
    image = np.clip(base + NOISE_STD * rng.normal((height, width)), 0.0, 1.0)
    return SegmentationSample(image=Tensor(image[None]), label=label,
                              num_classes=num_classes)


def make_split(data_seed: int, split_name: str, count: int, num_classes: int,
               height: int, width: int) -> list[SegmentationSample]:
    """Deterministic dataset split; sample i uses the stream '<split>.<i>'."""
    return [gen_synthetic(split(data_seed, f"{split_name}.{i}"), num_classes, height, width)
            for i in range(count)]
