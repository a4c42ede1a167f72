"""Segmentation metrics: dice similarity and the 95th-percentile Hausdorff distance.

HD95 extracts boundary pixels of each mask (a mask pixel is interior only if
all 8 neighbours are also in the mask; border-of-image pixels are boundary),
computes directed nearest-boundary Euclidean distances in both directions,
pools the two directed sets, and returns the 95th percentile with linear
interpolation.  It is undefined when either mask is empty; aggregates skip
undefined pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricUndefinedError


def dsc_metric(pred: np.ndarray, label: np.ndarray, cls: int) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both masks are empty."""
    p = pred == cls
    g = label == cls
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates [n, 2] of mask pixels with any 8-neighbour outside the mask."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            interior &= padded[1 + dy:1 + dy + m.shape[0], 1 + dx:1 + dx + m.shape[1]]
    return np.argwhere(m & ~interior)


def _percentile_linear(values: np.ndarray, q: float) -> float:
    """q-th percentile with linear interpolation between order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 1:
        return float(v[0])
    rank = (q / 100.0) * (v.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, v.size - 1)
    frac = rank - lo
    return float(v[lo] * (1.0 - frac) + v[hi] * frac)


def hd95_metric(pred: np.ndarray, label: np.ndarray, cls: int) -> float:
    """95th percentile of pooled symmetric boundary-to-boundary distances, in pixels."""
    p = pred == cls
    g = label == cls
    if not p.any() or not g.any():
        raise MetricUndefinedError(
            f"HD95 undefined for class {cls}: empty mask (pred {int(p.sum())} px, "
            f"label {int(g.sum())} px)")
    pb = boundary_pixels(p).astype(np.float64)
    gb = boundary_pixels(g).astype(np.float64)
    diff = pb[:, None, :] - gb[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    pooled = np.concatenate([dist.min(axis=1), dist.min(axis=0)])
    return _percentile_linear(pooled, 95.0)


@dataclass
class MetricsSummary:
    """Per-class and aggregate metrics over an evaluation set.

    Foreground classes only (class 0 is background).  HD95 entries are NaN
    where the metric was undefined for every image; undefined pairs are
    excluded from all means.
    """

    num_classes: int
    dsc_per_class: dict[int, float] = field(default_factory=dict)
    hd95_per_class: dict[int, float] = field(default_factory=dict)
    dsc_mean: float = float("nan")
    hd95_mean: float = float("nan")

    def format(self) -> str:
        lines = []
        for c in range(1, self.num_classes):
            lines.append(f"dsc_class_{c}={self.dsc_per_class[c]:.12g}")
        lines.append(f"dsc_mean={self.dsc_mean:.12g}")
        for c in range(1, self.num_classes):
            lines.append(f"hd95_class_{c}={self.hd95_per_class[c]:.12g}")
        lines.append(f"hd95_mean={self.hd95_mean:.12g}")
        return "\n".join(lines) + "\n"


def summarize(preds: list[np.ndarray], labels: list[np.ndarray],
              num_classes: int) -> MetricsSummary:
    """Aggregate per-image metrics over foreground classes."""
    summary = MetricsSummary(num_classes=num_classes)
    class_means = []
    hd_means = []
    for c in range(1, num_classes):
        dscs = [dsc_metric(p, l, c) for p, l in zip(preds, labels)]
        summary.dsc_per_class[c] = float(np.mean(dscs))
        class_means.append(summary.dsc_per_class[c])
        hds = []
        for p, l in zip(preds, labels):
            try:
                hds.append(hd95_metric(p, l, c))
            except MetricUndefinedError:
                continue
        summary.hd95_per_class[c] = float(np.mean(hds)) if hds else float("nan")
        if hds:
            hd_means.append(summary.hd95_per_class[c])
    summary.dsc_mean = float(np.mean(class_means)) if class_means else float("nan")
    summary.hd95_mean = float(np.mean(hd_means)) if hd_means else float("nan")
    return summary
