"""Differentiable multilinear interpolation at fractional grid positions.

Coordinates are in pixel units with the origin at pixel (0, 0); they are
ordered (row, col) in 2-D and (depth, row, col) in 3-D.  Points outside the
map blend against zeros (zero padding), so a sample fades out smoothly as it
leaves the valid region.  Gradients flow both to the feature map and to the
positions; at exact integer coordinates the position gradient takes the
right-continuous branch (the one defined by floor).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, _record

_CORNERS = {d: np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
            for d in (2, 3)}


@dataclass
class SampleGrid:
    """Fractional sample positions, one D-vector per output location."""

    positions: Tensor  # [L, D]


def sample(f: Tensor, grid: SampleGrid | Tensor) -> Tensor:
    """Sample f [C, *spatial] at L fractional positions -> [C, L].

    Each output value is the multilinear blend of the 2**D neighbouring grid
    points; out-of-bounds corners contribute zero.
    """
    pos = grid.positions if isinstance(grid, SampleGrid) else grid
    if pos.ndim != 2:
        raise DimensionError(f"positions must be [L, D], got {pos.shape}")
    spatial = np.array(f.shape[1:], dtype=np.int64)
    d = pos.shape[1]
    if len(spatial) != d:
        raise DimensionError(
            f"grid rank {d} does not match feature map spatial rank {len(spatial)} (map {f.shape})")
    if d not in (2, 3):
        raise DimensionError(f"only 2-D and 3-D sampling supported, got D={d}")

    c = f.shape[0]
    n = pos.shape[0]
    corners = _CORNERS[d]                     # [M, D]
    m = corners.shape[0]
    pd = pos.data
    floors = np.floor(pd)
    fracs = pd - floors                        # [N, D]
    base = floors.astype(np.int64)

    strides = np.ones(d, dtype=np.int64)
    for axis in range(d - 2, -1, -1):
        strides[axis] = strides[axis + 1] * spatial[axis + 1]
    total = int(strides[0] * spatial[0])
    fflat = f.data.reshape(c, total)

    idx = base[None, :, :] + corners[:, None, :]                 # [M, N, D]
    valid = np.logical_and(idx >= 0, idx < spatial).all(axis=2)  # [M, N]
    flat = (np.clip(idx, 0, spatial - 1) * strides).sum(axis=2)  # [M, N]
    axis_w = np.where(corners[:, None, :] == 1, fracs[None], 1.0 - fracs[None])  # [M, N, D]
    weight = axis_w.prod(axis=2)                                  # [M, N]
    values = fflat[:, flat.ravel()].reshape(c, m, n) * valid[None]  # [C, M, N]
    out = np.einsum("mn,cmn->cn", weight, values)

    def rule(g):
        dpos = df = None
        if pos.requires_grad:
            gv = np.einsum("cn,cmn->mn", g, values)  # [M, N]
            sign = np.where(corners == 1, 1.0, -1.0)  # [M, D]
            dpos = np.empty((n, d))
            for axis in range(d):
                others = np.ones((m, n))
                for other in range(d):
                    if other != axis:
                        others *= axis_w[:, :, other]
                dpos[:, axis] = np.einsum("mn,mn,m->n", others, gv, sign[:, axis])
        if f.requires_grad:
            wv = weight * valid                       # [M, N]
            contrib = g[:, None, :] * wv[None]        # [C, M, N]
            flat_all = flat.ravel()
            dflat = np.empty((c, total))
            for ch in range(c):
                dflat[ch] = np.bincount(flat_all, weights=contrib[ch].ravel(),
                                        minlength=total)
            df = dflat.reshape(f.data.shape)
        return (df, dpos)

    return _record(out, (f, pos), rule)
