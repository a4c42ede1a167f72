"""Deformable convolution and the patch-embedding stages built from it.

A deformable convolution evaluates each kernel tap at a learned fractional
displacement from its rigid position, using multilinear sampling, so the
effective receptive field bends with the input.  Offset-producing convolutions
are zero-initialized (weights and bias), which makes a freshly built layer
exactly equal to its rigid counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError
from .modules import LayerNorm, Module, Scope, to_grid, to_tokens
from .sampling import sample
from .tensor import Tensor, add, conv2d, matmul, permute, reshape


@dataclass
class OffsetField:
    """Per-location fractional displacements, in pixel units: [2, H, W] or [2K, H, W]."""

    offsets: Tensor


class DeformConv2d(Module):
    """2-D deformable convolution layer ("same"-style padding of kernel//2).

    With ``shared_offsets`` one displacement per output location is applied to
    every kernel tap; otherwise each tap gets its own displacement (2*k*k
    offset channels).  With ``deformable=False`` the layer is a plain dense
    convolution and carries no offset parameters.
    """

    def __init__(self, scope: Scope, in_ch: int, out_ch: int, kernel: int = 3,
                 stride: int = 1, dilation: int = 1, shared_offsets: bool = False,
                 deformable: bool = True, bias: bool = True):
        self.kernel = scope.trunc_normal("kernel", (out_ch, in_ch, kernel, kernel))
        self.bias = scope.zeros("bias", (out_ch,)) if bias else None
        self.k = kernel
        self.stride = stride
        self.dilation = dilation
        self.padding = kernel // 2
        self.shared_offsets = shared_offsets
        self.deformable = deformable
        if deformable:
            off_ch = 2 if shared_offsets else 2 * kernel * kernel
            self.offset_w = scope.zeros("offset_w", (off_ch, in_ch, kernel, kernel))
            self.offset_b = scope.zeros("offset_b", (off_ch,))

    def offset_field(self, f: Tensor) -> OffsetField:
        raw = conv2d(f, self.offset_w, stride=self.stride, padding=self.padding)
        off_ch = self.offset_w.shape[0]
        return OffsetField(add(raw, reshape(self.offset_b, (off_ch, 1, 1))))

    def __call__(self, f: Tensor) -> Tensor:
        return deformable_conv2d(self, f)


@lru_cache(maxsize=128)
def _tap_positions(ho: int, wo: int, k: int, stride: int, padding: int, dilation: int) -> np.ndarray:
    """Rigid sample positions [ho, wo, k*k, 2] for every output location and tap."""
    oy = np.arange(ho) * stride - padding
    ox = np.arange(wo) * stride - padding
    taps = np.arange(k) * dilation
    base = np.zeros((ho, wo, k, k, 2))
    base[..., 0] = oy[:, None, None, None] + taps[None, None, :, None]
    base[..., 1] = ox[None, :, None, None] + taps[None, None, None, :]
    return base.reshape(ho, wo, k * k, 2)


def deformable_conv2d(layer: DeformConv2d, f: Tensor) -> Tensor:
    """Apply a DeformConv2d layer: out[p] = sum_taps sample(f, p + dp + tap) * kernel."""
    if f.ndim != 3:
        raise DimensionError(f"expected input [C,H,W], got {f.shape}")
    if not layer.deformable:
        out = conv2d(f, layer.kernel, stride=layer.stride, padding=layer.padding)
        if layer.bias is not None:
            out = add(out, reshape(layer.bias, (out.shape[0], 1, 1)))
        return out

    cin, h, w = f.shape
    k, s, p, d = layer.k, layer.stride, layer.padding, layer.dilation
    if h + 2 * p < 1 + (k - 1) * d or w + 2 * p < 1 + (k - 1) * d:
        raise DimensionError(f"kernel {layer.kernel.shape} does not fit input {f.shape} (pad {p})")
    offsets = layer.offset_field(f).offsets
    ho, wo = offsets.shape[1], offsets.shape[2]
    taps = k * k
    n = ho * wo

    base = Tensor(_tap_positions(ho, wo, k, s, p, d).reshape(n, taps, 2))
    if layer.shared_offsets:
        off = reshape(to_tokens(offsets), (n, 1, 2))
    else:
        off = reshape(permute(reshape(offsets, (taps, 2, ho, wo)), (2, 3, 0, 1)), (n, taps, 2))
    pos = reshape(add(base, off), (n * taps, 2))

    sampled = sample(f, pos)  # [cin, n*taps]
    stacked = reshape(permute(reshape(sampled, (cin, n, taps)), (1, 0, 2)), (n, cin * taps))
    kflat = permute(reshape(layer.kernel, (layer.kernel.shape[0], cin * taps)), (1, 0))
    out = to_grid(matmul(stacked, kflat), (ho, wo))
    if layer.bias is not None:
        out = add(out, reshape(layer.bias, (out.shape[0], 1, 1)))
    return out


class PatchEmbedFirst(Module):
    """Initial embedding: two stacked stride-(n/2) deformable convolutions.

    Each convolution is followed by layer normalization over channels.  For
    the default patch size 4 the output grid is input/4 per side.
    """

    def __init__(self, scope: Scope, in_ch: int, embed_dim: int, patch_size: int = 4,
                 deformable: bool = True):
        if patch_size % 2 or patch_size < 2:
            raise ConfigError(f"patch_size must be even and >= 2, got {patch_size}")
        stride = patch_size // 2
        mid = max(embed_dim // 2, 1)
        self.patch_size = patch_size
        self.conv1 = DeformConv2d(scope.child("conv1"), in_ch, mid, kernel=3,
                                  stride=stride, deformable=deformable)
        self.norm1 = LayerNorm(scope.child("norm1"), mid)
        self.conv2 = DeformConv2d(scope.child("conv2"), mid, embed_dim, kernel=3,
                                  stride=stride, deformable=deformable)
        self.norm2 = LayerNorm(scope.child("norm2"), embed_dim)

    def _norm_grid(self, grid: Tensor, norm: LayerNorm) -> Tensor:
        d, h, w = grid.shape
        return to_grid(norm(to_tokens(grid)), (h, w))

    def __call__(self, image: Tensor) -> Tensor:
        _, h, w = image.shape
        n = self.patch_size
        if h % n or w % n:
            raise DimensionError(f"image extent {h}x{w} not divisible by patch size {n}")
        f = self._norm_grid(self.conv1(image), self.norm1)
        return self._norm_grid(self.conv2(f), self.norm2)


class PatchEmbedDown(Module):
    """Between-stage embedding: dense overlapping stride-2 conv that doubles channels."""

    def __init__(self, scope: Scope, in_ch: int):
        self.conv = DeformConv2d(scope.child("conv"), in_ch, 2 * in_ch, kernel=3,
                                 stride=2, deformable=False)
        self.norm = LayerNorm(scope.child("norm"), 2 * in_ch)

    def __call__(self, grid: Tensor) -> Tensor:
        _, h, w = grid.shape
        if h < 2 or w < 2:
            raise DimensionError(f"cannot downsample spatial extent {h}x{w}")
        out = self.conv(grid)
        d, ho, wo = out.shape
        return to_grid(self.norm(to_tokens(out)), (ho, wo))
