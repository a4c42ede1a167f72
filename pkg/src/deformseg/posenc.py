"""Input-conditioned positional encodings added to token features.

``MsDepe`` reshapes tokens to their spatial grid, runs two parallel
deformable depth-wise convolution branches (kernel sizes 3 and 5, each with
its own zero-initialized offset convolution, one shared offset field per
branch), sums the branches, and adds the result back to the tokens.
``CpeBaseline`` is the rigid counterpart: a single dense depth-wise 3x3
convolution.  Both are exact identities when their weights are zero.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .modules import Module, Scope, to_grid, to_tokens
from .sampling import sample
from .tensor import Tensor, add, conv2d, depthwise_conv2d, reshape


@lru_cache(maxsize=128)
def _lattice(h: int, w: int) -> np.ndarray:
    base = np.zeros((h, w, 2))
    base[..., 0] = np.arange(h)[:, None]
    base[..., 1] = np.arange(w)[None, :]
    return base.reshape(h * w, 2)


class DeformDepthwiseBranch(Module):
    """Shape-preserving deformable depth-wise conv with one offset field.

    The offset convolution (channels -> 2, same kernel size, zero-initialized)
    produces one displacement per location, shared across channels and taps.
    Because the displacement is shared across taps, the operation factorizes
    exactly: run the dense depth-wise convolution once over a zero-padded
    extended domain, then bilinearly sample the result at lattice + offset.
    """

    def __init__(self, scope: Scope, channels: int, kernel: int):
        self.kernel = scope.trunc_normal("kernel", (channels, kernel, kernel))
        self.bias = scope.zeros("bias", (channels,))
        self.offset_w = scope.zeros("offset_w", (2, channels, kernel, kernel))
        self.offset_b = scope.zeros("offset_b", (2,))
        self.k = kernel

    def __call__(self, grid: Tensor) -> Tensor:
        c, h, w = grid.shape
        k = self.k
        r = k // 2
        off = conv2d(grid, self.offset_w, stride=1, padding=r)
        off = add(off, reshape(self.offset_b, (2, 1, 1)))
        # dense response on the extended domain [-r, h-1+r] x [-r, w-1+r]
        dense = depthwise_conv2d(grid, self.kernel, padding=2 * r)
        pos = add(Tensor(_lattice(h, w) + r), to_tokens(off))
        out = reshape(sample(dense, pos), (c, h, w))
        return add(out, reshape(self.bias, (c, 1, 1)))


class MsDepe(Module):
    """Multi-scale deformable positional encoding: f + (branch3(f) + branch5(f))."""

    def __init__(self, scope: Scope, channels: int):
        self.branch3 = DeformDepthwiseBranch(scope.child("branch3"), channels, 3)
        self.branch5 = DeformDepthwiseBranch(scope.child("branch5"), channels, 5)

    def encoding(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        h, w = spatial
        if tokens.shape[0] != h * w:
            raise DimensionError(f"token count {tokens.shape[0]} != {h}x{w}")
        grid = to_grid(tokens, spatial)
        return to_tokens(add(self.branch3(grid), self.branch5(grid)))

    def __call__(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        return add(tokens, self.encoding(tokens, spatial))


class CpeBaseline(Module):
    """Conditional positional encoding baseline: f + dense depth-wise 3x3 conv."""

    def __init__(self, scope: Scope, channels: int):
        self.kernel = scope.trunc_normal("kernel", (channels, 3, 3))
        self.bias = scope.zeros("bias", (channels,))

    def encoding(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        h, w = spatial
        if tokens.shape[0] != h * w:
            raise DimensionError(f"token count {tokens.shape[0]} != {h}x{w}")
        grid = to_grid(tokens, spatial)
        c = grid.shape[0]
        out = depthwise_conv2d(grid, self.kernel, padding=1)
        return to_tokens(add(out, reshape(self.bias, (c, 1, 1))))

    def __call__(self, tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
        return add(tokens, self.encoding(tokens, spatial))
