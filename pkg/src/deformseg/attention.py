"""Multi-head self-attention variants over 2-D token grids.

Three interchangeable mechanisms, all token-count and dim preserving:

* ``DMSA`` re-samples keys and values at learned fractional offsets from the
  uniform grid, one offset field per head, produced by a zero-initialized
  convolution over that head's query map.
* ``NMSA`` lets each token attend only to its k x k nearest neighbours;
  neighbourhoods are shifted (never truncated) at borders so the attention
  matrix is always [L, K].
* ``WMSA`` runs full attention independently inside non-overlapping square
  windows; it is the fixed-window baseline.

``FullAttention`` is plain global attention, used as the degenerate reference
for all three and as the quadratic baseline in benchmarks.  NMSA, WMSA and
FullAttention share one projection layout (query/key/value matrices of shape
[d, H*d_k] with head-major columns, no biases, joint output projection);
DMSA keeps per-head projection matrices because each head deforms the map
independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError
from .modules import LayerNorm, Mlp, Module, Scope, to_grid, to_tokens
from .sampling import sample
from .tensor import (Tensor, active_tape, add, concat, conv2d, matmul,
                     permute, reshape, scale, softmax, take_rows)

_VARIANTS = ("dmsa", "nmsa", "wmsa", "full")


@dataclass
class AttentionConfig:
    """Head count and per-head dims for one attention layer."""

    heads: int
    d_k: int
    d_v: int
    neighborhood: int = 7
    variant: str = "nmsa"

    def __post_init__(self):
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ConfigError(f"neighborhood must be odd and >= 1, got {self.neighborhood}")
        if self.variant not in _VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}; expected one of {_VARIANTS}")

    @classmethod
    def for_dim(cls, dim: int, heads: int, neighborhood: int = 7, variant: str = "nmsa"):
        if dim % heads:
            raise ConfigError(f"heads={heads} must divide embedding dim {dim}")
        return cls(heads=heads, d_k=dim // heads, d_v=dim // heads,
                   neighborhood=neighborhood, variant=variant)


@dataclass
class NeighborhoodIndex:
    """For each grid location, the flat indices of its K in-bounds neighbours."""

    indices: np.ndarray  # [L, K] int64
    kh: int
    kw: int


@lru_cache(maxsize=128)
def _neighborhood_index_cached(h: int, w: int, k: int) -> NeighborhoodIndex:
    kh, kw = min(k, h), min(k, w)
    row_start = np.clip(np.arange(h) - kh // 2, 0, h - kh)
    col_start = np.clip(np.arange(w) - kw // 2, 0, w - kw)
    rows = row_start[:, None] + np.arange(kh)  # [h, kh]
    cols = col_start[:, None] + np.arange(kw)  # [w, kw]
    flat = rows[:, None, :, None] * w + cols[None, :, None, :]  # [h, w, kh, kw]
    return NeighborhoodIndex(flat.reshape(h * w, kh * kw).astype(np.int64), kh, kw)


def neighborhood_index(spatial: tuple[int, int], k: int) -> NeighborhoodIndex:
    """Centered k x k neighbourhoods, shifted at borders so each has exactly K entries.

    k must be odd; if k exceeds an extent it is clamped to that extent along
    that axis (the neighbourhood then covers the whole axis).
    """
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"neighborhood size must be odd and >= 1, got {k}")
    h, w = spatial
    return _neighborhood_index_cached(int(h), int(w), int(k))


@lru_cache(maxsize=128)
def _uniform_grid(h: int, w: int) -> np.ndarray:
    grid = np.stack(np.meshgrid(np.arange(h), np.arange(w), indexing="ij"), axis=-1)
    return grid.reshape(h * w, 2).astype(np.float64)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, H*d] -> [..., H, T, d]"""
    *lead, t, hd = x.shape
    d = hd // heads
    x = reshape(x, (*lead, t, heads, d))
    ndim = len(lead) + 3
    axes = tuple(range(len(lead))) + (ndim - 2, ndim - 3, ndim - 1)
    return permute(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., H, T, d] -> [..., T, H*d]"""
    *lead, h, t, d = x.shape
    ndim = len(lead) + 3
    axes = tuple(range(len(lead))) + (ndim - 2, ndim - 3, ndim - 1)
    return reshape(permute(x, axes), (*lead, t, h * d))


def _mhsa(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
          heads: int, d_k: int) -> Tensor:
    """Batched multi-head attention over the second-to-last axis of x [..., T, d]."""
    q = _split_heads(matmul(x, wq), heads)
    k = _split_heads(matmul(x, wk), heads)
    v = _split_heads(matmul(x, wv), heads)
    ndim = q.ndim
    kt = permute(k, tuple(range(ndim - 2)) + (ndim - 1, ndim - 2))
    attn = softmax(scale(matmul(q, kt), 1.0 / np.sqrt(d_k)), axis=-1)
    return matmul(_merge_heads(matmul(attn, v)), wo)


class _JointProjection(Module):
    def _init_projections(self, scope: Scope, dim: int, cfg: AttentionConfig):
        self.cfg = cfg
        self.dim = dim
        self.wq = scope.trunc_normal("wq", (dim, cfg.heads * cfg.d_k))
        self.wk = scope.trunc_normal("wk", (dim, cfg.heads * cfg.d_k))
        self.wv = scope.trunc_normal("wv", (dim, cfg.heads * cfg.d_v))
        self.wo = scope.trunc_normal("wo", (cfg.heads * cfg.d_v, dim))


class FullAttention(_JointProjection):
    """Plain global multi-head self-attention (quadratic in token count)."""

    def __init__(self, scope: Scope, dim: int, cfg: AttentionConfig):
        self._init_projections(scope, dim, cfg)

    def __call__(self, x: Tensor, spatial: tuple[int, int] | None = None) -> Tensor:
        return _mhsa(x, self.wq, self.wk, self.wv, self.wo, self.cfg.heads, self.cfg.d_k)


class WMSA(_JointProjection):
    """Full attention within fixed non-overlapping square windows.

    The effective window is min(window, h, w); both extents must divide by it.
    Tokens in different windows cannot influence each other.
    """

    def __init__(self, scope: Scope, dim: int, cfg: AttentionConfig, window: int = 4):
        self._init_projections(scope, dim, cfg)
        self.window = window

    def __call__(self, x: Tensor, spatial: tuple[int, int]) -> Tensor:
        h, w = spatial
        if x.shape[0] != h * w:
            raise DimensionError(f"token count {x.shape[0]} != {h}x{w}")
        win = min(self.window, h, w)
        if h % win or w % win:
            raise DimensionError(f"spatial extents {h}x{w} not divisible by window {win}")
        d = x.shape[1]
        nh, nw = h // win, w // win
        grid = reshape(x, (nh, win, nw, win, d))
        windows = reshape(permute(grid, (0, 2, 1, 3, 4)), (nh * nw, win * win, d))
        out = _mhsa(windows, self.wq, self.wk, self.wv, self.wo, self.cfg.heads, self.cfg.d_k)
        back = permute(reshape(out, (nh, nw, win, win, d)), (0, 2, 1, 3, 4))
        return reshape(back, (h * w, d))


class NMSA(_JointProjection):
    """Neighbourhood attention: each token attends to its K = kh*kw neighbours.

    Rows are independent, so the gradient-free path processes locations in
    chunks: the gathered key/value working set then stays cache-sized no
    matter how large the grid grows, which is what keeps measured wall time
    near-linear in token count.  Chunking is value-identical to the one-shot
    computation.
    """

    CHUNK = 1024

    def __init__(self, scope: Scope, dim: int, cfg: AttentionConfig):
        self._init_projections(scope, dim, cfg)

    def _rows(self, q: Tensor, kmat: Tensor, vmat: Tensor,
              indices: np.ndarray) -> Tensor:
        n, kn = indices.shape
        cfg = self.cfg
        qr = reshape(q, (n, cfg.heads, 1, cfg.d_k))
        kg = permute(reshape(take_rows(kmat, indices), (n, kn, cfg.heads, cfg.d_k)),
                     (0, 2, 3, 1))  # [n, H, d_k, K]
        vg = permute(reshape(take_rows(vmat, indices), (n, kn, cfg.heads, cfg.d_v)),
                     (0, 2, 1, 3))  # [n, H, K, d_v]
        attn = softmax(scale(matmul(qr, kg), 1.0 / np.sqrt(cfg.d_k)), axis=-1)
        return reshape(matmul(attn, vg), (n, cfg.heads * cfg.d_v))

    def __call__(self, x: Tensor, spatial: tuple[int, int]) -> Tensor:
        h, w = spatial
        n = h * w
        if x.shape[0] != n:
            raise DimensionError(f"token count {x.shape[0]} != {h}x{w}")
        idx = neighborhood_index(spatial, self.cfg.neighborhood)
        q = matmul(x, self.wq)
        kmat = matmul(x, self.wk)
        vmat = matmul(x, self.wv)
        if active_tape() is None and n > self.CHUNK:
            parts = []
            for start in range(0, n, self.CHUNK):
                stop = min(start + self.CHUNK, n)
                parts.append(self._rows(
                    Tensor(q.data[start:stop]), kmat, vmat,
                    idx.indices[start:stop]).data)
            out = Tensor(np.concatenate(parts, axis=0))
        else:
            out = self._rows(q, kmat, vmat, idx.indices)
        return matmul(out, self.wo)


class DMSA(Module):
    """Deformable attention: keys/values come from a per-head re-sampled map.

    For head h: Q_h = x W_h^Q; a zero-initialized 5x5 conv over Q_h reshaped
    to the grid emits a 2-channel offset field; the input map is re-sampled at
    the uniform grid plus those offsets; K_h and V_h are projected from the
    deformed map; heads are concatenated and jointly projected.  With all
    offset parameters at zero this is exactly standard multi-head attention.
    """

    OFFSET_KERNEL = 5

    def __init__(self, scope: Scope, dim: int, cfg: AttentionConfig):
        self.cfg = cfg
        self.dim = dim
        kk = self.OFFSET_KERNEL
        self.wq = [scope.trunc_normal(f"wq{h}", (dim, cfg.d_k)) for h in range(cfg.heads)]
        self.wk = [scope.trunc_normal(f"wk{h}", (dim, cfg.d_k)) for h in range(cfg.heads)]
        self.wv = [scope.trunc_normal(f"wv{h}", (dim, cfg.d_v)) for h in range(cfg.heads)]
        self.wo = scope.trunc_normal("wo", (cfg.heads * cfg.d_v, dim))
        self.offset_w = [scope.zeros(f"offset_w{h}", (2, cfg.d_k, kk, kk))
                         for h in range(cfg.heads)]
        self.offset_b = [scope.zeros(f"offset_b{h}", (2,)) for h in range(cfg.heads)]

    def _stack(self, mats: list[Tensor]) -> Tensor:
        """[d, k] per-head matrices -> one [H, d, k] tensor."""
        if len(mats) == 1:
            return reshape(mats[0], (1,) + mats[0].shape)
        return concat([reshape(m, (1,) + m.shape) for m in mats], axis=0)

    def __call__(self, x: Tensor, spatial: tuple[int, int]) -> Tensor:
        h, w = spatial
        n = h * w
        if x.shape[0] != n:
            raise DimensionError(f"token count {x.shape[0]} != {h}x{w}")
        cfg = self.cfg
        pad = self.OFFSET_KERNEL // 2
        fg = to_grid(x, spatial)
        base = Tensor(_uniform_grid(h, w))
        queries = []
        positions = []
        for hd in range(cfg.heads):
            qh = matmul(x, self.wq[hd])  # [L, d_k]
            off = conv2d(to_grid(qh, spatial), self.offset_w[hd], stride=1, padding=pad)
            off = add(off, reshape(self.offset_b[hd], (2, 1, 1)))
            queries.append(reshape(qh, (1, n, cfg.d_k)))
            positions.append(add(base, to_tokens(off)))
        # one sampling pass and one batched attention over all heads
        pos_all = positions[0] if cfg.heads == 1 else concat(positions, axis=0)
        deformed = permute(reshape(sample(fg, pos_all), (self.dim, cfg.heads, n)),
                           (1, 2, 0))  # [H, L, d]
        q = queries[0] if cfg.heads == 1 else concat(queries, axis=0)  # [H, L, d_k]
        k = matmul(deformed, self._stack(self.wk))  # [H, L, d_k]
        v = matmul(deformed, self._stack(self.wv))  # [H, L, d_v]
        attn = softmax(scale(matmul(q, permute(k, (0, 2, 1))), 1.0 / np.sqrt(cfg.d_k)),
                       axis=-1)
        out = _merge_heads(matmul(attn, v))  # [L, H*d_v]
        return matmul(out, self.wo)


class TransformerBlock(Module):
    """Pre-norm block: LN -> attention -> residual, LN -> MLP(4x, gelu) -> residual."""

    def __init__(self, scope: Scope, dim: int, heads: int, kind: str,
                 neighborhood: int = 7, window: int = 4):
        cfg = AttentionConfig.for_dim(dim, heads, neighborhood=neighborhood, variant=kind)
        self.norm1 = LayerNorm(scope.child("norm1"), dim)
        if kind == "nmsa":
            self.attn = NMSA(scope.child("attn"), dim, cfg)
        elif kind == "dmsa":
            self.attn = DMSA(scope.child("attn"), dim, cfg)
        elif kind == "wmsa":
            self.attn = WMSA(scope.child("attn"), dim, cfg, window=window)
        elif kind == "full":
            self.attn = FullAttention(scope.child("attn"), dim, cfg)
        else:
            raise ConfigError(f"unknown attention kind {kind!r}")
        self.norm2 = LayerNorm(scope.child("norm2"), dim)
        self.mlp = Mlp(scope.child("mlp"), dim)

    def __call__(self, x: Tensor, spatial: tuple[int, int]) -> Tensor:
        x = add(x, self.attn(self.norm1(x), spatial))
        return add(x, self.mlp(self.norm2(x)))
