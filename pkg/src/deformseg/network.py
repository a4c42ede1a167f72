"""U-shaped segmentation network with deformable embedding, attention and PE.

Encoder: deformable patch embedding, then four stages of transformer blocks
(block counts default [1, 2, 5, 1]) with stride-2 convolutional downsampling
between stages.  A bottleneck chain of extra blocks runs at the deepest
resolution.  Decoder: three mirrored stages of stride-2 transposed-conv
upsampling, skip concatenation with a learned linear fusion, and one block
per stage.  Within every chain of blocks, even-indexed blocks use the first
attention kind of the configured pair and odd-indexed blocks the second.
A positional encoding layer is applied once at the entry of every stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attention import TransformerBlock
from .embed import PatchEmbedDown, PatchEmbedFirst
from .errors import ConfigError, DimensionError
from .modules import LayerNorm, Linear, Module, Scope, to_grid, to_tokens
from .posenc import CpeBaseline, MsDepe
from .tensor import Tensor, add, concat, conv2d, reshape, transposed_conv2d

_ATTN_KINDS = ("nmsa", "dmsa", "wmsa", "full")
_POSENC_KINDS = ("msdepe", "cpe", "none")
_EMBED_KINDS = ("deformable", "rigid")


@dataclass(frozen=True)
class NetworkConfig:
    embed_dims: tuple[int, int, int, int] = (64, 128, 256, 512)
    heads: tuple[int, int, int, int] = (2, 4, 8, 16)
    depths: tuple[int, int, int, int] = (1, 2, 5, 1)
    neighborhood: int = 7
    patch_size: int = 4
    num_classes: int = 9
    deep_supervision: bool = False
    variant: str = "custom"
    attention: str = "nmsa+dmsa"
    posenc: str = "msdepe"
    embedding: str = "deformable"
    window: int = 4
    bottleneck_depth: int = 6
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "embed_dims", tuple(int(x) for x in self.embed_dims))
        object.__setattr__(self, "heads", tuple(int(x) for x in self.heads))
        object.__setattr__(self, "depths", tuple(int(x) for x in self.depths))
        self.validate()

    def validate(self) -> None:
        if len(self.embed_dims) != 4:
            raise ConfigError(f"embed_dims must have 4 entries, got {self.embed_dims}")
        if len(self.heads) != 4:
            raise ConfigError(f"heads must have 4 entries, got {self.heads}")
        if len(self.depths) != 4:
            raise ConfigError(f"depths must have 4 entries, got {self.depths}")
        for i in range(3):
            if self.embed_dims[i + 1] != 2 * self.embed_dims[i]:
                raise ConfigError(
                    f"embed_dims must double between stages: {self.embed_dims}")
        for i in range(4):
            if self.heads[i] < 1 or self.embed_dims[i] % self.heads[i]:
                raise ConfigError(
                    f"heads[{i}]={self.heads[i]} must divide embed_dims[{i}]={self.embed_dims[i]}")
            if self.depths[i] < 1:
                raise ConfigError(f"depths[{i}] must be >= 1, got {self.depths[i]}")
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ConfigError(f"neighborhood must be odd and >= 1, got {self.neighborhood}")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ConfigError(f"patch_size must be even and >= 2, got {self.patch_size}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        parts = self.attention.split("+")
        if len(parts) != 2 or any(p not in _ATTN_KINDS for p in parts):
            raise ConfigError(f"attention must be '<kind>+<kind>', got {self.attention!r}")
        if self.posenc not in _POSENC_KINDS:
            raise ConfigError(f"posenc must be one of {_POSENC_KINDS}, got {self.posenc!r}")
        if self.embedding not in _EMBED_KINDS:
            raise ConfigError(f"embedding must be one of {_EMBED_KINDS}, got {self.embedding!r}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.bottleneck_depth < 0:
            raise ConfigError(f"bottleneck_depth must be >= 0, got {self.bottleneck_depth}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def attention_pair(self) -> tuple[str, str]:
        a, b = self.attention.split("+")
        return a, b

    @classmethod
    def nano(cls, **overrides) -> "NetworkConfig":
        base = dict(embed_dims=(16, 32, 64, 128), heads=(1, 2, 4, 8),
                    num_classes=3, variant="nano")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides) -> "NetworkConfig":
        base = dict(embed_dims=(64, 128, 256, 512), heads=(2, 4, 8, 16),
                    num_classes=9, variant="tiny")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def base(cls, **overrides) -> "NetworkConfig":
        base = dict(embed_dims=(128, 256, 512, 1024), heads=(4, 8, 16, 32),
                    num_classes=9, variant="base")
        base.update(overrides)
        return cls(**base)


@dataclass
class NetworkOutput:
    logits: Tensor                     # [num_classes, H, W] at input resolution
    aux_logits: list[Tensor] = field(default_factory=list)  # halving resolutions


class _Upsample(Module):
    """Exact x2 upsampler: transposed conv, kernel 2, stride 2."""

    def __init__(self, scope: Scope, in_ch: int, out_ch: int):
        self.kernel = scope.trunc_normal("kernel", (in_ch, out_ch, 2, 2))
        self.bias = scope.zeros("bias", (out_ch,))

    def __call__(self, grid: Tensor) -> Tensor:
        out = transposed_conv2d(grid, self.kernel, stride=2)
        return add(out, reshape(self.bias, (out.shape[0], 1, 1)))


class _Conv1x1(Module):
    def __init__(self, scope: Scope, in_ch: int, out_ch: int):
        self.kernel = scope.trunc_normal("kernel", (out_ch, in_ch, 1, 1))
        self.bias = scope.zeros("bias", (out_ch,))

    def __call__(self, grid: Tensor) -> Tensor:
        out = conv2d(grid, self.kernel)
        return add(out, reshape(self.bias, (out.shape[0], 1, 1)))


def _make_posenc(scope: Scope, kind: str, dim: int):
    if kind == "msdepe":
        return MsDepe(scope, dim)
    if kind == "cpe":
        return CpeBaseline(scope, dim)
    return None


class Network(Module):
    """Built segmentation network; use ``build`` for the public constructor."""

    def __init__(self, cfg: NetworkConfig, seed: int, materialize: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        scope = Scope(seed, materialize=materialize)
        dims, heads, depths = cfg.embed_dims, cfg.heads, cfg.depths
        pair = cfg.attention_pair
        deformable = cfg.embedding == "deformable"

        self.patch_embed = PatchEmbedFirst(scope.child("patch_embed"), cfg.in_channels,
                                           dims[0], cfg.patch_size, deformable=deformable)
        self.enc_pos = [_make_posenc(scope.child(f"enc{i}.pos"), cfg.posenc, dims[i])
                        for i in range(4)]
        self.enc_blocks = [
            [TransformerBlock(scope.child(f"enc{i}.block{b}"), dims[i], heads[i],
                              pair[b % 2], cfg.neighborhood, cfg.window)
             for b in range(depths[i])]
            for i in range(4)]
        self.downs = [PatchEmbedDown(scope.child(f"down{i}"), dims[i]) for i in range(3)]
        self.bottleneck = [
            TransformerBlock(scope.child(f"bottleneck.block{b}"), dims[3], heads[3],
                             pair[b % 2], cfg.neighborhood, cfg.window)
            for b in range(cfg.bottleneck_depth)]

        self.ups = [_Upsample(scope.child(f"dec{j}.up"), dims[j + 1], dims[j])
                    for j in range(3)]
        self.fuses = [Linear(scope.child(f"dec{j}.fuse"), 2 * dims[j], dims[j])
                      for j in range(3)]
        self.dec_norms = [LayerNorm(scope.child(f"dec{j}.norm"), dims[j]) for j in range(3)]
        self.dec_pos = [_make_posenc(scope.child(f"dec{j}.pos"), cfg.posenc, dims[j])
                        for j in range(3)]
        self.dec_blocks = [
            [TransformerBlock(scope.child(f"dec{j}.block{b}"), dims[j], heads[j],
                              pair[b % 2], cfg.neighborhood, cfg.window)
             for b in range(1)]
            for j in range(3)]

        c1 = max(dims[0] // 2, 4)
        c2 = max(dims[0] // 4, 4)
        self.head_up1 = _Upsample(scope.child("head.up1"), dims[0], c1)
        self.head_up2 = _Upsample(scope.child("head.up2"), c1, c2)
        self.head_out = _Conv1x1(scope.child("head.out"), c2, cfg.num_classes)
        if cfg.deep_supervision:
            self.aux_heads = [_Conv1x1(scope.child(f"aux{j}"), dims[j], cfg.num_classes)
                              for j in range(3)]
        else:
            self.aux_heads = []

    def forward(self, image: Tensor) -> NetworkOutput:
        cfg = self.cfg
        if image.ndim != 3 or image.shape[0] != cfg.in_channels:
            raise DimensionError(
                f"expected image [{cfg.in_channels},H,W], got {image.shape}")
        h, w = image.shape[1], image.shape[2]
        multiple = cfg.patch_size * 8
        if h % multiple or w % multiple:
            raise DimensionError(
                f"input extent {h}x{w} must be a multiple of {multiple}")

        grid = self.patch_embed(image)
        spatial = grid.shape[1:]
        tokens = to_tokens(grid)
        skips: list[tuple[Tensor, tuple[int, int]]] = []
        for i in range(4):
            if self.enc_pos[i] is not None:
                tokens = self.enc_pos[i](tokens, spatial)
            for block in self.enc_blocks[i]:
                tokens = block(tokens, spatial)
            if i < 3:
                skips.append((tokens, spatial))
                g = self.downs[i](to_grid(tokens, spatial))
                spatial = g.shape[1:]
                tokens = to_tokens(g)
        for block in self.bottleneck:
            tokens = block(tokens, spatial)

        aux: list[Tensor] = []
        for j in (2, 1, 0):
            g = self.ups[j](to_grid(tokens, spatial))
            spatial = g.shape[1:]
            tokens = to_tokens(g)
            skip_tokens, skip_spatial = skips[j]
            if skip_spatial != spatial:
                raise DimensionError(
                    f"decoder stage {j} extent {spatial} does not match skip {skip_spatial}")
            tokens = self.dec_norms[j](self.fuses[j](concat([tokens, skip_tokens], axis=1)))
            if self.dec_pos[j] is not None:
                tokens = self.dec_pos[j](tokens, spatial)
            for block in self.dec_blocks[j]:
                tokens = block(tokens, spatial)
            if self.aux_heads:
                aux.append(self.aux_heads[j](to_grid(tokens, spatial)))

        g = self.head_up1(to_grid(tokens, spatial))
        g = self.head_up2(g)
        logits = self.head_out(g)
        aux.reverse()  # highest resolution first, halving successively
        return NetworkOutput(logits=logits, aux_logits=aux)

    __call__ = forward


def build(cfg: NetworkConfig, seed: int) -> Network:
    """Deterministically initialize a network from a config and a seed.

    Offset convolutions start at zero; all other weights are truncated-normal
    (std 0.02) drawn from per-parameter named streams; biases start at zero.
    """
    return Network(cfg, seed)


def param_count(net_or_cfg: Network | NetworkConfig) -> int:
    """Total scalar parameter count; configs are counted without allocating."""
    if isinstance(net_or_cfg, NetworkConfig):
        return Network(net_or_cfg, seed=0, materialize=False).param_count()
    return net_or_cfg.param_count()
