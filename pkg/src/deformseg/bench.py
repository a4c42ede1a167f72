"""Wall-time scaling measurements for the attention variants.

Forward passes only, no tape, median of a few repetitions per point.  The
interesting comparison is how time grows when the token count doubles:
neighbourhood attention should grow roughly linearly, full attention
quadratically.
"""

from __future__ import annotations

import ctypes
import time
from dataclasses import dataclass

from .attention import DMSA, NMSA, WMSA, AttentionConfig, FullAttention
from .errors import ConfigError
from .modules import Scope
from .rng import Rng, split
from .tensor import Tensor

VARIANTS = ("nmsa", "full", "wmsa", "dmsa")

_allocator_stabilized = False


def _stabilize_allocator() -> None:
    """Keep large numpy buffers resident instead of bouncing through the kernel.

    glibc hands mmap'd buffers back on free and trims freed heap tops, so
    every timed iteration would re-fault its working set in; that page-fault
    cost tracks allocator history, not the kernels being measured, and it
    corrupted scaling ratios by an order of magnitude.  Raising the mmap and
    trim thresholds once makes the buffers recycle warm.  Best effort:
    silently skipped off glibc.
    """
    global _allocator_stabilized
    if _allocator_stabilized:
        return
    _allocator_stabilized = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(512 * 1024 * 1024))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(1 << 30))            # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


@dataclass
class BenchRow:
    variant: str
    tokens: int
    micros: float


def _make_layer(variant: str, dim: int, heads: int, neighborhood: int, window: int,
                seed: int):
    scope = Scope(seed).child(variant)
    cfg = AttentionConfig.for_dim(dim, heads, neighborhood=neighborhood,
                                  variant=variant if variant != "full" else "nmsa")
    if variant == "nmsa":
        return NMSA(scope, dim, cfg)
    if variant == "full":
        return FullAttention(scope, dim, cfg)
    if variant == "wmsa":
        return WMSA(scope, dim, cfg, window=window)
    if variant == "dmsa":
        return DMSA(scope, dim, cfg)
    raise ConfigError(f"unknown bench variant {variant!r}; expected one of {VARIANTS}")


def bench_attention(sizes: list[tuple[int, int]], variants=("nmsa", "full"),
                    dim: int = 32, heads: int = 2, neighborhood: int = 7,
                    window: int = 8, reps: int = 5, seed: int = 0,
                    clock: str = "wall") -> list[BenchRow]:
    """Median forward time per variant per grid size, in microseconds.

    ``clock="wall"`` uses the wall clock; ``clock="cpu"`` uses process CPU
    time, which ignores preemption by other tenants on shared machines and so
    gives far steadier scaling ratios there.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown bench variant {v!r}; expected one of {VARIANTS}")
    if clock not in ("wall", "cpu"):
        raise ConfigError(f"clock must be 'wall' or 'cpu', got {clock!r}")
    _stabilize_allocator()
    now = time.perf_counter if clock == "wall" else time.process_time
    rows = []
    for h, w in sizes:
        tokens = Tensor(Rng(split(seed, f"tokens.{h}x{w}")).normal((h * w, dim)))
        for variant in variants:
            layer = _make_layer(variant, dim, heads, neighborhood, window, seed)
            layer(tokens, (h, w))  # warm-up: caches, allocator, page faults
            t0 = now()
            layer(tokens, (h, w))
            estimate = max(now() - t0, 1e-4)
            # batch several forwards per timed rep so clock granularity and
            # per-call jitter stay small relative to each measurement
            inner = max(1, min(32, int(0.2 / estimate)))
            times = []
            for _ in range(reps):
                t0 = now()
                for _ in range(inner):
                    layer(tokens, (h, w))
                times.append((now() - t0) / inner)
            times.sort()
            rows.append(BenchRow(variant=variant, tokens=h * w,
                                 micros=times[len(times) // 2] * 1e6))
    return rows


def to_csv(rows: list[BenchRow]) -> str:
    lines = ["variant,L,micros"]
    for r in rows:
        lines.append(f"{r.variant},{r.tokens},{r.micros:.3f}")
    return "\n".join(lines) + "\n"


def doubling_ratios(rows: list[BenchRow], variant: str) -> list[float]:
    """time(2L) / time(L) for consecutive measured sizes of one variant."""
    mine = sorted((r for r in rows if r.variant == variant), key=lambda r: r.tokens)
    out = []
    for a, b in zip(mine, mine[1:]):
        if b.tokens == 2 * a.tokens:
            out.append(b.micros / a.micros)
    return out


def robust_doubling_ratios(sizes: list[tuple[int, int]], variants=("nmsa", "full"),
                           pairs: int = 9, clock: str = "cpu", dim: int = 32,
                           heads: int = 2, neighborhood: int = 7, window: int = 8,
                           seed: int = 0) -> dict[str, list[float]]:
    """Median of interleaved-pair ratios time(2L)/time(L) per doubling.

    Each pair times L then 2L back to back, so machine-level slowdowns
    (noisy neighbours, frequency shifts) hit both sides of a ratio almost
    equally and cancel; the median across pairs discards the remainder.
    This is the measurement used by the acceptance suite; ``bench_attention``
    stays the plain per-size protocol behind the CLI.
    """
    _stabilize_allocator()
    now = time.perf_counter if clock == "wall" else time.process_time

    def element(layer, tokens, spatial, inner):
        t0 = now()
        for _ in range(inner):
            layer(tokens, spatial)
        return (now() - t0) / inner

    out: dict[str, list[float]] = {v: [] for v in variants}
    for small, big in zip(sizes, sizes[1:]):
        if big[0] * big[1] != 2 * small[0] * small[1]:
            continue
        for variant in variants:
            layer = _make_layer(variant, dim, heads, neighborhood, window, seed)
            toks = {}
            inner = {}
            for spatial in (small, big):
                h, w = spatial
                toks[spatial] = Tensor(
                    Rng(split(seed, f"tokens.{h}x{w}")).normal((h * w, dim)))
                layer(toks[spatial], spatial)  # warm-up
                t0 = time.perf_counter()
                layer(toks[spatial], spatial)
                estimate = max(time.perf_counter() - t0, 1e-4)
                inner[spatial] = max(1, min(32, int(0.15 / estimate)))
            ratios = []
            for _ in range(pairs):
                t_small = element(layer, toks[small], small, inner[small])
                t_big = element(layer, toks[big], big, inner[big])
                ratios.append(t_big / max(t_small, 1e-9))
            ratios.sort()
            out[variant].append(ratios[len(ratios) // 2])
    return out
