"""Central-difference gradient checking for every differentiable operation.

``finite_diff_check`` compares tape gradients of a scalar-valued closure
against central differences (h = 1e-3, float64) on randomly sampled
coordinates of each operand group.  A coordinate passes when the absolute
difference is under 1e-6 or the relative error is under the tolerance.

``run_checks`` drives the named registry used by both the test suite and the
``gradcheck`` CLI command: each entry builds a small random instance of one
operation (deformable layers get small non-zero offsets so no sample position
sits on an interpolation kink) and reports the worst relative error per
operand group over the requested trials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (DMSA, NMSA, WMSA, AttentionConfig, TransformerBlock)
from .data import gen_synthetic
from .embed import DeformConv2d, PatchEmbedDown, PatchEmbedFirst
from .errors import ContractError
from .losses import LossConfig, combined_loss, dice_loss, one_hot
from .modules import Scope
from .network import NetworkConfig, build
from .posenc import CpeBaseline, MsDepe
from .rng import Rng, split
from .sampling import sample
from .tensor import (Tape, Tensor, backward, conv2d, gelu, layer_norm, matmul,
                     softmax, tensor_sum, transposed_conv2d)

ABS_FLOOR = 1e-6
STEP = 1e-3


def rel_error(analytic: float, numeric: float) -> float:
    diff = abs(analytic - numeric)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def finite_diff_check(forward, groups: dict[str, list[Tensor]], rng: Rng,
                      max_coords: int = 8, h: float = STEP) -> dict[str, float]:
    """Worst relative error per operand group.

    ``forward()`` must rebuild the graph from the tensors' current ``.data``
    each call and return a scalar Tensor.  Probing mutates ``.data`` in place
    and restores it.
    """
    for tensors in groups.values():
        for t in tensors:
            t.grad = None
    with Tape() as tape:
        backward(tape, forward())
    worst: dict[str, float] = {}
    for name, tensors in groups.items():
        err = 0.0
        for t in tensors:
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = grad.reshape(-1)
            count = min(max_coords, flat.size)
            coords = sorted({int(rng.integers(flat.size)) for _ in range(count)})
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = forward().item()
                flat[c] = orig - h
                fm = forward().item()
                flat[c] = orig
                err = max(err, rel_error(gflat[c], (fp - fm) / (2.0 * h)))
        worst[name] = err
    return worst


@dataclass
class CheckResult:
    op: str
    trial: int
    worst: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.worst.values())


def _rand_tensor(rng: Rng, shape, std: float = 1.0) -> Tensor:
    return Tensor(rng.normal(shape, std=std), requires_grad=True)


def _kick_offsets(module, rng: Rng) -> None:
    """Give every zero-initialized offset parameter a small fractional value.

    Biases move all sample positions ~0.2 px off the lattice; weights stay
    small enough that conv responses cannot push a position back onto an
    integer-lattice kink, where the position gradient is only one-sided.
    """
    for p in module.parameters():
        if "offset" in p.name:
            if p.ndim == 1:
                p.data = rng.uniform(p.shape, low=0.15, high=0.3)
            else:
                p.data = rng.normal(p.shape, std=0.002)


def _check_matmul(rng: Rng):
    a = _rand_tensor(rng, (3, 4))
    b = _rand_tensor(rng, (4, 2))
    return lambda: tensor_sum(matmul(a, b)), {"a": [a], "b": [b]}, 1e-6


def _check_softmax(rng: Rng):
    x = _rand_tensor(rng, (5,))
    v = Tensor(rng.normal((5,)))
    return lambda: tensor_sum(softmax(x, axis=0) * v), {"x": [x]}, 1e-6


def _check_gelu(rng: Rng):
    x = _rand_tensor(rng, (4, 5))
    return lambda: tensor_sum(gelu(x)), {"x": [x]}, 1e-5


def _check_layer_norm(rng: Rng):
    x = _rand_tensor(rng, (6, 5))
    gamma = _rand_tensor(rng, (5,))
    beta = _rand_tensor(rng, (5,))
    v = Tensor(rng.normal((6, 5)))
    return (lambda: tensor_sum(layer_norm(x, gamma, beta) * v),
            {"x": [x], "gamma": [gamma], "beta": [beta]}, 1e-4)


def _check_conv2d(rng: Rng):
    f = _rand_tensor(rng, (2, 5, 5))
    k = _rand_tensor(rng, (3, 2, 3, 3))
    v = Tensor(rng.normal((3, 5, 5)))
    return (lambda: tensor_sum(conv2d(f, k, stride=1, padding=1) * v),
            {"f": [f], "k": [k]}, 1e-5)


def _check_transposed_conv2d(rng: Rng):
    f = _rand_tensor(rng, (3, 4, 4))
    k = _rand_tensor(rng, (3, 2, 2, 2))
    v = Tensor(rng.normal((2, 8, 8)))
    return (lambda: tensor_sum(transposed_conv2d(f, k, stride=2) * v),
            {"f": [f], "k": [k]}, 1e-5)


def _fractional_positions(rng: Rng, count: int, extents) -> np.ndarray:
    """In-bounds positions with every coordinate >= 0.05 from any integer."""
    cols = []
    for ext in extents:
        cell = np.floor(rng.uniform((count,), low=0.0, high=ext - 1)).astype(np.float64)
        frac = rng.uniform((count,), low=0.05, high=0.95)
        cols.append(cell + frac)
    return np.stack(cols, axis=1)


def _check_sample2d(rng: Rng):
    f = _rand_tensor(rng, (3, 6, 6))
    pos = Tensor(_fractional_positions(rng, 10, (6, 6)), requires_grad=True)
    v = Tensor(rng.normal((3, 10)))
    return (lambda: tensor_sum(sample(f, pos) * v),
            {"f": [f], "positions": [pos]}, 1e-4)


def _check_sample3d(rng: Rng):
    f = _rand_tensor(rng, (2, 4, 4, 4))
    pos = Tensor(_fractional_positions(rng, 8, (4, 4, 4)), requires_grad=True)
    v = Tensor(rng.normal((2, 8)))
    return (lambda: tensor_sum(sample(f, pos) * v),
            {"f": [f], "positions": [pos]}, 1e-4)


def _check_deformable_conv2d(rng: Rng):
    layer = DeformConv2d(Scope(rng.next_u64()).child("dc"), 2, 3, kernel=3, stride=1)
    layer.kernel.data = rng.normal(layer.kernel.shape, std=0.5)
    _kick_offsets(layer, rng)
    f = _rand_tensor(rng, (2, 8, 8))
    v = Tensor(rng.normal((3, 8, 8)))
    groups = {"input": [f], "kernel": [layer.kernel, layer.bias],
              "offset_conv": [layer.offset_w, layer.offset_b]}
    return lambda: tensor_sum(layer(f) * v), groups, 1e-4


def _check_patch_embed_down(rng: Rng):
    layer = PatchEmbedDown(Scope(rng.next_u64()).child("down"), 4)
    # O(1) kernel scale keeps the layer norm well away from its
    # constant-input singularity; the finer step tames LN truncation error
    layer.conv.kernel.data = rng.normal(layer.conv.kernel.shape, std=0.5)
    f = _rand_tensor(rng, (4, 6, 6))
    v = Tensor(rng.normal((8, 3, 3)))
    return (lambda: tensor_sum(layer(f) * v),
            {"input": [f], "params": layer.parameters()}, 1e-5, 2e-4)


def _check_patch_embed_first(rng: Rng):
    layer = PatchEmbedFirst(Scope(rng.next_u64()).child("embed"), 1, 8, patch_size=4)
    layer.conv1.kernel.data = rng.normal(layer.conv1.kernel.shape, std=0.5)
    layer.conv2.kernel.data = rng.normal(layer.conv2.kernel.shape, std=0.5)
    _kick_offsets(layer, rng)
    f = _rand_tensor(rng, (1, 8, 8))
    v = Tensor(rng.normal((8, 2, 2)))
    return (lambda: tensor_sum(layer(f) * v),
            {"input": [f], "params": layer.parameters()}, 1e-4, 2e-4)


def _check_dmsa(rng: Rng):
    cfg = AttentionConfig.for_dim(8, 2, variant="dmsa")
    layer = DMSA(Scope(rng.next_u64()).child("dmsa"), 8, cfg)
    _kick_offsets(layer, rng)
    x = _rand_tensor(rng, (16, 8))
    v = Tensor(rng.normal((16, 8)))
    groups = {"input": [x],
              "wq": list(layer.wq), "wk": list(layer.wk), "wv": list(layer.wv),
              "wo": [layer.wo],
              "offset_conv": list(layer.offset_w) + list(layer.offset_b)}
    return lambda: tensor_sum(layer(x, (4, 4)) * v), groups, 1e-4


def _check_nmsa(rng: Rng):
    cfg = AttentionConfig.for_dim(8, 2, neighborhood=3, variant="nmsa")
    layer = NMSA(Scope(rng.next_u64()).child("nmsa"), 8, cfg)
    x = _rand_tensor(rng, (16, 8))
    v = Tensor(rng.normal((16, 8)))
    groups = {"input": [x], "projections": [layer.wq, layer.wk, layer.wv, layer.wo]}
    return lambda: tensor_sum(layer(x, (4, 4)) * v), groups, 1e-4


def _check_wmsa(rng: Rng):
    cfg = AttentionConfig.for_dim(8, 2, variant="wmsa")
    layer = WMSA(Scope(rng.next_u64()).child("wmsa"), 8, cfg, window=2)
    x = _rand_tensor(rng, (16, 8))
    v = Tensor(rng.normal((16, 8)))
    groups = {"input": [x], "projections": [layer.wq, layer.wk, layer.wv, layer.wo]}
    return lambda: tensor_sum(layer(x, (4, 4)) * v), groups, 1e-4


def _check_transformer_block(rng: Rng):
    block = TransformerBlock(Scope(rng.next_u64()).child("blk"), 8, 2, "dmsa",
                             neighborhood=3)
    _kick_offsets(block, rng)
    x = _rand_tensor(rng, (16, 8))
    v = Tensor(rng.normal((16, 8)))
    return (lambda: tensor_sum(block(x, (4, 4)) * v),
            {"input": [x], "params": block.parameters()}, 1e-4)


def _check_ms_depe(rng: Rng):
    layer = MsDepe(Scope(rng.next_u64()).child("pe"), 4)
    _kick_offsets(layer, rng)
    x = _rand_tensor(rng, (64, 4))
    v = Tensor(rng.normal((64, 4)))
    groups = {"input": [x],
              "kernels": [layer.branch3.kernel, layer.branch5.kernel,
                          layer.branch3.bias, layer.branch5.bias],
              "offset_conv": [layer.branch3.offset_w, layer.branch3.offset_b,
                              layer.branch5.offset_w, layer.branch5.offset_b]}
    return lambda: tensor_sum(layer(x, (8, 8)) * v), groups, 1e-4


def _check_cpe(rng: Rng):
    layer = CpeBaseline(Scope(rng.next_u64()).child("cpe"), 4)
    x = _rand_tensor(rng, (36, 4))
    v = Tensor(rng.normal((36, 4)))
    return (lambda: tensor_sum(layer(x, (6, 6)) * v),
            {"input": [x], "params": layer.parameters()}, 1e-4)


def _check_dice_loss(rng: Rng):
    logits = _rand_tensor(rng, (2, 4, 4))
    labels = (rng.uniform((4, 4)) > 0.5).astype(np.int64)
    target = one_hot(labels, 2)
    return lambda: dice_loss(logits, target), {"logits": [logits]}, 1e-5


def _check_network(rng: Rng):
    cfg = NetworkConfig.nano(deep_supervision=True)
    net = build(cfg, seed=int(rng.next_u64() % (2**31)))
    _kick_offsets(net, rng)
    sample_seed = int(rng.next_u64() % (2**31))
    seg = gen_synthetic(sample_seed, 3, 32, 32)
    loss_cfg = LossConfig(0.6)

    def forward():
        out = net.forward(seg.image)
        return combined_loss(out.logits, out.aux_logits, seg.label, loss_cfg)

    params = net.parameters()
    picked = [params[int(rng.integers(len(params)))] for _ in range(12)]
    seg.image.requires_grad = True
    return forward, {"input": [seg.image], "params": picked}, 1e-3


CHECKS = {
    "matmul": ("tensor-core", _check_matmul),
    "softmax": ("tensor-core", _check_softmax),
    "gelu": ("tensor-core", _check_gelu),
    "layer_norm": ("tensor-core", _check_layer_norm),
    "conv2d": ("tensor-core", _check_conv2d),
    "transposed_conv2d": ("tensor-core", _check_transposed_conv2d),
    "sample2d": ("grid-sampling", _check_sample2d),
    "sample3d": ("grid-sampling", _check_sample3d),
    "deformable_conv2d": ("deform-embed", _check_deformable_conv2d),
    "patch_embed_first": ("deform-embed", _check_patch_embed_first),
    "patch_embed_down": ("deform-embed", _check_patch_embed_down),
    "dmsa": ("attention", _check_dmsa),
    "nmsa": ("attention", _check_nmsa),
    "wmsa": ("attention", _check_wmsa),
    "transformer_block": ("attention", _check_transformer_block),
    "ms_depe": ("posenc", _check_ms_depe),
    "cpe": ("posenc", _check_cpe),
    "dice_loss": ("train-eval", _check_dice_loss),
    "network": ("network", _check_network),
}


def run_checks(ops: list[str], seed: int = 0, trials: int = 5,
               max_coords: int = 8) -> list[CheckResult]:
    if trials < 1:
        raise ContractError(f"trials must be >= 1, got {trials}")
    results = []
    for op in ops:
        module, builder = CHECKS[op]
        for trial in range(trials):
            rng = Rng(split(seed, f"{op}.{trial}"))
            built = builder(rng)
            forward, groups, tol = built[:3]
            h = built[3] if len(built) > 3 else STEP
            coords = max_coords if op != "network" else 3
            worst = finite_diff_check(forward, groups, rng, max_coords=coords, h=h)
            results.append(CheckResult(op=op, trial=trial, worst=worst, tol=tol))
    return results


def ops_for_module(module: str | None) -> list[str]:
    if module is None:
        return list(CHECKS)
    return [op for op, (mod, _) in CHECKS.items() if mod == module]
