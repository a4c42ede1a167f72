"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Graphs are define-by-run: opening a ``Tape`` as a context manager makes every
operation on grad-requiring tensors record a node; ``backward`` then sweeps the
append-only node list in reverse.  With no active tape, every operation is a
plain numpy computation, which is the fast path used for inference.

Values are immutable after creation.  Kernels are vectorized over output
elements; convolution is computed directly from a strided window view.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError

_TAPE_STACK: list["Tape"] = []


class TapeNode:
    """One recorded operation: input node ids plus a backward rule.

    ``rule(grad_out)`` returns one gradient array (or None) per input, in
    order.  Leaf nodes have no rule.
    """

    __slots__ = ("inputs", "rule", "tensor")

    def __init__(self, inputs, rule, tensor):
        self.inputs = inputs
        self.rule = rule
        self.tensor = tensor


class Tape:
    """Append-only record of operations; node inputs always precede the node."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def _bind(self, t: "Tensor") -> int:
        """Node id of t on this tape, creating a leaf node on first use."""
        if t._tape is self and t.node_id is not None:
            return t.node_id
        self.nodes.append(TapeNode((), None, t))
        t._tape = self
        t.node_id = len(self.nodes) - 1
        return t.node_id


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """N-dimensional float64 array, optionally recorded on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.name: str | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all defer to the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> dict[int, np.ndarray]:
        if self._tape is None:
            raise ContractError("tensor was not recorded on a tape")
        return backward(self._tape, self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    """Wrap out_data; record a node if a tape is active and any input needs grad."""
    tape = active_tape()
    out = Tensor(out_data)
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    ids = tuple(tape._bind(t) if t.requires_grad else -1 for t in inputs)
    out.requires_grad = True
    tape.nodes.append(TapeNode(ids, rule, out))
    out._tape = tape
    out.node_id = len(tape.nodes) - 1
    return out


def backward(tape: Tape, seed: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar seed; returns a node-id -> gradient map.

    Gradients accumulate additively for nodes reached along several paths,
    and only nodes reachable from the seed receive one.  Each reachable
    tensor that requires grad also gets its ``.grad`` slot populated
    (added to any gradient already there).
    """
    if seed.size != 1:
        raise ContractError(f"backward seed must be scalar, got shape {seed.shape}")
    if seed._tape is not tape or seed.node_id is None:
        raise ContractError("seed was not recorded on the given tape")
    grads: dict[int, np.ndarray] = {seed.node_id: np.ones_like(seed.data)}
    for nid in range(seed.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.rule is None:
            continue
        for iid, ig in zip(node.inputs, node.rule(g)):
            if iid < 0 or ig is None:
                continue
            prev = grads.get(iid)
            grads[iid] = ig if prev is None else prev + ig
    for nid, g in grads.items():
        t = tape.nodes[nid].tensor
        if t is not None and t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
    return grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def rule(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def rule(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def rule(g):
        return (_unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def rule(g):
        return (_unbroadcast(g / bd, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * ad / (bd * bd), b.shape) if b.requires_grad else None)

    return _record(out, (a, b), rule)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _record(x.data + float(c), (x,), lambda g: (g,))


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    xd = x.data
    c = math.sqrt(2.0 / math.pi)
    x2 = xd * xd
    t = np.tanh(c * (xd + 0.044715 * x2 * xd))
    out = 0.5 * xd * (1.0 + t)

    def rule(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        return (g * dx,)

    return _record(out, (x,), rule)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from e
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shapes disagree: {[t.shape for t in tensors]}") from e
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        parts = np.split(g, offsets, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _record(out, tuple(tensors), rule)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 0: out[i, ...] = x[idx[i], ...] for any idx shape."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]
    rest = x.data.shape[1:]

    def rule(g):
        # scatter-add via one flat bincount (much faster than np.add.at)
        width = int(np.prod(rest)) if rest else 1
        flat = (idx.ravel()[:, None] * width + np.arange(width)[None, :]).ravel()
        acc = np.bincount(flat, weights=g.reshape(-1), minlength=x.data.size)
        return (acc.reshape(x.data.shape),)

    return _record(out, (x,), rule)


def nearest_downsample(x: Tensor, factor: int) -> Tensor:
    """Subsample the two trailing axes by an integer stride (top-left rule)."""
    f = int(factor)
    if f < 1:
        raise DimensionError(f"downsample factor must be >= 1, got {f}")
    out = x.data[..., ::f, ::f]

    def rule(g):
        dx = np.zeros_like(x.data)
        dx[..., ::f, ::f] = g
        return (dx,)

    return _record(np.ascontiguousarray(out), (x,), rule)


# ---------------------------------------------------------------------------
# reductions


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def rule(g):
        return (_expand_reduced(g, shape, axis, keepdims),)

    return _record(np.asarray(out), (x,), rule)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.data.shape
    n = x.data.size if axis is None else int(np.prod(
        [shape[a % len(shape)] for a in ((axis,) if isinstance(axis, int) else axis)]))

    def rule(g):
        return (_expand_reduced(g, shape, axis, keepdims) / n,)

    return _record(np.asarray(out), (x,), rule)


# ---------------------------------------------------------------------------
# matmul and normalizations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul batch dimensions not broadcastable: {a.shape} vs {b.shape}") from e
    ad, bd = a.data, b.data

    def rule(g):
        da = db = None
        if a.requires_grad:
            da = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            db = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return (da, db)

    return _record(out, (a, b), rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along one axis; rows sum to 1."""
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), rule)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def rule(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), rule)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = xh * gamma.data + beta.data
    lead = tuple(range(xd.ndim - 1))

    def rule(g):
        dgamma = (g * xh).sum(axis=lead) if gamma.requires_grad else None
        dbeta = g.sum(axis=lead) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxh = g * gamma.data
            dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                        - xh * (dxh * xh).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _record(out, (x, gamma, beta), rule)


# ---------------------------------------------------------------------------
# convolution family


def _window_view(fp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only strided view [C, kh, kw, Ho, Wo] over a padded map."""
    c, hp, wp = fp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sc, sh, sw = fp.strides
    return np.lib.stride_tricks.as_strided(
        fp, (c, kh, kw, ho, wo), (sc, sh, sw, sh * stride, sw * stride), writeable=False)


def _pad2d(arr: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad the two trailing axes (faster than np.pad for this pattern)."""
    if p == 0:
        return arr
    c, h, w = arr.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p))
    out[:, p:p + h, p:p + w] = arr
    return out


def conv2d(f: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D cross-correlation: f [C,H,W] with kernel [Co,C,kh,kw]."""
    if f.ndim != 3 or k.ndim != 4:
        raise DimensionError(f"conv2d expects f [C,H,W], k [Co,C,kh,kw]; got {f.shape}, {k.shape}")
    if f.shape[0] != k.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: f {f.shape} vs k {k.shape}")
    cin, h, w = f.shape
    co, _, kh, kw = k.shape
    s, p = int(stride), int(padding)
    if h + 2 * p < kh or w + 2 * p < kw:
        raise DimensionError(f"kernel {k.shape} larger than padded input {f.shape} (pad {p})")
    fp = _pad2d(f.data, p)
    view = _window_view(fp, kh, kw, s)
    out = np.tensordot(k.data, view, axes=([1, 2, 3], [0, 1, 2]))
    kd = k.data
    ho, wo = out.shape[1:]

    def rule(g):
        dk = df = None
        if k.requires_grad:
            dk = np.tensordot(g, view, axes=([1, 2], [3, 4]))
        if f.requires_grad:
            # full correlation of the stride-dilated output grad with the
            # flipped kernel reproduces the padded-input gradient in one shot
            hd, wd = (ho - 1) * s + 1, (wo - 1) * s + 1
            gd = np.zeros((co, hd + 2 * (kh - 1), wd + 2 * (kw - 1)))
            gd[:, kh - 1:kh - 1 + hd:s, kw - 1:kw - 1 + wd:s] = g
            dfull = np.tensordot(kd[:, :, ::-1, ::-1], _window_view(gd, kh, kw, 1),
                                 axes=([0, 2, 3], [0, 1, 2]))
            dfp = np.zeros_like(fp)
            dfp[:, :dfull.shape[1], :dfull.shape[2]] = dfull
            df = dfp[:, p:p + h, p:p + w]
        return (df, dk)

    return _record(out, (f, k), rule)


def transposed_conv2d(f: Tensor, k: Tensor, stride: int = 2) -> Tensor:
    """Stride-s transposed convolution: f [Ci,H,W], k [Ci,Co,kh,kw].

    Output extent is (H-1)*s + kh; with kh == s this is an exact xs upsampler.
    """
    if f.ndim != 3 or k.ndim != 4:
        raise DimensionError(f"transposed_conv2d expects f [Ci,H,W], k [Ci,Co,kh,kw]; got {f.shape}, {k.shape}")
    if f.shape[0] != k.shape[0]:
        raise DimensionError(f"transposed_conv2d channel mismatch: f {f.shape} vs k {k.shape}")
    ci, h, w = f.shape
    _, co, kh, kw = k.shape
    s = int(stride)
    out = np.zeros((co, (h - 1) * s + kh, (w - 1) * s + kw))
    fd, kd = f.data, k.data
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s] += \
                np.tensordot(kd[:, :, i, j], fd, axes=([0], [0]))

    def rule(g):
        gview = _window_view(g, kh, kw, s)
        df = dk = None
        if f.requires_grad:
            df = np.tensordot(kd, gview, axes=([1, 2, 3], [0, 1, 2]))
        if k.requires_grad:
            dk = np.tensordot(fd, gview, axes=([1, 2], [3, 4]))
        return (df, dk)

    return _record(out, (f, k), rule)


def depthwise_conv2d(f: Tensor, k: Tensor, padding: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation: f [C,H,W] with kernel [C,kh,kw], stride 1."""
    if f.ndim != 3 or k.ndim != 3 or f.shape[0] != k.shape[0]:
        raise DimensionError(f"depthwise_conv2d expects f [C,H,W], k [C,kh,kw]; got {f.shape}, {k.shape}")
    c, h, w = f.shape
    _, kh, kw = k.shape
    p = int(padding)
    if h + 2 * p < kh or w + 2 * p < kw:
        raise DimensionError(f"kernel {k.shape} larger than padded input {f.shape} (pad {p})")
    fp = _pad2d(f.data, p)
    view = _window_view(fp, kh, kw, 1)
    out = np.einsum("cijhw,cij->chw", view, k.data)
    kd = k.data
    ho, wo = out.shape[1:]

    def rule(g):
        dk = df = None
        if k.requires_grad:
            dk = np.einsum("cijhw,chw->cij", view, g)
        if f.requires_grad:
            gp = np.zeros((g.shape[0], g.shape[1] + 2 * (kh - 1), g.shape[2] + 2 * (kw - 1)))
            gp[:, kh - 1:kh - 1 + g.shape[1], kw - 1:kw - 1 + g.shape[2]] = g
            dfull = np.einsum("cijyx,cij->cyx", _window_view(gp, kh, kw, 1),
                              kd[:, ::-1, ::-1])
            dfp = np.zeros_like(fp)
            dfp[:, :dfull.shape[1], :dfull.shape[2]] = dfull
            df = dfp[:, p:p + h, p:p + w]
        return (df, dk)

    return _record(out, (f, k), rule)
