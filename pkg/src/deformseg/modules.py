"""Parameter containers and basic trainable layers.

Every parameter is created through a ``Scope``, which assigns it a unique
dotted name and draws its initial values from a stream keyed by that name.
Initialization therefore depends only on (root seed, parameter name), never
on creation order, so architectural toggles that add parameters leave all
shared parameters bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Rng, split
from .tensor import Tensor, add, gelu, layer_norm, matmul, permute, reshape


class Scope:
    """Hierarchical parameter factory bound to one root seed."""

    def __init__(self, seed: int, prefix: str = "", _names: set | None = None,
                 materialize: bool = True):
        self.seed = seed
        self.prefix = prefix
        self._names = _names if _names is not None else set()
        self.materialize = materialize

    def child(self, name: str) -> "Scope":
        prefix = f"{self.prefix}.{name}" if self.prefix else name
        return Scope(self.seed, prefix, self._names, self.materialize)

    def _make(self, name: str, data, shape) -> Tensor:
        full = f"{self.prefix}.{name}" if self.prefix else name
        if full in self._names:
            raise ConfigError(f"duplicate parameter name: {full}")
        self._names.add(full)
        if not self.materialize:
            data = np.broadcast_to(np.float64(0.0), shape)
        t = Tensor(data, requires_grad=True)
        t.name = full
        return t

    def trunc_normal(self, name: str, shape, std: float = 0.02) -> Tensor:
        shape = tuple(shape)
        if self.materialize:
            full = f"{self.prefix}.{name}" if self.prefix else name
            data = Rng(split(self.seed, "param." + full)).trunc_normal(shape, std=std)
        else:
            data = None
        return self._make(name, data, shape)

    def zeros(self, name: str, shape) -> Tensor:
        shape = tuple(shape)
        return self._make(name, np.zeros(shape) if self.materialize else None, shape)

    def ones(self, name: str, shape) -> Tensor:
        shape = tuple(shape)
        return self._make(name, np.ones(shape) if self.materialize else None, shape)


class Module:
    """Base class for anything holding parameters (directly or via children)."""

    def parameters(self) -> list[Tensor]:
        """All unique parameters reachable from this module, sorted by name."""
        found: dict[str, Tensor] = {}
        stack: list = [self]
        while stack:
            obj = stack.pop()
            if isinstance(obj, Tensor):
                if obj.requires_grad:
                    if obj.name is None:
                        raise ConfigError("parameter without a scope name")
                    found[obj.name] = obj
            elif isinstance(obj, Module):
                stack.extend(vars(obj).values())
            elif isinstance(obj, (list, tuple)):
                stack.extend(obj)
            elif isinstance(obj, dict):
                stack.extend(obj.values())
        return [found[k] for k in sorted(found)]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = sorted(set(params) - set(state))
        if missing:
            raise DimensionError(f"checkpoint missing tensor {missing[0]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(
                    f"shape mismatch for tensor {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, scope: Scope, d_in: int, d_out: int, bias: bool = True):
        self.w = scope.trunc_normal("w", (d_in, d_out))
        self.b = scope.zeros("b", (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        return add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, scope: Scope, dim: int, eps: float = 1e-5):
        self.gamma = scope.ones("gamma", (dim,))
        self.beta = scope.zeros("beta", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Mlp(Module):
    """Two-layer feed-forward block with gelu, expansion ratio 4."""

    def __init__(self, scope: Scope, dim: int, ratio: int = 4):
        self.fc1 = Linear(scope.child("fc1"), dim, ratio * dim)
        self.fc2 = Linear(scope.child("fc2"), ratio * dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def to_grid(tokens: Tensor, spatial: tuple[int, int]) -> Tensor:
    """[L, d] row-major tokens -> [d, h, w] feature grid."""
    h, w = spatial
    if tokens.shape[0] != h * w:
        raise DimensionError(f"token count {tokens.shape[0]} != {h}x{w}")
    return permute(reshape(tokens, (h, w, tokens.shape[1])), (2, 0, 1))


def to_tokens(grid: Tensor) -> Tensor:
    """[d, h, w] feature grid -> [L, d] row-major tokens."""
    d, h, w = grid.shape
    return reshape(permute(grid, (1, 2, 0)), (h * w, d))
