from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (
    Tensor,
    ShapeError,
    dropout_mask,
    gelu,
    layer_norm,
    relu,
    softmax,
    swapaxes,
)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data), requires_grad=True)


class Module:
    """Container that discovers parameters and submodules from its attributes.

    Attribute insertion order defines parameter order, so names are stable
    and deterministic for a given constructor.
    """

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _items(self):
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            else:
                yield from value.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix.rstrip("."), self
        for key, value in self._items():
            if isinstance(value, Module):
                yield from value.named_modules(prefix + key + ".")

    def train(self, mode: bool = True) -> Module:
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def freeze(self) -> Module:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        unknown = sorted(set(state) - set(own))
        missing = sorted(set(own) - set(state))
        if unknown or missing:
            raise KeyError(f"state mismatch: unknown={unknown} missing={missing}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float64)

    def set_rng_stream(self, seed: int, step: int) -> None:
        """Point every dropout layer at the (seed, layer path, step) stream."""
        for name, m in self.named_modules():
            if isinstance(m, Dropout):
                m.seed, m.name, m.step = seed, name, step


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out)))
        if bias:
            self.bias = Parameter(uniform_init(rng, d_in, (d_out,)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        out = x @ self.weight
        return out + self.bias if hasattr(self, "bias") else out


_ACTIVATIONS = {"relu": relu, "gelu": gelu}


class MLP(Module):
    """Stack of Linear layers with an activation between them.

    ``final_activation`` also applies the activation after the last layer.
    """

    def __init__(self, sizes, rng: np.random.Generator, activation: str = "relu",
                 final_activation: bool = False):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.activation = activation
        self.final_activation = final_activation
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = act(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        if dim < 2:
            raise ValueError("LayerNorm needs dim >= 2")
        self.eps = eps
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


def dropout_rng(seed: int, name: str, step: int, call: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, layer path); counter carries (step, call)."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype="<u8").copy()
    counter = np.array([0, 0, call, step], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = 0
        self.name = ""
        self.step = 0
        self._calls = 0
        self._last_step = None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        if self._last_step != self.step:
            self._last_step, self._calls = self.step, 0
        rng = dropout_rng(self.seed, self.name, self.step, self._calls)
        self._calls += 1
        keep = rng.random(x.shape) >= self.rate
        mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return dropout_mask(x, mask)


@dataclass(frozen=True)
class TransformerConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 256
    mlp_hidden: int = 2048
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.mlp_hidden < 1:
            raise ValueError("num_layers, num_heads and mlp_hidden must be positive")
        if self.model_dim < 1 or self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.num_heads} heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention.

    The key projection has no bias: softmax is invariant to it, so its
    gradient is identically zero.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.dim, self.num_heads = dim, num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng, bias=False)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _heads(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.reshape(b, t, self.num_heads, self.dim // self.num_heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"attention expects width {self.dim}, got {x.shape}")
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        b, t, c = x.shape
        dh = c // self.num_heads
        q = self._heads(self.query(x), b, t)
        k = self._heads(self.key(x), b, t)
        v = self._heads(self.value(x), b, t)
        scores = (q @ swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        ctx = softmax(scores, axis=-1) @ v
        out = self.out(ctx.transpose(0, 2, 1, 3).reshape(b, t, c))
        return out.reshape(t, c) if single else out


class TransformerEncoderLayer(Module):
    """Pre-LN block: x + MHA(LN(x)), then + MLP(LN(x)) with GELU."""

    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        super().__init__()
        d = config.model_dim
        self.norm_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, config.num_heads, rng)
        self.drop_attn = Dropout(config.dropout_rate)
        self.norm_mlp = LayerNorm(d)
        self.fc1 = Linear(d, config.mlp_hidden, rng)
        self.drop_hidden = Dropout(config.dropout_rate)
        self.fc2 = Linear(config.mlp_hidden, d, rng)
        self.drop_out = Dropout(config.dropout_rate)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop_attn(self.attn(self.norm_attn(x)))
        h = self.drop_hidden(gelu(self.fc1(self.norm_mlp(x))))
        return x + self.drop_out(self.fc2(h))


class TransformerEncoder(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.layers = [TransformerEncoderLayer(config, rng) for _ in range(config.num_layers)]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
