"""Parameter containers and the building blocks shared by encoder and decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class Context:
    """Per-forward-pass switches: training mode and the dropout RNG stream."""

    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None

    def drop(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.dropout, self.rng, self.training)


EVAL = Context()


class Module:
    """Minimal module: parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{key}.{i}.")

    def no_decay(self) -> set[str]:
        """Names of LayerNorm parameters, which are excluded from weight decay."""
        out = set()
        for prefix, module in self.named_modules():
            if isinstance(module, LayerNorm):
                out.update(prefix + name for name in module.named_parameters())
        return out


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        self.d_in, self.d_out = d_in, d_out
        scale = 0.0 if zero else np.sqrt(1.0 / d_in)
        self.weight = ad.parameter(rng.normal(0.0, 1.0, (d_in, d_out)) * scale)
        self.bias = ad.parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ad.ShapeError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = ad.parameter(np.ones(d))
        self.bias = ad.parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    """linear -> ReLU -> (dropout) -> linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_last: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero=zero_last)

    def __call__(self, x: Tensor, ctx: Context = EVAL) -> Tensor:
        return self.fc2(ctx.drop(ad.relu(self.fc1(x))))


@dataclass
class AttentionOutput:
    value: Tensor
    weights: np.ndarray = field(repr=False)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` parallel heads.

    Queries are ``(B, T, d)``, memory ``(B, M, d)``. ``mask`` is a boolean
    array broadcastable to ``(B, heads, T, M)`` where True marks allowed keys.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.d, self.heads, self.dh = d, heads, d // heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return ad.transpose(ad.reshape(x, (b, n, self.heads, self.dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, memory: Tensor, mask: np.ndarray | None = None,
                 ctx: Context = EVAL) -> AttentionOutput:
        b, t, _ = x.shape
        q = self._split(self.wq(x))
        k = self._split(self.wk(memory))
        v = self._split(self.wv(memory))
        scores = ad.matmul(q, ad.swap_last(k)) * (1.0 / np.sqrt(self.dh))
        attn = ad.softmax(scores, axis=-1, mask=mask)
        mixed = ad.matmul(ctx.drop(attn), v)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, self.d))
        return AttentionOutput(self.wo(merged), attn.data)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))
