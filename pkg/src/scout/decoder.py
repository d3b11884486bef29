"""Autoregressive decoder with parallel cross-attention and multi-head gated fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (EVAL, Context, LayerNorm, Linear, MLP, Module, MultiHeadAttention,
                     causal_mask, sinusoidal_positions)

FUSION_MODES = ("patch_only", "concat", "film_concat", "film_gated")
STREAMS = ("patch", "slide", "concept")


def gate_weights(h_t: Tensor, h_patch: Tensor, h_slide: Tensor, h_concept: Tensor,
                 phi: MLP, tau, heads: int) -> Tensor:
    """Per-token, per-head softmax weights over the three streams.

    Returns:
        ``(B, T, heads, 3)`` weights; the last axis sums to one.
    """
    z = phi(ad.concat([h_t, h_patch, h_slide, h_concept], axis=-1))
    z = ad.reshape(z, z.shape[:-1] + (heads, 3))
    if isinstance(tau, Tensor):
        return ad.softmax(ad.div(z, tau), axis=-1)
    return ad.softmax(z, axis=-1, temperature=float(tau))


def gated_fuse(h_patch: Tensor, h_slide: Tensor, h_concept: Tensor, weights: Tensor,
               w_s: Linear, w_g: Linear, w_c: Linear, w_o: Linear, heads: int) -> Tensor:
    """Per-head convex combination of the projected streams, then ``w_o``."""
    b, t, d = h_patch.shape
    dh = d // heads
    fused = None
    for m, (proj, h) in enumerate(((w_s, h_patch), (w_g, h_slide), (w_c, h_concept))):
        x = ad.reshape(proj(h), (b, t, heads, dh))
        term = ad.mul(weights[..., m:m + 1], x)
        fused = term if fused is None else fused + term
    return w_o(ad.reshape(fused, (b, t, d)))


class DecoderLayer(Module):
    """Causal self-attention, cross-attention(s), fusion, feed-forward.

    ``mode`` picks the fusion: ``film_gated`` gates three cross-attention
    streams, ``film_concat`` concatenates them and projects linearly, and the
    single-memory modes (``patch_only``, ``concat``) use one cross-attention.
    """

    def __init__(self, d: int, heads: int, d_ff: int, mode: str, rng: np.random.Generator):
        self.mode, self.heads = mode, heads
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.ln_self = LayerNorm(d)
        if mode in ("film_gated", "film_concat"):
            self.cross = [MultiHeadAttention(d, heads, rng) for _ in STREAMS]
            self.ln_cross = [LayerNorm(d) for _ in STREAMS]
            if mode == "film_gated":
                self.w_s = Linear(d, d, rng)
                self.w_g = Linear(d, d, rng)
                self.w_c = Linear(d, d, rng)
                self.w_o = Linear(d, d, rng)
            else:
                self.fuse = Linear(3 * d, d, rng)
            self.ln_fuse = LayerNorm(d)
        else:
            self.cross = [MultiHeadAttention(d, heads, rng)]
            self.ln_cross = [LayerNorm(d)]
        self.ffn = MLP(d, d_ff, d, rng)
        self.ln_ffn = LayerNorm(d)

    def causal_self_attention(self, x: Tensor, ctx: Context = EVAL) -> Tensor:
        mask = causal_mask(x.shape[1])
        return self.ln_self(x + ctx.drop(self.self_attn(x, x, mask, ctx).value))

    def cross_attention(self, i: int, h: Tensor, memory: Tensor, ctx: Context = EVAL):
        out = self.cross[i](h, memory, ctx=ctx)
        return self.ln_cross[i](h + ctx.drop(out.value)), out.weights

    def __call__(self, x: Tensor, memories: Sequence[Tensor], ctx: Context = EVAL,
                 phi: MLP | None = None, tau=None, force_gate: str | None = None):
        h = self.causal_self_attention(x, ctx)
        streams, maps = [], []
        for i, mem in enumerate(memories):
            hm, w = self.cross_attention(i, h, mem, ctx)
            streams.append(hm)
            maps.append(w)
        alpha = None
        if self.mode == "film_gated":
            if force_gate is not None:
                b, t, _ = h.shape
                onehot = np.zeros((b, t, self.heads, 3))
                onehot[..., STREAMS.index(force_gate)] = 1.0
                alpha = Tensor(onehot)
            else:
                alpha = gate_weights(h, *streams, phi, tau, self.heads)
            fused = gated_fuse(*streams, alpha, self.w_s, self.w_g, self.w_c, self.w_o, self.heads)
            h = self.ln_fuse(h + ctx.drop(fused))
        elif self.mode == "film_concat":
            fused = self.fuse(ad.concat(streams, axis=-1))
            h = self.ln_fuse(h + ctx.drop(fused))
        else:
            h = streams[0]
        out = self.ln_ffn(h + ctx.drop(self.ffn(h, ctx)))
        return out, alpha, maps


@dataclass
class GateTrace:
    """Gate weights of one decoded sequence: ``weights[t, h] = (patch, slide, concept)``."""

    tokens: list[int]
    weights: np.ndarray  # (T, heads, 3)

    def rows(self, itos: Sequence[str] | None = None):
        for t, tok in enumerate(self.tokens):
            label = itos[tok] if itos is not None else str(tok)
            for h in range(self.weights.shape[1]):
                yield (t, label, h, *map(float, self.weights[t, h]))

    def summary(self) -> dict[str, float]:
        means = self.weights.reshape(-1, 3).mean(axis=0)
        return dict(zip(STREAMS, map(float, means)))

    def write(self, path: str | Path, itos: Sequence[str] | None = None) -> None:
        lines = [f"{t}\t{tok}\t{h}\t{a!r}\t{b!r}\t{c!r}" for t, tok, h, a, b, c in self.rows(itos)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_gate_trace(path: str | Path) -> list[tuple[int, str, int, float, float, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        t, tok, h, a, b, c = line.split("\t")
        rows.append((int(t), tok, int(h), float(a), float(b), float(c)))
    return rows


@dataclass
class DecoderOutput:
    logits: Tensor                                      # (B, T, V)
    gates: list[Tensor] = field(default_factory=list)   # per layer, (B, T, H, 3)
    cross_maps: list[list[np.ndarray]] = field(default_factory=list)


class Decoder(Module):
    def __init__(self, vocab_size: int, d: int, heads: int, d_ff: int, depth: int, mode: str,
                 rng: np.random.Generator, tau_init: float = 1.0, tau_min: float = 0.1,
                 max_positions: int = 128):
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        if d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.vocab_size, self.d, self.heads, self.mode = vocab_size, d, heads, mode
        self.tau_min = tau_min
        self.embed = ad.parameter(rng.normal(0.0, 1.0, (vocab_size, d)))
        self.positions = sinusoidal_positions(max_positions, d)
        self.layers = [DecoderLayer(d, heads, d_ff, mode, rng) for _ in range(depth)]
        if mode == "film_gated":
            self.phi = MLP(4 * d, d, 3 * heads, rng)
            # tau = tau_min + softplus(raw), so tau never drops below the floor
            self.tau_raw = ad.parameter(np.array(np.log(np.expm1(tau_init - tau_min))))
        self.head = Linear(d, vocab_size, rng)

    def tau(self) -> Tensor:
        return self.tau_min + ad.softplus(self.tau_raw)

    def embed_tokens(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.size and (tokens.max() >= self.vocab_size or tokens.min() < 0):
            raise ValueError(f"token id outside [0, {self.vocab_size})")
        t = tokens.shape[1]
        if t > len(self.positions):
            self.positions = sinusoidal_positions(2 * t, self.d)
        return ad.getitem(self.embed, tokens) + Tensor(self.positions[:t])

    def __call__(self, tokens: np.ndarray, memories: Sequence[Tensor], ctx: Context = EVAL,
                 force_gate: str | None = None) -> DecoderOutput:
        """Logits for every prefix position of ``tokens`` (``(B, T)`` int ids)."""
        x = self.embed_tokens(tokens)
        out = DecoderOutput(logits=None)
        tau = self.tau() if self.mode == "film_gated" else None
        phi = getattr(self, "phi", None)
        for layer in self.layers:
            x, alpha, maps = layer(x, memories, ctx, phi, tau, force_gate)
            if alpha is not None:
                out.gates.append(alpha)
            out.cross_maps.append(maps)
        out.logits = self.head(x)
        return out
