"""The full report generator: projections, encoder, memory assembly, decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FeatureBundle
from .decoder import FUSION_MODES, STREAMS, Decoder, DecoderOutput
from .encoder import ContextEncoder, EncoderOutput, ProjectionSet, project_modality
from .layers import EVAL, Context, Linear, Module


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_p: int = 32
    d_s: int = 16
    d_c: int = 16
    d_model: int = 32
    heads: int = 4
    d_ff: int = 64
    enc_depth: int = 2
    dec_depth: int = 2
    dropout: float = 0.1
    fusion_mode: str = "film_gated"
    film_alpha: float = 0.1
    pam_window: int = 3
    tau_init: float = 1.0
    tau_min: float = 0.1
    force_gate: str | None = None

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.force_gate is not None and self.force_gate not in STREAMS:
            raise ValueError(f"force_gate must be one of {STREAMS} or None")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class Batch:
    patch: np.ndarray    # (B, L, d_p)
    slide: np.ndarray    # (B, d_s)
    concept: np.ndarray  # (B, K, d_c)
    tokens: np.ndarray   # (B, T) PAD-padded, BOS ... EOS

    @classmethod
    def from_bundles(cls, bundles: Sequence[FeatureBundle]) -> "Batch":
        t = max(len(b.report_tokens) for b in bundles)
        tokens = np.zeros((len(bundles), t), dtype=np.int64)
        for i, b in enumerate(bundles):
            tokens[i, :len(b.report_tokens)] = b.report_tokens
        return cls(np.stack([b.patch_feats for b in bundles]),
                   np.stack([b.slide_feat for b in bundles]),
                   np.stack([b.concept_feats for b in bundles]),
                   tokens)


@dataclass
class Memories:
    """Decoder memories per stream, each ``(B, M, d)``."""

    tensors: list[Tensor]
    encoder: EncoderOutput | None = None

    def select(self, rows: np.ndarray) -> "Memories":
        return Memories([Tensor(m.data[rows]) for m in self.tensors], self.encoder)


class Scout(Module):
    """Report generator; ``config.fusion_mode`` selects the ablation variant.

    * ``film_gated``: FiLM encoder, three cross-attentions, gated fusion.
    * ``film_concat``: FiLM encoder, three cross-attentions, concat + linear.
    * ``concat``: unconditioned encoder; pooled patch, slide and concept
      vectors are concatenated and projected to one memory token.
    * ``patch_only``: unconditioned encoder over patches only.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        film = c.fusion_mode in ("film_gated", "film_concat")
        self.proj = ProjectionSet(c.d_p, c.d_s, c.d_c, c.d_model, rng)
        self.encoder = ContextEncoder(c.d_model, c.heads, c.d_ff, c.enc_depth, rng,
                                      film=film, film_alpha=c.film_alpha, pam_window=c.pam_window)
        if c.fusion_mode == "concat":
            self.concat_proj = Linear(3 * c.d_model, c.d_model, rng)
        self.decoder = Decoder(c.vocab_size, c.d_model, c.heads, c.d_ff, c.dec_depth,
                               c.fusion_mode, rng, tau_init=c.tau_init, tau_min=c.tau_min)

    def parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def context(self, training: bool = False, rng: np.random.Generator | None = None) -> Context:
        return Context(training=training, dropout=self.config.dropout, rng=rng)

    def encode(self, batch: Batch, ctx: Context = EVAL) -> Memories:
        mode = self.config.fusion_mode
        patch = project_modality(self.proj, Tensor(batch.patch), "patch")
        if mode == "patch_only":
            enc = self.encoder(patch, ctx=ctx)
            return Memories([enc.patch], enc)
        slide = project_modality(self.proj, Tensor(batch.slide), "slide")
        concepts = project_modality(self.proj, Tensor(batch.concept), "concept")
        if mode == "concat":
            enc = self.encoder(patch, ctx=ctx)
            pooled = ad.concat([ad.mean(enc.patch, axis=1), slide, ad.mean(concepts, axis=1)], axis=-1)
            token = self.concat_proj(pooled)
            return Memories([ad.reshape(token, (token.shape[0], 1, token.shape[1]))], enc)
        enc = self.encoder(patch, slide, concepts, ctx)
        return Memories([enc.patch, enc.slide, enc.concept], enc)

    def decode(self, tokens: np.ndarray, memories: Memories, ctx: Context = EVAL) -> DecoderOutput:
        return self.decoder(tokens, memories.tensors, ctx, self.config.force_gate)

    def __call__(self, batch: Batch, ctx: Context = EVAL) -> DecoderOutput:
        """Teacher-forced logits for ``batch.tokens[:, :-1]``."""
        return self.decode(batch.tokens[:, :-1], self.encode(batch, ctx), ctx)
