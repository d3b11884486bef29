"""Context-aware encoder with per-layer FiLM conditioning on slide and concept context."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import EVAL, Context, LayerNorm, MLP, Module, MultiHeadAttention

MODALITIES = ("patch", "slide", "concept")


class ProjectionSet(Module):
    """Modality-specific MLPs mapping raw features into the shared width ``d``."""

    def __init__(self, d_p: int, d_s: int, d_c: int, d: int, rng: np.random.Generator):
        self.dims = {"patch": d_p, "slide": d_s, "concept": d_c}
        self.patch = MLP(d_p, d, d, rng)
        self.slide = MLP(d_s, d, d, rng)
        self.concept = MLP(d_c, d, d, rng)

    def __call__(self, x: Tensor, modality: str) -> Tensor:
        return project_modality(self, x, modality)


def project_modality(proj: ProjectionSet, x: Tensor, modality: str) -> Tensor:
    """Row-wise projection of one modality into ``d``-space.

    Raises:
        ValueError: unknown modality or wrong input width.
    """
    if modality not in proj.dims:
        raise ValueError(f"unknown modality {modality!r}")
    if x.shape[-1] != proj.dims[modality]:
        raise ad.ShapeError(
            f"{modality} features have width {x.shape[-1]}, expected {proj.dims[modality]}")
    return getattr(proj, modality)(x)


class EncoderLayer(Module):
    """Post-norm bidirectional self-attention block without positional encoding."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ffn = MLP(d, d_ff, d, rng)
        self.ln2 = LayerNorm(d)

    def __call__(self, x: Tensor, ctx: Context = EVAL) -> Tensor:
        h = self.ln1(x + ctx.drop(self.attn(x, x, ctx=ctx).value))
        return self.ln2(h + ctx.drop(self.ffn(h, ctx)))


def window_mean_matrix(length: int, window: int = 3) -> np.ndarray:
    """Row ``i`` averages rows ``i - w//2 .. i + w//2`` clipped to the sequence."""
    half = window // 2
    a = np.zeros((length, length))
    for i in range(length):
        lo, hi = max(0, i - half), min(length, i + half + 1)
        a[i, lo:hi] = 1.0 / (hi - lo)
    return a


class PAM(Module):
    """Residual local mixing: ``x + strength * window_mean(x)``."""

    def __init__(self, window: int = 3, strength: float = 0.0):
        self.window = window
        self.strength = ad.parameter(np.array(strength))

    def __call__(self, x: Tensor) -> Tensor:
        a = window_mean_matrix(x.shape[-2], self.window)
        return x + self.strength * ad.matmul(Tensor(a), x)


class FilmConditioner(Module):
    """Maps a context vector to feature-wise scale/shift and applies them.

    ``alpha`` scales the multiplicative part; it starts small so early
    training behaves like a plain LayerNorm.
    """

    def __init__(self, d: int, rng: np.random.Generator, alpha: float = 0.1):
        self.d = d
        self.g = MLP(d, d, 2 * d, rng)
        self.alpha = ad.parameter(np.array(alpha))
        self.norm = LayerNorm(d)

    def params_for(self, z: Tensor, ctx: Context = EVAL) -> tuple[Tensor, Tensor]:
        return film_condition(z, self, ctx)

    def __call__(self, p: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        return film_modulate(p, gamma, beta, self.alpha, self.norm)


def film_condition(z: Tensor, cond: FilmConditioner, ctx: Context = EVAL) -> tuple[Tensor, Tensor]:
    """Split ``g(z)`` into ``(gamma, beta)``, each ``(..., d)``."""
    out = cond.g(z, ctx)
    d = cond.d
    return out[..., :d], out[..., d:]


def film_modulate(p: Tensor, gamma: Tensor, beta: Tensor, alpha, norm: LayerNorm) -> Tensor:
    """``LayerNorm(p * (1 + alpha * gamma) + beta)``.

    ``p`` is ``(B, L, d)`` and ``gamma``/``beta`` are ``(B, d)``; they are
    broadcast across the patch axis.
    """
    gamma = ad.reshape(gamma, gamma.shape[:-1] + (1, gamma.shape[-1])) if gamma.ndim == p.ndim - 1 else gamma
    beta = ad.reshape(beta, beta.shape[:-1] + (1, beta.shape[-1])) if beta.ndim == p.ndim - 1 else beta
    scale = 1.0 + ad.mul(alpha, gamma)
    return norm(ad.mul(p, scale) + beta)


def refine_context(p_slide: Tensor, p_concept: Tensor) -> tuple[Tensor, Tensor]:
    """Mean-pool the two modulated branches over the patch axis."""
    return ad.mean(p_slide, axis=-2), ad.mean(p_concept, axis=-2)


def depth_aggregate(stack: list[Tensor], logits: Tensor) -> tuple[Tensor, np.ndarray]:
    """Softmax(logits)-weighted sum of per-layer features.

    Returns:
        The aggregated tensor and the weight vector (for inspection).
    """
    if len(stack) != logits.shape[0] or not stack:
        raise ValueError(f"{len(stack)} layers but {logits.shape[0]} aggregation logits")
    w = ad.softmax(logits, axis=-1)
    out = None
    for l, h in enumerate(stack):
        term = ad.mul(w[l], h)
        out = term if out is None else out + term
    return out, w.data


@dataclass
class EncoderState:
    patch_layers: list[Tensor] = field(default_factory=list)
    slide_contexts: list[Tensor] = field(default_factory=list)
    concept_contexts: list[Tensor] = field(default_factory=list)
    weights: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EncoderOutput:
    patch: Tensor             # (B, L, d)
    slide: Tensor | None      # (B, 1, d)
    concept: Tensor | None    # (B, K + 1, d)
    state: EncoderState


class ContextEncoder(Module):
    """Stacked self-attention + PAM, optionally FiLM-conditioned at every depth.

    With ``film=False`` only the patch stream is encoded; this is the
    backbone of the ablation variants without modulation.
    """

    def __init__(self, d: int, heads: int, d_ff: int, depth: int, rng: np.random.Generator,
                 film: bool = True, film_alpha: float = 0.1, pam_window: int = 3):
        if depth < 1:
            raise ValueError("encoder depth must be >= 1")
        self.depth, self.use_film = depth, film
        self.layers = [EncoderLayer(d, heads, d_ff, rng) for _ in range(depth)]
        self.pams = [PAM(pam_window) for _ in range(depth)]
        self.theta_patch = ad.parameter(np.zeros(depth))
        if film:
            self.film_slide = [FilmConditioner(d, rng, film_alpha) for _ in range(depth)]
            self.film_concept = [FilmConditioner(d, rng, film_alpha) for _ in range(depth)]
            self.theta_slide = ad.parameter(np.zeros(depth))
            self.theta_concept = ad.parameter(np.zeros(depth))

    def __call__(self, patch: Tensor, slide: Tensor | None = None, concepts: Tensor | None = None,
                 ctx: Context = EVAL) -> EncoderOutput:
        """Encode projected inputs.

        Args:
            patch: ``(B, L, d)`` projected patch tokens.
            slide: ``(B, d)`` projected slide vector (FiLM mode only).
            concepts: ``(B, K, d)`` projected concept tokens (FiLM mode only).
        """
        state = EncoderState()
        p = patch
        if self.use_film:
            s, c = slide, ad.mean(concepts, axis=-2)
        for l in range(self.depth):
            p = self.layers[l](p, ctx)
            p_hat = self.pams[l](p)
            if self.use_film:
                fs, fc = self.film_slide[l], self.film_concept[l]
                gs, bs = fs.params_for(s, ctx)
                gc, bc = fc.params_for(c, ctx)
                p_slide = fs(p_hat, gs, bs)
                p_concept = fc(p_hat, gc, bc)
                s, c = refine_context(p_slide, p_concept)
                # the next layer sees the cascade: concept FiLM applied on top of slide FiLM
                p = fc(p_slide, gc, bc)
                state.slide_contexts.append(s)
                state.concept_contexts.append(c)
            else:
                p = p_hat
            state.patch_layers.append(p)

        f_patch, state.weights["patch"] = depth_aggregate(state.patch_layers, self.theta_patch)
        if not self.use_film:
            return EncoderOutput(f_patch, None, None, state)
        f_slide, state.weights["slide"] = depth_aggregate(state.slide_contexts, self.theta_slide)
        f_concept, state.weights["concept"] = depth_aggregate(state.concept_contexts, self.theta_concept)
        b, d = f_slide.shape
        slide_mem = ad.reshape(f_slide, (b, 1, d))
        concept_mem = ad.concat([concepts, ad.reshape(f_concept, (b, 1, d))], axis=1)
        return EncoderOutput(f_patch, slide_mem, concept_mem, state)


def encode(proj: ProjectionSet, encoder: ContextEncoder, patch: Tensor, slide: Tensor,
           concepts: Tensor, ctx: Context = EVAL) -> EncoderOutput:
    """Project raw batched features and run the encoder."""
    return encoder(project_modality(proj, patch, "patch"),
                   project_modality(proj, slide, "slide"),
                   project_modality(proj, concepts, "concept"), ctx)
