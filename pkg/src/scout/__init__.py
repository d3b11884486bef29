"""Multimodal pathology-style report generation on synthetic feature bundles.

Submodules:
    autodiff    float64 tensors with reverse-mode gradients
    data        synthetic corpus, vocabulary, bundle files
    encoder     FiLM-conditioned context encoder
    decoder     gated-fusion decoder
    model       the assembled generator and its ablation variants
    training    losses, AdamW, cosine warm restarts, training loop
    generation  beam search and corpus evaluation
    metrics     BLEU, ROUGE-L, METEOR
"""

from .autodiff import Tensor, backward, finite_diff_check
from .data import FeatureBundle, SyntheticTaskSpec, Vocabulary, generate_synthetic_case
from .model import Batch, ModelConfig, Scout

__all__ = [
    "Tensor", "backward", "finite_diff_check",
    "FeatureBundle", "SyntheticTaskSpec", "Vocabulary", "generate_synthetic_case",
    "Batch", "ModelConfig", "Scout",
]
__version__ = "0.1.0"
