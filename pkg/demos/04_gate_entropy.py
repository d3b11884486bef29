"""How the gate-entropy weight changes modality selection."""
from scout.data import SyntheticTaskSpec, generate_corpus
from scout.model import ModelConfig, Scout
from scout.training import TrainConfig, evaluate_nll, mean_gate_entropy, train

bundles, splits, vocab = generate_corpus(SyntheticTaskSpec(), 40, 0)
train_set = [b for b, s in zip(bundles, splits) if s == "train"]
val_set = [b for b, s in zip(bundles, splits) if s == "val"]

for lam in (0.0, 0.01, 1.0):
    model = Scout(ModelConfig(vocab_size=len(vocab)), seed=0)
    train(model, train_set, val_set, TrainConfig(epochs=60, t0=60, lambda_g=lam))
    print(f"lambda_g={lam:<5}  gate entropy {mean_gate_entropy(model, train_set):.4f}  "
          f"val NLL {evaluate_nll(model, val_set):.4f}  tau {model.decoder.tau().item():.3f}")
