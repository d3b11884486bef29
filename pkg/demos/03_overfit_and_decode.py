"""Overfit 32 cases, then decode one with beam search and read its gates."""
import numpy as np

from scout.data import SyntheticTaskSpec, generate_corpus
from scout.generation import beam_generate, corpus_evaluate
from scout.model import ModelConfig, Scout
from scout.training import TrainConfig, evaluate_nll, train

bundles, _, vocab = generate_corpus(SyntheticTaskSpec(), 32, 0, (1.0, 0.0, 0.0))
model = Scout(ModelConfig(vocab_size=len(vocab)), seed=0)


def show(entry):
    if entry.epoch % 25 == 0 or entry.epoch == 199:
        print(f"epoch {entry.epoch:3d}  nll {entry.train_nll:.4f}  gate {entry.train_gate:.4f}  lr {entry.lr:.2e}")


train(model, bundles, [], TrainConfig(epochs=200), on_epoch=show)
print(f"train NLL with dropout off: {evaluate_nll(model, bundles):.4f}")

report, gens = corpus_evaluate(model, bundles, vocab, beam_size=3)
print({k: round(v, 4) for k, v in report.scores.items()})

tokens, trace = beam_generate(model, bundles[5])
print("generated:", vocab.decode(tokens))
print("reference:", vocab.decode(bundles[5].report_tokens))
# mean over heads of the last decoder layer's (patch, slide, concept) weights
for tok, w in zip(tokens, trace.weights.mean(axis=1)):
    print(f"{vocab.itos[tok]:>10s}  " + "  ".join(f"{x:.2f}" for x in w))
print("summary:", {k: round(v, 3) for k, v in trace.summary().items()})
