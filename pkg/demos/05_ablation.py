"""Fusion-variant ablation on the concept-dependent corpus.

The acceptance suite uses 3 seeds; one seed here keeps it to about a minute
and a half. Pass a number of seeds as the first argument to change that.
"""
import sys
import tempfile

from scout.ablation import run_ablation
from scout.config import RunConfig
from scout.data import generate_corpus, load_corpus, save_corpus

seeds = " ".join(str(s) for s in range(int(sys.argv[1]) if len(sys.argv) > 1 else 1))
cfg = RunConfig(num_cases=192, train_frac=0.75, val_frac=16 / 192, epochs=40, t0=40,
                ablate_seeds=seeds)

with tempfile.TemporaryDirectory() as tmp:
    bundles, splits, vocab = generate_corpus(cfg.task_spec, cfg.num_cases, 1000, cfg.fractions)
    save_corpus(tmp, bundles, splits, vocab)
    result = run_ablation(load_corpus(tmp), cfg)

print("\n".join(result.table()))
print()
print("\n".join(result.per_seed()))
