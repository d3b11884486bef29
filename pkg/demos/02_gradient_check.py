"""Finite-difference check of the whole model at toy size.

Every coordinate of every parameter is perturbed both ways, so this is the
slowest demo (about 20 s).
"""
import time

import numpy as np

from scout.autodiff import finite_diff_check
from scout.model import Batch, ModelConfig, Scout
from scout.training import total_loss

cfg = ModelConfig(vocab_size=11, d_p=6, d_s=5, d_c=4, d_model=8, heads=2, d_ff=16,
                  enc_depth=1, dec_depth=1, dropout=0.0)
model = Scout(cfg, seed=1)
rng = np.random.default_rng(0)
# PAM strength and the aggregation logits start at zero; nudge everything off init
for p in model.parameters().values():
    p.data += rng.normal(0, 0.05, p.shape)

tokens = np.array([[1, 5, 6, 7, 2, 0], [1, 8, 9, 2, 0, 0]])
batch = Batch(rng.normal(size=(2, 4, 6)), rng.normal(size=(2, 5)), rng.normal(size=(2, 2, 4)), tokens)


def loss():
    out = model(batch)
    return total_loss(out.logits, tokens[:, 1:], out.gates, lambda_g=0.5)[0]


params = model.parameters()
print(f"{len(params)} tensors, {sum(p.data.size for p in params.values())} coordinates")
t = time.perf_counter()
err, name, idx = finite_diff_check(loss, params, step=1e-5)
print(f"worst relative error {err:.2e} at {name}[{idx}] ({time.perf_counter() - t:.1f}s)")
