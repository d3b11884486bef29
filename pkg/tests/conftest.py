import numpy as np
import pytest

from scout.data import SyntheticTaskSpec, generate_corpus
from scout.model import Batch, ModelConfig, Scout

ACCEPTANCE: list[str] = []


def record(number: int, name: str, ok: bool, detail: str) -> bool:
    """Log one acceptance verdict; the terminal summary repeats them all."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


TOY = dict(vocab_size=11, d_p=6, d_s=5, d_c=4, d_model=8, heads=2, d_ff=16,
           enc_depth=1, dec_depth=1, dropout=0.0)


def toy_model(seed=1, jitter=0.05, **overrides):
    """Tiny model; zero-initialised scalars are nudged so every path carries gradient."""
    cfg = ModelConfig(**{**TOY, **overrides})
    model = Scout(cfg, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for p in model.parameters().values():
        p.data += rng.normal(0.0, jitter, p.shape)
    return model


def toy_batch(seed=0, b=2, L=4, K=2, tokens=None, cfg=TOY):
    rng = np.random.default_rng(seed)
    if tokens is None:
        tokens = np.array([[1, 5, 6, 7, 2, 0], [1, 8, 9, 2, 0, 0]])[:b]
    return Batch(rng.normal(size=(b, L, cfg["d_p"])), rng.normal(size=(b, cfg["d_s"])),
                 rng.normal(size=(b, K, cfg["d_c"])), np.asarray(tokens))


@pytest.fixture(scope="session")
def small_corpus():
    bundles, splits, vocab = generate_corpus(SyntheticTaskSpec(), 40, 0, (0.8, 0.1, 0.1))
    train = [b for b, s in zip(bundles, splits) if s == "train"]
    val = [b for b, s in zip(bundles, splits) if s == "val"]
    test = [b for b, s in zip(bundles, splits) if s == "test"]
    return train, val, test, vocab


@pytest.fixture(scope="session")
def overfit_run():
    """The 32-case, 200-epoch overfit run shared by the training and acceptance tests."""
    import time

    from scout.training import TrainConfig, train

    bundles, _, vocab = generate_corpus(SyntheticTaskSpec(), 32, 0, (1.0, 0.0, 0.0))
    model = Scout(ModelConfig(vocab_size=len(vocab)), seed=0)
    start = time.perf_counter()
    result = train(model, bundles, [], TrainConfig(epochs=200, seed=0))
    result.seconds = time.perf_counter() - start
    result.bundles, result.vocab = bundles, vocab
    return result
