import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scout import autodiff as ad
from scout.autodiff import Tensor, finite_diff_check
from scout.decoder import GateTrace
from scout.model import Batch, ModelConfig, Scout
from scout.training import (AdamW, DivergenceError, LrSchedule, TrainConfig, clip_grad_norm,
                            cosine_lr, evaluate_nll, gate_entropy_loss, nll_loss, total_loss, train)

from conftest import toy_batch, toy_model

LN3 = math.log(3.0)


def test_nll_examples():
    assert nll_loss(Tensor(np.zeros((2, 3, 60))), np.full((2, 3), 7)).item() == pytest.approx(
        math.log(60), abs=1e-12)
    logits = np.zeros((1, 2, 5))
    logits[0, :, 4] = 50.0
    assert nll_loss(Tensor(logits), np.array([[4, 4]])).item() < 1e-9
    val = nll_loss(Tensor(np.array([[[1.0, 0.0]]])), np.array([[0]]), pad_id=-1).item()
    assert val == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert round(val, 4) == 0.3133


def test_nll_ignores_pad_and_rejects_all_pad():
    logits = Tensor(np.random.default_rng(0).normal(size=(1, 3, 6)))
    a = nll_loss(logits, np.array([[4, 5, 0]])).item()
    b = nll_loss(Tensor(logits.data[:, :2]), np.array([[4, 5]])).item()
    assert a == pytest.approx(b, abs=1e-15)
    with pytest.raises(ValueError):
        nll_loss(logits, np.zeros((1, 3), dtype=int))


def test_gate_entropy_examples():
    uniform = np.full((4, 2, 3), 1 / 3)
    assert abs(gate_entropy_loss(GateTrace([5] * 4, uniform)).item() - LN3) < 1e-7
    onehot = np.zeros((4, 2, 3))
    onehot[..., 1] = 1.0
    assert gate_entropy_loss(onehot).item() <= 1e-7
    tri = np.array([0.5, 0.25, 0.25])
    assert gate_entropy_loss(tri).item() == pytest.approx(1.0397, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 50))
def test_gate_entropy_bounds(seed, conc):
    w = np.random.default_rng(seed).dirichlet(np.full(3, conc), size=(3, 2))
    val = gate_entropy_loss(w).item()
    assert -1e-12 <= val <= LN3 + 1e-7


def test_total_loss_examples():
    logits = Tensor(np.zeros((1, 2, 60)))
    targets = np.array([[5, 6]])
    gates = [Tensor(np.full((1, 2, 4, 3), 1 / 3))]
    loss, parts = total_loss(logits, targets, gates, 0.0)
    assert loss.item() == parts.nll
    loss, parts = total_loss(logits, targets, gates, 1.0)
    assert parts.total == pytest.approx(5.1929, abs=1e-4)
    assert parts.total == parts.nll + 1.0 * parts.gate_entropy


def test_total_loss_gradient():
    model = toy_model()
    batch = toy_batch()
    params = model.parameters()

    def f():
        out = model(batch)
        return total_loss(out.logits, batch.tokens[:, 1:], out.gates, 0.7)[0]

    names = [n for n in params if n.startswith("decoder")]
    err, *_ = finite_diff_check(f, params, names=names)
    assert err < 1e-4


def test_adamw_decay_only():
    p = ad.parameter(np.array([2.0, -3.0]))
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.01)
    opt.step({"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, np.array([2.0, -3.0]) * (1 - 0.001))


def test_adamw_excludes_no_decay():
    p = ad.parameter(np.array([2.0]))
    AdamW({"p": p}, lr=0.1, weight_decay=0.5, no_decay={"p"}).step({"p": np.zeros(1)})
    assert p.data[0] == 2.0


def test_adamw_first_step_sign():
    g = np.array([3.0, -0.2, 1e-3])
    p = ad.parameter(np.zeros(3))
    AdamW({"p": p}, lr=0.01, weight_decay=0.0).step({"p": g})
    np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-4)


def test_adamw_converges_on_quadratic():
    theta = ad.parameter(np.array(0.0))
    opt = AdamW({"t": theta}, lr=0.05, weight_decay=0.0)
    for _ in range(500):
        opt.step({"t": theta.data - 3.0})
    assert abs(theta.data - 3.0) < 1e-2


def test_adamw_rejects_nonfinite():
    p = ad.parameter(np.zeros(2))
    with pytest.raises(DivergenceError):
        AdamW({"p": p}).step({"p": np.array([np.nan, 0.0])})


def test_adamw_state_round_trip():
    p = ad.parameter(np.ones(2))
    opt = AdamW({"p": p})
    opt.step({"p": np.array([1.0, 2.0])})
    q = ad.parameter(np.ones(2))
    other = AdamW({"p": q})
    other.load_state(opt.state())
    assert other.step_count == 1 and np.array_equal(other.m["p"], opt.m["p"])


def test_cosine_examples():
    s = LrSchedule(lr_max=3e-3, lr_min=1e-5, t0=50, t_mult=2)
    assert cosine_lr(0, s) == 3e-3
    assert cosine_lr(50, s) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(25, s) == pytest.approx((3e-3 + 1e-5) / 2, rel=1e-12)
    # restart, then a cycle twice as long
    assert cosine_lr(50.0001, s) == pytest.approx(3e-3, rel=1e-6)
    assert cosine_lr(150, s) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(100, s) == pytest.approx((3e-3 + 1e-5) / 2, rel=1e-12)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    assert clip_grad_norm(grads, 1.0) == 5.0
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert total == pytest.approx(1.0)


def test_epoch_visits_each_sample_once(small_corpus):
    train_set = small_corpus[0][:4]
    model = Scout(ModelConfig(vocab_size=len(small_corpus[3]), d_model=8, heads=2, d_ff=8,
                              enc_depth=1, dec_depth=1), seed=0)
    result = train(model, train_set, [], TrainConfig(epochs=2, batch_size=3))
    ids = sorted(b.case_id for b in train_set)
    for visit in result.visits:
        assert sorted(visit) == ids
    assert result.visits[0] != result.visits[1] or len(ids) < 3


def test_training_is_deterministic(small_corpus):
    train_set, val_set, _, vocab = small_corpus
    finals = []
    for _ in range(2):
        model = Scout(ModelConfig(vocab_size=len(vocab), d_model=16, heads=2, d_ff=16), seed=3)
        train(model, train_set[:8], val_set, TrainConfig(epochs=3, batch_size=4, seed=3))
        finals.append({k: p.data.copy() for k, p in model.parameters().items()})
    for k in finals[0]:
        assert finals[0][k].tobytes() == finals[1][k].tobytes()


def test_resume_matches_uninterrupted(small_corpus):
    train_set, val_set, _, vocab = small_corpus
    cfg = ModelConfig(vocab_size=len(vocab), d_model=16, heads=2, d_ff=16)
    tc = TrainConfig(epochs=4, batch_size=4, t0=2, seed=1)
    straight = Scout(cfg, seed=1)
    train(straight, train_set[:8], val_set, tc)
    resumed = Scout(cfg, seed=1)
    first = train(resumed, train_set[:8], val_set, TrainConfig(**{**tc.__dict__, "epochs": 2}))
    train(resumed, train_set[:8], val_set, tc, optimizer=first.optimizer, start_epoch=2)
    for k, p in straight.parameters().items():
        assert p.data.tobytes() == resumed.parameters()[k].data.tobytes()


def test_logged_total_identity(small_corpus):
    train_set = small_corpus[0]
    model = Scout(ModelConfig(vocab_size=len(small_corpus[3])), seed=0)
    batch = Batch.from_bundles(train_set[:8])
    out = model(batch, model.context(True, np.random.default_rng(0)))
    _, parts = total_loss(out.logits, batch.tokens[:, 1:], out.gates, 0.37)
    assert parts.total == parts.nll + 0.37 * parts.gate_entropy
    assert 0 <= parts.gate_entropy <= LN3 + 1e-7


def test_divergence_raises_with_state(small_corpus):
    train_set = small_corpus[0][:4]
    bad = train_set[0].__class__(**{**train_set[0].__dict__,
                                    "patch_feats": np.full_like(train_set[0].patch_feats, np.nan)})
    model = Scout(ModelConfig(vocab_size=len(small_corpus[3])), seed=0)
    with pytest.raises(DivergenceError) as info:
        train(model, [bad] + train_set[1:], [], TrainConfig(epochs=1))
    assert info.value.state is not None


def test_overfit_loss_falls(overfit_run):
    nll = [e.train_nll for e in overfit_run.log]
    assert len(nll) == 200
    assert nll[-1] < nll[0] / 10
    # warm restarts cause brief upticks; each must stay within 5% of the starting loss
    running_min = np.minimum.accumulate(nll)
    assert np.all(np.array(nll) - running_min <= 0.05 * nll[0])
    assert evaluate_nll(overfit_run.model, overfit_run.bundles) < 0.05
