import numpy as np
import pytest

from scout import autodiff as ad
from scout.autodiff import Tensor, finite_diff_check
from scout.encoder import (PAM, ContextEncoder, EncoderLayer, FilmConditioner, ProjectionSet,
                           depth_aggregate, film_condition, film_modulate, project_modality,
                           refine_context)
from scout.layers import LayerNorm

RNG = np.random.default_rng(0)


def _proj():
    return ProjectionSet(32, 16, 16, 32, np.random.default_rng(0))


def test_projection_zero_input_gives_zero():
    out = project_modality(_proj(), Tensor(np.zeros((1, 16, 32))), "patch")
    np.testing.assert_array_equal(out.data, 0.0)


def test_projection_shape_and_errors():
    proj = _proj()
    assert project_modality(proj, Tensor(RNG.normal(size=(16, 32))), "patch").shape == (16, 32)
    with pytest.raises(ad.ShapeError):
        project_modality(proj, Tensor(np.zeros((3, 5))), "slide")
    with pytest.raises(ValueError):
        project_modality(proj, Tensor(np.zeros((3, 16))), "genomics")


def test_projection_gradient():
    proj = ProjectionSet(5, 4, 3, 6, np.random.default_rng(1))
    x = Tensor(RNG.normal(size=(3, 5)))
    w = RNG.normal(size=(3, 6))
    err, *_ = finite_diff_check(lambda: ad.tsum(project_modality(proj, x, "patch") * w),
                                proj.patch.fc1.named_parameters())
    assert err < 1e-4


def test_encoder_layer_single_token_and_equivariance():
    layer = EncoderLayer(8, 2, 16, np.random.default_rng(2))
    x = Tensor(RNG.normal(size=(1, 1, 8)))
    np.testing.assert_array_equal(layer.attn(x, x).weights, 1.0)
    expect = layer.ln1(x + layer.attn.wo(layer.attn.wv(x)))
    expect = layer.ln2(expect + layer.ffn(expect))
    np.testing.assert_allclose(layer(x).data, expect.data, atol=1e-12)

    seq = RNG.normal(size=(1, 6, 8))
    perm = RNG.permutation(6)
    np.testing.assert_allclose(layer(Tensor(seq[:, perm])).data, layer(Tensor(seq)).data[:, perm],
                               atol=1e-12)


def test_encoder_layer_gradient_two_tokens():
    layer = EncoderLayer(4, 2, 8, np.random.default_rng(3))
    x = Tensor(RNG.normal(size=(1, 2, 4)))
    w = RNG.normal(size=(1, 2, 4))
    err, *_ = finite_diff_check(lambda: ad.tsum(layer(x) * w), layer.named_parameters())
    assert err < 1e-4


def test_pam_examples():
    x = Tensor(RNG.normal(size=(1, 5, 3)))
    np.testing.assert_array_equal(PAM(3, 0.0)(x).data, x.data)
    const = Tensor(np.full((1, 4, 2), 2.5))
    pam = PAM(3, 0.7)
    np.testing.assert_allclose(pam(const).data, const.data * 1.7)
    seq = Tensor(np.array([[[0.0], [3.0], [6.0]]]))
    np.testing.assert_allclose(PAM(3, 1.0)(seq).data.ravel(), [1.5, 6.0, 10.5])


def test_pam_constant_sequence_direction_unchanged():
    # the window mean of a constant sequence is the token itself
    const = np.full((1, 5, 2), -1.25)
    for lam in (0.0, 0.3, 2.0):
        out = PAM(3, lam)(Tensor(const)).data
        np.testing.assert_allclose(out, const * (1 + lam))
        np.testing.assert_allclose(out - lam * const, const)


def test_film_condition_shapes_and_zero_init():
    cond = FilmConditioner(32, np.random.default_rng(4))
    z = Tensor(RNG.normal(size=(1, 32)))
    gamma, beta = film_condition(z, cond)
    assert gamma.shape == beta.shape == (1, 32)
    cond.g.fc2.weight.data[:] = 0.0
    gamma, beta = film_condition(z, cond)
    np.testing.assert_array_equal(gamma.data, 0.0)
    np.testing.assert_array_equal(beta.data, 0.0)


def test_film_condition_gradient():
    cond = FilmConditioner(4, np.random.default_rng(5))
    z = Tensor(RNG.normal(size=(2, 4)))
    err, *_ = finite_diff_check(lambda: ad.tsum(film_condition(z, cond)[0]),
                                cond.g.named_parameters())
    assert err < 1e-4


def test_film_identity_cases():
    norm = LayerNorm(6)
    norm.gain.data[:] = RNG.normal(size=6)
    norm.bias.data[:] = RNG.normal(size=6)
    for _ in range(20):
        p = Tensor(RNG.normal(size=(2, 5, 6)) * 3)
        plain = norm(p).data
        zero = Tensor(np.zeros((2, 6)))
        out = film_modulate(p, zero, zero, Tensor(RNG.normal()), norm).data
        assert np.array_equal(out, plain)
        out = film_modulate(p, Tensor(RNG.normal(size=(2, 6))), zero, Tensor(0.0), norm).data
        assert np.array_equal(out, plain)


def test_film_two_element_example():
    out = film_modulate(Tensor(np.array([[[1.0, 2.0]]])), Tensor(np.ones((1, 2))),
                        Tensor(np.zeros((1, 2))), Tensor(1.0), LayerNorm(2)).data
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0], atol=1e-5)


def test_refine_context_examples():
    v = RNG.normal(size=3)
    s, _ = refine_context(Tensor(np.tile(v, (1, 5, 1))), Tensor(np.zeros((1, 5, 3))))
    np.testing.assert_allclose(s.data, v[None])
    s, c = refine_context(Tensor(np.array([[0.0, 0.0], [2.0, 4.0]])), Tensor(np.zeros((2, 2))))
    np.testing.assert_array_equal(s.data, [1.0, 2.0])
    p = RNG.normal(size=(1, 7, 3))
    perm = RNG.permutation(7)
    np.testing.assert_allclose(refine_context(Tensor(p[:, perm]), Tensor(p))[0].data,
                               refine_context(Tensor(p), Tensor(p))[0].data, atol=1e-15)


def test_depth_aggregate_examples():
    stack = [Tensor(RNG.normal(size=(2, 3))) for _ in range(2)]
    _, w = depth_aggregate(stack, Tensor(np.array([np.log(2.0), 0.0])))
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-15)
    out, w = depth_aggregate(stack[:1], Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, stack[0].data)
    stack = [Tensor(RNG.normal(size=(2, 3))) for _ in range(4)]
    out, w = depth_aggregate(stack, Tensor(np.full(4, 0.37)))
    np.testing.assert_allclose(out.data, np.mean([s.data for s in stack], axis=0), atol=1e-9)
    assert abs(w.sum() - 1) < 1e-9
    with pytest.raises(ValueError):
        depth_aggregate(stack, Tensor(np.zeros(3)))


def _encoder(depth=2, seed=6, d=8):
    return ContextEncoder(d, 2, 16, depth, np.random.default_rng(seed))


def _inputs(b=1, L=5, K=3, d=8, seed=7):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.normal(size=(b, L, d))), Tensor(rng.normal(size=(b, d))),
            Tensor(rng.normal(size=(b, K, d))))


def test_encoder_output_shapes_and_weights():
    out = _encoder()(*_inputs(b=2))
    assert out.patch.shape == (2, 5, 8) and out.slide.shape == (2, 1, 8)
    assert out.concept.shape == (2, 4, 8)
    for w in out.state.weights.values():
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-9


def test_encoder_depth_one_and_equal_theta():
    enc = _encoder(depth=1)
    out = enc(*_inputs())
    np.testing.assert_array_equal(out.patch.data, out.state.patch_layers[0].data)
    enc = _encoder(depth=3)
    out = enc(*_inputs())
    mean = np.mean([p.data for p in out.state.patch_layers], axis=0)
    np.testing.assert_allclose(out.patch.data, mean, atol=1e-9)
    mean_s = np.mean([s.data for s in out.state.slide_contexts], axis=0)
    np.testing.assert_allclose(out.slide.data[:, 0], mean_s, atol=1e-9)


def test_encoder_permutation_symmetry_without_pam():
    enc = _encoder()
    patch, slide, concepts = _inputs(L=6)
    perm = np.random.default_rng(8).permutation(6)
    base = enc(patch, slide, concepts)
    moved = enc(Tensor(patch.data[:, perm]), slide, concepts)
    np.testing.assert_allclose(moved.patch.data, base.patch.data[:, perm], atol=1e-10)
    np.testing.assert_allclose(moved.slide.data, base.slide.data, atol=1e-10)
    np.testing.assert_allclose(moved.concept.data, base.concept.data, atol=1e-10)
    for pam in enc.pams:
        pam.strength.data[...] = 0.5
    base = enc(patch, slide, concepts)
    moved = enc(Tensor(patch.data[:, perm]), slide, concepts)
    assert not np.allclose(moved.patch.data, base.patch.data[:, perm])


def test_concept_sensitivity_and_context_refinement():
    enc = _encoder()
    patch, slide, concepts = _inputs()
    out = enc(patch, slide, concepts)
    zeroed = enc(patch, slide, Tensor(np.zeros_like(concepts.data)))
    assert np.linalg.norm(out.concept.data - zeroed.concept.data) > 0
    s = out.state.slide_contexts
    assert np.linalg.norm(s[1].data - s[0].data) > 0
    assert np.linalg.norm(s[0].data - slide.data) > 0


def test_encoder_end_to_end_gradient():
    enc = _encoder(depth=2, d=4)
    rng = np.random.default_rng(9)
    for p in enc.named_parameters().values():
        p.data += rng.normal(0, 0.05, p.shape)
    inputs = _inputs(L=3, K=2, d=4)
    ws = [rng.normal(size=s) for s in ((1, 3, 4), (1, 1, 4), (1, 3, 4))]

    def f():
        out = enc(*inputs)
        return (ad.tsum(out.patch * ws[0]) + ad.tsum(out.slide * ws[1])
                + ad.tsum(out.concept * ws[2]))

    params = enc.named_parameters()
    grads = ad.backward(f(), params)
    groups = {name.split(".")[0] for name in params}
    for group in groups:
        assert any(np.any(g != 0) for n, g in grads.items() if n.split(".")[0] == group), group
    err, *_ = finite_diff_check(f, params)
    assert err < 1e-4
