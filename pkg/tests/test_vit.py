"""Transformer encoder tests. Attention and pooling expectations come
from direct formula oracles; dice+CE identities are derived by hand."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitsr import autodiff as ad
from vitsr import vit
from vitsr.autodiff import Tensor
from vitsr.errors import ConfigurationError, DimensionError, ValidationError

RNG = np.random.default_rng(0x517)


def tiny_config(**kw):
    base = dict(input_extents=(16, 16), patch_size=8, embed_dim=8, layers=2,
                heads=2, mlp_hidden=16, num_classes=3)
    base.update(kw)
    return vit.ViTConfig(**base)


def attention_oracle(q, k, v):
    n, kh = q.shape
    scores = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            scores[i, j] = float(q[i] @ k[j]) / math.sqrt(kh)
    weights = np.zeros_like(scores)
    for i in range(n):
        e = np.exp(scores[i] - scores[i].max())
        weights[i] = e / e.sum()
    return weights, weights @ v


# ---------------------------------------------------------------------------
# config and patchify

def test_config_validates_divisibility():
    with pytest.raises(ConfigurationError):
        tiny_config(embed_dim=10, heads=4)
    with pytest.raises(ConfigurationError):
        tiny_config(input_extents=(20, 16), patch_size=8)
    with pytest.raises(ConfigurationError):
        tiny_config(input_extents=(16,))


def test_patch_count_formula_2d():
    assert tiny_config(input_extents=(32, 32), patch_size=16).n_patches == 4
    assert tiny_config(input_extents=(64, 32), patch_size=8).n_patches == 32


def test_patch_count_formula_3d():
    cfg = tiny_config(input_extents=(16, 16, 16), patch_size=16)
    assert cfg.n_patches == 1
    assert cfg.patch_dim == 16 ** 3


def test_patchify_single_patch_volume():
    x = RNG.random((16, 16, 16))
    patches = vit.patchify(x, 16)
    assert patches.shape == (1, 4096)
    np.testing.assert_array_equal(patches.values[0], x.ravel())


def test_patchify_2d_row_major_order():
    x = np.arange(16.0).reshape(4, 4)
    patches = vit.patchify(x, 2)
    assert patches.shape == (4, 4)
    np.testing.assert_array_equal(patches.values[0], [0, 1, 4, 5])    # top-left
    np.testing.assert_array_equal(patches.values[1], [2, 3, 6, 7])    # top-right
    np.testing.assert_array_equal(patches.values[2], [8, 9, 12, 13])  # bottom-left


def test_patchify_lossless_roundtrip():
    for shape, p in [((24, 16), 8), ((8, 8, 8), 4)]:
        x = RNG.random(shape)
        back = vit.unpatchify(vit.patchify(x, p), shape, p)
        np.testing.assert_array_equal(back.values, x)


def test_patchify_rejects_indivisible_extents():
    with pytest.raises(DimensionError) as err:
        vit.patchify(np.zeros((15, 16)), 8)
    assert "8" in str(err.value)


@settings(deadline=None, max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([2, 4, 8]))
def test_patch_count_property(hp, wp, p):
    x = np.zeros((hp * p, wp * p))
    assert vit.patchify(x, p).shape == (hp * wp, p * p)


# ---------------------------------------------------------------------------
# embedding and attention

def test_embed_sequence_zero_patches_gives_positions():
    n, pd, k = 4, 16, 8
    pos = RNG.normal(size=(n, k))
    out = vit.embed_sequence(Tensor(np.zeros((n, pd))), Tensor(RNG.normal(size=(pd, k))),
                             Tensor(pos))
    np.testing.assert_array_equal(out.values, pos)


def test_embed_sequence_paper_scale_shape():
    cfg = vit.ViTConfig(input_extents=(224, 224), patch_size=16, embed_dim=768,
                        layers=1, heads=12, mlp_hidden=3072)
    assert cfg.n_patches == 196
    patches = vit.patchify(RNG.random((224, 224)), 16)
    state = vit.ViTState(cfg, np.random.default_rng(0))
    z0 = vit.embed_sequence(patches, state.embed, state.pos)
    assert z0.shape == (196, 768)


def test_embed_sequence_row_count_mismatch():
    with pytest.raises(DimensionError):
        vit.embed_sequence(Tensor(np.zeros((4, 16))), Tensor(np.zeros((16, 8))),
                           Tensor(np.zeros((5, 8))))


def test_attention_rows_sum_to_one():
    for _ in range(5):
        q = Tensor(RNG.normal(size=(6, 4)))
        k = Tensor(RNG.normal(size=(6, 4)))
        a = vit.attention_weights(q, k)
        np.testing.assert_allclose(a.values.sum(axis=1), 1.0, atol=1e-9)


def test_attention_single_token_is_one():
    a = vit.attention_weights(Tensor(RNG.normal(size=(1, 4))), Tensor(RNG.normal(size=(1, 4))))
    np.testing.assert_array_equal(a.values, [[1.0]])


def test_attention_identical_tokens_uniform():
    q = Tensor(np.tile(RNG.normal(size=4), (5, 1)))
    a = vit.attention_weights(q, q)
    np.testing.assert_allclose(a.values, 1.0 / 5.0, atol=1e-12)


def test_attention_matches_oracle():
    q = RNG.normal(size=(3, 2))
    k = RNG.normal(size=(3, 2))
    v = RNG.normal(size=(3, 2))
    w_oracle, sa_oracle = attention_oracle(q, k, v)
    a = vit.attention_weights(Tensor(q), Tensor(k))
    np.testing.assert_allclose(a.values, w_oracle, atol=1e-8)
    # self_attention projects z by the weight matrices; use identity projections
    eye = Tensor(np.eye(2))
    z = Tensor(q)
    w2, sa2 = attention_oracle(q, q, q)
    np.testing.assert_allclose(vit.self_attention(z, eye, eye, eye).values, sa2, atol=1e-8)


def test_attention_head_dim_mismatch():
    with pytest.raises(DimensionError):
        vit.attention_weights(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 5))))


def test_self_attention_identical_tokens_returns_value_row():
    z = Tensor(np.tile(RNG.normal(size=4), (6, 1)))
    w_v = Tensor(RNG.normal(size=(4, 2)))
    eye_q = Tensor(RNG.normal(size=(4, 2)))
    out = vit.self_attention(z, eye_q, eye_q, w_v)
    expected = z.values[0] @ w_v.values
    np.testing.assert_allclose(out.values, np.tile(expected, (6, 1)), atol=1e-12)


def test_multi_head_single_head_with_identity_projection():
    z = Tensor(RNG.normal(size=(4, 3)))
    w_q, w_k, w_v = (Tensor(RNG.normal(size=(3, 3))) for _ in range(3))
    direct = vit.self_attention(z, w_q, w_k, w_v)
    msa = vit.multi_head_attention(z, [w_q], [w_k], [w_v], Tensor(np.eye(3)))
    np.testing.assert_allclose(msa.values, direct.values, atol=1e-12)


def test_multi_head_output_width():
    k, kh = 8, 4
    z = Tensor(RNG.normal(size=(5, k)))
    heads = [[Tensor(RNG.normal(size=(k, kh))) for _ in range(2)] for _ in range(3)]
    w_msa = Tensor(RNG.normal(size=(2 * kh, k)))
    out = vit.multi_head_attention(z, heads[0], heads[1], heads[2], w_msa)
    assert out.shape == (5, k)


def test_multi_head_zero_projection_is_zero():
    z = Tensor(RNG.normal(size=(5, 8)))
    heads = [[Tensor(RNG.normal(size=(8, 4))) for _ in range(2)] for _ in range(3)]
    out = vit.multi_head_attention(z, heads[0], heads[1], heads[2],
                                   Tensor(np.zeros((8, 8))))
    np.testing.assert_array_equal(out.values, np.zeros((5, 8)))


# ---------------------------------------------------------------------------
# transformer block / encoder

def test_zeroed_block_is_identity_bitwise():
    cfg = tiny_config()
    block = vit.TransformerBlock(cfg, np.random.default_rng(0))
    block.zero_()
    z = RNG.normal(size=(4, cfg.embed_dim))
    out = block(Tensor(z))
    np.testing.assert_array_equal(out.values, z)


def test_block_preserves_shape():
    cfg = tiny_config()
    block = vit.TransformerBlock(cfg, np.random.default_rng(1))
    out = block(Tensor(RNG.normal(size=(4, cfg.embed_dim))))
    assert out.shape == (4, cfg.embed_dim)


def test_block_grad_check():
    cfg = vit.ViTConfig(input_extents=(8, 8), patch_size=4, embed_dim=4, layers=1,
                        heads=2, mlp_hidden=6, num_classes=2)
    block = vit.TransformerBlock(cfg, np.random.default_rng(2))
    z0 = RNG.normal(size=(3, 4))
    err = ad.grad_check(lambda t: ad.tensor_sum(block(t) ** 2), Tensor(z0))
    assert err < 1e-3


def test_encode_features_shape_and_determinism():
    cfg = tiny_config()
    state = vit.ViTState(cfg, np.random.default_rng(3))
    img = RNG.random((16, 16))
    f1 = vit.encode_features(img, state)
    f2 = vit.encode_features(img, state)
    assert f1.shape == (cfg.embed_dim,)
    np.testing.assert_array_equal(f1.values, f2.values)


def test_encode_features_zero_layers_is_mean_projected_patch():
    cfg = tiny_config(layers=0)
    state = vit.ViTState(cfg, np.random.default_rng(4))
    state.pos.values = np.zeros_like(state.pos.values)
    img = RNG.random((16, 16))
    feats = vit.encode_features(img, state)
    patches = vit.patchify(img, cfg.patch_size).values
    expected = (patches @ state.embed.values).mean(axis=0)
    np.testing.assert_allclose(feats.values, expected, atol=1e-12)


def test_encode_features_extent_mismatch():
    cfg = tiny_config()
    state = vit.ViTState(cfg, np.random.default_rng(5))
    with pytest.raises(DimensionError):
        vit.encode_features(RNG.random((24, 24)), state)


# ---------------------------------------------------------------------------
# pretext head and losses

def test_pretext_zero_head_uniform_ce():
    cfg = tiny_config(num_classes=5)
    state = vit.ViTState(cfg, np.random.default_rng(6))
    for seed in range(3):
        img = np.random.default_rng(seed).random((16, 16))
        logits = vit.pretext_logits(vit.encode_features(img, state), state.pretext_head)
        np.testing.assert_array_equal(logits.values, np.zeros(5))
        for label in range(5):
            ce = vit.cross_entropy(logits, label)
            assert abs(ce.item() - math.log(5)) < 1e-9


def test_pretext_gradient_step_decreases_ce():
    cfg = tiny_config(num_classes=2)
    state = vit.ViTState(cfg, np.random.default_rng(7))
    img = RNG.random((16, 16))
    label = 1

    def loss_value():
        logits = vit.pretext_logits(vit.encode_features(img, state), state.pretext_head)
        return vit.cross_entropy(logits, label)

    before = loss_value()
    before.backward()
    for p in state.parameters():
        if p.grad is not None:
            p.values = p.values - 0.05 * p.grad
    after = loss_value()
    assert after.item() < before.item()


def test_pretext_logit_width_mismatch():
    with pytest.raises(DimensionError):
        vit.pretext_logits(Tensor(np.zeros(8)), Tensor(np.zeros((4, 2))))


def test_dice_ce_perfect_prediction_is_zero():
    rng = np.random.default_rng(8)
    for trial in range(5):
        labels = rng.integers(0, 3, size=20)
        g = np.eye(3)[labels]
        loss = vit.dice_ce_loss(Tensor(g.copy()), g)
        assert abs(loss.item()) < 1e-5


def test_dice_ce_balanced_uniform_prediction():
    # J=2, balanced one-hot truth, uniform 0.5 predictions:
    # dice ratio 1/3 per class, CE ln 2 -> loss = 1/3 + ln 2
    voxels = 40
    g = np.zeros((voxels, 2))
    g[:voxels // 2, 0] = 1.0
    g[voxels // 2:, 1] = 1.0
    y = np.full((voxels, 2), 0.5)
    loss = vit.dice_ce_loss(Tensor(y), g)
    assert abs(loss.item() - (1.0 / 3.0 + math.log(2.0))) < 1e-6


def test_dice_ce_permutation_invariance():
    rng = np.random.default_rng(9)
    labels = rng.integers(0, 3, size=12)
    g = np.eye(3)[labels]
    y = rng.dirichlet(np.ones(3), size=12)
    perm = rng.permutation(12)
    a = vit.dice_ce_loss(Tensor(y), g).item()
    b = vit.dice_ce_loss(Tensor(y[perm]), g[perm]).item()
    assert abs(a - b) < 1e-12


def test_dice_ce_validation():
    g = np.eye(2)[[0, 1, 0]]
    with pytest.raises(ValidationError):
        vit.dice_ce_loss(Tensor(np.full((3, 2), 0.4)), g)  # rows sum to 0.8
    bad_g = g.copy()
    bad_g[0, 0] = 0.5
    with pytest.raises(ValidationError):
        vit.dice_ce_loss(Tensor(np.full((3, 2), 0.5)), bad_g)


def test_dice_ce_differentiable_in_predictions():
    rng = np.random.default_rng(10)
    g = np.eye(2)[rng.integers(0, 2, size=6)]
    t0 = rng.normal(size=(6, 2))
    err = ad.grad_check(lambda t: vit.dice_ce_loss(ad.softmax(t, axis=-1), g), Tensor(t0))
    assert err < 1e-3


def test_vit_state_checkpoint_roundtrip(tmp_path):
    from vitsr.checkpoint import load_checkpoint, save_checkpoint
    cfg = tiny_config()
    state = vit.ViTState(cfg, np.random.default_rng(11))
    save_checkpoint(tmp_path / "vit", state.state())
    clone = vit.ViTState(cfg, np.random.default_rng(99))
    clone.load_state(load_checkpoint(tmp_path / "vit"))
    img = RNG.random((16, 16))
    np.testing.assert_array_equal(vit.encode_features(img, state).values,
                                  vit.encode_features(img, clone).values)
