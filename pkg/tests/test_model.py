"""Policy network tests: token accounting, masking, attention bookkeeping,
gradient correctness at toy dims, and overfit sanity."""

import numpy as np
import pytest

from pegbench import ndnet as nd
from pegbench.model import (
    AllTokensMasked,
    EncoderConfig,
    MASK_PRESETS,
    ModalityMask,
    VisuotactilePolicy,
    attention_proportions,
    parse_mask,
)
from pegbench.ndnet import Tensor
from pegbench.sensors import FT_COLS, FT_ROWS, IMG_SIZE, PROPRIO_DIM, Observation

TOY = EncoderConfig(
    n_latents=2,
    latent_dim=8,
    token_dim=8,
    self_attn_layers=1,
    heads=2,
    z_vt_dim=6,
    z_p_dim=4,
    patch=42,
    proprio_hidden=8,
    policy_hidden=(8, 8),
)


def _random_batch(rng, n):
    images = rng.integers(0, 256, size=(n, 2, IMG_SIZE, IMG_SIZE, 3), dtype=np.uint8)
    ft = rng.normal(0, 10, size=(n, FT_ROWS, FT_COLS)).astype(np.float32)
    proprio = rng.normal(0, 20, size=(n, PROPRIO_DIM)).astype(np.float32)
    actions = rng.uniform(0, 1, size=(n, 3)).astype(np.float32)
    return images, ft, proprio, actions


def _random_obs(rng):
    images, ft, proprio, _ = _random_batch(rng, 1)
    return Observation(
        image_left=images[0, 0], image_right=images[0, 1], ft=ft[0], proprio=proprio[0]
    )


# ------------------------------------------------------------ configuration


def test_default_dimensions():
    cfg = EncoderConfig()
    assert cfg.patches_per_view == 36
    assert cfg.z_vt_dim == 288 and cfg.z_p_dim == 32 and cfg.z_dim == 320
    assert cfg.n_latents == 8


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(patch=13)
    with pytest.raises(ValueError):
        EncoderConfig(token_dim=30, latent_dim=30, heads=4)


def test_mask_presets():
    assert parse_mask("full") == ModalityMask(True, True, True)
    assert parse_mask("prop-only") == ModalityMask(False, False, True)
    assert len(MASK_PRESETS) == 7
    with pytest.raises(ValueError):
        parse_mask("everything")
    with pytest.raises(ValueError):
        ModalityMask(False, False, False)


def test_config_json_roundtrip():
    assert EncoderConfig.from_json(TOY.to_json()) == TOY


# ------------------------------------------------------------------ tokens


@pytest.fixture(scope="module")
def default_model():
    return VisuotactilePolicy(seed=0)


def test_token_counts(default_model):
    rng = np.random.default_rng(0)
    images, ft, _, _ = _random_batch(rng, 2)
    tokens, tags = default_model.tokenize(images, ft, ModalityMask())
    assert tokens.shape == (2, 104, 64)
    assert tags.count("vision_left") == 36
    assert tags.count("vision_right") == 36
    assert tags.count("tactile") == 32
    tokens, tags = default_model.tokenize(images, ft, parse_mask("no-vision"))
    assert tokens.shape == (2, 32, 64)
    assert set(tags) == {"tactile"}
    tokens, tags = default_model.tokenize(images, ft, parse_mask("no-touch"))
    assert tokens.shape == (2, 72, 64)
    assert "tactile" not in tags


def test_tokenize_rejects_fully_masked(default_model):
    rng = np.random.default_rng(0)
    images, ft, _, _ = _random_batch(rng, 1)
    with pytest.raises(AllTokensMasked):
        default_model.tokenize(images, ft, parse_mask("prop-only"))


def test_patch_extraction_geometry(default_model):
    # A single bright patch region lands in exactly one token row.
    images = np.zeros((1, 2, IMG_SIZE, IMG_SIZE, 3), dtype=np.uint8)
    images[0, 0, 14:28, 28:42] = 255  # row block 1, col block 2 -> patch 1*6+2
    patches = default_model._patches(images)
    assert patches.shape == (1, 72, 14 * 14 * 3)
    nonzero = np.nonzero(np.abs(patches[0]).sum(axis=1))[0]
    assert list(nonzero) == [8]


# ----------------------------------------------------------------- encoder


def test_encode_shapes_and_attention(default_model):
    rng = np.random.default_rng(1)
    images, ft, _, _ = _random_batch(rng, 3)
    tokens, tags = default_model.tokenize(images, ft, ModalityMask())
    z_vt, attn = default_model.encode(tokens)
    assert z_vt.shape == (3, 288)
    assert attn.shape == (3, 4, 8, 104)
    assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-5)


def test_encode_singleton_token_attends_fully(default_model):
    tokens = Tensor(np.random.default_rng(2).normal(size=(1, 1, 64)).astype(np.float32))
    _, attn = default_model.encode(tokens)
    assert np.all(attn == 1.0)


def test_encode_token_permutation_equivariance(default_model):
    rng = np.random.default_rng(3)
    toks = rng.normal(size=(1, 10, 64)).astype(np.float32)
    swapped = toks.copy()
    swapped[0, [2, 7]] = swapped[0, [7, 2]]
    z1, _ = default_model.encode(Tensor(toks))
    z2, _ = default_model.encode(Tensor(swapped))
    assert np.allclose(z1.data, z2.data, atol=1e-5)


# ------------------------------------------------------------------ forward


def test_forward_shapes_and_range(default_model):
    rng = np.random.default_rng(4)
    images, ft, proprio, _ = _random_batch(rng, 2)
    out, attn, tags = default_model.forward_batch(images, ft, proprio, ModalityMask())
    assert out.shape == (2, 3)
    assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)
    assert len(tags) == 104 and attn is not None


def test_forward_prop_only_zeroes_z_vt():
    model = VisuotactilePolicy(TOY, seed=1)
    rng = np.random.default_rng(5)
    images, ft, proprio, _ = _random_batch(rng, 2)
    out, attn, tags = model.forward_batch(images, ft, proprio, parse_mask("prop-only"))
    assert out.shape == (2, 3)
    assert attn is None and tags == []
    # Vision/touch content cannot influence the output.
    images2 = np.roll(images, 7, axis=2)
    ft2 = ft * 3.0
    out2, _, _ = model.forward_batch(images2, ft2, proprio, parse_mask("prop-only"))
    assert np.array_equal(out.data, out2.data)


def test_forward_no_prop_ignores_proprio():
    model = VisuotactilePolicy(TOY, seed=1)
    rng = np.random.default_rng(6)
    images, ft, proprio, _ = _random_batch(rng, 2)
    out1, _, _ = model.forward_batch(images, ft, proprio, parse_mask("no-prop"))
    out2, _, _ = model.forward_batch(images, ft, proprio * -2.0, parse_mask("no-prop"))
    assert np.array_equal(out1.data, out2.data)


def test_act_deterministic(default_model):
    obs = _random_obs(np.random.default_rng(7))
    a1 = default_model.act(obs, ModalityMask())
    a2 = default_model.act(obs, ModalityMask())
    assert np.array_equal(a1, a2)
    assert a1.shape == (3,)


def test_same_seed_same_parameters():
    m1 = VisuotactilePolicy(TOY, seed=9)
    m2 = VisuotactilePolicy(TOY, seed=9)
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p1.data, p2.data)
    m3 = VisuotactilePolicy(TOY, seed=10)
    assert not all(
        np.array_equal(a.data, b.data) for a, b in zip(m1.parameters(), m3.parameters())
    )


def test_two_dim_action_head():
    model = VisuotactilePolicy(TOY, action_dim=2, seed=0)
    rng = np.random.default_rng(8)
    images, ft, proprio, _ = _random_batch(rng, 1)
    out, _, _ = model.forward_batch(images, ft, proprio, ModalityMask())
    assert out.shape == (1, 2)


# -------------------------------------------------------------- proportions


def test_attention_proportions_uniform_counting():
    tags = ["vision_left"] * 36 + ["vision_right"] * 36 + ["tactile"] * 32
    attn = np.full((4, 8, 104), 1.0 / 104.0)
    rep = attention_proportions(attn, tags, patches_per_side=6)
    assert abs(rep["proportions"]["tactile"] - 32.0 / 104.0) < 1e-9
    assert abs(sum(rep["proportions"].values()) - 1.0) < 1e-6
    assert np.asarray(rep["vision_heatmaps"]).shape == (2, 6, 6)
    assert len(rep["tactile_weights"]) == 32


def test_attention_proportions_single_modality():
    tags = ["tactile"] * 32
    attn = np.random.default_rng(0).uniform(size=(4, 8, 32))
    attn /= attn.sum(axis=-1, keepdims=True)
    rep = attention_proportions(attn, tags, patches_per_side=6)
    assert abs(rep["proportions"]["tactile"] - 1.0) < 1e-6
    assert rep["proportions"]["vision_left"] == 0.0
    assert np.allclose(rep["vision_heatmaps"], 0.0)


def test_attention_proportions_masked_everything():
    rep = attention_proportions(None, [], patches_per_side=6)
    assert rep["proportions"] == {"vision_left": 0.0, "vision_right": 0.0, "tactile": 0.0}


def test_rollout_proportions_sum_to_one(default_model):
    rng = np.random.default_rng(9)
    for _ in range(5):
        obs = _random_obs(rng)
        _, rep = default_model.act_with_attention(obs, ModalityMask())
        assert abs(sum(rep["proportions"].values()) - 1.0) < 1e-6
    _, rep = default_model.act_with_attention(obs, parse_mask("no-touch"))
    assert rep["proportions"]["tactile"] == 0.0
    assert abs(sum(rep["proportions"].values()) - 1.0) < 1e-6


# ----------------------------------------------------------------- training


def test_train_step_masked_modality_gets_no_gradient():
    model = VisuotactilePolicy(TOY, seed=2)
    rng = np.random.default_rng(10)
    images, ft, proprio, actions = _random_batch(rng, 4)
    patch_w_before = model._p("patch_proj.w").data.copy()
    pos_before = model._p("pos_vision_left").data.copy()
    adam = nd.Adam(model.parameters(), lr=1e-3)
    loss = model.train_step(images, ft, proprio, actions, parse_mask("no-vision"), adam)
    assert loss > 0
    assert np.array_equal(model._p("patch_proj.w").data, patch_w_before)
    assert np.array_equal(model._p("pos_vision_left").data, pos_before)
    # Enabled modalities did move.
    assert not np.array_equal(
        model._p("tactile_proj.w").data, np.zeros_like(model._p("tactile_proj.w").data)
    )


def test_overfit_fixed_batch():
    model = VisuotactilePolicy(TOY, seed=3)
    rng = np.random.default_rng(11)
    images, ft, proprio, actions = _random_batch(rng, 4)
    adam = nd.Adam(model.parameters(), lr=1e-3)
    losses = [
        model.train_step(images, ft, proprio, actions, ModalityMask(), adam)
        for _ in range(50)
    ]
    decreasing = sum(b < a for a, b in zip(losses, losses[1:]))
    assert decreasing >= 45
    assert losses[-1] < losses[0]


def test_full_model_gradient_check():
    model = VisuotactilePolicy(TOY, seed=4, dtype=np.float64)
    rng = np.random.default_rng(12)
    images, ft, proprio, actions = _random_batch(rng, 2)
    target = Tensor(actions.astype(np.float64))

    def loss_fn():
        pred, _, _ = model.forward_batch(images, ft, proprio, ModalityMask())
        return nd.mse_loss(pred, target)

    report = nd.grad_check(
        loss_fn, model.parameters(), max_indices=25, rng=np.random.default_rng(13)
    )
    assert report.max_rel_error < 1e-4, report.per_param


# ------------------------------------------------------------- persistence


def test_model_save_load_roundtrip(tmp_path):
    model = VisuotactilePolicy(TOY, seed=5)
    rng = np.random.default_rng(14)
    obs = _random_obs(rng)
    before = model.act(obs, ModalityMask())
    path = tmp_path / "policy.ckpt"
    model.save(path, meta={"train_steps": 42})
    loaded, meta = VisuotactilePolicy.load(path)
    assert meta["train_steps"] == 42
    assert loaded.config == TOY
    assert np.array_equal(loaded.act(obs, ModalityMask()), before)
