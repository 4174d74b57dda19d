import numpy as np
import pytest

from seizurecast.errors import DimensionError
from seizurecast.model import (
    DECODER_PREFIXES,
    ENCODER_PREFIXES,
    ModelConfig,
    ModelParams,
    classify_forward,
    classify_logits,
    decode_all,
    decode_reconstruct,
    encode,
    init_params,
    param_shapes,
    predict_proba,
    pretrain_forward,
    pretrain_loss,
    reinit_head,
    sinusoid_table,
)
from seizurecast.numerics import Tensor, backward, bce_with_logits
from seizurecast.numerics.gradcheck import check_gradients
from seizurecast.tubelet import TubeletGrid, make_tube_mask

TINY_GRID = TubeletGrid(1, 4, 8, 8, 2, 4, 4)  # 2 x 2 x 2 = 8 tokens of dim 32
TINY = ModelConfig(grid=TINY_GRID, enc_dim=8, enc_depth=1, enc_heads=2, dec_dim=4, dec_depth=1, dec_heads=2)


def block_count(d: int) -> int:
    # LN (2d) + q, k, v, proj (4(d^2 + d)) + LN (2d) + MLP (d*4d + 4d + 4d*d + d)
    return 2 * d + 4 * (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d)


def closed_form_count(cfg: ModelConfig) -> int:
    td, de, dd = cfg.grid.token_dim, cfg.enc_dim, cfg.dec_dim
    n = td * de + de + cfg.enc_depth * block_count(de) + (2 * de if cfg.enc_depth else 0)
    n += de + de + 1  # cls token, classifier
    n += de * dd + dd + dd  # projection, mask token
    n += cfg.dec_depth * block_count(dd) + (2 * dd if cfg.dec_depth else 0)
    n += dd * td + td
    return n


@pytest.mark.parametrize("d", [4, 8, 64])
def test_block_count_formula(d):
    assert block_count(d) == 12 * d * d + 13 * d


@pytest.mark.parametrize("cfg", [ModelConfig(), TINY, ModelConfig(enc_depth=0, dec_depth=0)], ids=["default", "tiny", "no-blocks"])
def test_parameter_count_closed_form(cfg):
    p = init_params(cfg, 0)
    assert p.count() == closed_form_count(cfg)
    assert p.count(trainable_only=False) == closed_form_count(cfg) + cfg.grid.num_tokens * (cfg.enc_dim + cfg.dec_dim)


def test_default_parameter_count():
    assert init_params(ModelConfig(), 0).count() == 240257


def test_config_dict_roundtrip():
    cfg = ModelConfig(enc_dim=32, enc_heads=8)
    assert ModelConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()}) == cfg


def test_heads_must_divide_width():
    with pytest.raises(DimensionError):
        ModelConfig(enc_dim=10, enc_heads=4)


def test_init_values():
    p = init_params(ModelConfig(), 0)
    assert not p["classifier.weight"].data.any() and not p["classifier.bias"].data.any()
    assert (p["encoder.blocks.0.norm1.gamma"].data == 1).all()
    np.testing.assert_allclose(p["encoder.pos_embed"].data, sinusoid_table(128, 64), rtol=1e-6, atol=1e-7)
    w = p["encoder.blocks.0.attn.q.weight"].data
    std = 0.02 * np.sqrt(768 / 64)
    assert np.abs(w).max() <= 2 * std + 1e-7
    assert 0.7 * std < w.std() < std
    assert set(ModelParams.FIXED) <= set(p.names())
    assert not set(ModelParams.FIXED) & set(p.trainable_names())


def test_init_is_seeded():
    a, b, c = init_params(TINY, 1), init_params(TINY, 1), init_params(TINY, 2)
    assert all((a[n].data == b[n].data).all() for n in a)
    assert any((a[n].data != c[n].data).any() for n in a if n.endswith("weight") and not n.startswith("classifier"))


def test_sinusoid_table_values():
    t = sinusoid_table(3, 4)
    np.testing.assert_allclose(t[1], [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)])
    np.testing.assert_allclose(t[0], [0, 1, 0, 1])


# --- shapes -----------------------------------------------------------------------


def _tokens(cfg, batch=2, seed=0):
    return np.random.default_rng(seed).standard_normal((batch, cfg.grid.num_tokens, cfg.grid.token_dim)).astype(np.float32)


def test_forward_shapes():
    cfg, p = TINY, init_params(TINY, 0)
    tok = _tokens(cfg, 3)
    masks = [make_tube_mask(cfg.grid, 0.5, s) for s in range(3)]
    vis_idx = np.stack([m.visible_index for m in masks])
    visible = np.take_along_axis(tok, vis_idx[..., None], axis=1)
    z = encode(visible, vis_idx, p)
    assert z.shape == (3, 4, cfg.enc_dim)
    assert encode(visible, vis_idx, p, with_cls=True).shape == (3, 5, cfg.enc_dim)
    assert decode_all(z, masks, p).shape == (3, cfg.grid.num_tokens, cfg.grid.token_dim)
    assert decode_reconstruct(z, masks, p).shape == (3, 4, cfg.grid.token_dim)
    assert classify_logits(tok, p).shape == (3,)
    assert decode_reconstruct(encode(visible[0], vis_idx[0], p), masks[0], p).shape == (4, cfg.grid.token_dim)


def test_encoder_position_out_of_range():
    p = init_params(TINY, 0)
    with pytest.raises(IndexError):
        encode(np.zeros((2, 32), np.float32), np.array([0, 8]), p)


def test_decoder_rejects_mismatched_mask():
    p = init_params(TINY, 0)
    z = Tensor(np.zeros((1, 3, TINY.enc_dim), np.float32))
    with pytest.raises(DimensionError):
        decode_all(z, [make_tube_mask(TINY.grid, 0.5, 0)], p)


def test_zero_classifier_predicts_one_half():
    p = init_params(ModelConfig(), 0)
    probs = predict_proba(_tokens(ModelConfig(), 4), p)
    assert (probs == 0.5).all()


def test_classify_forward_matches_batch():
    p = init_params(TINY, 0)
    p["classifier.weight"].data = np.random.default_rng(0).standard_normal((1, TINY.enc_dim)).astype(np.float32)
    frames = np.random.default_rng(1).standard_normal(TINY.grid.frame_shape).astype(np.float32)
    from seizurecast.model import tokens_of

    assert classify_forward(frames, p) == pytest.approx(predict_proba(tokens_of(frames, TINY.grid)[None], p)[0], rel=1e-6)


# --- structure -------------------------------------------------------------------------


def test_encoder_is_permutation_equivariant():
    p = init_params(TINY, 0).astype(np.float64)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((TINY.grid.num_tokens, TINY.grid.token_dim))
    idx = np.arange(TINY.grid.num_tokens)
    perm = rng.permutation(len(idx))
    out = encode(x, idx, p).data
    np.testing.assert_allclose(encode(x[perm], idx[perm], p).data, out[perm], rtol=1e-10, atol=1e-12)


def test_zero_depth_encoder_is_embedding_only():
    cfg = ModelConfig(grid=TINY_GRID, enc_dim=8, enc_depth=0, enc_heads=2, dec_dim=4, dec_depth=0, dec_heads=2)
    p = init_params(cfg, 0).astype(np.float64)
    x = np.random.default_rng(0).standard_normal((5, 32))
    idx = np.array([0, 2, 3, 6, 7])
    expected = x @ p["patch_embed.weight"].data + p["patch_embed.bias"].data + p["encoder.pos_embed"].data[idx]
    np.testing.assert_allclose(encode(x, idx, p).data, expected, rtol=1e-12)


def test_decoder_output_follows_grid_order():
    # a zero-depth decoder has no token mixing: each output depends only on its own row
    cfg = ModelConfig(grid=TINY_GRID, enc_dim=8, enc_depth=1, enc_heads=2, dec_dim=4, dec_depth=0, dec_heads=2)
    p = init_params(cfg, 0).astype(np.float64)
    m = make_tube_mask(cfg.grid, 0.5, 1)
    z = np.random.default_rng(0).standard_normal((1, 4, 8))
    out = decode_all(Tensor(z), [m], p).data[0]
    head = lambda y: (y + p["decoder.pos_embed"].data[k]) @ p["decoder.head.weight"].data + p["decoder.head.bias"].data  # noqa: E731
    for j, k in enumerate(m.visible_index):
        y = z[0, j] @ p["encoder_to_decoder.weight"].data + p["encoder_to_decoder.bias"].data
        np.testing.assert_allclose(out[k], head(y), rtol=1e-12)
    for k in m.masked_index:
        np.testing.assert_allclose(out[k], head(p["decoder.mask_token"].data), rtol=1e-12)


def test_pretrain_gradient_reaches_encoder_and_decoder_only():
    p = init_params(TINY, 0)
    masks = [make_tube_mask(TINY.grid, 0.5, s) for s in range(2)]
    loss = pretrain_loss(_tokens(TINY), masks, p)
    names = p.trainable_names()
    backward(loss, params=[p[n] for n in names])
    for n in names:
        reached = bool(np.abs(p[n].grad).sum() > 0)
        assert reached == n.startswith(ENCODER_PREFIXES + DECODER_PREFIXES), n


def test_classification_gradient_skips_decoder():
    p = init_params(TINY, 0)
    p["classifier.weight"].data = np.ones((1, TINY.enc_dim), np.float32)
    loss = bce_with_logits(classify_logits(_tokens(TINY, 4), p), np.array([1.0, 0.0, 1.0, 0.0]))
    names = p.trainable_names()
    backward(loss, params=[p[n] for n in names])
    for n in names:
        reached = bool(np.abs(p[n].grad).sum() > 0)
        assert reached == (not n.startswith(DECODER_PREFIXES)), n


def test_reinit_head_only_touches_head():
    p = init_params(TINY, 0)
    before = {n: p[n].data.copy() for n in p}
    p["classifier.weight"].data = np.ones((1, TINY.enc_dim), np.float32)
    reinit_head(p, 99)
    for n in p:
        if n == "cls_token":
            assert not np.array_equal(p[n].data, before[n])
        else:
            np.testing.assert_array_equal(p[n].data, before[n])


# --- end-to-end gradient check -----------------------------------------------------------


def test_end_to_end_pretrain_gradcheck():
    p = init_params(TINY, 0).astype(np.float64)
    rng = np.random.default_rng(0)
    for n in p.trainable_names():  # move off the symmetric init so every path carries signal
        p[n].data = p[n].data + 0.05 * rng.standard_normal(p[n].shape)
    tokens = rng.standard_normal((2, TINY.grid.num_tokens, TINY.grid.token_dim))
    masks = [make_tube_mask(TINY.grid, 0.5, s) for s in (1, 2)]
    names = p.trainable_names(ENCODER_PREFIXES + DECODER_PREFIXES)
    inputs = [p[n] for n in names]
    assert check_gradients(lambda *_: pretrain_loss(tokens, masks, p), inputs) <= 1e-3


def test_end_to_end_classifier_gradcheck():
    p = init_params(TINY, 0).astype(np.float64)
    rng = np.random.default_rng(1)
    for n in p.trainable_names():
        p[n].data = p[n].data + 0.05 * rng.standard_normal(p[n].shape)
    tokens = rng.standard_normal((4, TINY.grid.num_tokens, TINY.grid.token_dim))
    labels = np.array([1.0, 0.0, 0.0, 1.0])
    names = p.trainable_names(ENCODER_PREFIXES + ("cls_token", "classifier."))
    inputs = [p[n] for n in names]
    assert check_gradients(lambda *_: bce_with_logits(classify_logits(tokens, p), labels), inputs) <= 1e-3


def test_pretrain_forward_single_clip():
    p = init_params(TINY, 0)
    frames = np.random.default_rng(0).random(TINY.grid.frame_shape, dtype=np.float32)
    a = pretrain_forward(frames, 0.5, 7, p).item()
    assert a > 0 and a == pretrain_forward(frames, 0.5, 7, p).item()
