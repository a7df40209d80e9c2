import numpy as np
import pytest

import scdkit.tensor as tn
from scdkit.scdnet import (FeatureSelector, ScdDecConfig, ScdDecHead,
                           ScdEncConfig, ScdEncHead, focal_loss,
                           fuse_text_feature, map_frame_boundary, pool_matrix,
                           pool_word_embeddings, threshold_decisions,
                           token_frame_positions, token_to_word_probs)
from scdkit.tensor import Tensor, grad_check
from scdkit.transducer import Transcript


def layer_stack(rng, num_layers=3, t=5, d=4):
    return [Tensor(rng.normal(size=(t, d))) for _ in range(num_layers + 1)]


# ------------------------------------------------------------------- selector

def test_selector_rejects_bad_mode_and_missing_index():
    with pytest.raises(ValueError):
        FeatureSelector(mode="other")
    with pytest.raises(ValueError):
        FeatureSelector(mode="single")


def test_selector_single_mode_returns_requested_layer():
    rng = np.random.default_rng(0)
    outs = layer_stack(rng)
    sel = FeatureSelector(mode="single", num_layers=3, layer_index=2)
    assert sel.select(outs) is outs[2]


def test_selector_extreme_logits_approach_one_hot():
    rng = np.random.default_rng(1)
    outs = layer_stack(rng)
    sel = FeatureSelector(mode="weighted-learned", num_layers=3)
    sel.logits.data[...] = [-1e3, 1e3, -1e3]
    with tn.no_grad():
        picked = sel.select(outs).data
    np.testing.assert_allclose(picked, outs[2].data, atol=1e-12)
    np.testing.assert_allclose(sel.weights(), [0.0, 1.0, 0.0], atol=1e-12)


def test_selector_fixed_mode_is_uniform_average():
    rng = np.random.default_rng(2)
    outs = layer_stack(rng)
    sel = FeatureSelector(mode="weighted-fixed", num_layers=3)
    with tn.no_grad():
        avg = sel.select(outs).data
    expect = np.mean([o.data for o in outs[1:]], axis=0)
    np.testing.assert_allclose(avg, expect, atol=1e-12)


def test_selector_checks_layer_count():
    sel = FeatureSelector(mode="weighted-fixed", num_layers=3)
    with pytest.raises(ValueError):
        sel.select(layer_stack(np.random.default_rng(0), num_layers=2))


def test_selector_logits_receive_gradient():
    rng = np.random.default_rng(3)
    outs = layer_stack(rng)
    sel = FeatureSelector(mode="weighted-learned", num_layers=3)
    err = grad_check(lambda lg: tn.sum_all(tn.tanh(sel.select(outs))),
                     sel.logits)
    assert err < 1e-4


# ----------------------------------------------------------- boundary mapping

def test_map_frame_boundary_hand_cases():
    assert map_frame_boundary(0, 3, 4, 10) == (0, 0)
    assert map_frame_boundary(4, 11, 4, 10) == (1, 2)
    assert map_frame_boundary(0, 1, 2, 5) == (0, 0)
    # end clipped to the last subsampled frame, start follows
    assert map_frame_boundary(38, 39, 4, 9) == (8, 8)


def test_map_frame_boundary_rejects_inverted():
    with pytest.raises(ValueError):
        map_frame_boundary(5, 3, 2, 10)


def test_pool_matrix_rows_average_their_span():
    mat = pool_matrix([(0, 3), (4, 11)], stride_total=4, t_sub=3)
    np.testing.assert_allclose(mat, [[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
    np.testing.assert_allclose(mat.sum(axis=1), 1.0)


def test_pool_word_embeddings_matches_manual_average():
    rng = np.random.default_rng(4)
    z = Tensor(rng.normal(size=(4, 6)))
    with tn.no_grad():
        pooled = pool_word_embeddings(z, [(0, 1), (2, 7)], stride_total=2).data
    np.testing.assert_allclose(pooled[0], z.data[0])
    np.testing.assert_allclose(pooled[1], z.data[1:4].mean(axis=0))


def test_fuse_text_feature_concatenates_last_token_state():
    rng = np.random.default_rng(5)
    pooled = Tensor(rng.normal(size=(2, 3)))
    g = Tensor(rng.normal(size=(5, 4)))   # U=4 tokens plus start row
    tr = Transcript(tokens=[0, 1, 2, 3], words=["a", "b"],
                    token_to_word=[0, 0, 1, 1], boundaries=[(0, 1), (2, 3)],
                    boundary_source="oracle-alignment")
    with tn.no_grad():
        fused = fuse_text_feature(pooled, g, tr).data
    assert fused.shape == (2, 7)
    np.testing.assert_allclose(fused[0, 3:], g.data[2])
    np.testing.assert_allclose(fused[1, 3:], g.data[4])


# ---------------------------------------------------------------------- heads

def enc_head(position_mode="relative", in_dim=6):
    cfg = ScdEncConfig(num_layers=2, dim=16, num_heads=2, ffn_dim=24,
                       position_mode=position_mode, rel_clip=8)
    return ScdEncHead(cfg, in_dim=in_dim, seed=0)


def test_enc_head_outputs_probabilities_per_word():
    rng = np.random.default_rng(6)
    head = enc_head()
    with tn.no_grad():
        p = head(Tensor(rng.normal(size=(5, 6)))).data
    assert p.shape == (5,)
    assert np.all((p > 0) & (p < 1))


def test_enc_head_rejects_empty_input():
    with pytest.raises(ValueError):
        enc_head()(Tensor(np.zeros((0, 6))))


def test_enc_head_without_positions_is_permutation_equivariant():
    rng = np.random.default_rng(7)
    head = enc_head(position_mode="none")
    x = rng.normal(size=(6, 6))
    perm = rng.permutation(6)
    with tn.no_grad():
        p = head(Tensor(x)).data
        p_perm = head(Tensor(x[perm])).data
    np.testing.assert_allclose(p_perm, p[perm], atol=1e-10)


def test_enc_head_with_positions_breaks_permutation_equivariance():
    rng = np.random.default_rng(8)
    head = enc_head(position_mode="relative")
    for layer in head.layers:   # zero bias tables start out neutral; move them
        layer.attn.rel_table.data[...] = rng.normal(size=layer.attn.rel_table.shape)
    x = rng.normal(size=(6, 6))
    with tn.no_grad():
        p = head(Tensor(x)).data
        p_rev = head(Tensor(x[::-1].copy())).data
    assert not np.allclose(p_rev, p[::-1])


def dec_head(position_mode="relative"):
    cfg = ScdDecConfig(num_enc_layers=1, num_dec_layers=1, dim=16, num_heads=2,
                       ffn_dim=24, position_mode=position_mode, rel_clip=8)
    return ScdDecHead(cfg, acoustic_dim=6, token_dim=5, seed=0)


def test_dec_head_outputs_probabilities_per_token():
    rng = np.random.default_rng(9)
    head = dec_head()
    with tn.no_grad():
        p = head(Tensor(rng.normal(size=(8, 6))),
                 Tensor(rng.normal(size=(4, 5)))).data
    assert p.shape == (4,)
    assert np.all((p > 0) & (p < 1))


def test_dec_head_rejects_empty_token_input():
    with pytest.raises(ValueError):
        dec_head()(Tensor(np.zeros((3, 6))), Tensor(np.zeros((0, 5))))


def test_dec_head_ignores_acoustics_when_cross_attention_is_zeroed():
    rng = np.random.default_rng(10)
    head = dec_head()
    for layer in head.dec_layers:
        layer.cross_attn.wo.w.data[...] = 0.0
        layer.cross_attn.wo.b.data[...] = 0.0
    toks = Tensor(rng.normal(size=(4, 5)))
    with tn.no_grad():
        a = head(Tensor(rng.normal(size=(8, 6))), toks).data
        b = head(Tensor(rng.normal(size=(8, 6))), toks).data
    np.testing.assert_array_equal(a, b)


def test_dec_head_uses_token_frame_positions():
    rng = np.random.default_rng(11)
    head = dec_head()
    # the bias tables are zero at init; randomize the cross-attention one so
    # the position anchor has an observable effect
    for layer in head.dec_layers:
        layer.cross_attn.rel_table.data[...] = rng.normal(
            size=layer.cross_attn.rel_table.data.shape)
    z = Tensor(rng.normal(size=(8, 6)))
    toks = Tensor(rng.normal(size=(4, 5)))
    with tn.no_grad():
        a = head(z, toks, np.array([0, 1, 2, 3])).data
        b = head(z, toks, np.array([0, 3, 5, 7])).data
    assert not np.allclose(a, b)


def test_dec_cross_attention_bias_starts_local():
    # each head's cross-attention bias table peaks at frame distance 0 and
    # decays with |distance|, so early training reads nearby acoustics
    head = dec_head()
    clip = head.cfg.rel_clip
    for layer in head.dec_layers:
        table = layer.cross_attn.rel_table.data
        assert np.all(np.argmax(table, axis=1) == clip)
        for row in table:
            assert np.all(np.diff(row[:clip + 1]) > 0)
            assert np.all(np.diff(row[clip:]) < 0)


def test_dec_head_rejects_position_length_mismatch():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        dec_head()(Tensor(rng.normal(size=(8, 6))),
                   Tensor(rng.normal(size=(4, 5))), np.array([0, 1]))


def test_token_frame_positions_anchor_tokens_at_word_starts():
    # words at raw frames [0,3], [4,7], [8,11]; stride 2 -> starts 0, 2, 4
    boundaries = [(0, 3), (4, 7), (8, 11)]
    token_to_word = [0, 0, 1, 2, 2, 2]
    pos = token_frame_positions(boundaries, token_to_word, 2, 6)
    np.testing.assert_array_equal(pos, [0, 0, 2, 4, 4, 4])


def test_head_parameter_names_are_unique_and_complete():
    e = enc_head().params()
    d = dec_head().params()
    assert len(e) == len(set(e))
    assert any("rel_table" in k for k in e)
    assert any("cross_attn" in k for k in d)


# --------------------------------------------------------------- word mapping

def test_token_to_word_probs_takes_max():
    out = token_to_word_probs([0.1, 0.9, 0.3, 0.2], [0, 0, 1, 1])
    np.testing.assert_allclose(out, [0.9, 0.3])


def test_token_to_word_probs_validates():
    with pytest.raises(ValueError):
        token_to_word_probs([0.1], [0, 1])
    with pytest.raises(ValueError):
        token_to_word_probs([0.1], [1])   # word 0 has no tokens
    assert token_to_word_probs([], []).shape == (0,)


# ----------------------------------------------------------------- focal loss

def test_focal_loss_hand_value():
    # y=1, p=0.5, alpha=0.8, gamma=0.5: 0.8 * 0.5**0.5 * log(2) = 0.392100...
    loss = focal_loss(Tensor([0.5]), [1.0], alpha=0.8, gamma=0.5)
    assert loss.data == pytest.approx(0.392100, abs=1e-5)


def test_focal_loss_reduces_to_weighted_bce_at_gamma_zero():
    rng = np.random.default_rng(11)
    p = rng.uniform(0.05, 0.95, 12)
    y = rng.integers(0, 2, 12).astype(float)
    loss = focal_loss(Tensor(p), y, alpha=0.5, gamma=0.0)
    bce = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert loss.data == pytest.approx(0.5 * bce, abs=1e-10)


def test_focal_loss_validates_inputs():
    with pytest.raises(ValueError):
        focal_loss(Tensor([0.5]), [0.5])
    with pytest.raises(ValueError):
        focal_loss(Tensor([0.5]), [1.0], alpha=1.5)
    with pytest.raises(ValueError):
        focal_loss(Tensor([0.5]), [1.0], gamma=-1.0)
    with pytest.raises(tn.ShapeError):
        focal_loss(Tensor([0.5, 0.5]), [1.0])


def test_focal_loss_gradient_includes_modulator():
    rng = np.random.default_rng(12)
    p = Tensor(rng.uniform(0.1, 0.9, 6))
    y = np.array([1.0, 0, 1, 0, 1, 0])
    err = grad_check(lambda x: focal_loss(x, y, alpha=0.8, gamma=0.5), p)
    assert err < 1e-4


def test_focal_loss_extreme_probs_stay_finite():
    loss = focal_loss(Tensor([1.0, 0.0]), [0.0, 1.0])
    assert np.isfinite(loss.data)


# ------------------------------------------------------------------ decisions

def test_threshold_decisions_strict_and_suppresses_final():
    dec = threshold_decisions([0.4, 0.5, 0.6, 0.9], threshold=0.5)
    np.testing.assert_array_equal(dec, [0, 0, 1, 0])
    dec = threshold_decisions([0.9, 0.9], threshold=0.5, suppress_final=False)
    np.testing.assert_array_equal(dec, [1, 1])
    with pytest.raises(ValueError):
        threshold_decisions([0.5], threshold=1.0)
    assert threshold_decisions([], 0.5).shape == (0,)


# ------------------------------------------------------ end-to-end gradients

def test_gradients_flow_through_head_and_selector():
    rng = np.random.default_rng(13)
    outs = [Tensor(rng.normal(size=(6, 6))) for _ in range(4)]
    sel = FeatureSelector(mode="weighted-learned", num_layers=3)
    head = enc_head()
    y = np.array([0.0, 0, 1, 0, 0, 1])

    def objective(logits):
        z = sel.select(outs)
        pooled = pool_word_embeddings(
            z, [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11)], 2)
        return focal_loss(head(pooled), y)

    assert grad_check(objective, sel.logits) < 1e-4
    loss = objective(sel.logits)
    loss.backward()
    for name, p in head.params().items():
        assert p.grad is not None, name
