"""Encoder math against scalar reference transcriptions and frozen values.

Matrix goldens were derived once from the pure-Python references in
oracles.py (float64) and are checked here at float32 tolerance; the same
references are also evaluated live so the two routes stay independent.
"""

import numpy as np
import pytest

import oracles
from embrec.core import Rng, tensor_checksum
from embrec.errors import ConfigError, InputError, LayerRangeError, ShapeError
from embrec.model import (
    Adapter,
    FusionMLP,
    LayerParams,
    Model,
    ModelConfig,
    _attention,
    adapter_apply,
    attach_adapters,
    cross_model_fuse,
    embed,
    forward_range,
    full_forward,
    init_fusion,
    init_model,
    layer_forward,
    model_id,
    parameter_checksum,
    trainable_fraction,
)

RTOL = 1e-5
ATOL = 1e-6


def f32(x):
    return np.array(x, dtype=np.float32)


# -- config -----------------------------------------------------------------

def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=1, d_model=7, n_heads=2, d_ff=4, vocab_size=8)


@pytest.mark.parametrize("kwargs", [
    dict(n_layers=0, d_model=8, n_heads=2, d_ff=4, vocab_size=8),
    dict(n_layers=1, d_model=1, n_heads=1, d_ff=4, vocab_size=8),
    dict(n_layers=1, d_model=8, n_heads=0, d_ff=4, vocab_size=8),
    dict(n_layers=1, d_model=8, n_heads=2, d_ff=0, vocab_size=8),
    dict(n_layers=1, d_model=8, n_heads=2, d_ff=4, vocab_size=1),
    dict(n_layers=1, d_model=8, n_heads=2, d_ff=4, vocab_size=8, max_seq=0),
    dict(n_layers=1, d_model=8, n_heads=2, d_ff=4, vocab_size=8, ln_eps=0.0),
])
def test_config_rejects_bad_fields(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_config_json_round_trip_field_names():
    cfg = ModelConfig(n_layers=3, d_model=8, n_heads=2, d_ff=16,
                      vocab_size=32, max_seq=24, ln_eps=1e-5, seed=9)
    text = cfg.to_json()
    import json
    obj = json.loads(text)
    assert set(obj) == {"n_layers", "d_model", "n_heads", "d_ff",
                        "vocab_size", "max_seq", "ln_eps", "seed"}
    assert ModelConfig.from_json(text) == cfg


def test_config_json_rejects_unknown_and_missing():
    with pytest.raises(ConfigError):
        ModelConfig.from_json('{"n_layers": 1, "bogus": 2}')
    with pytest.raises(ConfigError):
        ModelConfig.from_json('{"n_layers": 2}')
    with pytest.raises(ConfigError):
        ModelConfig.from_json("not json")


# -- initialization ---------------------------------------------------------

SMALL = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16,
                    vocab_size=32, max_seq=64, ln_eps=1e-5, seed=7)


def test_init_is_deterministic():
    a, b = init_model(SMALL), init_model(SMALL)
    assert parameter_checksum(a) == parameter_checksum(b)
    assert a.token_embedding.tobytes() == b.token_embedding.tobytes()


def test_init_checksum_golden():
    # derived once from the draw-order replay in oracles.py, then frozen
    m = init_model(SMALL)
    assert float(m.token_embedding[0, 0]) == -0.0110170254483819
    assert parameter_checksum(m) == 0x1A20C407


def test_init_bytes_match_draw_order_replay():
    ref_model = oracles.init_params_ref(2, 8, 2, 16, 32, 64, 7)
    ref_bytes = oracles.param_bytes_ref(ref_model)
    assert len(ref_bytes) == 7872
    assert oracles.crc32_ref(ref_bytes) == parameter_checksum(init_model(SMALL))


def test_init_every_parameter_matches_reference():
    cfg = ModelConfig(n_layers=1, d_model=4, n_heads=2, d_ff=8,
                      vocab_size=16, max_seq=8, ln_eps=1e-5, seed=3)
    m = init_model(cfg)
    ref = oracles.init_params_ref(1, 4, 2, 8, 16, 8, 3)
    assert m.token_embedding.tobytes() == f32(ref["token_embedding"]).tobytes()
    assert m.position_embedding.tobytes() == f32(ref["position_embedding"]).tobytes()
    p, rp = m.layers[0], ref["layers"][0]
    for name in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
                 "w1", "b1", "w2", "b2"):
        assert getattr(p, name).tobytes() == f32(rp[name]).tobytes(), name
    assert (p.gamma1 == 1.0).all() and (p.beta1 == 0.0).all()
    assert (p.gamma2 == 1.0).all() and (p.beta2 == 0.0).all()


def test_init_draws_depend_on_seed():
    other = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16,
                        vocab_size=32, max_seq=64, ln_eps=1e-5, seed=8)
    assert parameter_checksum(init_model(other)) != parameter_checksum(init_model(SMALL))


# -- embed ------------------------------------------------------------------

def test_embed_shape_and_reference():
    m = init_model(SMALL)
    h = embed(m, [1, 2, 3])
    assert h.shape == (3, 8) and h.dtype == np.float32
    ref = oracles.init_params_ref(2, 8, 2, 16, 32, 64, 7)
    expect = f32(oracles.embed_ref(ref, [1, 2, 3]))
    assert np.allclose(h, expect, rtol=RTOL, atol=ATOL)


def test_embed_same_token_differs_only_by_position():
    m = init_model(SMALL)
    h = embed(m, [0, 0])
    assert not np.array_equal(h[0], h[1])
    m.position_embedding[1] = m.position_embedding[0]
    h = embed(m, [0, 0])
    assert np.array_equal(h[0], h[1])


def test_embed_rejects_bad_input():
    m = init_model(SMALL)
    with pytest.raises(InputError):
        embed(m, [])
    with pytest.raises(InputError):
        embed(m, [0] * (SMALL.max_seq + 1))
    with pytest.raises(InputError):
        embed(m, [SMALL.vocab_size])
    with pytest.raises(InputError):
        embed(m, [-1])
    with pytest.raises(InputError):
        embed(m, [0.5, 1.5])


# -- single layer -----------------------------------------------------------

HAND = dict(
    w_q=[[0.1, 0.2], [-0.1, 0.3]], b_q=[0.01, -0.02],
    w_k=[[0.2, 0.0], [0.1, 0.1]], b_k=[0.0, 0.05],
    w_v=[[0.3, -0.2], [0.0, 0.2]], b_v=[0.02, 0.0],
    w_o=[[1.0, 0.1], [-0.1, 1.0]], b_o=[0.0, 0.0],
    ln1_gamma=[1.1, 0.9], ln1_beta=[0.05, -0.05],
    w1=[[0.5, -0.3], [0.2, 0.4]], b1=[0.1, -0.1],
    w2=[[0.7, 0.2], [-0.3, 0.5]], b2=[0.0, 0.02],
    ln2_gamma=[1.2, 0.8], ln2_beta=[0.0, 0.1],
)
HAND_H = [[0.5, -1.0], [1.5, 2.0]]
# frozen from the float64 scalar transcription of the two-equation layer
HAND_ATTN = [[0.3306434619159493, -0.0669358129851607],
             [0.341186976149308, -0.04949846252229832]]
HAND_OUT = [[1.1999957685143419, -0.6999971790095614],
            [-1.1999953918084623, 0.8999969278723082]]


def hand_model():
    cfg = ModelConfig(n_layers=1, d_model=2, n_heads=1, d_ff=2,
                      vocab_size=4, max_seq=4, ln_eps=1e-5, seed=0)
    lp = LayerParams(
        w_q=f32(HAND["w_q"]), b_q=f32(HAND["b_q"]),
        w_k=f32(HAND["w_k"]), b_k=f32(HAND["b_k"]),
        w_v=f32(HAND["w_v"]), b_v=f32(HAND["b_v"]),
        w_o=f32(HAND["w_o"]), b_o=f32(HAND["b_o"]),
        gamma1=f32(HAND["ln1_gamma"]), beta1=f32(HAND["ln1_beta"]),
        w1=f32(HAND["w1"]), b1=f32(HAND["b1"]),
        w2=f32(HAND["w2"]), b2=f32(HAND["b2"]),
        gamma2=f32(HAND["ln2_gamma"]), beta2=f32(HAND["ln2_beta"]),
    )
    zeros = np.zeros((4, 2), dtype=np.float32)
    return Model(cfg, zeros, zeros.copy(), [lp])


def test_attention_hand_case():
    m = hand_model()
    att = _attention(f32(HAND_H), m.layers[0], 1)
    assert np.allclose(att, f32(HAND_ATTN), rtol=RTOL, atol=ATOL)
    live = oracles.attention_ref(HAND_H, HAND, 1)
    assert np.allclose(f32(live), f32(HAND_ATTN), rtol=1e-12, atol=0)


def test_layer_forward_hand_case():
    m = hand_model()
    out = layer_forward(m, 1, f32(HAND_H))
    assert np.allclose(out, f32(HAND_OUT), rtol=RTOL, atol=ATOL)
    live = oracles.layer_forward_ref(HAND_H, HAND, 1, 1e-5)
    assert np.allclose(out, f32(live), rtol=RTOL, atol=ATOL)


def test_layer_forward_matches_reference_on_random_model():
    cfg = ModelConfig(n_layers=1, d_model=4, n_heads=2, d_ff=8,
                      vocab_size=16, max_seq=8, ln_eps=1e-5, seed=21)
    m = init_model(cfg)
    ref = oracles.init_params_ref(1, 4, 2, 8, 16, 8, 21)
    h = Rng(100).fill_uniform(3 * 4, -1.0, 1.0).reshape(3, 4)
    out = layer_forward(m, 1, h)
    live = oracles.layer_forward_ref([list(map(float, r)) for r in h],
                                     ref["layers"][0], 2, 1e-5)
    assert np.allclose(out, f32(live), rtol=1e-4, atol=1e-5)


def test_layer_forward_preserves_shape():
    m = init_model(SMALL)
    h = Rng(1).fill_uniform(5 * 8, -1.0, 1.0).reshape(5, 8)
    assert layer_forward(m, 1, h).shape == (5, 8)


def test_layer_forward_softmax_rows_sum_to_one():
    # all-ones values and identity output projection expose the softmax
    # normalizer: every attention output element is one row-sum
    m = hand_model()
    p = m.layers[0]
    p.w_v[:] = 0.0
    p.b_v[:] = 1.0
    p.w_o[:] = np.eye(2, dtype=np.float32)
    p.b_o[:] = 0.0
    h = Rng(3).fill_uniform(4 * 2, -2.0, 2.0).reshape(4, 2)[:2]
    att = _attention(h, p, 1)
    assert np.allclose(att, 1.0, atol=1e-6)


def test_constant_row_normalizes_to_beta():
    # zero weights keep each sub-layer input row constant, so both norms
    # collapse to their shift vector
    m = hand_model()
    p = m.layers[0]
    for a in p.arrays():
        a[:] = 0.0
    p.beta2[:] = f32([0.25, -0.75])
    out = layer_forward(m, 1, f32([[3.0, 3.0], [-1.5, -1.5]]))
    assert np.allclose(out, f32([[0.25, -0.75], [0.25, -0.75]]), atol=1e-7)


def test_default_init_rows_are_normalized():
    # freshly initialized layers have gamma=1, beta=0, so outputs are raw
    # layer-norm rows: mean ~ 0, variance ~ 1
    cfg = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64,
                      vocab_size=64, max_seq=16, ln_eps=1e-5, seed=2)
    m = init_model(cfg)
    out = forward_range(m, embed(m, [5, 9, 13, 2]), 0, 2)
    mu = out.mean(axis=1)
    var = out.var(axis=1)
    assert np.abs(mu).max() <= 1e-5
    assert np.abs(var - 1.0).max() <= 1e-4


def test_layer_forward_rejects_bad_layer_and_shape():
    m = init_model(SMALL)
    h = np.zeros((2, 8), dtype=np.float32)
    with pytest.raises(LayerRangeError):
        layer_forward(m, 0, h)
    with pytest.raises(LayerRangeError):
        layer_forward(m, 3, h)
    with pytest.raises(ShapeError):
        layer_forward(m, 1, np.zeros((2, 4), dtype=np.float32))


# -- forward_range / full_forward -------------------------------------------

def test_forward_range_empty_composition_is_identity():
    m = init_model(SMALL)
    h = Rng(4).fill_uniform(3 * 8, -1.0, 1.0).reshape(3, 8)
    out = forward_range(m, h, 2, 2)
    assert out.tobytes() == h.tobytes()


def test_forward_range_split_equals_straight_run():
    cfg = ModelConfig(n_layers=12, d_model=32, n_heads=4, d_ff=64,
                      vocab_size=64, max_seq=32, ln_eps=1e-5, seed=5)
    m = init_model(cfg)
    h0 = embed(m, [3, 1, 4, 1, 5, 9, 2, 6])
    full = forward_range(m, h0, 0, 12)
    for k in (0, 1, 6, 11, 12):
        hk = forward_range(m, h0, 0, k)
        resumed = forward_range(m, hk, k, 12)
        assert resumed.tobytes() == full.tobytes(), f"k={k}"
    assert tensor_checksum(forward_range(m, forward_range(m, h0, 0, 6), 6, 12)) \
        == tensor_checksum(full)


def test_forward_range_rejects_bad_bounds():
    m = init_model(SMALL)
    h = np.zeros((1, 8), dtype=np.float32)
    for bounds in ((-1, 1), (2, 1), (0, 3)):
        with pytest.raises(LayerRangeError):
            forward_range(m, h, *bounds)


def test_full_forward_is_embed_then_range():
    m = init_model(SMALL)
    tokens = [7, 0, 31, 16]
    a = full_forward(m, tokens)
    b = forward_range(m, embed(m, tokens), 0, 2)
    assert a.tobytes() == b.tobytes()
    assert full_forward(m, tokens).tobytes() == a.tobytes()


def test_full_forward_against_reference_and_frozen_checksum():
    cfg = ModelConfig(n_layers=4, d_model=16, n_heads=2, d_ff=32,
                      vocab_size=64, max_seq=64, ln_eps=1e-5, seed=1)
    m = init_model(cfg)
    tokens = list(range(1, 9))
    out = full_forward(m, tokens)
    ref = f32(oracles.full_forward_ref(4, 16, 2, 32, 64, 64, 1e-5, 1, tokens))
    assert np.allclose(out, ref, rtol=1e-4, atol=1e-5)
    # determinism pin for this exact float32 pipeline, frozen after the
    # reference comparison above first passed
    assert tensor_checksum(out) == 0xDB3603B7


# -- adapters ---------------------------------------------------------------

def adapter_from(w_down, b_down, w_up, b_up):
    return Adapter(f32(w_down), f32(b_down), f32(w_up), f32(b_up))


def test_zero_up_projection_is_bitwise_identity():
    r = Rng(55)
    for _ in range(10):
        s = 1 + int(r.uniform(1, 6))
        h = r.fill_uniform(s * 4, -3.0, 3.0).reshape(s, 4)
        ad = adapter_from(r.fill_uniform(4 * 2, -1, 1).reshape(4, 2),
                          r.fill_uniform(2, -1, 1),
                          np.zeros((2, 4)), np.zeros(4))
        assert adapter_apply(h, ad).tobytes() == h.tobytes()


def test_adapter_hand_case():
    h = f32([[1.0, 2.0], [-0.5, 0.3]])
    ad = adapter_from([[0.4], [0.6]], [0.1], [[0.8, -0.5]], [0.05, 0.15])
    out = adapter_apply(h, ad)
    assert np.allclose(out, f32([[2.41, 1.3], [-0.386, 0.41]]),
                       rtol=RTOL, atol=ATOL)
    live = oracles.adapter_ref([[1.0, 2.0], [-0.5, 0.3]],
                               [[0.4], [0.6]], [0.1], [[0.8, -0.5]],
                               [0.05, 0.15])
    assert np.allclose(out, f32(live), rtol=RTOL, atol=ATOL)


def test_adapter_preserves_shape_and_rejects_mismatch():
    h = np.zeros((3, 4), dtype=np.float32)
    ad = adapter_from(np.zeros((4, 2)), np.zeros(2),
                      np.ones((2, 4)), np.zeros(4))
    assert adapter_apply(h, ad).shape == (3, 4)
    bad = adapter_from(np.zeros((5, 2)), np.zeros(2),
                       np.ones((2, 4)), np.zeros(4))
    with pytest.raises(ShapeError):
        adapter_apply(h, bad)


def test_attach_adapters_identity_at_init():
    m = init_model(SMALL)
    am = attach_adapters(m, 1, bottleneck=3, seed=4)
    tokens = [1, 2, 3, 4]
    assert full_forward(am, tokens).tobytes() == full_forward(m, tokens).tobytes()
    assert am.adapters.for_layer(1) is None
    assert am.adapters.for_layer(2) is not None


def test_attached_adapter_wiring_matches_reference():
    cfg = ModelConfig(n_layers=1, d_model=4, n_heads=1, d_ff=8,
                      vocab_size=16, max_seq=8, ln_eps=1e-5, seed=31)
    m = attach_adapters(init_model(cfg), 0, bottleneck=2, seed=6)
    mh_ad, ff_ad = m.adapters.pairs[0]
    r = Rng(70)
    mh_ad.w_up[:] = r.fill_uniform(2 * 4, -0.5, 0.5).reshape(2, 4)
    mh_ad.b_up[:] = r.fill_uniform(4, -0.5, 0.5)
    ff_ad.w_up[:] = r.fill_uniform(2 * 4, -0.5, 0.5).reshape(2, 4)
    h = r.fill_uniform(3 * 4, -1.0, 1.0).reshape(3, 4)
    out = layer_forward(m, 1, h)

    ref = oracles.init_params_ref(1, 4, 1, 8, 16, 8, 31)
    to_list = lambda a: [list(map(float, row)) for row in a]
    live = oracles.layer_forward_ref(
        to_list(h), ref["layers"][0], 1, 1e-5,
        adapter_mh=(to_list(mh_ad.w_down), list(map(float, mh_ad.b_down)),
                    to_list(mh_ad.w_up), list(map(float, mh_ad.b_up))),
        adapter_ff=(to_list(ff_ad.w_down), list(map(float, ff_ad.b_down)),
                    to_list(ff_ad.w_up), list(map(float, ff_ad.b_up))),
    )
    assert np.allclose(out, f32(live), rtol=1e-4, atol=1e-5)
    # and the adapters actually changed the output
    assert out.tobytes() != layer_forward(init_model(cfg), 1, h).tobytes()


# -- trainable fraction -----------------------------------------------------

def closed_form_layer_params(d, d_ff):
    return 4 * (d * d + d) + d * d_ff + d_ff + d_ff * d + d + 4 * d


def closed_form_total(cfg):
    return (cfg.vocab_size * cfg.d_model + cfg.max_seq * cfg.d_model
            + cfg.n_layers * closed_form_layer_params(cfg.d_model, cfg.d_ff))


def test_trainable_fraction_reduced_counts():
    m = init_model(SMALL)
    total = closed_form_total(SMALL)
    per_layer = closed_form_layer_params(8, 16)
    for k in range(SMALL.n_layers + 1):
        t = trainable_fraction(m, k, "reduced")
        assert t.total == total
        assert t.trainable == (SMALL.n_layers - k) * per_layer
        assert t.fraction == t.trainable / t.total
    assert trainable_fraction(m, SMALL.n_layers, "reduced").fraction == 0.0


def test_trainable_fraction_adapter_counts():
    m = attach_adapters(init_model(SMALL), 1, bottleneck=3, seed=0)
    d, b = 8, 3
    per_adapter = d * b + b + b * d + d
    t = trainable_fraction(m, 1, "adapters")
    assert t.trainable == 2 * per_adapter  # one adapted layer, two adapters
    assert t.total == closed_form_total(SMALL) + 2 * per_adapter
    # freezing later than the adapted range leaves nothing trainable
    assert trainable_fraction(m, 2, "adapters").trainable == 0


def test_adapter_parameter_arithmetic_at_bert_widths():
    # adapter size depends only on (d, bottleneck). keep the other dims
    # tiny so the check is instant
    cfg = ModelConfig(n_layers=6, d_model=768, n_heads=1, d_ff=1,
                      vocab_size=2, max_seq=1, ln_eps=1e-5, seed=0)
    m = attach_adapters(init_model(cfg), 0, bottleneck=256, seed=0)
    mh, _ = m.adapters.pairs[0]
    one = sum(a.size for a in mh.arrays())
    assert one == 394_240
    assert 2 * one == 788_480
    assert m.adapters.param_count() == 4_730_880
    assert trainable_fraction(m, 0, "adapters").trainable == 4_730_880


def test_trainable_fraction_rejects_bad_args():
    m = init_model(SMALL)
    with pytest.raises(LayerRangeError):
        trainable_fraction(m, 3, "reduced")
    with pytest.raises(InputError):
        trainable_fraction(m, 1, "all")


# -- cross-model fusion -----------------------------------------------------

def test_fuse_zero_mlp_is_bitwise_identity():
    consumer = Rng(8).fill_uniform(4 * 2, -1, 1).reshape(4, 2)
    source = Rng(9).fill_uniform(4 * 4, -1, 1).reshape(4, 4)
    mlp = FusionMLP(np.zeros((4, 3), np.float32), np.zeros(3, np.float32),
                    np.zeros((3, 2), np.float32), np.zeros(2, np.float32))
    assert cross_model_fuse(consumer, source, mlp).tobytes() == consumer.tobytes()


def test_fuse_hand_case():
    consumer = f32([[0.1, -0.1]])
    source = f32([[1.0, -2.0, 0.5, 3.0]])
    w_a = [[0.2, -0.1, 0.3], [0.0, 0.4, -0.2], [0.5, 0.1, 0.0],
           [-0.3, 0.2, 0.1]]
    b_a = [0.05, -0.05, 0.1]
    w_b = [[0.6, -0.4], [0.2, 0.3], [-0.1, 0.5]]
    b_b = [0.1, -0.02]
    mlp = FusionMLP(f32(w_a), f32(b_a), f32(w_b), f32(b_b))
    out = cross_model_fuse(consumer, source, mlp)
    assert np.allclose(out, f32([[0.09, 0.43]]), rtol=RTOL, atol=ATOL)
    live = oracles.fusion_ref([[0.1, -0.1]], [[1.0, -2.0, 0.5, 3.0]],
                              w_a, b_a, w_b, b_b)
    assert np.allclose(out, f32(live), rtol=RTOL, atol=ATOL)


def test_fuse_rejects_mismatches():
    mlp = init_fusion(4, 2, seed=1)
    with pytest.raises(ShapeError):
        cross_model_fuse(np.zeros((3, 2), np.float32),
                         np.zeros((4, 4), np.float32), mlp)
    with pytest.raises(ShapeError):
        cross_model_fuse(np.zeros((3, 2), np.float32),
                         np.zeros((3, 5), np.float32), mlp)
    with pytest.raises(ShapeError):
        cross_model_fuse(np.zeros((3, 3), np.float32),
                         np.zeros((3, 4), np.float32), mlp)


def test_init_fusion_defaults_hidden_to_source_width():
    mlp = init_fusion(6, 2, seed=0)
    assert mlp.w_a.shape == (6, 6) and mlp.w_b.shape == (6, 2)
    again = init_fusion(6, 2, seed=0)
    assert mlp.w_a.tobytes() == again.w_a.tobytes()


# -- model id ---------------------------------------------------------------

def test_model_id_stable_and_seed_sensitive():
    a = model_id(SMALL)
    assert a == model_id(ModelConfig(**{
        "n_layers": 2, "d_model": 8, "n_heads": 2, "d_ff": 16,
        "vocab_size": 32, "max_seq": 64, "ln_eps": 1e-5, "seed": 7}))
    b = model_id(ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16,
                             vocab_size=32, max_seq=64, ln_eps=1e-5, seed=8))
    assert a != b
    assert a.startswith("m") and len(a) == 9
