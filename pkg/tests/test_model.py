import numpy as np
import pytest

import oracle
from medakv.errors import ConfigError, ContractError, ShapeError
from medakv.harness.workload import generate_workload
from medakv.kvcache import LayerKVCache
from medakv.model import (
    LayerWeights, ModelConfig, PromptSequence, attend, build_weights, decode_n, decode_step,
    layer_weights, project_qkv, prompt_encode,
)


def _weights_lists(weights):
    return [(w.w_q.tolist(), w.w_k.tolist(), w.w_v.tolist()) for w in weights]


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(num_heads=3, model_dim=8)
    with pytest.raises(ConfigError):
        ModelConfig(num_layers=0)
    assert ModelConfig(num_heads=2, model_dim=8).head_dim == 4


def test_weights_reproducible_and_bounded(cfg7):
    a, b = layer_weights(cfg7, 1), layer_weights(cfg7, 1)
    assert all(np.array_equal(x, y) for x, y in zip((a.w_q, a.w_k, a.w_v), (b.w_q, b.w_k, b.w_v)))
    assert not np.array_equal(layer_weights(cfg7, 0).w_k, a.w_k)
    assert np.abs(a.w_q).max() <= 0.1


def test_project_identity_weights():
    x = np.eye(4)
    w = LayerWeights(np.eye(4), np.eye(4), np.eye(4))
    q, k, v = project_qkv(x, w, num_heads=1)
    assert np.array_equal(k[0], x)


def test_project_one_token_shapes(cfg7):
    q, k, v = project_qkv(np.ones(8), layer_weights(cfg7, 0), cfg7.num_heads)
    assert k.shape == (2, 1, 4) and v.shape == (2, 1, 4)


def test_project_seed42_ones_gives_column_sums():
    cfg = ModelConfig(num_layers=1, num_heads=1, model_dim=4, seed=42)
    w = layer_weights(cfg, 0)
    _, k, _ = project_qkv(np.ones((1, 4)), w, 1)
    # hand product: a row of ones times W_K sums each column
    expected = [sum(w.w_k[r][c] for r in range(4)) for c in range(4)]
    assert np.allclose(k[0, 0], expected, atol=1e-15)


def test_project_width_mismatch(cfg7):
    with pytest.raises(ShapeError):
        project_qkv(np.ones((2, 5)), layer_weights(cfg7, 0), 2)


def test_single_token_attention_is_one(cfg7):
    enc = prompt_encode(PromptSequence(np.ones((1, 8)), "T"), cfg7)
    for a in enc.attention:
        assert a.shape == (2, 1, 1) and np.all(a == 1.0)


def test_attention_causal(cfg7):
    wl = generate_workload(3, 6, cfg7, layout="T2,V4")
    enc = prompt_encode(wl.prompt, cfg7)
    for a in enc.attention:
        assert np.allclose(a[:, 0], [1, 0, 0, 0, 0, 0])
        assert np.all(np.triu(a[0], k=1) == 0) and np.all(np.triu(a[1], k=1) == 0)
        assert np.allclose(a.sum(axis=2), 1.0)


def test_golden_attention_matches_fixture_and_oracle(golden, cfg7):
    x = np.array(golden["small_embeddings"])
    wl = generate_workload(7, 4, cfg7, layout=golden["small_layout"])
    assert np.array_equal(wl.prompt.embeddings, x)
    enc = prompt_encode(wl.prompt, cfg7)
    for l, a in enumerate(enc.attention):
        assert np.allclose(a, golden["attention"][l], rtol=0, atol=1e-12)
    ref, *_ = oracle.encode(x.tolist(), _weights_lists(build_weights(cfg7)), 2, cfg7.attention_scale)
    assert np.allclose(np.array(ref), np.array(golden["attention"]), rtol=0, atol=1e-12)


def test_golden_decode_step(golden, cfg7):
    x = np.array(golden["small_embeddings"])
    enc = prompt_encode(PromptSequence(x, "TVVT"), cfg7)
    out, caches = decode_step(enc.last_hidden, enc.caches, cfg7, enc.weights)
    assert np.allclose(out, golden["decode_output"], rtol=0, atol=1e-12)
    assert all(c.num_tokens == 5 for c in caches)

    wl = _weights_lists(enc.weights)
    _, ks, vs, _, hidden = oracle.encode(x.tolist(), wl, 2, cfg7.attention_scale)
    ref = oracle.decode_step(hidden[-1], ks, vs, wl, 2, cfg7.attention_scale)
    assert np.allclose(ref, golden["decode_output"], rtol=0, atol=1e-12)


def test_attend_single_entry_returns_value():
    q = np.array([[0.3, -0.2]])
    k = np.array([[[1.0, 2.0]]])
    v = np.array([[[5.0, -1.0]]])
    assert np.allclose(attend(q, k, v, 0.5), [5.0, -1.0])


def test_attend_identical_values_is_convex():
    rng = np.random.default_rng(0)
    v = np.tile([[2.0, 3.0]], (1, 2, 1))
    for _ in range(5):
        out = attend(rng.normal(size=(1, 2)), rng.normal(size=(1, 2, 2)), v, 1.0)
        assert np.allclose(out, [2.0, 3.0])


def test_decode_requires_cache(cfg7):
    with pytest.raises(ContractError):
        decode_step(np.ones(8), [], cfg7, build_weights(cfg7))
    with pytest.raises(ContractError):
        decode_n(np.ones(8), 0, [], cfg7, build_weights(cfg7))


def test_decode_n_one_step_equals_decode_step(cfg7):
    wl = generate_workload(1, 10, cfg7)
    enc = prompt_encode(wl.prompt, cfg7)
    a = decode_n(enc.last_hidden, 1, [c.copy() for c in enc.caches], cfg7, enc.weights)
    b, _ = decode_step(enc.last_hidden, [c.copy() for c in enc.caches], cfg7, enc.weights)
    assert np.array_equal(a[0], b)


def test_decode_deterministic_and_cache_growth(cfg7):
    wl = generate_workload(2, 12, cfg7)
    enc = prompt_encode(wl.prompt, cfg7)
    c1 = [c.copy() for c in enc.caches]
    c2 = [c.copy() for c in enc.caches]
    a = decode_n(enc.last_hidden, 5, c1, cfg7, enc.weights)
    b = decode_n(enc.last_hidden, 5, c2, cfg7, enc.weights)
    assert np.array_equal(a, b)
    assert all(c.num_tokens == 12 + 5 for c in c1)
    assert c1[0].positions[-1] == 16


def test_scale_by_model_dim_flag():
    a = ModelConfig(num_heads=2, model_dim=8)
    b = ModelConfig(num_heads=2, model_dim=8, scale_by_model_dim=True)
    assert a.attention_scale == pytest.approx(0.5)
    assert b.attention_scale == pytest.approx(1 / np.sqrt(8))


def test_prompt_validation():
    with pytest.raises(ShapeError):
        PromptSequence(np.ones((3, 4)), "TV")
    with pytest.raises(ShapeError):
        PromptSequence(np.ones((0, 4)), "")
