import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from medakv.entropy import CrossModalAttention, cross_modal_attention, layer_entropy, profile
from medakv.errors import ContractError
from medakv.harness.workload import generate_workload
from medakv.model import prompt_encode


def _random_stochastic(rng, rows, cols, concentration=1.0):
    return rng.dirichlet(np.full(cols, concentration), size=rows)


def test_singleton_cross_attention():
    q = np.ones((1, 2, 3))
    cma = cross_modal_attention(q, q, "TV", 1.0)
    assert cma.a_tv.tolist() == [[1.0]] and cma.a_vt.tolist() == [[1.0]]


def test_equal_logits_give_uniform_rows():
    # text query orthogonal to every vision key -> all logits 0
    q = np.array([[[1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]])
    k = np.array([[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]])
    cma = cross_modal_attention(q, k, "TVVV", 1.0)
    assert np.allclose(cma.a_tv, [[1 / 3] * 3], atol=1e-15)


def test_golden_cross_attention(golden, cfg7):
    enc = prompt_encode(generate_workload(7, 4, cfg7, layout=golden["small_layout"]).prompt, cfg7)
    cma = cross_modal_attention(enc.queries[0], enc.caches[0].keys, enc.modality, cfg7.attention_scale)
    assert np.allclose(cma.a_tv, golden["a_tv_layer0"], atol=1e-12)
    assert np.allclose(cma.a_vt, golden["a_vt_layer0"], atol=1e-12)
    # independent scalar recomputation from full-width Q/K rows
    q = enc.queries[0].transpose(1, 0, 2).reshape(4, 8).tolist()
    k = enc.caches[0].keys.transpose(1, 0, 2).reshape(4, 8).tolist()
    ref_tv = oracle.cross_attention(q, k, [0, 3], [1, 2], 2, cfg7.attention_scale)
    ref_vt = oracle.cross_attention(q, k, [1, 2], [0, 3], 2, cfg7.attention_scale)
    assert np.allclose(ref_tv, golden["a_tv_layer0"], atol=1e-12)
    assert np.allclose(ref_vt, golden["a_vt_layer0"], atol=1e-12)
    assert layer_entropy(cma) == pytest.approx(oracle.cross_modal_entropy(ref_tv, ref_vt), abs=1e-12)


def test_entropy_examples():
    one_hot = CrossModalAttention(np.eye(3), np.eye(3)[:2])
    assert layer_entropy(one_hot) == 0.0
    uniform = CrossModalAttention(np.full((3, 4), 0.25), np.full((4, 2), 0.5))
    assert layer_entropy(uniform) == pytest.approx(math.log(4) + math.log(2), abs=1e-12)
    mixed = CrossModalAttention(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert layer_entropy(mixed) == pytest.approx(0.6931, abs=1e-4)


def test_entropy_rejects_unnormalized():
    with pytest.raises(ContractError):
        layer_entropy(CrossModalAttention(np.array([[0.5, 0.6]]), np.array([[1.0]])))


def test_head_average_rows_normalized(rng):
    q, k = rng.normal(size=(4, 9, 3)), rng.normal(size=(4, 9, 3))
    cma = cross_modal_attention(q, k, "TTVVVTVVT", 0.7)
    assert np.allclose(cma.a_tv.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(cma.a_vt.sum(axis=1), 1.0, atol=1e-9)


def test_head_average_differs_from_average_of_entropies(rng):
    q, k = rng.normal(size=(2, 6, 4)) * 3, rng.normal(size=(2, 6, 4)) * 3
    tags = "TTTVVV"
    avg = layer_entropy(cross_modal_attention(q, k, tags, 1.0))
    per_head = np.mean([layer_entropy(cross_modal_attention(q[h:h + 1], k[h:h + 1], tags, 1.0)) for h in range(2)])
    # entropy is concave, so the head-averaged distribution is at least as spread
    assert avg >= per_head - 1e-12


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_bounds(n_t, n_v, seed):
    rng = np.random.default_rng(seed)
    cma = CrossModalAttention(_random_stochastic(rng, n_t, n_v), _random_stochastic(rng, n_v, n_t))
    e = layer_entropy(cma)
    assert -1e-12 <= e <= math.log(n_v) + math.log(n_t) + 1e-12


@settings(max_examples=40)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_mixing_toward_uniform_never_lowers_entropy(n_t, n_v, lam1, lam2, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_stochastic(rng, n_t, n_v, 0.3), _random_stochastic(rng, n_v, n_t, 0.3)
    lo, hi = sorted((lam1, lam2))

    def mix(lam):
        return CrossModalAttention((1 - lam) * a + lam / n_v, (1 - lam) * b + lam / n_t)

    assert layer_entropy(mix(hi)) >= layer_entropy(mix(lo)) - 1e-12


def test_permutation_within_modality(rng):
    q, k = rng.normal(size=(2, 10, 4)), rng.normal(size=(2, 10, 4))
    tags = np.array(list("TVVTVVVTVT"))
    base = layer_entropy(cross_modal_attention(q, k, "".join(tags), 0.5))
    vis = np.flatnonzero(tags == "V")
    perm = np.arange(10)
    perm[vis] = rng.permutation(vis)
    again = layer_entropy(cross_modal_attention(q[:, perm], k[:, perm], "".join(tags), 0.5))
    assert again == pytest.approx(base, abs=1e-12)


def test_degenerate_layer_uses_self_attention(cfg7):
    wl = generate_workload(3, 8, cfg7, layout="T8")
    enc = prompt_encode(wl.prompt, cfg7)
    prof = profile(enc.queries, [c.keys for c in enc.caches], enc.modality, cfg7.attention_scale)
    assert prof.degenerate.all() and prof.n_vision == 0
    a = enc.attention[0].mean(axis=0)
    expected = np.mean([oracle.entropy(r) for r in a])
    assert prof.e_cm[0] == pytest.approx(expected, abs=1e-12)


def test_profile_identical_layers_equal(rng):
    q, k = rng.normal(size=(2, 8, 3)), rng.normal(size=(2, 8, 3))
    prof = profile([q, q, q], [k, k, k], "TTVVVVTT", 1.0)
    assert prof.e_cm[0] == prof.e_cm[1] == prof.e_cm[2]


def test_profile_orders_one_hot_below_uniform():
    # layer 0: huge aligned logits (near one-hot); layer 1: zero logits (uniform)
    n_t, n_v = 2, 4
    tags = "TT" + "V" * n_v
    q0 = np.zeros((1, 6, 6))
    k0 = np.zeros((1, 6, 6))
    for i in range(6):
        k0[0, i, i] = 50.0
    q0[0, 0, 2] = q0[0, 1, 3] = 50.0
    for i in range(2, 6):
        q0[0, i, i % 2] = 50.0
    q1 = np.zeros_like(q0)
    prof = profile([q0, q1], [k0, k0], tags, 1.0)
    assert prof.e_cm[0] < 1e-6
    assert prof.e_cm[1] == pytest.approx(math.log(n_v) + math.log(n_t), abs=1e-12)


def test_planted_concentration_gives_decreasing_profile():
    """Layers built with increasing logit sharpness toward one key must profile in decreasing order."""
    n_t, n_v, d = 3, 5, 5
    tags = "T" * n_t + "V" * n_v
    qs, ks = [], []
    for sharp in (0.0, 1.0, 2.5, 5.0, 10.0):
        k = np.zeros((1, n_t + n_v, d))
        q = np.zeros((1, n_t + n_v, d))
        k[0, :, 0] = 1.0
        k[0, n_t, 0] = 1.0 + sharp  # planted vision key
        k[0, 0, 1] = sharp  # planted text key
        q[0, :n_t, 0] = 1.0
        q[0, n_t:, 1] = 1.0
        qs.append(q)
        ks.append(k)
    prof = profile(qs, ks, tags, 1.0)
    assert np.all(np.diff(prof.e_cm) < 0)


def test_profile_csv(rng):
    q, k = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 3))
    text = profile([q], [k], "TVVTV", 1.0).to_csv().splitlines()
    assert text[0] == "layer_index,n_text,n_vision,e_tv,e_vt,e_cm"
    assert text[1].startswith("0,2,3,")


def test_causal_cross_attention_drops_blind_rows(rng):
    q, k = rng.normal(size=(1, 4, 2)), rng.normal(size=(1, 4, 2))
    cma = cross_modal_attention(q, k, "TVVT", 1.0, causal=True)
    # text token 0 precedes every vision token
    assert cma.a_tv.shape == (1, 2)
    # vision tokens 1, 2 only see text token 0
    assert np.allclose(cma.a_vt, [[1.0, 0.0], [1.0, 0.0]])
