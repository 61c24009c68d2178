import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medakv.allocator import (
    CompressionConfig, Strategy, allocate, allocate_meda, allocate_pyramid, allocate_uniform,
    clamp_redistribute, meda_alpha,
)
from medakv.entropy import EntropyProfile
from medakv.errors import ConfigError, ContractError


def waterfill(weights, total):
    """Independent oracle: find lam with sum(min(1, lam * w)) == total by bisection."""
    w = np.asarray(weights, dtype=float)
    lo, hi = 0.0, 1.0
    while np.minimum(1.0, hi * w).sum() < total:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.minimum(1.0, mid * w).sum() < total:
            lo = mid
        else:
            hi = mid
    return np.minimum(1.0, hi * w)


def test_config_validation():
    with pytest.raises(ConfigError):
        CompressionConfig(rho=0.0)
    with pytest.raises(ConfigError):
        CompressionConfig(rho=1.2)
    with pytest.raises(ConfigError):
        CompressionConfig(recent_ratio=1.0)
    assert CompressionConfig(strategy="pyramid").strategy is Strategy.PYRAMID


def test_meda_symmetric():
    plan = allocate_meda(np.full(4, 1.7), CompressionConfig(rho=0.25), 100)
    assert np.allclose(plan.alpha, 0.25, atol=1e-12)


def test_meda_two_layer_hand_case():
    alpha = meda_alpha([math.log(2), 0.0], 0.3)
    assert alpha == pytest.approx([0.4, 0.2], abs=1e-12)


def test_meda_clamp_case():
    alpha = meda_alpha([math.log(9), 0.0], 0.6)
    assert alpha == pytest.approx([1.0, 0.2], abs=1e-12)
    assert alpha.sum() == pytest.approx(1.2, abs=1e-12)


def test_meda_rejects_empty():
    with pytest.raises(ContractError):
        allocate_meda([], CompressionConfig(), 10)


@settings(max_examples=200)
@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=16), st.floats(0.01, 1.0))
def test_clamp_matches_waterfill(weights, rho):
    total = len(weights) * rho
    got = clamp_redistribute(weights, total)
    assert got.max() <= 1.0
    assert got.sum() == pytest.approx(total, abs=1e-9)
    assert np.allclose(got, waterfill(weights, total), atol=1e-9)


@settings(max_examples=100)
@given(st.lists(st.floats(0.0, 12.0), min_size=2, max_size=12), st.floats(0.05, 1.0), st.floats(-5, 5))
def test_meda_monotone_and_shift_invariant(e, rho, shift):
    e = np.array(e)
    a = meda_alpha(e, rho)
    b = meda_alpha(e + shift, rho)
    assert np.allclose(a, b, atol=1e-12)
    order = np.argsort(e)
    assert np.all(np.diff(a[order]) >= -1e-12)


def test_uniform_examples():
    assert np.allclose(allocate_uniform(CompressionConfig(rho=0.1), np.full(3, 50)).alpha, 0.1)
    plan = allocate_uniform(CompressionConfig(rho=0.2), np.array([100]))
    assert plan.entry(0) == (20, 15, 5)
    plan = allocate_uniform(CompressionConfig(rho=1.0), np.array([37, 37]))
    assert plan.budget.tolist() == [37, 37]


def test_pyramid_examples():
    assert allocate_pyramid(CompressionConfig(rho=0.4), [90]).alpha == pytest.approx([0.4])
    assert allocate_pyramid(CompressionConfig(rho=0.2), np.full(3, 10)).alpha == pytest.approx([0.3, 0.2, 0.1], abs=1e-12)


@given(st.integers(1, 32), st.floats(0.01, 1.0))
def test_pyramid_conserves(n, rho):
    plan = allocate_pyramid(CompressionConfig(rho=rho), np.full(n, 64))
    assert plan.alpha.sum() == pytest.approx(n * rho, abs=1e-9)
    assert plan.alpha.max() <= 1.0
    assert np.all(np.diff(plan.alpha) <= 1e-12)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_rho_one_is_identity(strategy):
    prof = EntropyProfile.from_values([0.5, 3.0, 1.0, 2.0])
    plan = allocate(prof, CompressionConfig(rho=1.0, strategy=strategy), np.full(4, 57))
    assert plan.budget.tolist() == [57] * 4


@settings(max_examples=200)
@given(st.lists(st.floats(0.0, 9.0), min_size=1, max_size=16), st.floats(0.01, 1.0), st.integers(1, 400),
       st.sampled_from(list(Strategy)))
def test_plan_invariants(e, rho, n, strategy):
    cfg = CompressionConfig(rho=rho, strategy=strategy)
    plan = allocate(EntropyProfile.from_values(e), cfg, np.full(len(e), n))
    assert np.all(plan.recent + plan.important == plan.budget)
    assert np.all(plan.budget >= 1) and np.all(plan.budget <= n)
    assert np.all((plan.alpha > 0) & (plan.alpha <= 1))
    assert abs(int(plan.budget.sum()) - rho * n * len(e)) <= len(e)
    assert np.all(plan.recent[plan.budget >= 2] >= 1)


def test_plan_csv():
    text = allocate_uniform(CompressionConfig(rho=0.2), np.full(2, 100)).to_csv().splitlines()
    assert text == ["layer,alpha,budget,recent,important", "0,0.2,20,15,5", "1,0.2,20,15,5"]


def test_budget_floor_takes_from_largest():
    # one layer gets almost everything; the starved layer still keeps a token
    plan = allocate_meda([40.0, 0.0, 0.0], CompressionConfig(rho=0.34), np.full(3, 3))
    assert plan.budget.min() >= 1
