import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutrl.grpo import (
    AdvantageMode,
    GRPOConfig,
    GRPOError,
    TokenBatch,
    clipped_surrogate,
    group_advantages,
    grpo_objective,
    kl_per_token,
    kl_to_reference,
)

MEAN_ONLY = GRPOConfig(advantage_mode=AdvantageMode.MEAN_ONLY)
MEAN_STD = GRPOConfig(advantage_mode=AdvantageMode.MEAN_STD, std_floor=1e-8)


def one_token(new, old, ref=None):
    return TokenBatch.from_triples([[[new, old, old if ref is None else ref]]])


def test_mean_only_example():
    assert group_advantages([0.2, 0.4, 0.6], MEAN_ONLY).tolist() == pytest.approx([-0.2, 0.0, 0.2])


def test_mean_std_example():
    popstd = np.std([0.2, 0.4, 0.6])
    assert popstd == pytest.approx(0.163299, abs=1e-6)
    adv = group_advantages([0.2, 0.4, 0.6], MEAN_STD).tolist()
    assert adv == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)


@pytest.mark.parametrize("cfg", [MEAN_ONLY, MEAN_STD])
def test_equal_rewards_give_zero(cfg):
    assert group_advantages([0.7] * 5, cfg).tolist() == [0.0] * 5


def test_group_too_small():
    with pytest.raises(GRPOError):
        group_advantages([1.0])
    with pytest.raises(GRPOError):
        group_advantages([1.0, math.nan])


@pytest.mark.parametrize("kw", [{"epsilon": 0}, {"epsilon": 1.5}, {"beta": -1}, {"std_floor": 0}])
def test_config_validation(kw):
    with pytest.raises(GRPOError):
        GRPOConfig(**kw)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=32), st.sampled_from([MEAN_ONLY, MEAN_STD]))
def test_advantages_sum_to_zero(rewards, cfg):
    assert abs(sum(group_advantages(rewards, cfg).tolist())) < 1e-9


def test_clip_cases():
    assert clipped_surrogate(one_token(math.log(1.5), 0.0), [1.0]) == pytest.approx(1.2)
    assert clipped_surrogate(one_token(math.log(0.5), 0.0), [-1.0]) == pytest.approx(-0.8)
    assert clipped_surrogate(one_token(-0.3, -0.3), [0.7]) == pytest.approx(0.7)


def test_surrogate_ratio_one_is_mean_advantage():
    batch = TokenBatch.from_triples([[[-1, -1, -1], [-2, -2, -2]], [[-0.5, -0.5, -0.5]]])
    adv = group_advantages([0.0, 1.0], MEAN_ONLY)
    assert clipped_surrogate(batch, adv) == pytest.approx(0.0)
    assert clipped_surrogate(batch, [2.0, 4.0]) == pytest.approx(3.0)


def test_surrogate_length_mismatch():
    with pytest.raises(GRPOError):
        clipped_surrogate(one_token(0, 0), [1.0, 2.0])
    with pytest.raises(GRPOError):
        TokenBatch((np.zeros(2),), (np.zeros(3),), (np.zeros(2),))


def test_kl_examples():
    assert kl_to_reference(one_token(-1.0, -1.0, -1.0)) == 0.0
    assert kl_to_reference(one_token(0.0, 0.0, math.log(2))) == pytest.approx(2 - math.log(2) - 1)
    assert kl_to_reference(one_token(0.0, 0.0, math.log(0.5))) == pytest.approx(0.5 - math.log(0.5) - 1)


def test_kl_averages_per_candidate_first():
    batch = TokenBatch.from_triples([
        [[0, 0, math.log(2)], [0, 0, 0]],
        [[0, 0, math.log(0.5)]],
    ])
    k2 = 2 - math.log(2) - 1
    k05 = 0.5 - math.log(0.5) - 1
    assert kl_to_reference(batch) == pytest.approx((k2 / 2 + k05) / 2)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_kl_non_negative(new, ref):
    n = min(len(new), len(ref))
    assert np.all(kl_per_token(np.array(new[:n]), np.array(ref[:n])) >= 0)


def test_objective_examples():
    batch = TokenBatch.from_triples([[[-1.0, -1.0, -1.0]], [[-2.0, -2.0, -2.0]]])
    assert grpo_objective(batch, [0.3, 0.9], MEAN_ONLY) == pytest.approx(0.0, abs=1e-12)
    assert grpo_objective(batch, [0.0, 1.0], GRPOConfig(beta=0, advantage_mode="mean_only")) == pytest.approx(0.0)
    drifted = TokenBatch.from_triples([[[-0.5, -1.0, -1.2]], [[-2.0, -1.0, -1.5]]])
    cfg0 = GRPOConfig(beta=0.0)
    assert grpo_objective(drifted, [0.1, 0.8], cfg0) == clipped_surrogate(drifted, group_advantages([0.1, 0.8], cfg0), cfg0)
    cfg = GRPOConfig(beta=0.5)
    expected = clipped_surrogate(drifted, group_advantages([0.1, 0.8], cfg), cfg) - 0.5 * kl_to_reference(drifted)
    assert grpo_objective(drifted, [0.1, 0.8], cfg) == pytest.approx(expected)


def test_token_batch_from_json():
    b = TokenBatch.from_json("[[[0, 0, 0], [-1, -1, -1]], [[-0.5, -0.4, -0.3]]]")
    assert len(b) == 2
    with pytest.raises(GRPOError):
        TokenBatch.from_json("[[[0, 0]]]")


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.05, 1.0))
def test_clip_bounds_gain(logratio, a, eps):
    cfg = GRPOConfig(epsilon=eps)
    v = clipped_surrogate(one_token(logratio, 0.0), [a], cfg)
    # pessimistic bound: never above the unclipped or clipped term
    rho = math.exp(logratio)
    assert v <= rho * a + 1e-9
    assert v <= min(max(rho, 1 - eps), 1 + eps) * a + 1e-9
