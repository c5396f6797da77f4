import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from layoutrl.backends import canvas_stream, random_response
from layoutrl.estimators import (
    GroupAdvantageTransformer,
    HybridRewardScorer,
    LayoutMetricsTransformer,
    LayoutQualityScorer,
    ToyLayoutPolicy,
    check_layout_pairs,
    check_reward_groups,
)
from layoutrl.metrics import report
from layoutrl.rewards import hybrid_reward, quality_breakdown
from layoutrl.synthetic import demo_canvases, load_clean_corpus


@pytest.fixture
def pairs():
    return [(r.reference, r.canvas) for r in load_clean_corpus()[:5]]


@pytest.mark.parametrize("est", [
    LayoutQualityScorer(boundary_obstacles=False),
    HybridRewardScorer(lambda_f=0.2, lambda_q=0.7),
    LayoutMetricsTransformer(overlap="min_area"),
    GroupAdvantageTransformer(advantage_mode="mean_only"),
    ToyLayoutPolicy(iterations=3),
])
def test_params_round_trip(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(**params)


def test_quality_scorer_matches_function(pairs):
    est = LayoutQualityScorer().fit()
    X = est.transform(pairs)
    assert X.shape == (5, 6)
    q = quality_breakdown(*pairs[0])
    assert X[0].tolist() == [q.icr, q.al, q.dis, q.sp, q.ut, q.quality]
    assert list(est.get_feature_names_out()) == ["icr", "al", "dis", "sp", "ut", "quality"]
    assert est.score(pairs) == pytest.approx(X[:, -1].mean())


def test_unfitted_raises(pairs):
    with pytest.raises(NotFittedError):
        LayoutQualityScorer().transform(pairs)


def test_hybrid_scorer_matches_function():
    canvas = demo_canvases()[0]
    responses = [random_response(canvas, canvas_stream(i, canvas.id)) for i in range(3)]
    est = HybridRewardScorer().fit()
    scores = est.transform([(r, canvas) for r in responses])
    assert scores.tolist() == [hybrid_reward(r, canvas).hybrid for r in responses]


def test_hybrid_scorer_rejects_bad_weights():
    with pytest.raises(ValueError):
        HybridRewardScorer(lambda_f=0.9).fit()


def test_metrics_transformer(pairs):
    M = LayoutMetricsTransformer().fit_transform(pairs)
    rep = report(pairs)
    assert M.mean(axis=0).tolist() == pytest.approx([rep.ove, rep.und, rep.occ])
    with pytest.raises(ValueError):
        LayoutMetricsTransformer(overlap="dice").fit()


def test_advantage_transformer():
    A = GroupAdvantageTransformer(advantage_mode="mean_only").fit_transform([[0.2, 0.4, 0.6], [1, 1, 1]])
    assert np.allclose(A, [[-0.2, 0, 0.2], [0, 0, 0]])


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_layout_pairs([])
    with pytest.raises(TypeError):
        check_layout_pairs([("not a layout", "nor a canvas")])
    with pytest.raises(ValueError):
        check_reward_groups([[1.0]])
    with pytest.raises(ValueError):
        check_reward_groups([[1.0, np.inf]])


def test_toy_policy_estimator():
    canvas = demo_canvases()[2]
    est = ToyLayoutPolicy(iterations=30).fit(canvas)
    assert len(est.predict()) == len(canvas.manifest)
    assert 0 <= est.score() <= 1
    assert est.mean_rewards_.shape == (30,)
