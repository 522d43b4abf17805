import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata

from concealgame.detection import auc_pairwise, delong_se, roc, score_agents
from concealgame.game import StationaryPolicy
from concealgame.simulation import SimConfig, run_llrs, sample_runs
from _support import chain_game

scores = st.lists(st.one_of(st.integers(-5, 5).map(float), st.floats(-10, 10), st.just(math.inf)),
                  min_size=2, max_size=40)


def _delong_oracle(pos, neg):
    psi = np.array([[1.0 if x > y else 0.5 if x == y else 0.0 for y in neg] for x in pos])
    v10, v01 = psi.mean(axis=1), psi.mean(axis=0)
    return math.sqrt(np.var(v10, ddof=1) / len(pos) + np.var(v01, ddof=1) / len(neg))


def test_separated_scores():
    c = roc([3.0, 2.0], [1.0, 0.0])
    assert c.auc == 1.0
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    assert c.thresholds[0] is None and c.thresholds[1] == 3.0


def test_ties_and_infinities():
    assert roc([1.0], [1.0]).auc == 0.5
    assert roc([math.inf, 1.0], [0.0, math.inf]).auc == pytest.approx(0.625)
    assert auc_pairwise([math.inf, 1.0], [0.0, math.inf]) == pytest.approx(0.625)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        roc([], [1.0])
    with pytest.raises(ValueError):
        roc([math.nan], [1.0])


def test_csv_export():
    text = roc([2.0, 1.0], [0.0]).to_csv()
    lines = text.splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    assert lines[1] == "none,0.0,0.0"
    assert lines[-1].endswith(",1.0,1.0")


@settings(max_examples=200, deadline=None)
@given(scores, scores)
def test_trapezoid_auc_is_mann_whitney(pos, neg):
    c = roc(pos, neg)
    assert c.auc == pytest.approx(auc_pairwise(pos, neg), abs=1e-12)
    fpr, tpr = np.array(c.points).T
    assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()
    assert c.points[-1] == (1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_roc_invariant_under_monotone_transform(pos, neg):
    # Transforms that keep the order exactly in floating point: doubling and dense ranks.
    a = roc(pos, neg)
    b = roc(2.0 * np.array(pos), 2.0 * np.array(neg))
    ranks = rankdata(np.concatenate([pos, neg]), method="dense")
    c = roc(ranks[:len(pos)], ranks[len(pos):])
    assert a.points == b.points == c.points and a.auc == b.auc == c.auc


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_delong_matches_structural_components(pos, neg):
    assert delong_se(pos, neg) == pytest.approx(_delong_oracle(pos, neg), abs=1e-12)


def test_score_agents_grouped_and_flat_agree():
    g, avg = chain_game((0.6, 0.6))
    hyp = StationaryPolicy(1, (np.array([0.9, 0.1]),) * 4)
    p2 = StationaryPolicy.uniform(g, 2)
    pos = sample_runs(g, hyp, p2, SimConfig(40, seed=1))
    neg = sample_runs(g, avg, p2, SimConfig(40, seed=2))
    ps, ns = score_agents(pos, neg, hyp, avg, 2)
    assert len(ps) == len(ns) == 20
    np.testing.assert_allclose(ps, run_llrs(pos, hyp, avg).reshape(20, 2).sum(axis=1))
    grouped = [[pos[2 * i], pos[2 * i + 1]] for i in range(20)]
    gp, _ = score_agents(grouped, neg, hyp, avg, 2)
    np.testing.assert_array_equal(gp, ps)
    with pytest.raises(ValueError):
        score_agents(pos[:3], neg, hyp, avg, 2)
