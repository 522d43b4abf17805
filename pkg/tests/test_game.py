import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concealgame.game import (
    Game, GameRun, GameSpecError, StationaryPolicy, SwitchingPolicy, dump_policy, load_game,
    load_policy, run_log_likelihood_ratio, save_game, validate_game, validate_policy,
)
from _support import chain_game, random_game


def _doc():
    return {
        "states": ["a", "b", "goal"],
        "initial": "a",
        "winning": ["goal"],
        "actions1": {"a": ["x", "y"], "b": ["x"], "goal": ["x"]},
        "actions2": {"a": ["u"], "b": ["u", "v"], "goal": ["u"]},
        "transitions": [
            {"s": "a", "a1": "x", "a2": "u", "next": [{"q": "b", "p": 0.5}, {"q": "goal", "p": 0.5}]},
            {"s": "a", "a1": "y", "a2": "u", "next": [{"q": "a", "p": 1.0}]},
            {"s": "b", "a1": "x", "a2": "u", "next": [{"q": "goal", "p": 1.0}]},
            {"s": "b", "a1": "x", "a2": "v", "next": [{"q": "a", "p": 1.0}]},
            {"s": "goal", "a1": "x", "a2": "u", "next": [{"q": "goal", "p": 1.0}]},
        ],
        "average_policy": {"a": {"x": 0.25, "y": 0.75}, "b": {"x": 1.0}, "goal": {"x": 1.0}},
    }


def test_load_game_fields():
    g, avg = load_game(json.dumps(_doc()))
    assert g.state_names == ("a", "b", "goal")
    assert g.initial == 0 and g.winning == {2}
    assert g.prob(0, 0, 0, 1) == 0.5 and g.prob(0, 0, 0, 2) == 0.5
    assert g.prob(1, 0, 1, 0) == 1.0
    np.testing.assert_allclose(avg[0], [0.25, 0.75])
    assert validate_game(g) == []
    assert g.is_absorbing(2) and not g.is_absorbing(0)
    assert g.max_actions == 2


def test_save_load_round_trip():
    g, avg = load_game(json.dumps(_doc()))
    g2, avg2 = load_game(save_game(g, avg))
    assert g2.state_names == g.state_names and g2.winning == g.winning
    for s in range(g.n_states):
        np.testing.assert_array_equal(g2.dense(s), g.dense(s))
        np.testing.assert_array_equal(avg2[s], avg[s])


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d.pop("initial"), "initial"),
    (lambda d: d["transitions"][0]["next"].__setitem__(0, {"q": "nowhere", "p": 0.5}), "transitions[0]"),
    (lambda d: d["transitions"][0]["next"].__setitem__(0, {"q": "b", "p": 0.4}), "transitions[0]"),
    (lambda d: d["transitions"].pop(2), "b"),
    (lambda d: d["average_policy"]["a"].__setitem__("x", 0.5), "average_policy"),
    (lambda d: d.__setitem__("winning", ["a"]), "a"),
])
def test_malformed_game_reports_location(mutate, where):
    doc = _doc()
    mutate(doc)
    with pytest.raises(GameSpecError) as err:
        load_game(json.dumps(doc))
    assert where in str(err.value)


def test_not_json_is_spec_error():
    with pytest.raises(GameSpecError):
        load_game("{not json")


def test_policy_io_round_trip():
    g, avg = load_game(json.dumps(_doc()))
    text = dump_policy(avg, g)
    back = load_policy(text, g)
    for s in range(g.n_states):
        np.testing.assert_array_equal(back[s], avg[s])
    assert validate_policy(g, back) == []


def test_validate_policy_flags_bad_rows():
    g, _ = load_game(json.dumps(_doc()))
    bad = StationaryPolicy(1, (np.array([0.6, 0.6]), np.ones(1), np.ones(1)))
    assert validate_policy(g, bad)


def test_switching_policy_flips_permanently():
    prim = StationaryPolicy(1, (np.array([1.0, 0.0]),) * 3)
    fall = StationaryPolicy(1, (np.array([0.0, 1.0]),) * 3)
    sw = SwitchingPolicy(prim, fall, frozenset({1}))
    np.testing.assert_array_equal(sw.action_dist([0]), [1.0, 0.0])
    np.testing.assert_array_equal(sw.action_dist([0, 1]), [0.0, 1.0])
    np.testing.assert_array_equal(sw.action_dist([0, 1, 0]), [0.0, 1.0])


def test_run_llr_point_mass_against_half():
    g, avg = chain_game()
    go = StationaryPolicy(1, (np.array([1.0, 0.0]),) * 3)
    run = GameRun([0, 1], [0, 0], [0, 0], terminal_state=2)
    assert run.is_feasible(g)
    assert run_log_likelihood_ratio(run, go, avg) == pytest.approx(2 * math.log(2))
    stay = GameRun([0, 0, 1], [1, 0, 0], [0, 0, 0], terminal_state=2)
    assert run_log_likelihood_ratio(stay, go, avg) == -math.inf
    assert run_log_likelihood_ratio(stay, avg, go) == math.inf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_games_are_valid_and_round_trip(seed):
    g, avg = random_game(np.random.default_rng(seed), require_feasible=False)
    assert validate_game(g) == []
    g2, avg2 = load_game(save_game(g, avg))
    for s in range(g.n_states):
        # Loading renormalises rows, which may move entries by an ulp.
        np.testing.assert_allclose(g2.dense(s), g.dense(s), rtol=0, atol=1e-15)
        np.testing.assert_allclose(avg2[s], avg[s], rtol=0, atol=1e-15)


def test_with_changes_makes_absorbing_winning():
    g, _ = chain_game()
    h = g.with_changes(absorbing=[1], winning=[1])
    assert h.is_absorbing(1) and h.winning == {1}
    assert validate_game(h) == []
    assert isinstance(h, Game)
