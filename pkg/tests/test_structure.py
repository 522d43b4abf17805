import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concealgame.evaluation import reach_probability
from concealgame.game import Game, StationaryPolicy
from concealgame.scenarios import build_cyber_game
from concealgame.structure import InfeasibleError, analyze, compute_trap_states, permissible_actions
from _support import chain_game, random_game


def _deterministic_p2(g: Game):
    for choice in itertools.product(*(range(g.n2(s)) for s in range(g.n_states))):
        yield StationaryPolicy(2, tuple(np.eye(g.n2(s))[c] for s, c in enumerate(choice)))


def _uniform_over(g: Game, report, avg):
    rows = []
    for s in range(g.n_states):
        allowed = sorted(report.allowed(s)) if s in report.active else sorted(avg.support(s))
        r = np.zeros(g.n1(s))
        r[allowed] = 1.0 / len(allowed)
        rows.append(r)
    return StationaryPolicy(1, tuple(rows))


def test_chain_structure():
    g, avg = chain_game()
    rep = analyze(g, avg)
    assert rep.trap_states == {3}
    assert rep.potentially_winning == {0, 1, 2}
    assert rep.allowed(0) == {0} and rep.allowed(1) == {0}
    assert rep.active == {0, 1}


def test_losing_sink_is_trap_and_infeasible():
    names = ["s", "sink", "goal"]
    trans = {(0, 0, 0): [(2, 1.0)], (0, 0, 1): [(1, 1.0)], (1, 0, 0): [(1, 1.0)], (1, 0, 1): [(1, 1.0)],
             (2, 0, 0): [(2, 1.0)], (2, 0, 1): [(2, 1.0)]}
    g = Game.from_transitions(names, [("a",)] * 3, [("u", "v")] * 3, trans, initial=0, winning=[2])
    avg = StationaryPolicy.uniform(g)
    # Player 2 can send the play to the sink, so s is a trap too.
    assert compute_trap_states(g, avg) == {0, 1}
    with pytest.raises(InfeasibleError):
        analyze(g, avg)
    rep = analyze(g, avg, require_initial=False)
    assert rep.potentially_winning == {2}


def test_impermissible_escape_does_not_count():
    # The only winning action has zero average probability.
    names = ["s", "goal"]
    trans = {(0, 0, 0): [(1, 1.0)], (0, 1, 0): [(0, 1.0)], (1, 0, 0): [(1, 1.0)], (1, 1, 0): [(1, 1.0)]}
    g = Game.from_transitions(names, [("win", "wait")] * 2, [("u",)] * 2, trans, initial=0, winning=[1])
    avg = StationaryPolicy(1, (np.array([0.0, 1.0]), np.array([0.5, 0.5])))
    assert permissible_actions(g, avg)[0] == {1}
    assert 0 in compute_trap_states(g, avg)
    with pytest.raises(InfeasibleError):
        analyze(g, avg)


def test_cyber_traps():
    g, avg = build_cyber_game()
    rep = analyze(g, avg)
    names = {g.state_names[s] for s in rep.trap_states}
    assert {"9", "11"} <= names
    assert g.state_names[g.initial] in {g.state_names[s] for s in rep.potentially_winning}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trap_states_match_enumeration(seed):
    g, avg = random_game(np.random.default_rng(seed), max_states=4, max_actions=2, require_feasible=False)
    traps = compute_trap_states(g, avg)
    win_prob = np.array([reach_probability(g, avg, p2, g.winning) for p2 in _deterministic_p2(g)])
    worst = win_prob.min(axis=0)
    for s in range(g.n_states):
        assert (s in traps) == (worst[s] <= 1e-12), s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_potentially_winning_is_sound(seed):
    g, avg = random_game(np.random.default_rng(seed), max_states=4, max_actions=2)
    rep = analyze(g, avg)
    assert not rep.potentially_winning & rep.trap_states
    assert rep.winning <= rep.potentially_winning
    for s in rep.active:
        allowed = rep.allowed(s)
        assert allowed and allowed <= rep.permissible_actions[s]
        for a1 in allowed:
            for a2 in range(g.n2(s)):
                assert {q for q, _ in g.transition(s, a1, a2)} <= rep.potentially_winning
    # The uniform mixture over allowed actions wins surely against every deterministic opponent.
    p1 = _uniform_over(g, rep, avg)
    for p2 in _deterministic_p2(g):
        reach = reach_probability(g, p1, p2, g.winning)
        assert reach[list(rep.potentially_winning)] == pytest.approx(1.0, abs=1e-9)
