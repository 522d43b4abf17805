import numpy as np
import pytest

from concealgame.equilibrium import solve_equilibrium
from concealgame.game import validate_game
from concealgame.scenarios import (
    CAUGHT, WIN, PursuitEvasionParams, build_cyber_game, build_learning_scenario, build_pursuit_evasion,
    cyber_greedy_policy, evader_moves, pe_state_name, pursuer_moves,
)
from concealgame.structure import analyze
from _support import CYBER_AVG, CYBER_NEXT

def test_cyber_tables_exact():
    g, avg = build_cyber_game()
    assert validate_game(g) == []
    assert g.state_names == tuple(str(k) for k in range(1, 12))
    assert g.initial == 0 and g.winning == {9}
    for k, row in CYBER_AVG.items():
        assert tuple(avg[k - 1]) == row
    for (k, server, client), nxt in CYBER_NEXT.items():
        s, a1 = k - 1, g.actions1[k - 1].index(client)
        servers = g.actions2[s] if server == "-" else (server,)
        for srv in servers:
            assert g.transition(s, a1, g.actions2[s].index(srv)) == [(nxt - 1, 1.0)]
    for k in (9, 10, 11):
        assert g.is_absorbing(k - 1)


def test_cyber_leave_and_no_second_rejection():
    g, _ = build_cyber_game()
    for k in range(1, 9):
        s = k - 1
        for b in range(g.n2(s)):
            assert g.transition(s, 2, b) == [(10, 1.0)]
        assert ("Reject" in g.actions2[s]) == (k not in (2, 6, 7, 8))
    # Nothing leads into state 9.
    for s in range(11):
        if s != 8:
            assert all(q != 8 for a in range(g.n1(s)) for b in range(g.n2(s)) for q, _ in g.transition(s, a, b))


def test_cyber_structure_and_solution():
    g, avg = build_cyber_game()
    rep = analyze(g, avg)
    assert {g.state_names[s] for s in rep.potentially_winning} == {"1", "2", "3", "4", "5", "6", "7", "8", "10"}
    res = solve_equilibrium(g, avg, rep)
    assert np.isfinite(res.value[g.initial]) and res.value[g.initial] > 0
    greedy = cyber_greedy_policy(g)
    assert all(greedy[s][1] == 1.0 for s in range(8))


def test_move_sets():
    p = PursuitEvasionParams()
    assert [n for n, _ in evader_moves(p)] == ["stay", "x", "2x", "y", "2y", "-y", "-2y", "-x", "-2x"]
    assert [n for n, _ in pursuer_moves(p)] == ["stay", "+x", "-x", "+y", "-y"]


def test_pursuit_evasion_game():
    g, avg = build_pursuit_evasion()
    assert validate_game(g) == []
    win, caught = g.state_index(WIN), g.state_index(CAUGHT)
    assert g.winning == {win} and g.is_absorbing(caught)
    assert g.state_names[g.initial] == "(1,0,O,O)"
    s = g.state_index(pe_state_name(2, 0, "C", "C"))
    np.testing.assert_array_equal(avg[s], [0, 0.40, 0.10, 0.20, 0.05, 0.20, 0.05, 0, 0])
    s_occ = g.state_index(pe_state_name(2, 0, "O", "O"))
    np.testing.assert_array_equal(avg[s_occ], [0.80, 0.10, 0, 0.05, 0, 0.05, 0, 0, 0])
    assert g.actions2[s_occ] == ("stay",)
    # Evader +x, pursuer -x from (2,0): relative position (4,0), occupancy redrawn independently.
    nxt = dict(g.transition(s, 1, g.actions2[s].index("-x")))
    for e in "OC":
        for q in "OC":
            assert nxt[g.state_index(pe_state_name(4, 0, e, q))] == pytest.approx(0.25)
    # Evader 2x, pursuer stays from (4,0): block distance 6 wins.
    s4 = g.state_index(pe_state_name(4, 0, "C", "C"))
    assert g.transition(s4, 2, 0) == [(win, 1.0)]
    # Pursuer +x onto the evader captures.
    s1 = g.state_index(pe_state_name(1, 0, "C", "C"))
    assert g.transition(s1, 0, g.actions2[s1].index("+x")) == [(caught, 1.0)]


def test_learning_pursuer_rows():
    g, avg, pursuer = build_learning_scenario()
    s_occ = g.state_index(pe_state_name(1, 0, "O", "O"))
    assert g.actions2[s_occ] == ("stay", "stop")
    np.testing.assert_allclose(pursuer[s_occ], [0.8, 0.2])
    s_clear = g.state_index(pe_state_name(1, 0, "O", "C"))
    np.testing.assert_allclose(pursuer[s_clear], [0.16] * 5 + [0.2])
    assert g.transition(s_clear, 0, 5) == [(g.state_index(WIN), 1.0)]


def test_params_validation():
    with pytest.raises(ValueError):
        PursuitEvasionParams(win_distance=1, capture_distance=1)
    with pytest.raises(ValueError):
        PursuitEvasionParams(occupy_prob=1.5)


def test_reflected_variant_is_smaller_and_valid():
    g, _ = build_pursuit_evasion(PursuitEvasionParams(reflect_x=True))
    full, _ = build_pursuit_evasion()
    assert validate_game(g) == [] and g.n_states < full.n_states
