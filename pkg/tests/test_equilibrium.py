import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concealgame.equilibrium import (
    bellman_residual, minimize_softmin_simplex, project_simplex, solve_equilibrium,
)
from concealgame.evaluation import exact_kl, player2_best_response
from concealgame.learning import solve_softmin_mdp
from concealgame.structure import analyze
from _support import brute_force_value, chain_game, random_game, simplex_grid, tilted_game


def _solve(g, avg, **kw):
    rep = analyze(g, avg)
    return rep, solve_equilibrium(g, avg, rep, **kw)


def test_chain_value_is_sum_of_log_odds():
    g, avg = chain_game((0.5, 0.25))
    _, res = _solve(g, avg)
    assert res.value[0] == pytest.approx(math.log(2) + math.log(4), abs=1e-9)
    assert res.value[1] == pytest.approx(math.log(4), abs=1e-9)
    assert res.value[2] == 0.0 and res.value[3] == math.inf
    np.testing.assert_allclose(res.policy1[0], [1.0, 0.0])


def test_tilted_backup():
    g, avg = tilted_game()
    _, res = _solve(g, avg)
    assert res.value[1] == pytest.approx(1.0, abs=1e-9)
    assert res.value[0] == pytest.approx(0.37989, abs=5e-6)
    assert res.value[0] == pytest.approx(-math.log((1 + math.exp(-1)) / 2), abs=1e-9)
    np.testing.assert_allclose(res.policy1[0], [0.7311, 0.2689], atol=5e-5)


def test_matching_pennies_backup():
    g, avg = tilted_game(pennies=True)
    _, res = _solve(g, avg)
    assert res.value[0] == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_allclose(res.policy1[0], [0.5, 0.5], atol=1e-8)
    np.testing.assert_allclose(res.policy2[0], [0.5, 0.5], atol=1e-8)


def test_average_player_wins_surely_means_zero_value():
    g, avg = tilted_game()
    # Put all average mass on reaching the goal directly.
    avg = avg.replace({0: np.array([1.0, 0.0])})
    _, res = _solve(g, avg)
    assert res.value[0] == 0.0


def test_jacobi_and_gauss_seidel_agree():
    g, avg = random_game(np.random.default_rng(5))
    _, gs = _solve(g, avg)
    _, jac = _solve(g, avg, mode="jacobi")
    np.testing.assert_allclose(gs.value.values, jac.value.values, atol=1e-7)


def test_unknown_mode_rejected():
    g, avg = chain_game()
    with pytest.raises(ValueError):
        _solve(g, avg, mode="chaotic")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_projection_is_nearest_simplex_point(v, seed):
    v = np.array(v)
    p = project_simplex(v)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
    rng = np.random.default_rng(seed)
    for z in rng.dirichlet(np.ones(len(v)), size=20):
        assert np.linalg.norm(p - v) <= np.linalg.norm(z - v) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inner_minimiser_beats_grid(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = rng.integers(1, 4, size=2)
    log_w = np.log(rng.dirichlet(np.ones(n1)))
    d = rng.exponential(2.0, size=(n1, n2))
    y, f, _ = minimize_softmin_simplex(log_w, d)
    assert y.min() >= 0 and y.sum() == pytest.approx(1.0)
    grid = simplex_grid(n2, 0.02)
    f_grid = np.log(np.exp(log_w[None, :] - grid @ d.T).sum(axis=1))
    assert f <= f_grid.min() + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_value_matches_grid_oracle(seed):
    g, avg = random_game(np.random.default_rng(seed), max_states=4)
    _, res = _solve(g, avg)
    oracle = brute_force_value(g, avg)
    assert res.value[g.initial] == pytest.approx(oracle[g.initial], abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_invariants(seed):
    g, avg = random_game(np.random.default_rng(seed))
    history = []
    rep = analyze(g, avg)
    res = solve_equilibrium(g, avg, rep, history=history)
    v = res.value.values
    # Finite exactly on S+, nonnegative, zero on the winning set.
    assert res.value.finite() == rep.potentially_winning
    assert (v[list(rep.potentially_winning)] >= -1e-12).all()
    assert all(v[w] == 0.0 for w in g.winning)
    # Iterates from zero increase monotonically (up to inner-solver tolerance).
    for prev, cur in zip(history, history[1:]):
        fin = np.isfinite(prev)
        assert (cur[fin] >= prev[fin] - 1e-8).all()
    for s in rep.active:
        assert res.policy1.support(s) <= rep.allowed(s)
        assert res.policy1[s].sum() == pytest.approx(1.0) and res.policy2[s].sum() == pytest.approx(1.0)
    assert bellman_residual(g, avg, rep, res.value) < 1e-7


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equilibrium_is_a_saddle_point(seed):
    g, avg = random_game(np.random.default_rng(seed))
    rep, res = _solve(g, avg)
    v0 = res.value[g.initial]
    assert exact_kl(g, res.policy1, res.policy2, avg) == pytest.approx(v0, abs=1e-6)
    # Neither player gains by deviating unilaterally.
    v1, _ = solve_softmin_mdp(g, res.policy2, avg, report=rep)
    assert v1[g.initial] >= v0 - 1e-6
    v2, _ = player2_best_response(g, res.policy1, avg)
    assert v2[g.initial] <= v0 + 1e-6
