"""Passive learning of Player 2's policy from average-player runs.

Runs collected under the average policy reveal Player 2's actions. States
with at least ``m`` observations are known and get the empirical
distribution of their first ``m`` actions; the rest of S+ is unknown. The
learner then solves a modified game in which unknown states end the play,
and follows that solution until the first unknown state is visited, after
which it imitates the average player.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .equilibrium import NonConvergenceError, continuation_costs, initial_values
from .game import Game, GameRun, StationaryPolicy, SwitchingPolicy, ValueFunction
from .structure import InfeasibleError, StructureReport, analyze


def fix_player2(g: Game, p2: StationaryPolicy) -> Game:
    """The one-player game obtained by averaging the kernel over ``p2``."""
    probs = tuple(np.einsum("j,ijk->ik", p2[s], g.probs[s])[:, None, :] for s in range(g.n_states))
    return Game(g.state_names, g.actions1, tuple(("fixed",) for _ in range(g.n_states)),
                g.succ, probs, g.initial, g.winning)


def solve_softmin_mdp(g: Game, fixed_p2: StationaryPolicy, avg: StationaryPolicy, tol: float = 1e-9,
                      max_iter: int = 100_000, report: StructureReport | None = None
                      ) -> tuple[ValueFunction, StationaryPolicy]:
    """Best Player 1 response to a fixed Player 2 among policies that win almost surely.

    The backup is the softmin ``v(s) = -log sum_a avg(a) exp(-c(a))`` over
    the allowed actions of ``report``. Without a report, the structure is
    computed for the game with Player 2 fixed, so winning is required only
    against ``fixed_p2``. Player 1 plays ``avg`` outside the active states.
    """
    h = fix_player2(g, fixed_p2)
    if report is None:
        report = analyze(h, avg, require_initial=False)
    v = initial_values(h, report)
    if math.isinf(v[g.initial]):
        raise InfeasibleError(f"initial state {g.state_names[g.initial]!r} has infinite value")
    active = sorted(report.active)
    rows = {s: np.array(sorted(report.allowed(s)), dtype=np.int64) for s in active}
    log_avg = {s: np.log(avg[s][rows[s]]) for s in active}
    for s in active:
        if len(rows[s]) == 0:
            raise ValueError(f"state {g.state_names[s]!r} has no safe permissible action")
    residual = math.inf
    for _ in range(max_iter):
        residual = 0.0
        for s in active:
            c = continuation_costs(h, s, v, rows[s])[:, 0]
            new = -float(logsumexp(log_avg[s] - c))
            residual = max(residual, abs(new - v[s]))
            v[s] = new
        if residual < tol:
            break
    else:
        raise NonConvergenceError(f"softmin value iteration did not converge in {max_iter} sweeps", residual)
    dist = [np.asarray(avg[s]) for s in range(g.n_states)]
    for s in active:
        c = continuation_costs(h, s, v, rows[s])[:, 0]
        row = np.zeros(g.n1(s))
        row[rows[s]] = softmax(log_avg[s] - c)
        dist[s] = row
    return ValueFunction(v), StationaryPolicy(1, tuple(dist))


def estimate_opponent(runs: Sequence[GameRun], m: int, s_plus: Iterable[int], g: Game,
                      winning: Iterable[int] = ()) -> tuple[frozenset[int], frozenset[int], StationaryPolicy]:
    """Split ``s_plus`` minus ``winning`` into known and unknown states and estimate Player 2.

    Observations are taken in run order, then step order; a known state's
    estimate is the empirical distribution of its first ``m`` observed
    actions. Unknown states and states outside ``s_plus`` keep the uniform
    distribution in the returned policy.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    candidates = set(s_plus) - set(winning)
    counts = np.zeros(g.n_states, dtype=np.int64)
    tallies = [np.zeros(g.n2(s)) for s in range(g.n_states)]
    for run in runs:
        for s, a2 in zip(run.states.tolist(), run.actions2.tolist()):
            if s in candidates and counts[s] < m:
                tallies[s][a2] += 1.0
            counts[s] += 1
    known = frozenset(s for s in candidates if counts[s] >= m)
    dist = []
    for s in range(g.n_states):
        dist.append(tallies[s] / m if s in known else np.full(g.n2(s), 1.0 / g.n2(s)))
    return known, frozenset(candidates - known), StationaryPolicy(2, tuple(dist))


def build_modified_game(g: Game, end: Iterable[int]) -> Game:
    """Copy of ``g`` in which every state of ``end`` is absorbing and winning, and nothing else wins."""
    end = frozenset(end)
    return g.with_changes(absorbing=end, winning=end)


@dataclass(frozen=True)
class LearnOutput:
    known_states: frozenset[int]
    unknown_states: frozenset[int]
    estimated_p2: StationaryPolicy
    policy: SwitchingPolicy
    modified_game_value: ValueFunction

    def to_json(self, g: Game) -> dict:
        names = g.state_names
        return {
            "known_states": [names[s] for s in sorted(self.known_states)],
            "unknown_states": [names[s] for s in sorted(self.unknown_states)],
            "estimated_p2": {names[s]: self.estimated_p2.to_names(g)[names[s]] for s in sorted(self.known_states)},
            "primary_policy": self.policy.primary.to_names(g),
            "modified_game_value": {names[s]: (float(v) if math.isfinite(v) else None)
                                    for s, v in enumerate(self.modified_game_value.values)},
        }


def algorithm1(g: Game, avg: StationaryPolicy, runs: Sequence[GameRun], m: int,
               report: StructureReport | None = None, tol: float = 1e-9, max_iter: int = 100_000) -> LearnOutput:
    """Learn from ``runs`` collected under ``(avg, true opponent)`` and return the switching policy.

    The modified game keeps the safe action sets of the original game, so
    the learned policy never leaves S+ whatever Player 2 actually does.
    """
    if report is None:
        report = analyze(g, avg)
    known, unknown, p2_hat = estimate_opponent(runs, m, report.potentially_winning, g, report.winning)
    end = unknown | report.winning
    modified = build_modified_game(g, end)
    mod_report = StructureReport(
        trap_states=report.trap_states,
        potentially_winning=report.potentially_winning,
        safe_actions=report.safe_actions,
        permissible_actions=report.permissible_actions,
        winning=frozenset(end),
    )
    value, primary = solve_softmin_mdp(modified, p2_hat, avg, tol=tol, max_iter=max_iter, report=mod_report)
    policy = SwitchingPolicy(primary=primary, fallback=avg, trigger_set=frozenset(unknown))
    return LearnOutput(known, unknown, p2_hat, policy, value)
