"""Qualitative structure of a game under the average player's policy.

Everything here is graph-based: only the supports of the kernel and of the
policies matter, so no numeric tolerance enters the trap / potentially-winning
classification.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .game import Game, StationaryPolicy


class InfeasibleError(ValueError):
    """The initial state cannot be won with probability one at finite cost."""


@dataclass(frozen=True)
class StructureReport:
    trap_states: frozenset[int]
    potentially_winning: frozenset[int]
    safe_actions: Mapping[int, frozenset[int]]
    permissible_actions: Mapping[int, frozenset[int]]
    winning: frozenset[int]

    def allowed(self, s: int) -> frozenset[int]:
        """Safe and permissible Player 1 actions at ``s``."""
        return self.safe_actions.get(s, frozenset()) & self.permissible_actions[s]

    @property
    def active(self) -> frozenset[int]:
        """States where Player 1 still has to play: S+ minus the winning set."""
        return self.potentially_winning - self.winning

    def to_json(self, game: Game) -> dict:
        names = game.state_names
        return {
            "trap_states": [names[s] for s in sorted(self.trap_states)],
            "potentially_winning": [names[s] for s in sorted(self.potentially_winning)],
            "safe_actions": {
                names[s]: [game.actions1[s][a] for a in sorted(acts)]
                for s, acts in sorted(self.safe_actions.items())
            },
            "permissible_actions": {
                names[s]: [game.actions1[s][a] for a in sorted(acts)]
                for s, acts in sorted(self.permissible_actions.items())
            },
        }


def permissible_actions(g: Game, avg: StationaryPolicy) -> dict[int, frozenset[int]]:
    return {s: avg.support(s) for s in range(g.n_states)}


def _successors(g: Game, s: int, a1s: Iterable[int], a2: int) -> set[int]:
    block = g.probs[s]
    out: set[int] = set()
    for a1 in a1s:
        out.update(int(q) for q in g.succ[s][block[a1, a2] > 0])
    return out


def _avoid_fixed_point(g: Game, candidates: set[int], p1_support: Mapping[int, Iterable[int]]) -> set[int]:
    """Largest U within ``candidates`` where Player 2 can keep the play inside U forever.

    A state stays if some Player 2 action sends every Player 1 action in its
    support only to states of U. These are exactly the states from which the
    minimum (over Player 2) probability of ever leaving U is zero.
    """
    U = set(candidates)
    supports = {s: tuple(p1_support[s]) for s in U}
    changed = True
    while changed:
        changed = False
        for s in sorted(U):
            if not any(_successors(g, s, supports[s], a2) <= U for a2 in range(g.n2(s))):
                U.discard(s)
                changed = True
    return U


def compute_trap_states(g: Game, avg: StationaryPolicy) -> frozenset[int]:
    """States from which Player 2 can hold the average player's win probability at zero."""
    candidates = set(range(g.n_states)) - g.winning
    support = permissible_actions(g, avg)
    return frozenset(_avoid_fixed_point(g, candidates, support))


def safe_in(g: Game, s: int, region: set[int] | frozenset[int]) -> frozenset[int]:
    """Player 1 actions at ``s`` whose successors stay in ``region`` for every Player 2 action."""
    block = g.probs[s]
    inside = np.isin(g.succ[s], list(region))
    leaks = (block > 0) & ~inside
    return frozenset(int(a) for a in np.nonzero(~leaks.any(axis=(1, 2)))[0])


def shrink_potentially_winning(g: Game, avg: StationaryPolicy, start: Iterable[int]) -> tuple[frozenset[int], dict[int, frozenset[int]]]:
    """Greatest subset of ``start`` from which the uniform safe policy wins surely against anyone.

    Returns the region and the final safe-action sets on it.
    """
    perm = permissible_actions(g, avg)
    C = set(start)
    while True:
        safe = {s: safe_in(g, s, C) for s in C}
        allowed = {s: safe[s] & perm[s] for s in C}
        dead = {s for s in C - g.winning if not allowed[s]}
        if dead:
            C -= dead
            continue
        # Player 1 fixed to the uniform mixture over allowed actions: states
        # where Player 2 can avoid the winning set forever are dropped.
        avoid = _avoid_fixed_point(g, C - g.winning, allowed)
        if not avoid:
            return frozenset(C), safe
        C -= avoid


def compute_potentially_winning(g: Game, avg: StationaryPolicy, traps: Iterable[int] | None = None,
                                require_initial: bool = True) -> tuple[frozenset[int], dict[int, frozenset[int]]]:
    """Potentially-winning region S+ and its safe actions.

    Raises :class:`InfeasibleError` when ``require_initial`` is set and the
    initial state falls outside the region.
    """
    if traps is None:
        traps = compute_trap_states(g, avg)
    region, safe = shrink_potentially_winning(g, avg, set(range(g.n_states)) - set(traps))
    if require_initial and g.initial not in region:
        raise InfeasibleError(
            f"initial state {g.state_names[g.initial]!r} is not potentially winning: "
            "no policy wins with probability one at finite KL cost"
        )
    return region, safe


def analyze(g: Game, avg: StationaryPolicy, require_initial: bool = True) -> StructureReport:
    traps = compute_trap_states(g, avg)
    region, safe = compute_potentially_winning(g, avg, traps, require_initial=require_initial)
    return StructureReport(
        trap_states=traps,
        potentially_winning=region,
        safe_actions=safe,
        permissible_actions=permissible_actions(g, avg),
        winning=frozenset(g.winning),
    )
