"""Builders for the two example environments: the cyber client/server game and pursuit-evasion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import Game, StationaryPolicy

# -- cyber interaction ------------------------------------------------------

CYBER_CLIENT_ACTIONS = ("Wait", "Request", "Leave")

# state -> (Wait, Request, Leave)
CYBER_AVERAGE_POLICY = {
    1: (0.4, 0.5, 0.1),
    2: (0.25, 0.7, 0.05),
    3: (0.85, 0.1, 0.05),
    4: (0.65, 0.3, 0.05),
    5: (0.45, 0.5, 0.05),
    6: (0.65, 0.3, 0.05),
    7: (0.45, 0.5, 0.05),
    8: (0.25, 0.7, 0.05),
    9: (1.0, 0.0, 0.0),
    10: (1.0, 0.0, 0.0),
    11: (1.0, 0.0, 0.0),
}

# state -> (next after Wait, next after Accept+Request, next after Reject+Request)
CYBER_TRANSITIONS = {
    1: (1, 3, 2),
    2: (2, 3, 9),
    3: (4, 10, 7),
    4: (5, 10, 8),
    5: (1, 3, 2),
    6: (7, 10, 9),
    7: (8, 10, 9),
    8: (2, 3, 9),
}

CYBER_STATE_DESCRIPTIONS = {
    1: "No work in progress; client is not rejected for a new task",
    2: "No work in progress, client is rejected for a new request",
    3: "A work is in progress with 3 steps until completion; client is not rejected",
    4: "A work is in progress with 2 steps until completion; client is not rejected",
    5: "A work is in progress with 1 steps until completion; client is not rejected",
    6: "A work is in progress with 3 steps until completion; client is rejected",
    7: "A work is in progress with 2 steps until completion; client is rejected",
    8: "A work is in progress with 1 steps until completion; client is rejected",
    9: "Client is rejected twice for a new task",
    10: "Two works are in progress",
    11: "Client is disconnected",
}

# A previously rejected request cannot be rejected again.
_CYBER_NO_REJECT = {2, 6, 7, 8}
_CYBER_ABSORBING = {9, 10, 11}


def build_cyber_game() -> tuple[Game, StationaryPolicy]:
    """The 11-state client/server game; state ``k`` has index ``k - 1``.

    Leave disconnects the client (state 11). Reject is unavailable to the
    server at states 2, 6, 7 and 8, which keeps state 9 unreachable.
    """
    names = [str(k) for k in range(1, 12)]
    actions1 = [CYBER_CLIENT_ACTIONS] * 11
    actions2 = []
    for k in range(1, 12):
        if k in _CYBER_ABSORBING or k in _CYBER_NO_REJECT:
            actions2.append(("Accept",))
        else:
            actions2.append(("Accept", "Reject"))
    trans = {}
    for k in range(1, 12):
        s = k - 1
        for a2, server in enumerate(actions2[s]):
            for a1, client in enumerate(CYBER_CLIENT_ACTIONS):
                if k in _CYBER_ABSORBING:
                    nxt = k
                elif client == "Wait":
                    nxt = CYBER_TRANSITIONS[k][0]
                elif client == "Leave":
                    nxt = 11
                else:
                    nxt = CYBER_TRANSITIONS[k][1 if server == "Accept" else 2]
                trans[(s, a1, a2)] = [(nxt - 1, 1.0)]
    game = Game.from_transitions(names, actions1, actions2, trans, initial=0, winning=[9])
    avg = StationaryPolicy("avg", tuple(np.array(CYBER_AVERAGE_POLICY[k]) for k in range(1, 12)))
    return game, avg


def cyber_greedy_policy(game: Game) -> StationaryPolicy:
    """Client that requests at every step (waits at the absorbing states)."""
    rows = []
    for s in range(game.n_states):
        row = np.zeros(3)
        row[0 if game.is_absorbing(s) else 1] = 1.0
        rows.append(row)
    return StationaryPolicy(1, tuple(rows))


# -- pursuit-evasion ---------------------------------------------------------

WIN = "WIN"
CAUGHT = "CAUGHT"

# Average evader over (stay, x, 2x, y, 2y, -y, -2y, -x, -2x).
AVERAGE_EVADER = {
    "O": (0.80, 0.10, 0.0, 0.05, 0.0, 0.05, 0.0, 0.0, 0.0),
    "C": (0.0, 0.40, 0.10, 0.20, 0.05, 0.20, 0.05, 0.0, 0.0),
}


@dataclass(frozen=True)
class PursuitEvasionParams:
    win_distance: int = 6
    capture_distance: int = 0
    occupy_prob: float = 0.5
    evader_max_step: int = 2
    pursuer_max_step: int = 1
    stop_prob: float = 0.2
    # Fold dx onto dx >= 0 (mirror image states merged). Off by default: the
    # average evader never moves -x, so the mirror is not a symmetry of the game.
    reflect_x: bool = False

    def __post_init__(self):
        if not self.win_distance > self.capture_distance >= 0:
            raise ValueError("need win_distance > capture_distance >= 0")
        for name in ("occupy_prob", "stop_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.evader_max_step < 1 or self.pursuer_max_step < 1:
            raise ValueError("step sizes must be at least 1")


def _moves(max_step: int, order=("x", "y", "-y", "-x")) -> list[tuple[str, tuple[int, int]]]:
    unit = {"x": (1, 0), "y": (0, 1), "-y": (0, -1), "-x": (-1, 0)}
    out = [("stay", (0, 0))]
    for d in order:
        for k in range(1, max_step + 1):
            sign = "-" if d.startswith("-") else ""
            label = f"{sign}{k if k > 1 else ''}{d.lstrip('-')}"
            out.append((label, (unit[d][0] * k, unit[d][1] * k)))
    return out


def evader_moves(params: PursuitEvasionParams) -> list[tuple[str, tuple[int, int]]]:
    return _moves(params.evader_max_step)


def pursuer_moves(params: PursuitEvasionParams) -> list[tuple[str, tuple[int, int]]]:
    moves = _moves(params.pursuer_max_step, ("x", "-x", "y", "-y"))
    return [(n if n == "stay" or n.startswith("-") else "+" + n, v) for n, v in moves]


def pe_state_name(dx: int, dy: int, evader_occ: str, pursuer_occ: str) -> str:
    return f"({dx},{dy},{evader_occ},{pursuer_occ})"


def _positions(params: PursuitEvasionParams) -> list[tuple[int, int]]:
    r = params.win_distance - 1
    out = []
    for dx in range(0 if params.reflect_x else -r, r + 1):
        for dy in range(-r, r + 1):
            if params.capture_distance < abs(dx) + abs(dy) < params.win_distance:
                out.append((dx, dy))
    return out


def build_pursuit_evasion(params: PursuitEvasionParams = PursuitEvasionParams(), with_stop: bool = False,
                          initial: str = "(1,0,O,O)") -> tuple[Game, StationaryPolicy]:
    """Relative-coordinate pursuit-evasion game and the average evader.

    States are ``(dx, dy, evader_intersection, pursuer_intersection)`` with
    ``O``/``C`` for occupied/clear, plus absorbing ``WIN`` (block distance at
    least ``win_distance``) and ``CAUGHT`` (distance at most
    ``capture_distance``). Occupancy is redrawn independently each step. An
    occupied pursuer can only stay. With ``with_stop`` the pursuer also has a
    ``stop`` action that ends the game in the evader's favour.
    """
    ev = evader_moves(params)
    pu = pursuer_moves(params)
    positions = _positions(params)
    occ = ("O", "C")
    names = [pe_state_name(dx, dy, e, p) for dx, dy in positions for e in occ for p in occ] + [WIN, CAUGHT]
    index = {n: i for i, n in enumerate(names)}
    win, caught = index[WIN], index[CAUGHT]
    ev_names = tuple(n for n, _ in ev)
    pr_occ = {"O": params.occupy_prob, "C": 1.0 - params.occupy_prob}

    actions1, actions2, trans = [], [], {}
    for name in names:
        s = index[name]
        if name in (WIN, CAUGHT):
            actions1.append(("stay",))
            actions2.append(("stay",))
            trans[(s, 0, 0)] = [(s, 1.0)]
            continue
        dx, dy, e_occ, p_occ = _parse(name)
        p_moves = [pu[0]] if p_occ == "O" else pu
        a2_names = tuple(n for n, _ in p_moves) + (("stop",) if with_stop else ())
        actions1.append(ev_names)
        actions2.append(a2_names)
        for a1, (_, (ex, ey)) in enumerate(ev):
            for a2, (_, (px, py)) in enumerate(p_moves):
                nx, ny = dx + ex - px, dy + ey - py
                if params.reflect_x:
                    nx = abs(nx)
                dist = abs(nx) + abs(ny)
                if dist >= params.win_distance:
                    trans[(s, a1, a2)] = [(win, 1.0)]
                elif dist <= params.capture_distance:
                    trans[(s, a1, a2)] = [(caught, 1.0)]
                else:
                    out = []
                    for e2 in occ:
                        for p2 in occ:
                            p = pr_occ[e2] * pr_occ[p2]
                            if p > 0:
                                out.append((index[pe_state_name(nx, ny, e2, p2)], p))
                    trans[(s, a1, a2)] = out
            if with_stop:
                trans[(s, a1, len(p_moves))] = [(win, 1.0)]
    game = Game.from_transitions(names, actions1, actions2, trans, initial=index[initial], winning=[win])

    avg_rows = []
    for name in names:
        if name in (WIN, CAUGHT):
            avg_rows.append(np.ones(1))
        else:
            avg_rows.append(np.array(_average_row(params, _parse(name)[2], ev)))
    return game, StationaryPolicy("avg", tuple(avg_rows))


def _average_row(params, e_occ: str, ev) -> list[float]:
    if params.evader_max_step != 2:
        raise ValueError("the average evader is tabulated for evader_max_step == 2")
    return list(AVERAGE_EVADER[e_occ])


def _parse(name: str) -> tuple[int, int, str, str]:
    dx, dy, e, p = name.strip("()").split(",")
    return int(dx), int(dy), e, p


def build_learning_pursuer(game: Game, params: PursuitEvasionParams = PursuitEvasionParams()) -> StationaryPolicy:
    """Pursuer that stops tracking with ``stop_prob`` and otherwise moves uniformly among allowed moves.

    ``game`` must come from :func:`build_pursuit_evasion` with ``with_stop=True``.
    """
    rows = []
    for s in range(game.n_states):
        acts = game.actions2[s]
        row = np.zeros(len(acts))
        if "stop" in acts:
            moves = [i for i, a in enumerate(acts) if a != "stop"]
            row[acts.index("stop")] = params.stop_prob
            row[moves] = (1.0 - params.stop_prob) / len(moves)
        else:
            row[:] = 1.0 / len(acts)
        rows.append(row)
    return StationaryPolicy(2, tuple(rows))


def build_learning_scenario(params: PursuitEvasionParams = PursuitEvasionParams()):
    """Stop-augmented pursuit-evasion game, the average evader, and the stopping pursuer."""
    game, avg = build_pursuit_evasion(params, with_stop=True)
    return game, avg, build_learning_pursuer(game, params)
