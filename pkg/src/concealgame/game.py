"""Game model: concurrent two-player stochastic reachability games, policies and runs.

States and actions are dense integer indices. Action indices are local to a
state: ``actions1[s][i]`` is the name of Player 1's ``i``-th action at ``s``.
The kernel is stored per state as a successor index array plus a dense
``(n1, n2, n_succ)`` probability block, which keeps deterministic and sparse
games cheap while letting the solvers contract over actions with numpy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-12


class GameSpecError(ValueError):
    """Raised for malformed or schema-violating game documents."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Game:
    """A finite concurrent stochastic reachability game.

    Use :meth:`from_transitions` to build one; the raw constructor trusts its
    arguments and performs no validation (see :func:`validate_game`).
    """

    state_names: tuple[str, ...]
    actions1: tuple[tuple[str, ...], ...]
    actions2: tuple[tuple[str, ...], ...]
    succ: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]
    initial: int
    winning: frozenset[int]

    @classmethod
    def from_transitions(
        cls,
        state_names: Sequence[str],
        actions1: Sequence[Sequence[str]],
        actions2: Sequence[Sequence[str]],
        transitions: Mapping[tuple[int, int, int], Iterable[tuple[int, float]]],
        initial: int,
        winning: Iterable[int],
    ) -> "Game":
        """Build a game from a sparse ``(s, a1, a2) -> [(q, p), ...]`` mapping.

        Missing ``(s, a1, a2)`` entries become all-zero rows, which
        :func:`validate_game` reports as row-sum violations.
        """
        n = len(state_names)
        succ, probs = [], []
        for s in range(n):
            n1, n2 = len(actions1[s]), len(actions2[s])
            targets: dict[int, int] = {}
            entries = []
            for a1 in range(n1):
                for a2 in range(n2):
                    for q, p in transitions.get((s, a1, a2), ()):
                        targets.setdefault(int(q), len(targets))
                        entries.append((a1, a2, int(q), float(p)))
            order = sorted(targets)
            col = {q: i for i, q in enumerate(order)}
            block = np.zeros((n1, n2, len(order)))
            for a1, a2, q, p in entries:
                block[a1, a2, col[q]] += p
            succ.append(_frozen(np.array(order, dtype=np.int64)))
            probs.append(_frozen(block))
        return cls(
            state_names=tuple(state_names),
            actions1=tuple(tuple(a) for a in actions1),
            actions2=tuple(tuple(a) for a in actions2),
            succ=tuple(succ),
            probs=tuple(probs),
            initial=int(initial),
            winning=frozenset(int(w) for w in winning),
        )

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def n1(self, s: int) -> int:
        return len(self.actions1[s])

    def n2(self, s: int) -> int:
        return len(self.actions2[s])

    @property
    def max_actions(self) -> int:
        """Largest per-state action count over both players."""
        return max(max(map(len, self.actions1)), max(map(len, self.actions2)))

    def transition(self, s: int, a1: int, a2: int) -> list[tuple[int, float]]:
        row = self.probs[s][a1, a2]
        return [(int(q), float(p)) for q, p in zip(self.succ[s], row) if p > 0]

    def prob(self, s: int, a1: int, a2: int, q: int) -> float:
        hit = np.nonzero(self.succ[s] == q)[0]
        return float(self.probs[s][a1, a2, hit[0]]) if len(hit) else 0.0

    def dense(self, s: int) -> np.ndarray:
        """Full ``(n1, n2, n_states)`` kernel block at ``s``."""
        out = np.zeros((self.n1(s), self.n2(s), self.n_states))
        out[:, :, self.succ[s]] = self.probs[s]
        return out

    def is_absorbing(self, s: int) -> bool:
        succ, block = self.succ[s], self.probs[s]
        if block.size == 0:
            return False
        return len(succ) == 1 and succ[0] == s and bool(np.all(block[:, :, 0] == 1.0))

    def absorbing_states(self) -> frozenset[int]:
        return frozenset(s for s in range(self.n_states) if self.is_absorbing(s))

    def state_index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise KeyError(f"unknown state {name!r}") from None

    def transition_records(self):
        """Yield ``(s, a1, a2, [(q, p), ...])`` for every action pair."""
        for s in range(self.n_states):
            for a1 in range(self.n1(s)):
                for a2 in range(self.n2(s)):
                    yield s, a1, a2, self.transition(s, a1, a2)

    def with_changes(self, *, absorbing: Iterable[int] = (), winning: Iterable[int] | None = None) -> "Game":
        """Copy with the given states made absorbing (self-loop for every action pair)."""
        succ, probs = list(self.succ), list(self.probs)
        for s in absorbing:
            succ[s] = _frozen(np.array([s], dtype=np.int64))
            probs[s] = _frozen(np.ones((self.n1(s), self.n2(s), 1)))
        return Game(
            state_names=self.state_names,
            actions1=self.actions1,
            actions2=self.actions2,
            succ=tuple(succ),
            probs=tuple(probs),
            initial=self.initial,
            winning=self.winning if winning is None else frozenset(winning),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Game):
            return NotImplemented
        if (self.state_names, self.actions1, self.actions2, self.initial, self.winning) != (
            other.state_names, other.actions1, other.actions2, other.initial, other.winning
        ):
            return False
        return all(np.array_equal(self.dense(s), other.dense(s)) for s in range(self.n_states))

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Per-state action distributions for one player.

    ``owner`` is ``1``, ``2`` or ``"avg"``; it only decides which action sets
    the distributions are checked against.
    """

    owner: int | str
    dist: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "dist", tuple(_frozen(np.asarray(d, dtype=float).copy()) for d in self.dist))

    def __getitem__(self, s: int) -> np.ndarray:
        return self.dist[s]

    def __len__(self) -> int:
        return len(self.dist)

    @property
    def player(self) -> int:
        return 2 if self.owner == 2 else 1

    def support(self, s: int) -> frozenset[int]:
        return frozenset(int(i) for i in np.nonzero(self.dist[s] > 0)[0])

    def replace(self, updates: Mapping[int, np.ndarray], owner=None) -> "StationaryPolicy":
        dist = list(self.dist)
        for s, d in updates.items():
            dist[s] = np.asarray(d, dtype=float)
        return StationaryPolicy(self.owner if owner is None else owner, tuple(dist))

    @classmethod
    def uniform(cls, game: Game, player: int = 1, owner=None) -> "StationaryPolicy":
        acts = game.actions1 if player == 1 else game.actions2
        return cls(player if owner is None else owner, tuple(np.full(len(a), 1.0 / len(a)) for a in acts))

    @classmethod
    def from_names(cls, game: Game, table: Mapping[str, Mapping[str, float]], player: int = 1,
                   owner=None, default: str = "uniform") -> "StationaryPolicy":
        """Build from ``{state_name: {action_name: prob}}``.

        States missing from ``table`` get the uniform distribution when
        ``default == "uniform"``; any other value makes them an error.
        """
        acts = game.actions1 if player == 1 else game.actions2
        dist = []
        for s, name in enumerate(game.state_names):
            row = np.zeros(len(acts[s]))
            if name not in table:
                if default != "uniform":
                    raise GameSpecError("missing policy row", f"policy.{name}")
                row[:] = 1.0 / len(row)
            else:
                for a, p in table[name].items():
                    if a not in acts[s]:
                        raise GameSpecError(f"unknown action {a!r}", f"policy.{name}")
                    row[acts[s].index(a)] = float(p)
            dist.append(row)
        return cls(player if owner is None else owner, tuple(dist))

    def to_names(self, game: Game) -> dict[str, dict[str, float]]:
        acts = game.actions1 if self.player == 1 else game.actions2
        return {
            game.state_names[s]: {acts[s][i]: float(p) for i, p in enumerate(d)}
            for s, d in enumerate(self.dist)
        }


def validate_policy(game: Game, policy: StationaryPolicy) -> list[str]:
    acts = game.actions1 if policy.player == 1 else game.actions2
    problems = []
    if len(policy) != game.n_states:
        return [f"policy covers {len(policy)} states, game has {game.n_states}"]
    for s, d in enumerate(policy.dist):
        if len(d) != len(acts[s]):
            problems.append(f"state {s}: {len(d)} probabilities for {len(acts[s])} actions")
        elif np.any(d < 0) or abs(d.sum() - 1.0) > PROB_TOL:
            problems.append(f"state {s}: not a distribution (sum={d.sum()!r})")
    return problems


@dataclass(frozen=True, eq=False)
class SwitchingPolicy:
    """Follow ``primary`` until a state of ``trigger_set`` is visited, then ``fallback`` forever.

    The switch takes effect at the triggering state itself. Switching only
    after the visit gives the same run distribution whenever ``primary``
    equals ``fallback`` on every trigger state, as it does for policies
    learned on a game where the trigger states are absorbing.
    """

    primary: StationaryPolicy
    fallback: StationaryPolicy
    trigger_set: frozenset[int]

    owner = 1

    @property
    def player(self) -> int:
        return 1

    def switched_after(self, switched: bool, state: int) -> bool:
        return switched or state in self.trigger_set

    def dist(self, switched: bool, state: int) -> np.ndarray:
        """Action distribution given the visited-trigger flag (already updated for ``state``)."""
        return self.fallback[state] if switched else self.primary[state]

    def action_dist(self, history_states: Sequence[int]) -> np.ndarray:
        """Distribution at the last state of ``history_states``."""
        switched = any(s in self.trigger_set for s in history_states)
        return self.dist(switched, history_states[-1])


@dataclass(frozen=True, eq=False)
class GameRun:
    """A finite run prefix: ``states[t]`` was played with ``actions1[t]``, ``actions2[t]``."""

    states: np.ndarray
    actions1: np.ndarray
    actions2: np.ndarray
    terminal_state: int
    truncated: bool = False

    def __post_init__(self):
        for name in ("states", "actions1", "actions2"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64).copy()))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def start(self) -> int:
        return int(self.states[0]) if len(self.states) else self.terminal_state

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return [(int(s), int(a), int(b)) for s, a, b in zip(self.states, self.actions1, self.actions2)]

    def visited(self) -> np.ndarray:
        return np.append(self.states, self.terminal_state)

    def is_feasible(self, game: Game) -> bool:
        path = self.visited()
        for t, (s, a1, a2) in enumerate(self.triples):
            if game.prob(s, a1, a2, int(path[t + 1])) <= 0:
                return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, GameRun):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions1, other.actions1)
            and np.array_equal(self.actions2, other.actions2)
            and self.terminal_state == other.terminal_state
            and self.truncated == other.truncated
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Per-state cost-to-go; ``math.inf`` marks states from which no finite-cost win exists."""

    values: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=float).copy()))

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])

    def __len__(self) -> int:
        return len(self.values)

    def finite(self) -> frozenset[int]:
        return frozenset(int(s) for s in np.nonzero(np.isfinite(self.values))[0])


def validate_game(g: Game) -> list[str]:
    """Return every invariant violation of ``g``; an empty list means valid."""
    problems = []
    n = g.n_states
    if n == 0:
        return ["game has no states"]
    if not 0 <= g.initial < n:
        problems.append(f"initial state {g.initial} out of range")
    for w in sorted(g.winning):
        if not 0 <= w < n:
            problems.append(f"winning state {w} out of range")
    for s in range(n):
        if g.n1(s) == 0:
            problems.append(f"state {s}: no Player 1 action")
        if g.n2(s) == 0:
            problems.append(f"state {s}: no Player 2 action")
        succ = g.succ[s]
        if len(succ) and (succ.min() < 0 or succ.max() >= n):
            problems.append(f"state {s}: successor out of range")
        block = g.probs[s]
        for a1 in range(g.n1(s)):
            for a2 in range(g.n2(s)):
                row = block[a1, a2] if block.size else np.zeros(0)
                if np.any(row < 0):
                    problems.append(f"negative probability at (s={s}, a1={a1}, a2={a2})")
                total = float(row.sum())
                if abs(total - 1.0) > PROB_TOL:
                    problems.append(f"row sum {total!r} != 1 at (s={s}, a1={a1}, a2={a2})")
                if s in g.winning:
                    leak = float(sum(p for q, p in zip(succ, row) if q != s))
                    if leak > 0:
                        problems.append(f"winning state not absorbing at (s={s}, a1={a1}, a2={a2})")
    return problems


def run_log_likelihood_ratio(run: GameRun, hyp, base) -> float:
    """Log-likelihood ratio of ``run`` under Player 1 policy ``hyp`` against ``base``.

    Player 2's actions and the kernel contribute identical factors under both
    hypotheses and cancel, so only Player 1's action probabilities enter.
    Either policy may be a :class:`SwitchingPolicy`.
    """
    h = _action_probs(run, hyp)
    b = _action_probs(run, base)
    if np.any((h == 0) & (b == 0)):
        t = int(np.nonzero((h == 0) & (b == 0))[0][0])
        raise ValueError(f"run takes action {int(run.actions1[t])} at state {int(run.states[t])} "
                         "outside both supports")
    pos_inf = np.any(b == 0)
    neg_inf = np.any(h == 0)
    if pos_inf:
        return math.inf
    if neg_inf:
        return -math.inf
    return float(np.sum(np.log(h) - np.log(b)))


def _action_probs(run: GameRun, policy) -> np.ndarray:
    if isinstance(policy, SwitchingPolicy):
        out = np.empty(len(run))
        switched = False
        for t, (s, a) in enumerate(zip(run.states, run.actions1)):
            switched = policy.switched_after(switched, int(s))
            out[t] = policy.dist(switched, int(s))[a]
        return out
    return np.array([policy[int(s)][a] for s, a in zip(run.states, run.actions1)], dtype=float)


# -- game file I/O ---------------------------------------------------------

def _require(doc: dict, key: str, kind, where: str = ""):
    loc = f"{where}.{key}" if where else key
    if key not in doc:
        raise GameSpecError("missing field", loc)
    val = doc[key]
    if not isinstance(val, kind):
        raise GameSpecError(f"expected {getattr(kind, '__name__', kind)}", loc)
    return val


def load_game(text: str) -> tuple[Game, StationaryPolicy | None]:
    """Parse a game-file JSON document.

    Returns the game and, when the document carries ``average_policy``, the
    average player's policy. Rows within ``1e-12`` of summing to one are
    renormalised; anything further off is a schema error.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameSpecError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise GameSpecError("top level must be an object", "document")

    states = _require(doc, "states", list)
    if not states:
        raise GameSpecError("state list is empty", "states")
    if not all(isinstance(x, str) for x in states) or len(set(states)) != len(states):
        raise GameSpecError("state names must be unique strings", "states")
    index = {name: i for i, name in enumerate(states)}

    def state_ref(name, loc):
        if name not in index:
            raise GameSpecError(f"unknown state {name!r}", loc)
        return index[name]

    initial = state_ref(_require(doc, "initial", str), "initial")
    winning = [state_ref(w, f"winning[{i}]") for i, w in enumerate(_require(doc, "winning", list))]
    acts = []
    for key in ("actions1", "actions2"):
        table = _require(doc, key, dict)
        rows = []
        for name in states:
            row = table.get(name)
            if not isinstance(row, list) or not row or not all(isinstance(a, str) for a in row):
                raise GameSpecError("expected a non-empty list of action names", f"{key}.{name}")
            if len(set(row)) != len(row):
                raise GameSpecError("duplicate action name", f"{key}.{name}")
            rows.append(row)
        acts.append(rows)
    actions1, actions2 = acts

    transitions: dict[tuple[int, int, int], list[tuple[int, float]]] = {}
    for i, rec in enumerate(_require(doc, "transitions", list)):
        loc = f"transitions[{i}]"
        if not isinstance(rec, dict):
            raise GameSpecError("expected an object", loc)
        s = state_ref(_require(rec, "s", str, loc), f"{loc}.s")
        a1, a2 = _require(rec, "a1", str, loc), _require(rec, "a2", str, loc)
        if a1 not in actions1[s]:
            raise GameSpecError(f"unknown Player 1 action {a1!r}", f"{loc}.a1")
        if a2 not in actions2[s]:
            raise GameSpecError(f"unknown Player 2 action {a2!r}", f"{loc}.a2")
        key = (s, actions1[s].index(a1), actions2[s].index(a2))
        if key in transitions:
            raise GameSpecError("duplicate transition record", loc)
        nxt = []
        for j, out in enumerate(_require(rec, "next", list, loc)):
            q = state_ref(_require(out, "q", str, f"{loc}.next[{j}]"), f"{loc}.next[{j}].q")
            p = _require(out, "p", (int, float), f"{loc}.next[{j}]")
            if p < 0 or not math.isfinite(p):
                raise GameSpecError("probability must be finite and nonnegative", f"{loc}.next[{j}].p")
            nxt.append((q, float(p)))
        total = math.fsum(p for _, p in nxt)
        if abs(total - 1.0) > PROB_TOL:
            raise GameSpecError(f"probabilities sum to {total!r}", f"{loc}.next")
        transitions[key] = [(q, p / total) for q, p in nxt] if total != 1.0 else nxt
    for s, name in enumerate(states):
        for a1 in actions1[s]:
            for a2 in actions2[s]:
                if (s, actions1[s].index(a1), actions2[s].index(a2)) not in transitions:
                    raise GameSpecError(f"no transition for ({name}, {a1}, {a2})", "transitions")

    game = Game.from_transitions(states, actions1, actions2, transitions, initial, winning)
    problems = validate_game(game)
    if problems:
        raise GameSpecError("; ".join(problems), "transitions")

    avg = None
    if "average_policy" in doc:
        table = _require(doc, "average_policy", dict)
        avg = StationaryPolicy.from_names(game, table, player=1, owner="avg", default="error")
        avg = _normalise_policy(avg, "average_policy", game)
    return game, avg


def _normalise_policy(policy: StationaryPolicy, where: str, game: Game) -> StationaryPolicy:
    rows = []
    for s, d in enumerate(policy.dist):
        total = math.fsum(d)
        if np.any(d < 0) or abs(total - 1.0) > PROB_TOL:
            raise GameSpecError(f"probabilities sum to {total!r}", f"{where}.{game.state_names[s]}")
        rows.append(d / total if total != 1.0 else d)
    return StationaryPolicy(policy.owner, tuple(rows))


def save_game(g: Game, avg: StationaryPolicy | None = None) -> str:
    """Serialise ``g`` (and optionally the average policy) to the game-file JSON format.

    Probabilities are written with ``repr`` precision, so loading the text
    back reproduces them bit-for-bit.
    """
    names = g.state_names
    doc = {
        "states": list(names),
        "initial": names[g.initial],
        "winning": [names[w] for w in sorted(g.winning)],
        "actions1": {names[s]: list(g.actions1[s]) for s in range(g.n_states)},
        "actions2": {names[s]: list(g.actions2[s]) for s in range(g.n_states)},
        "transitions": [
            {
                "s": names[s],
                "a1": g.actions1[s][a1],
                "a2": g.actions2[s][a2],
                "next": [{"q": names[q], "p": p} for q, p in nxt],
            }
            for s, a1, a2, nxt in g.transition_records()
        ],
    }
    if avg is not None:
        doc["average_policy"] = avg.to_names(g)
    return json.dumps(doc, indent=1)


def load_policy(text: str, game: Game) -> StationaryPolicy:
    """Parse ``{"player": 1|2, "policy": {state: {action: p}}}``; absent states default to uniform."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameSpecError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    player = _require(doc, "player", int)
    if player not in (1, 2):
        raise GameSpecError("player must be 1 or 2", "player")
    table = _require(doc, "policy", dict)
    policy = StationaryPolicy.from_names(game, table, player=player)
    return _normalise_policy(policy, "policy", game)


def dump_policy(policy: StationaryPolicy, game: Game) -> str:
    return json.dumps({"player": policy.player, "policy": policy.to_names(game)}, indent=1)
