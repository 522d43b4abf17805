"""Exact evaluation of policy pairs on the induced Markov chain.

Policies may be stationary or switching. A switching Player 1 policy is
evaluated on a product chain whose states carry a one-bit "switched" flag,
which makes the composed policy stationary there.
"""
from __future__ import annotations

import decimal
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from .game import Game, StationaryPolicy, SwitchingPolicy
from .structure import StructureReport


class SingularSystemError(RuntimeError):
    def __init__(self, message: str, states: list[int]):
        self.states = states
        super().__init__(f"{message}: states {states}")


def kl_rows(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with ``0 log 0 = 0``; ``inf`` when p puts mass outside q's support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    if np.any(pos & (q <= 0)):
        return math.inf
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


# -- induced chain -----------------------------------------------------------

@dataclass
class _Chain:
    """Induced chain, possibly over (state, switched) pairs."""

    base: np.ndarray             # chain node -> game state
    flag: np.ndarray             # chain node -> switched bit
    kernel: sp.csr_matrix        # node-to-node transition probabilities
    p1: list = field(repr=False)  # Player 1 distribution per node
    node_of: dict = field(repr=False)
    trigger: frozenset = frozenset()

    @property
    def n(self) -> int:
        return len(self.base)

    def entry(self, s: int) -> int:
        """Chain node for a play that starts in game state ``s``."""
        return self.node_of[(s, s in self.trigger)]


def _state_kernel_row(g: Game, s: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("i,j,ijk->k", x, y, g.probs[s])


def induced_chain(g: Game, p1, p2: StationaryPolicy) -> _Chain:
    if isinstance(p1, SwitchingPolicy):
        return _switching_chain(g, p1, p2)
    rows, cols, vals = [], [], []
    for s in range(g.n_states):
        r = _state_kernel_row(g, s, p1[s], p2[s])
        keep = r > 0
        rows.extend([s] * int(keep.sum()))
        cols.extend(g.succ[s][keep].tolist())
        vals.extend(r[keep].tolist())
    n = g.n_states
    kernel = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return _Chain(np.arange(n), np.zeros(n, dtype=bool), kernel, [p1[s] for s in range(n)],
                  {(s, False): s for s in range(n)})


def _switching_chain(g: Game, p1: SwitchingPolicy, p2: StationaryPolicy) -> _Chain:
    n = g.n_states
    trig = p1.trigger_set
    # Node (s, f): f is the flag after visiting s, so trigger states only carry f = True.
    nodes = [(s, False) for s in range(n) if s not in trig] + [(s, True) for s in range(n)]
    node_of = {nd: i for i, nd in enumerate(nodes)}
    rows, cols, vals = [], [], []
    for i, (s, f) in enumerate(nodes):
        r = _state_kernel_row(g, s, p1.dist(f, s), p2[s])
        for q, p in zip(g.succ[s], r):
            if p > 0:
                q = int(q)
                rows.append(i)
                cols.append(node_of[(q, f or q in trig)])
                vals.append(p)
    kernel = sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(nodes)))
    return _Chain(np.array([s for s, _ in nodes]), np.array([f for _, f in nodes]), kernel,
                  [p1.dist(f, s) for s, f in nodes], node_of, frozenset(trig))


def _stopped(kernel: sp.csr_matrix, stop: np.ndarray) -> sp.csr_matrix:
    """Kernel with the rows of ``stop`` nodes zeroed (the play ends there)."""
    keep = sp.diags((~stop).astype(float))
    return (keep @ kernel).tocsr()


# -- occupancy and KL -----------------------------------------------------

@dataclass(frozen=True)
class OccupancyMeasure:
    """Expected visit counts per game state from the start state.

    Winning states end the play; their entry is the probability of reaching
    them. ``math.inf`` marks states visited infinitely often in expectation.
    """

    visits: np.ndarray
    start: int

    @property
    def infinite(self) -> frozenset[int]:
        return frozenset(int(s) for s in np.nonzero(np.isinf(self.visits))[0])

    @property
    def is_finite(self) -> bool:
        return not np.isinf(self.visits).any()


def _chain_visits(g: Game, chain: _Chain, start_node: int) -> np.ndarray:
    """Expected visits per chain node; ``inf`` on reachable closed classes outside the winning set."""
    winning = np.isin(chain.base, list(g.winning))
    K = _stopped(chain.kernel, winning)
    n = chain.n
    visits = np.zeros(n)
    reach = np.zeros(n, dtype=bool)
    reach[breadth_first_order(K, start_node, directed=True, return_predecessors=False)] = True

    n_comp, label = connected_components(K, directed=True, connection="strong")
    coo = K.tocoo()
    leaks = np.zeros(n_comp, dtype=bool)
    leaks[label[coo.row[label[coo.row] != label[coo.col]]]] = True
    closed = ~leaks[label] & ~winning
    infinite = reach & closed
    visits[infinite] = math.inf

    trans = np.nonzero(reach & ~closed & ~winning)[0]
    if len(trans):
        Q = K[trans][:, trans]
        A = (sp.identity(len(trans), format="csr") - Q).T.tocsc()
        rhs = (trans == start_node).astype(float)
        x = np.atleast_1d(spsolve(A, rhs))
        if not np.all(np.isfinite(x)) or np.max(np.abs(A @ x - rhs)) > 1e-9:
            raise SingularSystemError("occupancy system is singular", sorted(set(chain.base[trans].tolist())))
        visits[trans] = np.maximum(x, 0.0)
        # Winning nodes are entered at most once: their entry probability.
        into_win = K[trans][:, np.nonzero(winning & reach)[0]]
        visits[np.nonzero(winning & reach)[0]] = into_win.T @ visits[trans]
    if winning[start_node]:
        visits[start_node] = 1.0
    return visits


def _fold(chain: _Chain, values: np.ndarray, n_states: int) -> np.ndarray:
    out = np.zeros(n_states)
    np.add.at(out, chain.base, values)
    return out


def occupancy(g: Game, p1, p2: StationaryPolicy, start: int | None = None) -> OccupancyMeasure:
    """Expected total visits to every state under ``(p1, p2)`` from ``start`` (default: the initial state)."""
    s0 = g.initial if start is None else start
    chain = induced_chain(g, p1, p2)
    visits = _chain_visits(g, chain, chain.entry(s0))
    with np.errstate(invalid="ignore"):
        return OccupancyMeasure(_fold(chain, visits, g.n_states), s0)


def exact_kl(g: Game, p1, p2: StationaryPolicy, avg: StationaryPolicy, start: int | None = None) -> float:
    """KL divergence between the run distributions of ``(p1, p2)`` and ``(avg, p2)``.

    Equals the visit-weighted sum of per-state action KLs over non-winning
    states. Infinite visits count only where the per-state KL is positive.
    """
    s0 = g.initial if start is None else start
    chain = induced_chain(g, p1, p2)
    visits = _chain_visits(g, chain, chain.entry(s0))
    total = 0.0
    for i in np.nonzero(visits > 0)[0]:
        s = int(chain.base[i])
        if s in g.winning:
            continue
        k = kl_rows(chain.p1[i], avg[s])
        if k == 0.0:
            continue
        if math.isinf(k) or math.isinf(visits[i]):
            return math.inf
        total += visits[i] * k
    return total


# -- reachability -------------------------------------------------------------

def _backward_closure(K: sp.csr_matrix, seed: np.ndarray) -> np.ndarray:
    """Nodes with a path (under ``K``) into ``seed``."""
    out = seed.copy()
    while True:
        grown = out | ((K @ out.astype(float)) > 0)
        if (grown == out).all():
            return out
        out = grown


def _chain_reach(chain: _Chain, target_nodes: np.ndarray) -> np.ndarray:
    K = _stopped(chain.kernel, target_nodes)
    can = _backward_closure(K, target_nodes)
    # Zero and one are decided on the graph so they come out exact.
    sure = can & ~_backward_closure(K, ~can)
    x = sure.astype(float)
    solve = np.nonzero(can & ~sure)[0]
    if len(solve):
        Q = K[solve][:, solve]
        b = np.asarray(K[solve][:, np.nonzero(sure)[0]].sum(axis=1)).ravel()
        A = (sp.identity(len(solve), format="csr") - Q).tocsc()
        sol = np.atleast_1d(spsolve(A, b))
        if not np.all(np.isfinite(sol)) or np.max(np.abs(A @ sol - b)) > 1e-9:
            raise SingularSystemError("reachability system is singular", sorted(set(chain.base[solve].tolist())))
        x[solve] = np.clip(sol, 0.0, 1.0)
    return x


def _per_state(chain: _Chain, values: np.ndarray, n_states: int) -> np.ndarray:
    return np.array([values[chain.entry(s)] for s in range(n_states)])


def reach_probability(g: Game, p1, p2: StationaryPolicy, target) -> np.ndarray:
    """Probability of ever entering ``target`` from each state."""
    chain = induced_chain(g, p1, p2)
    tgt = np.isin(chain.base, list(target))
    return _per_state(chain, _chain_reach(chain, tgt), g.n_states)


def reach_probability_bounded(g: Game, p1, p2: StationaryPolicy, target, L: int) -> np.ndarray:
    """Probability of entering ``target`` within ``L`` steps from each state."""
    if L < 0:
        raise ValueError("horizon must be nonnegative")
    chain = induced_chain(g, p1, p2)
    tgt = np.isin(chain.base, list(target))
    K = chain.kernel
    x = tgt.astype(float)
    for _ in range(L):
        x = np.where(tgt, 1.0, K @ x)
    return _per_state(chain, x, g.n_states)


def contraction_coefficient(g: Game, p1, p2: StationaryPolicy, L: int, absorb, over=None) -> float:
    """``1 - min_s Pr(reach absorb within L | s)`` over the states ``over`` (default: all)."""
    reach = reach_probability_bounded(g, p1, p2, absorb, L)
    states = range(g.n_states) if over is None else sorted(over)
    return float(1.0 - min((reach[s] for s in states), default=1.0))


def contraction_threshold(beta: float, eps: float, c_max_value: float, L: int) -> float:
    """Largest contraction coefficient the learning guarantee tolerates."""
    if c_max_value <= 0 or L < 1:
        raise ValueError("need c_max > 0 and L >= 1")
    return beta - eps * (1.0 - beta) ** 2 / (c_max_value * L)


def contraction_ok(beta_prime: float, beta: float, eps: float, c_max_value: float, L: int) -> bool:
    return beta_prime <= contraction_threshold(beta, eps, c_max_value, L)


def c_max(g: Game, avg: StationaryPolicy, report: StructureReport) -> float:
    """Largest KL of any safe permissible action distribution against the average policy."""
    best = 0.0
    for s in sorted(report.active):
        allowed = report.allowed(s)
        if not allowed:
            raise ValueError(f"state {g.state_names[s]!r} has no safe permissible action")
        best = max(best, max(-math.log(avg[s][a]) for a in allowed))
    return best


# -- Bernoulli bounds ----------------------------------------------------------

def bernoulli_kl(p: float, q: float) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")

    def term(a, b):
        if a == 0.0:
            return 0.0
        if b == 0.0:
            return math.inf
        return a * math.log(a / b)

    return term(p, q) + term(1.0 - p, 1.0 - q)


def data_processing_floor(g: Game, p1, p2: StationaryPolicy, avg: StationaryPolicy, target) -> float:
    """Lower bound on :func:`exact_kl` from the reach indicator of ``target``."""
    p = reach_probability(g, p1, p2, target)[g.initial]
    q = reach_probability(g, avg, p2, target)[g.initial]
    return bernoulli_kl(min(max(p, 0.0), 1.0), min(max(q, 0.0), 1.0))


# -- Player 2 best response -----------------------------------------------------

def player2_best_response(g: Game, p1: StationaryPolicy, avg: StationaryPolicy, tol: float = 1e-10,
                          max_iter: int = 1_000_000) -> tuple[np.ndarray, StationaryPolicy]:
    """Largest KL Player 2 can extract against a fixed stationary ``p1``, per start state.

    Value iteration on ``v(s) = kl(s) + max_b sum_a p1(a) P(s,a,b,.) v``
    from zero; winning states cost nothing. States where Player 2 can keep a
    positive-cost play going forever are detected by divergence and get
    ``inf``.
    """
    n = g.n_states
    cost = np.array([0.0 if s in g.winning else kl_rows(p1[s], avg[s]) for s in range(n)])
    inf_cost = np.isinf(cost)
    v = np.where(inf_cost, math.inf, 0.0)
    mix = [np.einsum("i,ijk->jk", p1[s], g.probs[s]) for s in range(n)]
    live = [s for s in range(n) if s not in g.winning and not inf_cost[s]]
    choice = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        delta = 0.0
        for s in live:
            vq = v[g.succ[s]]
            fin = np.isfinite(vq)
            q = mix[s][:, fin] @ vq[fin]
            q = np.where((mix[s][:, ~fin] > 0).any(axis=1), math.inf, q)
            b = int(np.argmax(q))
            new = cost[s] + q[b]
            if math.isinf(new):
                delta = math.inf if not math.isinf(v[s]) else delta
            else:
                delta = max(delta, abs(new - v[s]))
            v[s], choice[s] = new, b
        if delta < tol:
            break
        if np.nanmax(np.where(np.isfinite(v), v, 0.0)) > 1e12:
            v[v > 1e12] = math.inf
    else:
        grow = v > 1e6
        v[grow] = math.inf
    rows = []
    for s in range(n):
        r = np.zeros(g.n2(s))
        r[choice[s]] = 1.0
        rows.append(r)
    return v, StationaryPolicy(2, tuple(rows))


# -- sample complexity ---------------------------------------------------------

@dataclass(frozen=True)
class ComplexityBudget:
    epsilon: float
    lam: float
    delta: float
    beta: float
    L: int
    c_max: float
    v_star: float
    S_count: int
    A_count: int
    w: float = math.nan
    m: int = 0
    n: int = 0

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sample_complexity(epsilon: float, lam: float, delta: float, beta: float, L: int, c_max: float,
                      v_star: float, S_count: int, A_count: int) -> ComplexityBudget:
    """Per-state sample threshold ``m`` and run count ``n`` for the learning guarantee.

    ``w = (v* + log 2 + eps) / lam``,
    ``m = ceil(4 C^2 L^4 (2 log(2) A + log(2 S / delta)) / ((1 - beta)^4 eps^2))``,
    ``n = ceil(exp(2w) log(4 / delta) / 2 + 2 S exp(w) m)`` using the integer ``m``.
    Both ceilings are taken in 60-digit decimal arithmetic so they stay exact
    for counts far beyond float precision.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if L < 1 or S_count < 1 or A_count < 1:
        raise ValueError("L, S and A must be at least 1")
    if c_max < 0 or v_star < 0:
        raise ValueError("c_max and v_star must be nonnegative")
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        D = decimal.Decimal
        eps, lm, dl, bt, cm, vs = (D(x) for x in (epsilon, lam, delta, beta, c_max, v_star))
        log2 = D(2).ln()
        w = (vs + log2 + eps) / lm
        m_real = (4 * cm ** 2 * D(L) ** 4 * (2 * log2 * A_count + (2 * D(S_count) / dl).ln())
                  / ((1 - bt) ** 4 * eps ** 2))
        m = int(m_real.to_integral_value(rounding=decimal.ROUND_CEILING))
        n_real = (2 * w).exp() * (4 / dl).ln() / 2 + 2 * S_count * w.exp() * m
        n = int(n_real.to_integral_value(rounding=decimal.ROUND_CEILING))
    return ComplexityBudget(epsilon, lam, delta, beta, L, c_max, v_star, S_count, A_count, float(w), m, n)
