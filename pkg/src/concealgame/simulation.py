"""Monte Carlo sampling of game runs.

All runs advance in lockstep as numpy arrays. Randomness comes from a
counter-based hash of ``(seed, run, step, slot)``, so every draw is fixed by
its coordinates alone: results are bit-identical for any chunking or thread
count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game import Game, GameRun, GameSpecError, StationaryPolicy, SwitchingPolicy

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SLOT_A1, _SLOT_A2, _SLOT_NEXT = 0, 1, 2
CHUNK = 4096


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, run: np.ndarray, step: int, slot: int) -> np.ndarray:
    """Uniform draws in [0, 1) keyed by (seed, run index, step, slot)."""
    run = np.asarray(run, dtype=np.uint64)
    key = np.uint64(seed % 2**64)
    with np.errstate(over="ignore"):
        z = _mix(key + _GOLDEN * (run + np.uint64(1)))
        z = _mix(z ^ (_GOLDEN * np.uint64(4 * step + slot + 1)))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def thread_count() -> int:
    """Worker threads for sampling, from ``CONCEALGAME_THREADS`` (default 1)."""
    raw = os.environ.get("CONCEALGAME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimConfig:
    n_runs: int
    seed: int = 0
    horizon_cap: int = 10_000

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.horizon_cap < 1:
            raise ValueError("horizon_cap must be at least 1")


class RunBatch(Sequence[GameRun]):
    """Runs stored as flat step arrays in run-then-step order."""

    def __init__(self, states, actions1, actions2, offsets, terminal, truncated):
        self.states = np.asarray(states, dtype=np.int64)
        self.actions1 = np.asarray(actions1, dtype=np.int64)
        self.actions2 = np.asarray(actions2, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.terminal = np.asarray(terminal, dtype=np.int64)
        self.truncated = np.asarray(truncated, dtype=bool)

    def __len__(self) -> int:
        return len(self.terminal)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return GameRun(self.states[lo:hi], self.actions1[lo:hi], self.actions2[lo:hi],
                       int(self.terminal[i]), bool(self.truncated[i]))

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def run_index(self) -> np.ndarray:
        """Run index of every flat step."""
        return np.repeat(np.arange(len(self)), self.lengths)

    @property
    def truncation_rate(self) -> float:
        return float(self.truncated.mean()) if len(self) else 0.0

    @classmethod
    def from_runs(cls, runs: Sequence[GameRun]) -> "RunBatch":
        if isinstance(runs, RunBatch):
            return runs
        lengths = [len(r) for r in runs]
        cat = lambda name: np.concatenate([getattr(r, name) for r in runs]) if runs else np.zeros(0, np.int64)
        return cls(cat("states"), cat("actions1"), cat("actions2"), np.concatenate([[0], np.cumsum(lengths)]),
                   [r.terminal_state for r in runs], [r.truncated for r in runs])

    @classmethod
    def concat(cls, parts: Sequence["RunBatch"]) -> "RunBatch":
        offsets, base = [np.zeros(1, np.int64)], 0
        for p in parts:
            offsets.append(p.offsets[1:] + base)
            base += p.offsets[-1]
        return cls(np.concatenate([p.states for p in parts]), np.concatenate([p.actions1 for p in parts]),
                   np.concatenate([p.actions2 for p in parts]), np.concatenate(offsets),
                   np.concatenate([p.terminal for p in parts]), np.concatenate([p.truncated for p in parts]))

    def to_jsonl(self, game: Game) -> str:
        """One JSON object per run: ``steps`` as ``[state, action1, action2]`` names."""
        names, a1n, a2n = game.state_names, game.actions1, game.actions2
        lines = []
        for i in range(len(self)):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            steps = [[names[s], a1n[s][a], a2n[s][b]]
                     for s, a, b in zip(self.states[lo:hi].tolist(), self.actions1[lo:hi].tolist(),
                                        self.actions2[lo:hi].tolist())]
            lines.append(json.dumps({"run": i, "steps": steps, "terminal": names[int(self.terminal[i])],
                                     "truncated": bool(self.truncated[i])}, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, game: Game) -> "RunBatch":
        runs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            loc = f"line {lineno}"
            try:
                doc = json.loads(line)
                steps = doc["steps"]
                states = [game.state_index(s) for s, _, _ in steps]
                a1 = [game.actions1[s].index(a) for s, (_, a, _) in zip(states, steps)]
                a2 = [game.actions2[s].index(b) for s, (_, _, b) in zip(states, steps)]
                terminal = game.state_index(doc["terminal"])
                truncated = bool(doc.get("truncated", False))
            except (ValueError, KeyError, TypeError) as exc:
                raise GameSpecError(f"bad run record: {exc}", loc) from None
            runs.append(GameRun(states, a1, a2, terminal, truncated))
        return cls.from_runs(runs)


# -- sampling ----------------------------------------------------------------

def _cdf_table(rows: Sequence[np.ndarray], width: int) -> np.ndarray:
    """Padded CDFs with every entry from the last positive action on set to 1."""
    out = np.ones((len(rows), width))
    for s, r in enumerate(rows):
        r = np.asarray(r, dtype=float)
        pos = np.nonzero(r > 0)[0]
        last = pos[-1] if len(pos) else 0
        c = np.cumsum(r)
        out[s, :last] = c[:last]
    return out


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (cdf_rows <= u[:, None]).sum(axis=1)


class _Sampler:
    def __init__(self, g: Game, p1, p2: StationaryPolicy):
        n = g.n_states
        A1 = max(g.n1(s) for s in range(n))
        A2 = max(g.n2(s) for s in range(n))
        K = max(len(g.succ[s]) for s in range(n))
        if isinstance(p1, SwitchingPolicy):
            self.cdf1 = np.stack([_cdf_table(p1.primary.dist, A1), _cdf_table(p1.fallback.dist, A1)])
            self.trigger = np.isin(np.arange(n), list(p1.trigger_set))
        else:
            self.cdf1 = _cdf_table(p1.dist, A1)[None]
            self.trigger = np.zeros(n, dtype=bool)
        self.cdf2 = _cdf_table(p2.dist, A2)
        self.succ = np.zeros((n, A1, A2, K), dtype=np.int64)
        self.cdfq = np.ones((n, A1, A2, K))
        for s in range(n):
            k = len(g.succ[s])
            self.succ[s, :, :, :k] = g.succ[s]
            self.succ[s, :, :, k:] = g.succ[s][-1]
            for a in range(g.n1(s)):
                for b in range(g.n2(s)):
                    self.cdfq[s, a, b] = _cdf_table([g.probs[s][a, b]], K)[0]
        self.stop = np.array([g.is_absorbing(s) or s in g.winning for s in range(n)])
        self.initial = g.initial

    def run_chunk(self, seed: int, lo: int, hi: int, horizon: int) -> RunBatch:
        ids = np.arange(lo, hi, dtype=np.int64)
        state = np.full(len(ids), self.initial, dtype=np.int64)
        flag = self.trigger[state].astype(np.int64)
        active = ~self.stop[state]
        rec = []
        t = 0
        while active.any() and t < horizon:
            idx = np.nonzero(active)[0]
            s, f, rid = state[idx], flag[idx], ids[idx]
            a1 = _draw(self.cdf1[f, s], counter_uniform(seed, rid, t, _SLOT_A1))
            a2 = _draw(self.cdf2[s], counter_uniform(seed, rid, t, _SLOT_A2))
            k = _draw(self.cdfq[s, a1, a2], counter_uniform(seed, rid, t, _SLOT_NEXT))
            nxt = self.succ[s, a1, a2, k]
            rec.append((idx, s, a1, a2))
            state[idx] = nxt
            flag[idx] = f | self.trigger[nxt]
            active[idx] = ~self.stop[nxt]
            t += 1
        truncated = active.copy()
        if rec:
            run = np.concatenate([r[0] for r in rec])
            step = np.concatenate([np.full(len(r[0]), i) for i, r in enumerate(rec)])
            order = np.lexsort((step, run))
            cols = [np.concatenate([r[j] for r in rec])[order] for j in (1, 2, 3)]
            lengths = np.bincount(run, minlength=len(ids))
        else:
            cols = [np.zeros(0, np.int64)] * 3
            lengths = np.zeros(len(ids), np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        return RunBatch(cols[0], cols[1], cols[2], offsets, state, truncated)


def sample_runs(g: Game, p1, p2: StationaryPolicy, cfg: SimConfig, threads: int | None = None) -> RunBatch:
    """Sample ``cfg.n_runs`` runs from the initial state.

    Runs stop on entering an absorbing or winning state, or after
    ``cfg.horizon_cap`` steps (marked truncated).
    """
    sampler = _Sampler(g, p1, p2)
    bounds = [(lo, min(lo + CHUNK, cfg.n_runs)) for lo in range(0, cfg.n_runs, CHUNK)]
    threads = thread_count() if threads is None else max(1, threads)
    work = lambda b: sampler.run_chunk(cfg.seed, b[0], b[1], cfg.horizon_cap)
    if threads == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    return RunBatch.concat(parts)


# -- estimators ----------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    truncated: int = 0


def estimate_reach(runs: Sequence[GameRun], target) -> Estimate:
    """Fraction of runs that visit ``target``; truncated runs that never did count as misses."""
    batch = RunBatch.from_runs(runs)
    if len(batch) == 0:
        raise ValueError("no runs")
    tgt = np.isin(np.arange(max(batch.states.max(initial=0), batch.terminal.max()) + 1), list(target))
    hit = tgt[batch.terminal].copy()
    np.logical_or.at(hit, batch.run_index, tgt[batch.states])
    p = float(hit.mean())
    n = len(batch)
    return Estimate(p, math.sqrt(p * (1 - p) / n), n, int(batch.truncated.sum()))


def step_probabilities(batch: RunBatch, policy) -> np.ndarray:
    """Probability each recorded Player 1 action had under ``policy``."""
    if isinstance(policy, SwitchingPolicy):
        trig = np.isin(batch.states, list(policy.trigger_set)).astype(np.int64)
        csum = np.cumsum(trig)
        # Trigger visits within the run up to and including each step.
        before = np.concatenate([[0], csum])[batch.offsets[:-1]]
        flag = (csum - np.repeat(before, batch.lengths)) > 0
        prim = _lookup(policy.primary, batch.states, batch.actions1)
        fall = _lookup(policy.fallback, batch.states, batch.actions1)
        return np.where(flag, fall, prim)
    return _lookup(policy, batch.states, batch.actions1)


def _lookup(policy: StationaryPolicy, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    width = max(len(d) for d in policy.dist)
    table = np.zeros((len(policy), width))
    for s, d in enumerate(policy.dist):
        table[s, :len(d)] = d
    return table[states, actions]


def run_llrs(runs: Sequence[GameRun], hyp, base) -> np.ndarray:
    """Per-run log-likelihood ratio of ``hyp`` against ``base`` (vectorised)."""
    batch = RunBatch.from_runs(runs)
    h = step_probabilities(batch, hyp)
    b = step_probabilities(batch, base)
    if np.any((h == 0) & (b == 0)):
        raise ValueError("a run takes an action outside both supports")
    with np.errstate(divide="ignore"):
        term = np.log(h) - np.log(b)
    out = np.zeros(len(batch))
    np.add.at(out, batch.run_index, term)
    # Any step impossible under base makes the ratio +inf even if hyp also fails later.
    pos_inf = np.zeros(len(batch), dtype=bool)
    np.logical_or.at(pos_inf, batch.run_index, b == 0)
    out[pos_inf] = math.inf
    return out


def estimate_kl(runs: Sequence[GameRun], hyp, base) -> Estimate:
    """Mean log-likelihood ratio of runs drawn under ``hyp``, an unbiased estimate of the run KL."""
    llr = run_llrs(runs, hyp, base)
    if len(llr) == 0:
        raise ValueError("no runs")
    batch = RunBatch.from_runs(runs)
    mean = float(llr.mean())
    se = float(llr.std(ddof=1) / math.sqrt(len(llr))) if len(llr) > 1 and math.isfinite(mean) else math.nan
    return Estimate(mean, se, len(llr), int(batch.truncated.sum()))
