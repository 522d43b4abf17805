"""Likelihood-ratio detection of hostile players and ROC analysis."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .simulation import RunBatch, run_llrs


def score_agents(pos_runs, neg_runs, hyp, base, runs_per_agent: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent sums of run log-likelihood ratios of ``hyp`` against ``base``.

    Each side is either a list of per-agent run lists, or a flat run sequence
    whose consecutive blocks of ``runs_per_agent`` runs belong to one agent.
    """
    return _score(pos_runs, hyp, base, runs_per_agent), _score(neg_runs, hyp, base, runs_per_agent)


def _score(runs, hyp, base, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("runs_per_agent must be at least 1")
    if len(runs) and isinstance(runs[0], (list, tuple)):
        sizes = {len(grp) for grp in runs}
        if sizes != {k}:
            raise ValueError(f"every agent needs exactly {k} runs, got group sizes {sorted(sizes)}")
        flat = RunBatch.from_runs([r for grp in runs for r in grp])
    else:
        if len(runs) % k:
            raise ValueError(f"{len(runs)} runs do not split into agents of {k} runs")
        flat = RunBatch.from_runs(runs)
    llr = run_llrs(flat, hyp, base).reshape(-1, k)
    with np.errstate(invalid="ignore"):
        return llr.sum(axis=1)


@dataclass(frozen=True)
class RocCurve:
    """ROC points for the rule "flag when score >= threshold".

    ``thresholds[0]`` is ``None``: the leading ``(0, 0)`` point flags nobody.
    """

    points: list[tuple[float, float]]
    thresholds: list[float | None]
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, (f, p) in zip(self.thresholds, self.points):
            w.writerow(["none" if t is None else repr(float(t)), repr(f), repr(p)])
        return buf.getvalue()


def roc(pos_scores, neg_scores) -> RocCurve:
    """ROC curve over every distinct score; ties are flagged together, AUC by the trapezoid rule."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both score sets must be nonempty")
    if np.isnan(pos).any() or np.isnan(neg).any():
        raise ValueError("scores must not be NaN")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tp = len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = np.concatenate([[0.0], tp / len(pos)])
    fpr = np.concatenate([[0.0], fp / len(neg)])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(list(zip(fpr.tolist(), tpr.tolist())), [None] + thresholds.tolist(), auc)


def auc_pairwise(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: fraction of (hostile, average) pairs ranked correctly, ties counting one half."""
    pos = np.asarray(pos_scores, dtype=float)[:, None]
    neg = np.asarray(neg_scores, dtype=float)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def delong_se(pos_scores, neg_scores) -> float:
    """DeLong standard error of the empirical AUC."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    m, n = len(pos), len(neg)
    if m < 2 or n < 2:
        return math.nan
    # Midranks; infinities tie among themselves.
    all_ranks = rankdata(np.concatenate([pos, neg]))
    v10 = (all_ranks[:m] - rankdata(pos)) / n
    v01 = 1.0 - (all_ranks[m:] - rankdata(neg)) / m
    return float(math.sqrt(np.var(v10, ddof=1) / m + np.var(v01, ddof=1) / n))
