"""Equilibrium synthesis by value iteration over the per-state KL saddle problem.

At a state with continuation costs ``d[a1, a2] = sum_q P(s, a1, a2, q) v(q)``
Player 1 solves ``min_x KL(x || avg) + x^T d y`` and Player 2 maximises over
``y``. For fixed ``y`` the inner minimum is the softmin
``-log sum_a avg(a) exp(-(d y)_a)``, attained by the Boltzmann-tilted
``x ~ avg * exp(-d y)``. The objective is convex in ``x`` and concave in
``y`` over compact simplices, so the backup reduces to minimising the convex
function ``g(y) = logsumexp(log avg - d y)`` over Player 2's simplex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .game import Game, StationaryPolicy, ValueFunction
from .structure import StructureReport


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = len(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _face_newton(y: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton step restricted to the face spanned by the support of ``y``.

    Solves the equality-constrained quadratic model by least squares, so a
    singular Hessian (flat directions) is tolerated.
    """
    free = np.nonzero(y > 0)[0]
    k = len(free)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = hess[np.ix_(free, free)]
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([-grad[free], [0.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    step = np.zeros_like(y)
    step[free] = sol[:k]
    return project_simplex(y + step)


def minimize_softmin_simplex(log_w: np.ndarray, d: np.ndarray, y0: np.ndarray | None = None,
                             tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, float, int]:
    """Minimise ``logsumexp(log_w - d @ y)`` over the simplex.

    Each iteration first tries a Newton step on the current support face and
    keeps it if it lowers both the objective and the stationarity measure;
    otherwise it takes a projected-gradient step with Armijo backtracking.
    Stops when the gradient-mapping norm drops below ``tol``. Returns
    ``(y, g(y), iterations)``.
    """
    n2 = d.shape[1]
    if n2 == 1:
        y = np.ones(1)
        return y, float(logsumexp(log_w - d[:, 0])), 0
    y = np.full(n2, 1.0 / n2) if y0 is None else np.asarray(y0, dtype=float)

    def evaluate(y):
        z = log_w - d @ y
        p = softmax(z)
        grad = -(p @ d)
        return float(logsumexp(z)), grad, float(np.linalg.norm(y - project_simplex(y - grad))), p

    f, grad, gm, p = evaluate(y)
    step = 1.0
    slack = 1e-14 * (1.0 + abs(f))
    for it in range(1, max_iter + 1):
        # Gradient mapping at unit step: the stationarity measure.
        if gm < tol:
            return y, f, it
        hess = d.T @ (np.diag(p) - np.outer(p, p)) @ d
        cand = _face_newton(y, grad, hess)
        fc, gc, gmc, pc = evaluate(cand)
        if fc <= f + slack and gmc < gm:
            y, f, grad, gm, p = cand, fc, gc, gmc, pc
            continue
        while True:
            cand = project_simplex(y - step * grad)
            fc, gc, gmc, pc = evaluate(cand)
            diff = cand - y
            if fc <= f + grad @ diff + (diff @ diff) / (2.0 * step) + slack:
                break
            step *= 0.5
            if step < 1e-20:
                return y, f, it
        y, f, grad, gm, p = cand, fc, gc, gmc, pc
        step *= 2.0
    raise NonConvergenceError("inner Player 2 minimisation did not converge", gm)


@dataclass(frozen=True)
class Backup:
    value: float
    policy1: np.ndarray
    policy2: np.ndarray
    iterations: int = 0


def continuation_costs(g: Game, s: int, v: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``d[i, a2] = sum_q P(s, rows[i], a2, q) v(q)`` with ``0 * inf = 0``."""
    vq = v[g.succ[s]]
    block = g.probs[s][rows]
    finite = np.isfinite(vq)
    d = block[:, :, finite] @ vq[finite]
    if not finite.all():
        hits_inf = (block[:, :, ~finite] > 0).any(axis=2)
        d = np.where(hits_inf, math.inf, d)
    return d


def bellman_backup(s: int, v, g: Game, avg: StationaryPolicy, report: StructureReport,
                   y0: np.ndarray | None = None, tol: float = 1e-10, max_iter: int = 10_000) -> Backup:
    """Solve the saddle problem at ``s`` against cost-to-go ``v``.

    Player 1 is restricted to safe permissible actions; on those every
    continuation cost is finite whenever ``v`` is finite on S+.
    """
    v = v.values if isinstance(v, ValueFunction) else np.asarray(v, dtype=float)
    rows = np.array(sorted(report.allowed(s)), dtype=np.int64)
    if len(rows) == 0:
        raise ValueError(f"state {g.state_names[s]!r} has no safe permissible action")
    d = continuation_costs(g, s, v, rows)
    # Any action still facing an infinite continuation is dropped: Player 2
    # can put arbitrarily small mass on the offending reply.
    keep = np.isfinite(d).all(axis=1)
    if not keep.any():
        raise ValueError(f"state {g.state_names[s]!r}: every action has infinite continuation cost")
    rows, d = rows[keep], d[keep]
    log_w = np.log(avg[s][rows])
    y, gval, its = minimize_softmin_simplex(log_w, d, y0, tol=tol, max_iter=max_iter)
    if not math.isfinite(gval):
        raise ValueError(f"state {g.state_names[s]!r}: softmin objective vanished")
    pi1 = np.zeros(g.n1(s))
    pi1[rows] = softmax(log_w - d @ y)
    return Backup(value=-gval, policy1=pi1, policy2=y, iterations=its)


@dataclass(frozen=True)
class SaddleResult:
    value: ValueFunction
    policy1: StationaryPolicy
    policy2: StationaryPolicy
    iterations: int
    residual: float


def initial_values(g: Game, report: StructureReport) -> np.ndarray:
    v = np.full(g.n_states, math.inf)
    v[list(report.potentially_winning)] = 0.0
    return v


def solve_equilibrium(g: Game, avg: StationaryPolicy, report: StructureReport, tol: float = 1e-9,
                      max_iter: int = 100_000, mode: str = "gauss-seidel",
                      inner_tol: float = 1e-10, inner_max_iter: int = 10_000,
                      history: list | None = None) -> SaddleResult:
    """Value iteration from ``v = 0`` on S+ until the sup-norm change is below ``tol``.

    ``mode`` is ``"gauss-seidel"`` (in-place sweeps in state order) or
    ``"jacobi"`` (every backup of a sweep reads the previous iterate). When
    ``history`` is a list, the iterate after each sweep is appended to it.
    """
    if g.initial not in report.potentially_winning:
        raise ValueError("initial state is outside S+")
    if mode not in ("gauss-seidel", "jacobi"):
        raise ValueError(f"unknown mode {mode!r}")
    v = initial_values(g, report)
    active = sorted(report.active)
    pi1 = {s: np.asarray(avg[s]) for s in range(g.n_states)}
    pi2 = {s: np.full(g.n2(s), 1.0 / g.n2(s)) for s in range(g.n_states)}
    residual = math.inf
    for sweep in range(1, max_iter + 1):
        src = v if mode == "gauss-seidel" else v.copy()
        residual = 0.0
        for s in active:
            b = bellman_backup(s, src, g, avg, report, y0=pi2[s], tol=inner_tol, max_iter=inner_max_iter)
            residual = max(residual, abs(b.value - v[s]))
            v[s] = b.value
            pi1[s], pi2[s] = b.policy1, b.policy2
        if history is not None:
            history.append(v.copy())
        if residual < tol:
            return SaddleResult(
                value=ValueFunction(v),
                policy1=StationaryPolicy(1, tuple(pi1[s] for s in range(g.n_states))),
                policy2=StationaryPolicy(2, tuple(pi2[s] for s in range(g.n_states))),
                iterations=sweep,
                residual=residual,
            )
    raise NonConvergenceError(f"value iteration did not converge in {max_iter} sweeps", residual)


def bellman_residual(g: Game, avg: StationaryPolicy, report: StructureReport, v) -> float:
    """Sup-norm change of ``v`` under one Jacobi sweep of backups."""
    v = v.values if isinstance(v, ValueFunction) else np.asarray(v, dtype=float)
    return max((abs(bellman_backup(s, v, g, avg, report).value - v[s]) for s in report.active), default=0.0)
