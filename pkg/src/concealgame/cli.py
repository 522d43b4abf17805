"""Command-line front end.

Every command prints one JSON object ``{command, inputs_digest, outputs,
summary}`` on stdout and writes its artifacts into ``--out-dir``.

Exit codes: 0 success, 1 unreadable or malformed input, 2 infeasible
initial state, 3 solver did not converge.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import scenarios
from .detection import delong_se, roc, score_agents
from .equilibrium import NonConvergenceError, solve_equilibrium
from .evaluation import (c_max, contraction_coefficient, contraction_threshold, exact_kl, reach_probability,
                         sample_complexity)
from .game import GameSpecError, StationaryPolicy, dump_policy, load_game, load_policy, save_game
from .learning import algorithm1
from .simulation import RunBatch, SimConfig, sample_runs
from .structure import InfeasibleError, analyze

EXIT_PARSE, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE = 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class CommandResult:
    command: str
    inputs_digest: str
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "inputs_digest": self.inputs_digest,
                           "outputs": self.outputs, "summary": self.summary}, indent=1)


def _finite(x: float):
    return float(x) if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _digest(args: argparse.Namespace, files: list[str]) -> str:
    h = hashlib.sha256()
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    h.update(json.dumps(flags, sort_keys=True, default=str).encode())
    for f in files:
        h.update(b"\0")
        h.update(Path(f).read_bytes())
    return h.hexdigest()


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise GameSpecError(f"cannot read file: {exc.strerror}", path) from None


class _Context:
    """Loaded game plus lazily solved equilibrium, shared by policy keywords."""

    def __init__(self, path: str):
        self.game, avg = load_game(_read(path))
        if avg is None:
            raise GameSpecError("game file has no average_policy", path)
        self.avg = avg
        self._report = None
        self._eq = None
        self.files = [path]

    @property
    def report(self):
        if self._report is None:
            self._report = analyze(self.game, self.avg)
        return self._report

    def equilibrium(self, tol=1e-9, max_iter=100_000):
        if self._eq is None:
            self._eq = solve_equilibrium(self.game, self.avg, self.report, tol=tol, max_iter=max_iter)
        return self._eq

    def policy(self, name: str, player: int) -> StationaryPolicy:
        if name == "avg":
            if player != 1:
                raise UsageError("'avg' names a Player 1 policy")
            return self.avg
        if name == "uniform":
            return StationaryPolicy.uniform(self.game, player)
        if name == "eq":
            eq = self.equilibrium()
            return eq.policy1 if player == 1 else eq.policy2
        self.files.append(name)
        pol = load_policy(_read(name), self.game)
        if pol.player != player:
            raise UsageError(f"{name} holds a Player {pol.player} policy, Player {player} expected")
        return pol


def _write(out_dir: str, name: str, text: str, result: CommandResult) -> None:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    result.outputs.append(str(path))


def _values_json(ctx: _Context, values) -> dict:
    return {ctx.game.state_names[s]: _finite(v) for s, v in enumerate(values)}


# -- commands -------------------------------------------------------------------

def cmd_analyze(args) -> CommandResult:
    ctx = _Context(args.game)
    res = CommandResult("analyze", _digest(args, ctx.files))
    report = analyze(ctx.game, ctx.avg, require_initial=False)
    doc = report.to_json(ctx.game)
    _write(args.out_dir, "structure.json", json.dumps(doc, indent=1), res)
    res.summary = {"n_states": ctx.game.n_states, "n_trap": len(report.trap_states),
                   "n_potentially_winning": len(report.potentially_winning),
                   "initial_potentially_winning": ctx.game.initial in report.potentially_winning}
    if ctx.game.initial not in report.potentially_winning:
        print(res.to_json())
        raise InfeasibleError(f"initial state {ctx.game.state_names[ctx.game.initial]!r} is not potentially winning")
    return res


def cmd_solve(args) -> CommandResult:
    ctx = _Context(args.game)
    res = CommandResult("solve", _digest(args, ctx.files))
    eq = ctx.equilibrium(tol=args.tol, max_iter=args.max_iter)
    g = ctx.game
    doc = {"value": _values_json(ctx, eq.value.values), "policy1": eq.policy1.to_names(g),
           "policy2": eq.policy2.to_names(g), "iterations": eq.iterations, "residual": eq.residual}
    _write(args.out_dir, "solution.json", json.dumps(doc, indent=1), res)
    _write(args.out_dir, "policy1.json", dump_policy(eq.policy1, g), res)
    _write(args.out_dir, "policy2.json", dump_policy(eq.policy2, g), res)
    rows = ["player,state,action,probability"]
    for player, pol, acts in ((1, eq.policy1, g.actions1), (2, eq.policy2, g.actions2)):
        for s in range(g.n_states):
            for a, p in enumerate(pol[s]):
                rows.append(f"{player},{json.dumps(g.state_names[s])},{json.dumps(acts[s][a])},{float(p)!r}")
    _write(args.out_dir, "policies.csv", "\n".join(rows) + "\n", res)
    res.summary = {"value_initial": _finite(eq.value[g.initial]), "converged": True,
                   "iterations": eq.iterations, "residual": eq.residual}
    return res


def cmd_simulate(args) -> CommandResult:
    ctx = _Context(args.game)
    p1, p2 = ctx.policy(args.p1, 1), ctx.policy(args.p2, 2)
    res = CommandResult("simulate", _digest(args, ctx.files))
    runs = sample_runs(ctx.game, p1, p2, SimConfig(args.n, args.seed, args.horizon))
    _write(args.out_dir, "runs.jsonl", runs.to_jsonl(ctx.game), res)
    won = sum(1 for t in runs.terminal.tolist() if t in ctx.game.winning)
    res.summary = {"n_runs": len(runs), "mean_length": float(runs.lengths.mean()),
                   "truncated": int(runs.truncated.sum()), "won": won}
    return res


def cmd_learn(args) -> CommandResult:
    ctx = _Context(args.game)
    runs = RunBatch.from_jsonl(_read(args.runs), ctx.game)
    ctx.files.append(args.runs)
    true_p2 = ctx.policy(args.p2_true, 2) if args.p2_true else None
    res = CommandResult("learn", _digest(args, ctx.files))
    out = algorithm1(ctx.game, ctx.avg, runs, args.m, ctx.report, tol=args.tol)
    g = ctx.game
    doc = out.to_json(g)
    doc["trigger_states"] = doc["unknown_states"]
    _write(args.out_dir, "learned.json", json.dumps(doc, indent=1), res)
    _write(args.out_dir, "learned_policy1.json", dump_policy(out.policy.primary, g), res)
    res.summary = {"m": args.m, "n_runs": len(runs), "n_known": len(out.known_states),
                   "n_unknown": len(out.unknown_states),
                   "modified_value_initial": _finite(out.modified_game_value[g.initial])}
    if true_p2 is not None:
        res.summary["exact_kl"] = _finite(exact_kl(g, out.policy, true_p2, ctx.avg))
        res.summary["win_probability"] = float(reach_probability(g, out.policy, true_p2, g.winning)[g.initial])
    return res


def cmd_roc(args) -> CommandResult:
    ctx = _Context(args.game)
    hyp, p2 = ctx.policy(args.hyp, 1), ctx.policy(args.p2, 2)
    res = CommandResult("roc", _digest(args, ctx.files))
    n = args.agents * args.runs_per_agent
    pos = sample_runs(ctx.game, hyp, p2, SimConfig(n, args.seed, args.horizon))
    neg = sample_runs(ctx.game, ctx.avg, p2, SimConfig(n, args.seed + 1, args.horizon))
    ps, ns = score_agents(pos, neg, hyp, ctx.avg, args.runs_per_agent)
    curve = roc(ps, ns)
    _write(args.out_dir, "roc.csv", curve.to_csv(), res)
    res.summary = {"auc": curve.auc, "auc_se": delong_se(ps, ns), "agents": args.agents,
                   "runs_per_agent": args.runs_per_agent}
    return res


def cmd_complexity(args) -> CommandResult:
    res = CommandResult("complexity", _digest(args, []))
    b = sample_complexity(args.eps, args.lam, args.delta, args.beta, args.L, args.c_max, args.v_star,
                          args.S, args.A)
    _write(args.out_dir, "complexity.json", json.dumps(b.to_json(), indent=1), res)
    res.summary = {"w": b.w, "m": b.m, "n": b.n}
    return res


def cmd_check_contraction(args) -> CommandResult:
    ctx = _Context(args.game)
    p1, p2 = ctx.policy(args.p1, 1), ctx.policy(args.p2, 2)
    res = CommandResult("check-contraction", _digest(args, ctx.files))
    g, report = ctx.game, ctx.report
    absorb = set(report.winning) | {g.state_index(a) for a in (args.absorb or [])}
    beta_p = contraction_coefficient(g, p1, p2, args.L, absorb, over=report.potentially_winning)
    cm = c_max(g, ctx.avg, report)
    threshold = contraction_threshold(args.beta, args.eps, cm, args.L)
    doc = {"beta_prime": beta_p, "c_max": cm, "threshold": threshold, "holds": beta_p <= threshold,
           "L": args.L, "beta": args.beta, "eps": args.eps, "absorb": [g.state_names[s] for s in sorted(absorb)]}
    _write(args.out_dir, "contraction.json", json.dumps(doc, indent=1), res)
    res.summary = {"beta_prime": beta_p, "threshold": threshold, "holds": beta_p <= threshold}
    return res


def cmd_export_scenario(args) -> CommandResult:
    res = CommandResult("export-scenario", _digest(args, []))
    if args.name == "cyber":
        g, avg = scenarios.build_cyber_game()
        _write(args.out_dir, "cyber.json", save_game(g, avg), res)
        _write(args.out_dir, "cyber_greedy.json", dump_policy(scenarios.cyber_greedy_policy(g), g), res)
    elif args.name == "pursuit-evasion":
        g, avg = scenarios.build_pursuit_evasion()
        _write(args.out_dir, "pursuit_evasion.json", save_game(g, avg), res)
    else:
        g, avg, pursuer = scenarios.build_learning_scenario()
        _write(args.out_dir, "pursuit_evasion_stop.json", save_game(g, avg), res)
        _write(args.out_dir, "stopping_pursuer.json", dump_policy(pursuer, g), res)
    res.summary = {"n_states": g.n_states, "initial": g.state_names[g.initial]}
    return res


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_PARSE)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="concealgame", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    policy_help = "policy file, or one of: avg, uniform, eq"

    def add(name, func, help, game=True):
        sp = sub.add_parser(name, help=help, description=help, formatter_class=fmt)
        if game:
            sp.add_argument("game", help="game file (JSON)")
        sp.add_argument("--out-dir", default=".", help="directory for output files")
        sp.set_defaults(func=func)
        return sp

    add("analyze", cmd_analyze, "trap states, potentially winning states and safe actions")
    sp = add("solve", cmd_solve, "equilibrium value and policies")
    sp.add_argument("--tol", type=float, default=1e-9, help="sup-norm stopping tolerance")
    sp.add_argument("--max-iter", type=int, default=100_000, help="maximum value-iteration sweeps")

    sp = add("simulate", cmd_simulate, "sample runs and write them as JSON lines")
    sp.add_argument("--p1", default="avg", help=f"Player 1 {policy_help}")
    sp.add_argument("--p2", default="uniform", help=f"Player 2 {policy_help}")
    sp.add_argument("--n", type=int, default=1000, help="number of runs")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--horizon", type=int, default=10_000, help="steps before a run is truncated")

    sp = add("learn", cmd_learn, "learn Player 2 from average-player runs and synthesise a policy")
    sp.add_argument("runs", help="run log (JSON lines, as written by simulate)")
    sp.add_argument("--m", type=int, required=True, help="samples needed for a state to be known")
    sp.add_argument("--p2-true", default=None, help=f"true Player 2 {policy_help}, to evaluate the result")
    sp.add_argument("--tol", type=float, default=1e-9, help="value-iteration tolerance")

    sp = add("roc", cmd_roc, "ROC curve of the likelihood-ratio detector")
    sp.add_argument("--hyp", default="eq", help=f"hostile Player 1 {policy_help}")
    sp.add_argument("--p2", default="eq", help=f"Player 2 {policy_help}")
    sp.add_argument("--agents", type=int, default=200, help="agents per class")
    sp.add_argument("--runs-per-agent", type=int, default=1, help="runs observed per agent")
    sp.add_argument("--seed", type=int, default=0, help="random seed (average agents use seed + 1)")
    sp.add_argument("--horizon", type=int, default=10_000, help="steps before a run is truncated")

    sp = add("complexity", cmd_complexity, "sample-size thresholds (w, m, n) of the learning guarantee", game=False)
    sp.add_argument("--eps", type=float, required=True, help="accuracy epsilon")
    sp.add_argument("--lam", "--lambda", dest="lam", type=float, required=True, help="lambda")
    sp.add_argument("--delta", type=float, required=True, help="failure probability")
    sp.add_argument("--beta", type=float, required=True, help="contraction level beta")
    sp.add_argument("--L", type=int, required=True, help="contraction horizon")
    sp.add_argument("--c-max", type=float, required=True, help="largest safe-action KL")
    sp.add_argument("--v-star", type=float, required=True, help="optimal value")
    sp.add_argument("--S", type=int, required=True, help="number of states")
    sp.add_argument("--A", type=int, required=True, help="number of Player 2 actions")

    sp = add("check-contraction", cmd_check_contraction, "contraction coefficient and its threshold check")
    sp.add_argument("--p1", default="eq", help=f"Player 1 {policy_help}")
    sp.add_argument("--p2", default="eq", help=f"Player 2 {policy_help}")
    sp.add_argument("--L", type=int, required=True, help="horizon")
    sp.add_argument("--beta", type=float, required=True, help="target contraction level")
    sp.add_argument("--eps", type=float, required=True, help="accuracy epsilon")
    sp.add_argument("--absorb", nargs="*", help="extra absorbing states besides the winning set")

    sp = add("export-scenario", cmd_export_scenario, "write a built-in scenario as a game file", game=False)
    sp.add_argument("name", choices=["cyber", "pursuit-evasion", "learning"])
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GameSpecError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    print(result.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
