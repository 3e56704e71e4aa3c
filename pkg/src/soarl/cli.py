"""Command-line entry point: ``soarl run``, ``soarl summarize`` and ``soarl plan``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .harness import SummaryError, run_experiment, summarize, summary_csv, summary_table


def _seeds(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soarl", description="Symbolic-option HRL experiments on Office World.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment protocol")
    r.add_argument("--config", type=Path, help="YAML or JSON config file")
    r.add_argument("--map", help="bundled map name or path to a map file")
    r.add_argument("--task", type=int)
    r.add_argument("--tasks", type=_seeds, help="task order for the sequential protocol, e.g. 1,2,3")
    r.add_argument("--constraint", help="natural-language constraint text")
    r.add_argument("--protocol", choices=("scratch", "sequential", "transfer"))
    r.add_argument("--library-in", dest="library_in")
    r.add_argument("--library-out", dest="library_out")
    r.add_argument("--seeds", type=_seeds, help="comma-separated seed list")
    r.add_argument("--episodes", type=int)
    r.add_argument("--output-dir", "-o", dest="output_dir")
    r.add_argument("--annotator", choices=("mock", "http"))
    r.add_argument("--backend", choices=("compiled", "python"))
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable)")

    s = sub.add_parser("summarize", help="mean and stddev over seeds for finished runs")
    s.add_argument("dirs", nargs="*", type=Path)
    s.add_argument("--csv", type=Path, help="also write the table as CSV")

    pl = sub.add_parser("plan", help="solve a planning problem over a domain file")
    pl.add_argument("--domain", type=Path, required=True)
    pl.add_argument("--goal", required=True, help="comma-separated goal propositions")
    pl.add_argument("--init", default="", help="comma-separated initial propositions")
    pl.add_argument("--weights", default="", help="action=weight pairs; unspecified actions weigh 0")
    pl.add_argument("--max-length", type=int, default=12)
    return p


def _split_props(text: str):
    from .symbolic import Proposition

    # propositions may carry argument lists, so split on commas outside parentheses
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            if cur.strip():
                out.append(Proposition.parse(cur.strip()))
            cur = ""
            continue
        depth += (ch == "(") - (ch == ")")
        cur += ch
    if cur.strip():
        out.append(Proposition.parse(cur.strip()))
    return out


def cmd_run(args) -> int:
    cli = {k: getattr(args, k) for k in ("map", "task", "tasks", "constraint", "protocol", "library_in",
                                         "library_out", "seeds", "episodes", "output_dir", "annotator", "backend")}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cli[key.strip().replace("-", "_")] = value
    cfg = load_config(args.config, cli)
    out = run_experiment(cfg)
    print(out)
    return 0


def cmd_summarize(args) -> int:
    rows = summarize(args.dirs)
    print(summary_table(rows))
    if args.csv:
        args.csv.write_text(summary_csv(rows), encoding="utf-8")
    return 0


def cmd_plan(args) -> int:
    from .planner import PlanningProblem, solve
    from .symbolic import SymbolicState, parse_domain

    domain = parse_domain(args.domain.read_text(encoding="utf-8"))
    weights = {name: 0.0 for name in domain.actions}
    for item in filter(None, (w.strip() for w in args.weights.split(","))):
        name, _, value = item.partition("=")
        weights[name.strip()] = float(value)
    problem = PlanningProblem(domain, SymbolicState(frozenset(_split_props(args.init))),
                              SymbolicState(frozenset(_split_props(args.goal))), weights, args.max_length)
    plan = solve(problem)
    if plan is None:
        print("no plan")
        return 1
    print(f"quality {plan.quality!r}")
    for i, step in enumerate(plan.steps, 1):
        print(f"{i:>3}. {step}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "summarize": cmd_summarize, "plan": cmd_plan}[args.command]
    try:
        return handler(args)
    except (ConfigError, SummaryError, ValueError, OSError) as e:
        print(f"soarl {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
