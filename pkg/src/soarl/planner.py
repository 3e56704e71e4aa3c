"""Reward-weighted optimal sequential planning over a learned symbolic domain.

Exhaustive dynamic programming over (symbolic state, remaining length).
Symbolic spaces here are tiny (a handful of propositions), so the search is
exact: among all plans of length <= ``max_plan_length`` that end in a goal
state it returns the one with the highest summed weight, breaking ties by
shorter length and then by lexicographic order of action names.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .symbolic import Domain, SymbolicState, apply, is_executable

DEFAULT_MAX_PLAN_LENGTH = 12


@dataclass(frozen=True)
class PlanningProblem:
    domain: Domain
    initial: SymbolicState
    goal: SymbolicState
    weights: Mapping[str, float] = field(default_factory=dict)
    max_plan_length: int = DEFAULT_MAX_PLAN_LENGTH

    def __post_init__(self):
        unknown = set(self.weights) - set(self.domain.actions)
        if unknown:
            raise ValueError(f"weights for unknown actions: {sorted(unknown)}")
        outside = self.goal.holds - self.domain.vocabulary
        if outside:
            raise ValueError(f"goal propositions outside vocabulary: {sorted(map(str, outside))}")

    def weight(self, name: str) -> float:
        return float(self.weights.get(name, 0.0))


@dataclass(frozen=True)
class Plan:
    steps: tuple[str, ...]
    quality: float

    def __len__(self) -> int:
        return len(self.steps)


def plan_quality(problem: PlanningProblem, steps: Sequence[str]) -> float:
    q = 0.0
    for s in steps:
        q += problem.weight(s)
    return q


def validate_plan(problem: PlanningProblem, plan: Plan | Sequence[str]) -> bool:
    steps = plan.steps if isinstance(plan, Plan) else tuple(plan)
    state = problem.initial
    for name in steps:
        action = problem.domain.actions.get(name)
        if action is None or not is_executable(state, action):
            return False
        state = apply(state, action)
    return problem.goal.holds <= state.holds


class _Encoder:
    """Bitmask view of a domain so the inner loop is integer arithmetic."""

    def __init__(self, problem: PlanningProblem):
        vocab = sorted(problem.domain.vocabulary | problem.initial.holds | problem.goal.holds)
        self.index = {p: i for i, p in enumerate(vocab)}
        self.names = sorted(problem.domain.actions)
        self.ops = []
        for name in self.names:
            a = problem.domain.actions[name]
            self.ops.append(
                (self.mask(a.pre_pos), self.mask(a.pre_neg), self.mask(a.eff_pos), self.mask(a.eff_neg),
                 problem.weight(name))
            )

    def mask(self, ps) -> int:
        m = 0
        for p in ps:
            m |= 1 << self.index[p]
        return m


def _better(a, b) -> bool:
    # entries are (quality, length, steps as action indices)
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def _search(problem: PlanningProblem):
    enc = _Encoder(problem)
    init = enc.mask(problem.initial.holds)
    goal = enc.mask(problem.goal.holds)
    L = problem.max_plan_length
    ops = enc.ops

    # forward reachability, then backward DP restricted to reachable states
    succ: dict[int, list[tuple[int, int, float]]] = {}
    frontier, seen = [init], {init}
    for _ in range(L):
        nxt = []
        for s in frontier:
            if s in succ:
                continue
            edges = []
            for i, (pp, pn, ep, en, w) in enumerate(ops):
                if s & pp == pp and not s & pn:
                    t = (s & ~en) | ep
                    edges.append((i, t, w))
                    if t not in seen:
                        seen.add(t)
                        nxt.append(t)
            succ[s] = edges
        frontier = nxt
    for s in frontier:
        succ.setdefault(s, [])

    stop = {s: ((0.0, 0, ()) if s & goal == goal else None) for s in seen}
    best = dict(stop)
    for _ in range(L):
        prev = best
        best = {}
        for s in seen:
            cur = stop[s]
            for i, t, w in succ.get(s, ()):
                sub = prev[t]
                if sub is None:
                    continue
                cand = (w + sub[0], sub[1] + 1, (i,) + sub[2])
                if _better(cand, cur):
                    cur = cand
            best[s] = cur
    result = best[init]
    if result is None:
        return None
    return tuple(enc.names[i] for i in result[2])


def solve(problem: PlanningProblem, min_quality: Optional[float] = None) -> Optional[Plan]:
    # no shortcut for goal <= initial: a positive-weight detour through the goal may still be better
    steps = _search(problem)
    if steps is None:
        return None
    plan = Plan(steps, plan_quality(problem, steps))
    if min_quality is not None and not plan.quality > min_quality:
        return None
    return plan
