"""Natural-language constraints: limitation sets, a two-state reward machine and guarded stepping."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import kernels
from .annotator import complete, extract_request, parse_entities
from .officeworld import (
    ACTIONS,
    DoneReason,
    EntityRegistry,
    GridMap,
    RawState,
    RewardScheme,
    StepOutcome,
    TaskSpec,
    compile_grid,
    label_state,
    reset,
    state_to_bits,
    step,
    task_view,
)
from .options import Rollout
from .symbolic import Proposition, SymbolicState


class ContractViolation(RuntimeError):
    pass


class NoExperience(LookupError):
    pass


@dataclass(frozen=True)
class LimitationSet:
    forbidden: frozenset[Proposition] = frozenset()
    source_constraint: str = ""
    entities: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.forbidden)


def build_limitation_set(constraint_text: str, annotator, registry: EntityRegistry) -> LimitationSet:
    if not registry.names():
        raise ValueError("entity registry is empty")
    if not constraint_text or not constraint_text.strip():
        return LimitationSet(frozenset(), constraint_text or "", ())
    response = complete(annotator, extract_request(constraint_text, registry.names()))
    entities = parse_entities(response.raw, registry)
    return LimitationSet(registry.lookup(entities), constraint_text, tuple(entities))


def violations(sym_state: SymbolicState, lim: LimitationSet) -> frozenset[Proposition]:
    return sym_state.holds & lim.forbidden


def check_violation(sym_state: SymbolicState, lim: LimitationSet) -> bool:
    return bool(violations(sym_state, lim))


def predicted_reward(experienced_reward: float, lam: float) -> float:
    return lam * experienced_reward


class RMState(str, Enum):
    INIT = "u_init"
    BROKEN = "u_broken"


@dataclass
class RewardMachine:
    penalty: float = -1.0
    state: RMState = RMState.INIT

    def reset(self) -> None:
        self.state = RMState.INIT

    def observe(self, violated: bool) -> None:
        if violated:
            self.state = RMState.BROKEN


@dataclass
class ExperienceIndex:
    """Last experienced reward per (forbidden proposition, primitive action)."""

    entries: dict = field(default_factory=dict)

    def record(self, forbidden_hit, action: int, reward: float) -> None:
        for p in forbidden_hit:
            self.entries[(p, int(action))] = reward

    def lookup(self, forbidden_hit, action: int) -> float:
        for p in sorted(forbidden_hit):
            if (p, int(action)) in self.entries:
                return self.entries[(p, int(action))]
        raise NoExperience(f"no experience for action {action} into {sorted(map(str, forbidden_hit))}")


def guarded_step(grid: GridMap, state: RawState, action: str, spec: TaskSpec, lim: LimitationSet,
                 rm: RewardMachine, F: Callable[[RawState, GridMap], SymbolicState] = label_state,
                 rewards: RewardScheme = RewardScheme()) -> StepOutcome:
    if rm.state != RMState.INIT:
        raise ContractViolation("guarded_step called after the reward machine broke")
    outcome = step(grid, state, action, spec, rewards)
    if not lim.forbidden:
        return outcome
    current = F(outcome.next_state, grid)
    violated = check_violation(current, lim)
    rm.observe(violated)
    if violated:
        return StepOutcome(outcome.next_state, rm.penalty, True, DoneReason.VIOLATION)
    return outcome


class GuardedEnv:
    """Office World episode with the constraint monitor in the loop.

    ``step`` is the reference path (one Python call per primitive action);
    ``rollout`` runs many steps through the compiled or pure-Python kernel with
    identical semantics.
    """

    def __init__(self, grid: GridMap, spec: TaskSpec, lim: Optional[LimitationSet] = None,
                 penalty: float = -1.0, rewards: RewardScheme = RewardScheme(), max_steps: int = 500,
                 backend: str | None = None):
        self.grid = grid
        self.spec = spec
        self.lim = lim or LimitationSet()
        self.rewards = rewards
        self.max_steps = max_steps
        self.rm = RewardMachine(penalty)
        self.compiled = compile_grid(grid)
        self.kernels = kernels.get(backend)
        self.forbidden_mask = state_to_bits(SymbolicState(
            self.lim.forbidden & frozenset(map(Proposition, _BITS_KNOWN))))
        self._dummy_q = np.zeros((1, len(ACTIONS)))
        self.state: RawState | None = None
        self.t = 0
        self.done = False
        self.done_reason = DoneReason.RUNNING

    def reset(self, rng) -> RawState:
        self.state = reset(self.grid, rng)
        self.t = 0
        self.done = False
        self.done_reason = DoneReason.RUNNING
        self.rm.reset()
        return self.state

    def labels(self, state: RawState | None = None) -> SymbolicState:
        return label_state(state or self.state, self.grid)

    def task_labels(self, state: RawState | None = None) -> SymbolicState:
        return task_view(label_state(state or self.state, self.grid))

    def step(self, action: str) -> StepOutcome:
        if self.done:
            raise ContractViolation("step called on a finished episode")
        out = guarded_step(self.grid, self.state, action, self.spec, self.lim, self.rm,
                           rewards=self.rewards)
        self.t += 1
        if not out.done and self.t >= self.max_steps:
            out = StepOutcome(out.next_state, out.reward, True, DoneReason.MAX_STEPS)
        self.state = out.next_state
        self.done = out.done
        self.done_reason = out.done_reason
        return out

    def rollout(self, q, budget: int, stop_mode: int, expected_mask: int, eps: float,
                rng: np.random.Generator, key_mode: int = 0) -> Rollout:
        if self.done:
            raise ContractViolation("rollout on a finished episode")
        if self.rm.state != RMState.INIT:
            raise ContractViolation("rollout after the reward machine broke")
        budget = max(0, min(budget, self.max_steps - self.t))
        uniforms = rng.random(budget)
        rand_actions = rng.integers(0, len(ACTIONS), budget, dtype=np.int64)
        keys = np.empty(budget, dtype=np.int64)
        acts = np.empty(budget, dtype=np.int64)
        rews = np.empty(budget, dtype=np.float64)
        nkeys = np.empty(budget, dtype=np.int64)
        cg = self.compiled
        pos = self.grid.cell_index(self.state.agent_pos)
        n, pos, flags, t, total, stop, env = self.kernels.rollout(
            self._dummy_q if q is None else q, key_mode, cg.next_cell, cg.cell_kind, cg.cell_label,
            pos, self.state.flags, self.t, self.max_steps, budget,
            stop_mode, expected_mask, self.forbidden_mask, eps, uniforms, rand_actions,
            self.spec.required_mask, self.rewards.step_cost, self.rewards.task_reward, self.rm.penalty,
            keys, acts, rews, nkeys)
        self.state = RawState.from_flags(self.grid.index_cell(pos), flags)
        self.t = t
        if env != kernels.RUNNING:
            self.done = True
            self.done_reason = _ENV_CODES[env]
            if env == kernels.VIOLATION:
                self.rm.observe(True)
        return Rollout(keys[:n], acts[:n], rews[:n], nkeys[:n], self.state, total,
                       stop == kernels.REACHED, env)


_BITS_KNOWN = ("haveCoffee", "haveMail", "deliveredCoffee", "deliveredMail", "onPlant", "onPrinter")
_ENV_CODES = {
    kernels.TASK_COMPLETE: DoneReason.TASK_COMPLETE,
    kernels.VIOLATION: DoneReason.VIOLATION,
    kernels.MAX_STEPS: DoneReason.MAX_STEPS,
}
