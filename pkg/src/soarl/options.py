"""Symbolic options with tabular Q-learning policies, and the global exploration option."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .officeworld import ACTIONS, TASK_BITS, RawState, state_to_bits
from .symbolic import ActionModel, Proposition, SymbolicState, SymbolicTransition, apply, is_executable

KEY_MODES = ("position", "full")


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over the first ``decay_episodes`` episodes."""

    start: float = 1.0
    end: float = 0.05
    decay_episodes: int = 1800

    def value(self, episode: int) -> float:
        if self.decay_episodes <= 0 or episode >= self.decay_episodes:
            return self.end
        return self.start + (self.end - self.start) * (episode / self.decay_episodes)


@dataclass(eq=False)
class QTable:
    width: int
    height: int
    key_mode: str = "position"
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    values: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.key_mode not in KEY_MODES:
            raise ValueError(f"key_mode must be one of {KEY_MODES}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.values is None:
            self.values = np.zeros((self.n_keys, len(ACTIONS)), dtype=np.float64)
        elif self.values.shape != (self.n_keys, len(ACTIONS)):
            raise ValueError(f"values shape {self.values.shape} != {(self.n_keys, len(ACTIONS))}")

    @property
    def key_mode_code(self) -> int:
        return KEY_MODES.index(self.key_mode)

    @property
    def n_keys(self) -> int:
        n = self.width * self.height
        return n if self.key_mode == "position" else n * 16

    def key(self, state: RawState) -> int:
        x, y = state.agent_pos
        cell = y * self.width + x
        return cell if self.key_mode == "position" else cell * 16 + (state.flags & TASK_BITS)

    def get(self, state: RawState, action) -> float:
        return float(self.values[self.key(state), _action_index(action)])

    def greedy(self, state: RawState) -> int:
        row = self.values[self.key(state)].tolist()
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        return best

    def copy(self) -> "QTable":
        return QTable(self.width, self.height, self.key_mode, self.alpha, self.gamma, self.epsilon,
                      self.values.copy())

    def load_values(self, other: "QTable") -> None:
        """Copy another table's values in, matching entries by grid coordinate."""
        if other.key_mode != self.key_mode:
            raise ValueError("cannot copy between Q-tables with different state keys")
        if (other.width, other.height) == (self.width, self.height):
            self.values[:] = other.values
            return
        self.values[:] = 0.0
        per = 1 if self.key_mode == "position" else 16
        for y in range(min(self.height, other.height)):
            for x in range(min(self.width, other.width)):
                a = (y * self.width + x) * per
                b = (y * other.width + x) * per
                self.values[a:a + per] = other.values[b:b + per]


def _action_index(action) -> int:
    return ACTIONS.index(action) if isinstance(action, str) else int(action)


def q_update(policy: QTable, s: RawState, a, r: float, s_next: RawState, terminal: bool) -> QTable:
    k = policy.key(s)
    j = _action_index(a)
    target = r
    if not terminal:
        target = target + policy.gamma * float(policy.values[policy.key(s_next)].max())
    old = float(policy.values[k, j])
    policy.values[k, j] = old + policy.alpha * (target - old)
    return policy


def intrinsic_reward(env_reward: float, terminated_successfully: bool, psi: float) -> float:
    return env_reward + psi if terminated_successfully else env_reward


@dataclass(eq=False)
class SymbolicOption:
    id: str
    pre_pos: frozenset[Proposition]
    pre_neg: frozenset[Proposition]
    eff_pos: frozenset[Proposition]
    eff_neg: frozenset[Proposition]
    policy: QTable
    history_capacity: int = 50
    success_history: deque = None  # type: ignore[assignment]
    replay: list = field(default_factory=list)
    runs: int = 0
    clock: int = 0          # episode index driving the epsilon schedule
    label: object = None
    reused: bool = False
    frozen: bool = False

    def __post_init__(self):
        if self.success_history is None:
            self.success_history = deque(maxlen=self.history_capacity)

    @classmethod
    def from_model(cls, model: ActionModel, policy: QTable, history_capacity: int = 50) -> "SymbolicOption":
        return cls(model.name, model.pre_pos, model.pre_neg, model.eff_pos, model.eff_neg, policy,
                   history_capacity)

    def refresh(self, model: ActionModel) -> None:
        self.pre_pos, self.pre_neg = model.pre_pos, model.pre_neg
        self.eff_pos, self.eff_neg = model.eff_pos, model.eff_neg

    def as_action(self) -> ActionModel:
        return ActionModel(self.id, self.pre_pos, self.pre_neg, self.eff_pos, self.eff_neg)

    def initiation(self, sym: SymbolicState) -> bool:
        return is_executable(sym, self.as_action())

    def expected(self, start: SymbolicState) -> SymbolicState:
        return apply(start, self.as_action())

    def terminated(self, start: SymbolicState, now: SymbolicState) -> bool:
        return self.expected(start).holds <= now.holds

    @property
    def success_rate(self) -> float:
        if not self.success_history:
            return 0.0
        return sum(self.success_history) / len(self.success_history)

    @property
    def epsilon(self) -> float:
        return self.policy.epsilon.value(self.clock)

    def exploring(self, min_runs: int, sr_threshold: float) -> bool:
        return self.runs < min_runs or self.success_rate < sr_threshold


def update_success_rate(option: SymbolicOption, succeeded: bool) -> float:
    option.success_history.append(bool(succeeded))
    return option.success_rate


def select_action(option: SymbolicOption, state: RawState, greedy: bool,
                  rng: Optional[np.random.Generator] = None) -> str:
    """Epsilon-greedy over the option's Q-table; argmax ties go to the first action in ACTIONS."""
    if not greedy:
        rng = rng if rng is not None else np.random.default_rng()
        if rng.random() < option.epsilon:
            return ACTIONS[int(rng.integers(len(ACTIONS)))]
    return ACTIONS[option.policy.greedy(state)]


@dataclass
class GlobalOption:
    """Always-initiable random walk used to discover new symbolic transitions."""

    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def initiation(self, state=None) -> bool:
        return True

    def select_action(self, state=None) -> str:
        return ACTIONS[int(self.rng.integers(len(ACTIONS)))]


@dataclass
class Rollout:
    keys: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_keys: np.ndarray
    state: RawState
    total_reward: float
    reached: bool
    env_code: int

    @property
    def steps(self) -> int:
        return len(self.actions)


def run_global_option(env, state: RawState, F: Callable | None = None, max_steps: int = 500,
                      rng: Optional[np.random.Generator] = None):
    """Random primitive actions until the task-level labeling changes, the episode ends or
    ``max_steps`` run out. Returns ``(transition or None, final state, accumulated reward)``.

    ``env`` is a :class:`soarl.constraints.GuardedEnv` positioned at ``state``.
    """
    if F is None:
        F = env.task_labels
    if max_steps <= 0 or env.done:
        return None, state, 0.0
    rng = rng if rng is not None else np.random.default_rng()
    before = F(state)
    ro = env.rollout(None, budget=max_steps, stop_mode=0, expected_mask=0, eps=1.0, rng=rng)
    after = F(ro.state)
    transition = None
    if ro.reached and after != before:
        transition = SymbolicTransition(before, after, ro.total_reward)
    return transition, ro.state, ro.total_reward


def train_option(option: SymbolicOption, backend: str | None = None) -> int:
    """Replay the option's stored transitions (latest first) through Q-learning, then clear them."""
    if option.frozen or not option.replay:
        option.replay.clear()
        return 0
    keys = np.concatenate([r[0] for r in option.replay])
    actions = np.concatenate([r[1] for r in option.replay])
    rewards = np.concatenate([r[2] for r in option.replay])
    next_keys = np.concatenate([r[3] for r in option.replay])
    terminals = np.concatenate([r[4] for r in option.replay]).astype(np.uint8)
    n = len(actions)
    kernels.get(backend).q_sweep(option.policy.values, keys, actions, rewards, next_keys, terminals, n,
                                 option.policy.alpha, option.policy.gamma)
    option.replay.clear()
    return n


def expected_mask(option: SymbolicOption, start_bits: int) -> int:
    pos = state_to_bits(SymbolicState(option.eff_pos))
    neg = state_to_bits(SymbolicState(option.eff_neg))
    return ((start_bits & ~neg) | pos) & TASK_BITS


__all__ = [
    "EpsilonSchedule", "QTable", "SymbolicOption", "GlobalOption", "Rollout", "q_update", "intrinsic_reward",
    "update_success_rate", "select_action", "run_global_option", "train_option", "expected_mask",
]
