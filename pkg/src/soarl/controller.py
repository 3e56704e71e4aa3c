"""The planning meta-controller: action-model induction, reward weighting, plan-to-option
scheduling, global exploration and skill-library bookkeeping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .annotator import SemanticLabel
from .constraints import ExperienceIndex, GuardedEnv, LimitationSet, NoExperience, predicted_reward, violations
from .officeworld import (
    TASK_BITS,
    TASK_VOCABULARY,
    DoneReason,
    GridMap,
    RewardScheme,
    TaskSpec,
    bits_to_state,
)
from .options import (
    EpsilonSchedule,
    QTable,
    SymbolicOption,
    expected_mask,
    intrinsic_reward,
    train_option,
    update_success_rate,
)
from .planner import Plan, PlanningProblem, plan_quality, solve, validate_plan
from .skills import AddOutcome, SkillLibrary, annotate_option, lookup_and_reuse, provenance, try_add_skill
from .symbolic import ActionModel, Domain, Proposition, SymbolicState, SymbolicTransition, serialize_domain

log = logging.getLogger(__name__)

Pair = tuple[SymbolicState, SymbolicState]


class MissingPair(KeyError):
    pass


class UnmappedAction(KeyError):
    pass


@dataclass
class ControllerConfig:
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = 1800
    psi: float = 100.0
    c: float = 1.0
    exploration_count: int = 20
    sr_threshold: float = 0.95
    tau: float = 0.95
    option_budget: int = 100
    history_capacity: int = 50
    max_plan_length: int = 12
    max_episode_steps: int = 500
    lam: float = 0.1
    penalty: float = -1.0
    key_mode: str = "position"
    greedy_when_validated: bool = True
    freeze_reused: bool = False
    annotator_retries: int = 2
    step_cost: float = -0.01
    task_reward: float = 1.0


# -- reward dictionary and weights ------------------------------------------

@dataclass
class RewardDictionary:
    entries: dict = field(default_factory=dict)

    def record(self, before: SymbolicState, after: SymbolicState, reward: float) -> bool:
        """Append an observed reward; returns True when the pair is new."""
        if before == after:
            raise ValueError("reward dictionary pairs need distinct states")
        key = (before, after)
        new = key not in self.entries
        self.entries.setdefault(key, []).append(float(reward))
        return new

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.entries

    def __getitem__(self, pair) -> list[float]:
        return self.entries[tuple(pair)]

    def __len__(self) -> int:
        return len(self.entries)

    def lengths(self) -> dict:
        return {k: len(v) for k, v in self.entries.items()}

    def mean(self, pair) -> float:
        v = self.entries[tuple(pair)]
        return math.fsum(v) / len(v)


@dataclass
class ActionModelStats:
    model: ActionModel
    sr: float
    under_exploration: bool
    weight: float = 0.0


def _as_pairs(pair) -> list[Pair]:
    if isinstance(pair, tuple) and len(pair) == 2 and isinstance(pair[0], SymbolicState):
        return [pair]
    return [tuple(p) for p in pair]


def reward_weight(rdict: RewardDictionary, pair, stats: ActionModelStats, c: float) -> float:
    """Historical mean extrinsic reward plus the exploration bonus ``c * (1 - sr)``.

    ``pair`` may be one (before, after) pair or every pair attributed to the
    model, in which case their rewards are pooled.
    """
    rewards: list[float] = []
    for p in _as_pairs(pair):
        if p not in rdict.entries:
            raise MissingPair(f"pair {p[0]} -> {p[1]} has not been observed")
        rewards.extend(rdict.entries[p])
    bonus = c * (1.0 - stats.sr) if stats.under_exploration else 0.0
    return math.fsum(rewards) / len(rewards) + bonus


# -- action-model induction -------------------------------------------------

def effect_signature(before: SymbolicState, after: SymbolicState) -> tuple[frozenset, frozenset]:
    return after.holds - before.holds, before.holds - after.holds


def learn_action_model(transition: SymbolicTransition, vocabulary: Iterable[Proposition],
                       name: str = "act1") -> ActionModel:
    before, after = transition.before.holds, transition.after.holds
    vocab = frozenset(vocabulary)
    return ActionModel(name, pre_pos=before, pre_neg=vocab - before, eff_pos=after - before,
                       eff_neg=before - after)


def refine_action_model(model: ActionModel, before: SymbolicState, vocabulary: Iterable[Proposition]) -> ActionModel:
    """Intersect preconditions with the evidence of another before-state with the same effects."""
    vocab = frozenset(vocabulary)
    return ActionModel(model.name, model.pre_pos & before.holds, model.pre_neg & (vocab - before.holds),
                       model.eff_pos, model.eff_neg)


@dataclass
class OptionMapping:
    pairs: dict = field(default_factory=dict)

    def __getitem__(self, action_name: str) -> str:
        try:
            return self.pairs[action_name]
        except KeyError:
            raise UnmappedAction(action_name) from None

    def __len__(self) -> int:
        return len(self.pairs)


def map_actions_to_options(plan: Plan | Sequence[str], mapping: OptionMapping,
                           options: Mapping[str, SymbolicOption]) -> list[SymbolicOption]:
    steps = plan.steps if isinstance(plan, Plan) else plan
    out = []
    for name in steps:
        oid = mapping[name]
        if oid not in options:
            raise UnmappedAction(name)
        out.append(options[oid])
    return out


def update_goal(rdict: RewardDictionary, domain: Domain, initial: SymbolicState | None = None,
                config_goal: SymbolicState | None = None, max_length: int = 12) -> SymbolicState:
    """The configured task goal when given; otherwise the after-state of the reachable
    sequence of observed pairs with the largest summed mean reward."""
    if config_goal is not None:
        return config_goal
    if not rdict.entries:
        return initial if initial is not None else SymbolicState()
    succ: dict[SymbolicState, list[tuple[SymbolicState, float]]] = {}
    for (b, a) in rdict.entries:
        succ.setdefault(b, []).append((a, rdict.mean((b, a))))
    start = initial if initial is not None else min(succ, key=lambda s: (len(s), s.sort_key()))
    best: dict[SymbolicState, float] = {}
    frontier = {start: 0.0}
    for _ in range(max_length):
        nxt: dict[SymbolicState, float] = {}
        for s, v in frontier.items():
            for a, m in succ.get(s, ()):
                if a not in nxt or v + m > nxt[a]:
                    nxt[a] = v + m
        for s, v in nxt.items():
            if s not in best or v > best[s]:
                best[s] = v
        frontier = nxt
        if not frontier:
            break
    if not best:
        return start
    return max(best, key=lambda s: (best[s], -len(s), tuple(reversed(s.sort_key()))))


# -- episode records --------------------------------------------------------

@dataclass
class Segment:
    kind: str                      # "option" or "global"
    option: Optional[str]
    before: SymbolicState
    after: SymbolicState
    steps: int
    reward: float
    success: bool
    label: Optional[str] = None


@dataclass
class EpisodeTrace:
    episode: int
    segments: list = field(default_factory=list)
    plan: tuple = ()
    plan_source: str = "none"
    episode_return: float = 0.0
    steps: int = 0
    done_reason: DoneReason = DoneReason.RUNNING
    violation_step: Optional[int] = None
    weights: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    reward_lengths: dict = field(default_factory=dict)
    model_pairs: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.done_reason == DoneReason.TASK_COMPLETE

    @property
    def violated(self) -> bool:
        return self.done_reason == DoneReason.VIOLATION


class MetaController:
    def __init__(self, grid: GridMap, spec: TaskSpec, config: ControllerConfig | None = None,
                 annotator=None, library: SkillLibrary | None = None, lim: LimitationSet | None = None,
                 seed: int = 0, world_id: str | None = None, backend: str | None = None,
                 goal: SymbolicState | None = None):
        from .annotator import MockBackend

        self.cfg = config or ControllerConfig()
        self.grid = grid
        self.spec = spec
        self.world_id = world_id or grid.name
        self.annotator = annotator if annotator is not None else MockBackend()
        self.library = library if library is not None else SkillLibrary(self.cfg.tau)
        self.lim = lim or LimitationSet()
        self.backend = backend
        self.env = GuardedEnv(grid, spec, self.lim, self.cfg.penalty,
                              RewardScheme(self.cfg.step_cost, self.cfg.task_reward),
                              self.cfg.max_episode_steps, backend)
        self.rng = np.random.default_rng(seed)
        self.goal = goal if goal is not None else spec.goal
        self.vocabulary = TASK_VOCABULARY

        self.models: dict[str, ActionModel] = {}
        self.by_signature: dict[tuple, str] = {}
        self.model_pairs: dict[str, list[Pair]] = {}
        self.rdict = RewardDictionary()
        self.options: dict[str, SymbolicOption] = {}
        self.mapping = OptionMapping()
        self.experience = ExperienceIndex()
        self.best_plan: Optional[tuple[str, ...]] = None
        self.best_quality: Optional[float] = None
        self.last_label: Optional[SemanticLabel] = None
        self.episode = 0
        self.events: list[dict] = []

    # -- domain bookkeeping ------------------------------------------------

    @property
    def domain(self) -> Domain:
        return Domain(self.vocabulary, self.models)

    def _schedule(self) -> EpsilonSchedule:
        c = self.cfg
        return EpsilonSchedule(c.epsilon_start, c.epsilon_end, c.epsilon_decay_episodes)

    def _new_qtable(self) -> QTable:
        c = self.cfg
        return QTable(self.grid.width, self.grid.height, c.key_mode, c.alpha, c.gamma, self._schedule())

    def _event(self, trace: EpisodeTrace | None, kind: str, **data) -> None:
        ev = {"episode": self.episode, "event": kind, **data}
        self.events.append(ev)
        if trace is not None:
            trace.events.append(ev)
        log.debug("%s", ev)

    def observe(self, before: SymbolicState, after: SymbolicState, reward: float,
                trace: EpisodeTrace | None = None) -> str:
        """Record a symbolic pair and induce or refine the action model it evidences."""
        new_pair = self.rdict.record(before, after, reward)
        sig = effect_signature(before, after)
        name = self.by_signature.get(sig)
        if name is None:
            name = f"act{len(self.models) + 1}"
            model = learn_action_model(SymbolicTransition(before, after, reward), self.vocabulary, name)
            self.models[name] = model
            self.by_signature[sig] = name
            self.model_pairs[name] = [(before, after)]
            self._create_option(model, before, after, trace)
            self._event(trace, "new_model", action=name, before=str(before), after=str(after))
        elif new_pair:
            model = refine_action_model(self.models[name], before, self.vocabulary)
            self.models[name] = model
            self.model_pairs[name].append((before, after))
            self.options[self.mapping[name]].refresh(model)
            self._event(trace, "refine_model", action=name, before=str(before))
        return name

    def _create_option(self, model: ActionModel, before: SymbolicState, after: SymbolicState,
                       trace: EpisodeTrace | None) -> SymbolicOption:
        opt = SymbolicOption.from_model(model, self._new_qtable(), self.cfg.history_capacity)
        label = annotate_option(self.annotator, opt, before, after, self.last_label,
                                max_retries=self.cfg.annotator_retries,
                                metadata={"world": self.world_id, "episode": self.episode})
        opt.label = label
        self.last_label = label
        if lookup_and_reuse(self.library, label, opt):
            end = self.cfg.epsilon_end
            opt.policy.epsilon = EpsilonSchedule(end, end, 0)
            opt.frozen = self.cfg.freeze_reused
            self._event(trace, "reuse", option=opt.id, label=str(label))
        self.options[opt.id] = opt
        self.mapping.pairs[model.name] = opt.id
        return opt

    def stats(self) -> dict[str, ActionModelStats]:
        out = {}
        for name, model in self.models.items():
            opt = self.options[self.mapping[name]]
            st = ActionModelStats(model, opt.success_rate,
                                  opt.exploring(self.cfg.exploration_count, self.cfg.sr_threshold))
            st.weight = reward_weight(self.rdict, self.model_pairs[name], st, self.cfg.c)
            out[name] = st
        return out

    # -- episode -----------------------------------------------------------

    def _plan(self, initial: SymbolicState, weights: Mapping[str, float]) -> tuple[Plan, str]:
        goal = update_goal(self.rdict, self.domain, initial, self.goal, self.cfg.max_plan_length)
        problem = PlanningProblem(self.domain, initial, goal, dict(weights), self.cfg.max_plan_length)
        plan = solve(problem, self.best_quality)
        if plan is not None:
            return plan, "planner"
        if self.best_plan is not None and validate_plan(problem, self.best_plan):
            return Plan(self.best_plan, plan_quality(problem, self.best_plan)), "best"
        plan = solve(problem)
        if plan is not None:
            return plan, "planner"
        return Plan((), 0.0), "none"

    def _run_option(self, opt: SymbolicOption, trace: EpisodeTrace) -> Segment:
        env, cfg = self.env, self.cfg
        start_bits = env.state.flags & TASK_BITS
        before = bits_to_state(start_bits)
        assert opt.initiation(before), f"option {opt.id} launched outside its initiation set"
        opt.clock = self.episode - 1
        greedy = cfg.greedy_when_validated and not opt.exploring(cfg.exploration_count, cfg.sr_threshold)
        eps = 0.0 if greedy else opt.epsilon
        # terminate at the first task-level label change; success iff it is the expected one
        target = expected_mask(opt, start_bits)
        ro = env.rollout(opt.policy.values, cfg.option_budget, 0, target, eps, self.rng,
                         opt.policy.key_mode_code)
        success = ro.reached and (target & ~env.state.flags & TASK_BITS) == 0
        n = ro.steps
        learn = ro.rewards.copy()
        terminals = np.zeros(n, dtype=np.uint8)
        if n:
            if success:
                learn[-1] = intrinsic_reward(learn[-1], True, cfg.psi)
                terminals[-1] = 1
            elif ro.reached or ro.env_code in (kernels.TASK_COMPLETE, kernels.VIOLATION):
                terminals[-1] = 1
            if ro.env_code == kernels.VIOLATION:
                learn[-1] += self._violation_experience(int(ro.actions[-1]), float(ro.rewards[-1]))
        opt.replay.append((ro.keys, ro.actions, learn, ro.next_keys, terminals))
        opt.runs += 1
        update_success_rate(opt, success)
        after = bits_to_state(env.state.flags & TASK_BITS)
        if after != before:
            self.observe(before, after, ro.total_reward, trace)
        return Segment("option", opt.id, before, after, n, ro.total_reward, success,
                       str(opt.label) if opt.label is not None else None)

    def _violation_experience(self, action: int, reward: float) -> float:
        """Shaping from earlier violations of the same kind; records this one."""
        hit = violations(self.env.labels(), self.lim)
        try:
            shaping = predicted_reward(self.experience.lookup(hit, action), self.cfg.lam)
        except NoExperience:
            shaping = 0.0
        self.experience.record(hit, action, reward)
        return shaping

    def _explore(self, trace: EpisodeTrace) -> None:
        env = self.env
        while not env.done:
            before = bits_to_state(env.state.flags & TASK_BITS)
            ro = env.rollout(None, env.max_steps - env.t, 0, 0, 1.0, self.rng)
            after = bits_to_state(env.state.flags & TASK_BITS)
            if ro.env_code == kernels.VIOLATION and ro.steps:
                self._violation_experience(int(ro.actions[-1]), float(ro.rewards[-1]))
            trace.segments.append(Segment("global", None, before, after, ro.steps, ro.total_reward,
                                          ro.reached))
            if ro.reached and after != before:
                self.observe(before, after, ro.total_reward, trace)

    def run_episode(self) -> EpisodeTrace:
        self.episode += 1
        trace = EpisodeTrace(self.episode)
        env = self.env
        env.reset(self.rng)
        initial = bits_to_state(env.state.flags & TASK_BITS)

        stats = self.stats()
        weights = {k: s.weight for k, s in stats.items()}
        trace.weights = dict(weights)
        trace.stats = {k: (s.sr, s.under_exploration) for k, s in stats.items()}
        trace.reward_lengths = self.rdict.lengths()
        trace.model_pairs = {k: list(v) for k, v in self.model_pairs.items()}

        plan, source = self._plan(initial, weights)
        trace.plan, trace.plan_source = plan.steps, source
        completed = True
        measured = 0.0
        for opt in map_actions_to_options(plan, self.mapping, self.options):
            current = bits_to_state(env.state.flags & TASK_BITS)
            if not opt.initiation(current):
                self._event(trace, "plan_abandoned", option=opt.id, reason="not initiable")
                completed = False
                break
            seg = self._run_option(opt, trace)
            trace.segments.append(seg)
            measured += seg.reward
            if not seg.success:
                self._event(trace, "plan_abandoned", option=opt.id, reason="option failed")
                completed = False
                break
            if env.done:
                break
        if plan.steps and completed and env.done_reason != DoneReason.VIOLATION:
            if self.best_quality is None or measured >= self.best_quality:
                self.best_plan, self.best_quality = plan.steps, measured
        if not env.done:
            self._explore(trace)

        for opt in self.options.values():
            train_option(opt, self.backend)
        self._update_library(trace)

        trace.steps = env.t
        trace.done_reason = env.done_reason
        trace.episode_return = math.fsum(s.reward for s in trace.segments)
        if env.done_reason == DoneReason.VIOLATION:
            trace.violation_step = env.t
        return trace

    def _update_library(self, trace: EpisodeTrace) -> None:
        cfg = self.cfg
        for opt in self.options.values():
            if opt.label is None or opt.exploring(cfg.exploration_count, cfg.sr_threshold):
                continue
            outcome = try_add_skill(self.library, opt, opt.label,
                                    provenance(self.world_id, self.spec.task_id, self.episode))
            if outcome in (AddOutcome.ADDED, AddOutcome.REPLACED):
                self._event(trace, f"skill_{outcome.value}", option=opt.id, label=str(opt.label),
                            sr=opt.success_rate)

    # -- checkpoints -------------------------------------------------------

    def checkpoint(self) -> dict[str, Any]:
        from .skills import qtable_to_json

        def st(s: SymbolicState) -> list[str]:
            return [str(p) for p in s]

        return {
            "version": 1,
            "world": self.world_id,
            "task": self.spec.task_id,
            "episode": self.episode,
            "domain": serialize_domain(self.domain),
            "mapping": dict(self.mapping.pairs),
            "model_pairs": {k: [[st(b), st(a)] for b, a in v] for k, v in self.model_pairs.items()},
            "stats": {
                k: {"sr": repr(s.sr), "under_exploration": s.under_exploration, "weight": repr(s.weight),
                    "runs": self.options[self.mapping[k]].runs,
                    "history": [int(x) for x in self.options[self.mapping[k]].success_history],
                    "label": str(self.options[self.mapping[k]].label)}
                for k, s in self.stats().items()
            },
            "reward_dictionary": [
                {"before": st(b), "after": st(a), "rewards": [repr(r) for r in v]}
                for (b, a), v in self.rdict.entries.items()
            ],
            "best_plan": list(self.best_plan) if self.best_plan is not None else None,
            "best_quality": repr(self.best_quality) if self.best_quality is not None else None,
            "options": {k: qtable_to_json(o.policy) for k, o in self.options.items()},
        }

    def restore(self, data: Mapping[str, Any]) -> None:
        """Resume from :meth:`checkpoint` output (RNG state is not restored)."""
        from .annotator import parse_label
        from .skills import qtable_from_json
        from .symbolic import parse_domain

        domain = parse_domain(data["domain"])
        self.models = dict(domain.actions)
        self.model_pairs = {
            k: [(SymbolicState.of(*b), SymbolicState.of(*a)) for b, a in v] for k, v in data["model_pairs"].items()
        }
        self.by_signature = {effect_signature(*v[0]): k for k, v in self.model_pairs.items()}
        self.rdict = RewardDictionary()
        for e in data["reward_dictionary"]:
            self.rdict.entries[(SymbolicState.of(*e["before"]), SymbolicState.of(*e["after"]))] = [
                float(r) for r in e["rewards"]]
        self.mapping = OptionMapping(dict(data["mapping"]))
        self.options = {}
        for name, model in self.models.items():
            oid = self.mapping[name]
            opt = SymbolicOption.from_model(model, qtable_from_json(data["options"][oid]), self.cfg.history_capacity)
            opt.id = oid
            s = data["stats"][name]
            opt.runs = int(s["runs"])
            opt.success_history.extend(bool(x) for x in s["history"])
            opt.label = parse_label(s["label"]) if s.get("label") not in (None, "None") else None
            self.options[oid] = opt
        self.best_plan = tuple(data["best_plan"]) if data.get("best_plan") else None
        self.best_quality = float(data["best_quality"]) if data.get("best_quality") else None
        self.episode = int(data["episode"])
