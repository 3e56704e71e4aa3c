import json
import math

import numpy as np
import pytest

from soarl.annotator import MockBackend
from soarl.controller import (
    ActionModelStats,
    ControllerConfig,
    MetaController,
    MissingPair,
    OptionMapping,
    RewardDictionary,
    UnmappedAction,
    learn_action_model,
    map_actions_to_options,
    refine_action_model,
    reward_weight,
    update_goal,
)
from soarl.officeworld import TASK_VOCABULARY, DoneReason, bundled_map, task
from soarl.options import QTable, SymbolicOption
from soarl.planner import Plan
from soarl.symbolic import ActionModel, Domain, SymbolicState, SymbolicTransition, apply, props

S = SymbolicState.of
ALL4 = props(["haveCoffee", "haveMail", "deliveredCoffee", "deliveredMail"])


def test_learn_from_empty_state():
    m = learn_action_model(SymbolicTransition(S(), S("haveCoffee"), 0.0), TASK_VOCABULARY)
    assert m.eff_pos == props(["haveCoffee"]) and m.eff_neg == frozenset()
    assert m.pre_pos == frozenset() and m.pre_neg == ALL4


def test_learn_deliver_model():
    m = learn_action_model(SymbolicTransition(S("haveCoffee"), S("deliveredCoffee"), 1.0), TASK_VOCABULARY, "act2")
    assert m.name == "act2"
    assert m.eff_pos == props(["deliveredCoffee"]) and m.eff_neg == props(["haveCoffee"])
    assert m.pre_pos == props(["haveCoffee"])
    assert m.pre_neg == props(["haveMail", "deliveredCoffee", "deliveredMail"])


def test_refinement_intersects_preconditions():
    m = learn_action_model(SymbolicTransition(S(), S("haveCoffee"), 0.0), TASK_VOCABULARY)
    r = refine_action_model(m, S("deliveredMail"), TASK_VOCABULARY)
    assert r.pre_pos == frozenset()
    assert r.pre_neg == props(["haveCoffee", "haveMail", "deliveredCoffee"])
    assert (r.eff_pos, r.eff_neg) == (m.eff_pos, m.eff_neg)
    m2 = learn_action_model(SymbolicTransition(S("haveCoffee", "haveMail"), S("haveMail", "deliveredCoffee"), 1.0),
                            TASK_VOCABULARY)
    r2 = refine_action_model(m2, S("haveCoffee"), TASK_VOCABULARY)
    assert r2.pre_pos == props(["haveCoffee"])
    # refining can only shrink
    assert r2.pre_pos <= m2.pre_pos and r2.pre_neg <= m2.pre_neg


def _stats(sr, exploring):
    return ActionModelStats(ActionModel("a"), sr, exploring)


@pytest.mark.parametrize("rewards,sr,exploring,expected", [
    ([1.0, 0.5], 1.0, False, 0.75),
    ([0.0], 0.0, True, 1.0),
    ([2.0], 0.5, True, 2.5),
])
def test_reward_weight(rewards, sr, exploring, expected):
    d = RewardDictionary()
    for r in rewards:
        d.record(S(), S("haveCoffee"), r)
    assert reward_weight(d, (S(), S("haveCoffee")), _stats(sr, exploring), 1.0) == expected


def test_reward_weight_pools_pairs_and_rejects_unseen():
    d = RewardDictionary()
    d.record(S(), S("haveCoffee"), 1.0)
    d.record(S("haveMail"), S("haveMail", "haveCoffee"), 0.0)
    d.record(S("haveMail"), S("haveMail", "haveCoffee"), 0.5)
    pairs = [(S(), S("haveCoffee")), (S("haveMail"), S("haveMail", "haveCoffee"))]
    assert reward_weight(d, pairs, _stats(1.0, False), 1.0) == 0.5
    with pytest.raises(MissingPair):
        reward_weight(d, (S(), S("haveMail")), _stats(1.0, False), 1.0)


def test_reward_dictionary_contract():
    d = RewardDictionary()
    assert d.record(S(), S("haveMail"), -0.5)
    assert not d.record(S(), S("haveMail"), 0.5)
    assert d.lengths() == {(S(), S("haveMail")): 2} and d.mean((S(), S("haveMail"))) == 0.0
    with pytest.raises(ValueError):
        d.record(S("haveMail"), S("haveMail"), 1.0)


def test_map_actions_to_options():
    o1 = SymbolicOption.from_model(ActionModel("act1"), QTable(2, 2))
    o2 = SymbolicOption.from_model(ActionModel("act2"), QTable(2, 2))
    opts = {"o1": o1, "o2": o2}
    mapping = OptionMapping({"act1": "o1", "act2": "o2"})
    assert map_actions_to_options(Plan(("act1", "act2"), 0.0), mapping, opts) == [o1, o2]
    assert map_actions_to_options((), mapping, opts) == []
    with pytest.raises(UnmappedAction):
        map_actions_to_options(["act3"], mapping, opts)
    with pytest.raises(UnmappedAction):
        map_actions_to_options(["act1"], mapping, {"o2": o2})


def test_update_goal():
    d = RewardDictionary()
    dom = Domain(TASK_VOCABULARY, {})
    goal = S("deliveredCoffee", "deliveredMail")
    assert update_goal(d, dom, S(), goal) == goal
    d.record(S(), S("haveCoffee"), 0.0)
    assert update_goal(d, dom, S(), goal) == goal
    d.record(S("haveCoffee"), S("deliveredCoffee"), 1.0)
    assert update_goal(d, dom, S()) == S("deliveredCoffee")
    # a detour with a bad mean is not chosen
    d.record(S(), S("haveMail"), -2.0)
    assert update_goal(d, dom, S()) == S("deliveredCoffee")


# -- episodes ----------------------------------------------------------------

def _controller(tid=1, seed=0, **cfg):
    return MetaController(bundled_map("office_world_A"), task(tid), ControllerConfig(**cfg), MockBackend(),
                          seed=seed)


def test_first_episode_is_global_exploration():
    mc = _controller()
    tr = mc.run_episode()
    assert tr.plan == () and tr.plan_source == "none"
    assert tr.segments and all(s.kind == "global" for s in tr.segments)
    assert mc.models  # exploration produced at least one model
    assert len(mc.mapping) == len(mc.domain.actions)


@pytest.fixture(scope="module")
def converged():
    mc = _controller(tid=1, seed=3)
    recent = []
    for _ in range(3000):
        tr = mc.run_episode()
        recent.append(tr.success)
        if len(recent) >= 50 and all(recent[-50:]):
            break
    assert all(recent[-50:]), "task 1 did not converge"
    return mc


def test_converged_trace_is_two_options(converged):
    tr = converged.run_episode()
    assert tr.done_reason == DoneReason.TASK_COMPLETE
    assert [s.kind for s in tr.segments] == ["option", "option"]
    assert [s.label for s in tr.segments] == ["act(start, coffee)", "act(coffee, office)"]
    assert tr.segments[0].after == S("haveCoffee") and tr.segments[1].after == S("deliveredCoffee")


def test_failed_option_abandons_plan_then_explores(converged):
    saved = json.loads(json.dumps(converged.checkpoint()))
    mc = _controller(tid=1, seed=11, option_budget=1)
    mc.restore(saved)
    for _ in range(20):
        tr = mc.run_episode()
        if tr.segments and tr.segments[0].kind == "option" and not tr.segments[0].success:
            break
    else:
        pytest.fail("no budget-exhausted option in 20 episodes")
    assert tr.segments[0].steps == 1
    assert any(e["event"] == "plan_abandoned" for e in tr.events)
    assert len(tr.segments) > 1 and all(s.kind == "global" for s in tr.segments[1:])
    assert tr.done_reason != DoneReason.RUNNING


def test_checkpoint_roundtrip(converged):
    data = json.loads(json.dumps(converged.checkpoint()))
    mc = _controller(tid=1, seed=99)
    mc.restore(data)
    assert mc.checkpoint() == data
    assert mc.domain == converged.domain
    assert mc.best_plan == converged.best_plan


@pytest.fixture(scope="module")
def task3_history():
    mc = _controller(tid=3, seed=1)
    traces, qualities = [], []
    for _ in range(400):
        traces.append(mc.run_episode())
        qualities.append(mc.best_quality)
        assert len(mc.mapping) == len(mc.domain.actions)
        assert set(mc.mapping.pairs.values()) == set(mc.options)
    return mc, traces, qualities


def test_models_have_provenance(task3_history):
    mc, _, _ = task3_history
    for name, model in mc.models.items():
        pairs = mc.model_pairs[name]
        assert pairs and all(p in mc.rdict for p in pairs)
        for before, after in pairs:
            assert model.eff_pos == after.holds - before.holds
            assert model.eff_neg == before.holds - after.holds
            # every evidenced before-state satisfies the refined preconditions
            assert model.pre_pos <= before.holds and not (model.pre_neg & before.holds)


def test_weights_match_brute_force(task3_history):
    mc, traces, _ = task3_history
    c = mc.cfg.c
    for tr in traces:
        for name, w in tr.weights.items():
            sr, exploring = tr.stats[name]
            raw = []
            for pair in tr.model_pairs[name]:
                raw += mc.rdict[pair][: tr.reward_lengths[pair]]
            expected = sum(raw) / len(raw) + (c * (1 - sr) if exploring else 0.0)
            assert w == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_best_quality_monotone(task3_history):
    _, _, qualities = task3_history
    seen = [q for q in qualities if q is not None]
    assert seen and all(b >= a for a, b in zip(seen, seen[1:]))


def test_successful_segments_match_model_effects(task3_history):
    mc, traces, _ = task3_history
    checked = 0
    for tr in traces:
        for seg in tr.segments:
            if seg.kind == "option" and seg.success:
                model = mc.options[seg.option].as_action()
                assert apply(seg.before, model) == seg.after
                checked += 1
    assert checked > 100


def test_q_values_bounded(task3_history):
    mc, _, _ = task3_history
    bound = (mc.cfg.psi + 2.0) / (1 - mc.cfg.gamma)
    for opt in mc.options.values():
        assert np.isfinite(opt.policy.values).all()
        assert np.abs(opt.policy.values).max() <= bound


def test_episode_return_is_sum_of_segments(task3_history):
    _, traces, _ = task3_history
    for tr in traces:
        assert tr.episode_return == math.fsum(s.reward for s in tr.segments)
        assert tr.steps == sum(s.steps for s in tr.segments)
