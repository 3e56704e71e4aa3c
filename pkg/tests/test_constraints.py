import itertools

import numpy as np
import pytest

from soarl.annotator import MockBackend
from soarl.constraints import (
    ContractViolation,
    ExperienceIndex,
    GuardedEnv,
    LimitationSet,
    NoExperience,
    RewardMachine,
    RMState,
    build_limitation_set,
    check_violation,
    guarded_step,
    predicted_reward,
    violations,
)
from soarl.officeworld import (
    ACTIONS,
    DoneReason,
    EntityKind,
    EntityRegistry,
    RawState,
    bundled_map,
    entity_registry,
    step,
    task,
)
from soarl.symbolic import Proposition, SymbolicState, props

S = SymbolicState.of
OPPOSITE = {"up": "down", "down": "up", "left": "right", "right": "left"}


def _lim(text, world="office_world_B"):
    return build_limitation_set(text, MockBackend(), entity_registry(bundled_map(world)))


def test_plants_and_printers():
    lim = _lim("Do not pass through plants and printers")
    assert lim.forbidden >= props(["onPlant", "onPrinter"])
    assert lim.entities == ("plant", "printer") and lim


def test_custom_registry_stone():
    reg = EntityRegistry({"stone": {Proposition("onStone")}, "key": {Proposition("haveKey")}})
    lim = build_limitation_set("Do not touch the stone", MockBackend(), reg)
    assert lim.forbidden == props(["onStone"])


def test_empty_constraint_disables_monitoring():
    lim = _lim("")
    assert lim.forbidden == frozenset() and not lim
    assert _lim("   ").forbidden == frozenset()


def test_empty_registry_rejected():
    with pytest.raises(ValueError):
        build_limitation_set("plants", MockBackend(), EntityRegistry({}))


def test_check_violation_examples():
    lim = LimitationSet(props(["onPlant", "onPrinter"]))
    assert check_violation(S("onPlant", "haveCoffee"), lim)
    assert violations(S("onPlant", "haveCoffee"), lim) == props(["onPlant"])
    assert not check_violation(S("haveCoffee"), LimitationSet(props(["onPlant"])))
    assert not check_violation(S("onPlant"), LimitationSet())


def test_check_violation_exhaustive():
    names = ["haveCoffee", "haveMail", "deliveredCoffee", "deliveredMail", "onPlant", "onPrinter"]
    for forbidden_bits in range(64):
        forbidden = props(n for i, n in enumerate(names) if forbidden_bits >> i & 1)
        lim = LimitationSet(forbidden)
        for bits in range(64):
            state = S(*(n for i, n in enumerate(names) if bits >> i & 1))
            brute = any(p in forbidden for p in state.holds)
            assert check_violation(state, lim) == brute


@pytest.mark.parametrize("r,lam,expected", [(-10.0, 0.1, -1.0), (0.0, 0.1, 0.0), (-3.0, 0.0, 0.0), (7.0, 0.0, 0.0)])
def test_predicted_reward(r, lam, expected):
    assert predicted_reward(r, lam) == pytest.approx(expected)


def test_experience_index():
    idx = ExperienceIndex()
    plant = props(["onPlant"])
    with pytest.raises(NoExperience):
        idx.lookup(plant, 0)
    idx.record(plant, 0, -1.0)
    idx.record(plant, 0, -2.0)
    assert idx.lookup(plant, 0) == -2.0
    with pytest.raises(NoExperience):
        idx.lookup(plant, 1)
    with pytest.raises(NoExperience):
        idx.lookup(props(["onPrinter"]), 0)


def test_reward_machine():
    rm = RewardMachine()
    rm.observe(False)
    assert rm.state == RMState.INIT
    rm.observe(True)
    rm.observe(False)
    assert rm.state == RMState.BROKEN
    rm.reset()
    assert rm.state == RMState.INIT


def _approach(grid, kind):
    """A (state, action) pair whose step lands on a cell of the given kind."""
    for cell in grid.cells_of(kind):
        for a in ACTIONS:
            src = grid.move(cell, OPPOSITE[a])
            if src != cell and grid.move(src, a) == cell and src not in grid.placements:
                return RawState(src), a
    raise AssertionError(f"no approach to {kind}")


def test_guarded_step_plant_in_world_a():
    g = bundled_map("office_world_A")
    lim = _lim("avoid plants", "office_world_A")
    s, a = _approach(g, EntityKind.PLANT)
    rm = RewardMachine(penalty=-1.0)
    out = guarded_step(g, s, a, task(1), lim, rm)
    assert out.done and out.done_reason == DoneReason.VIOLATION and out.reward == -1.0
    assert rm.state == RMState.BROKEN
    with pytest.raises(ContractViolation):
        guarded_step(g, out.next_state, a, task(1), lim, rm)
    # the same step without a constraint is a plain step
    rm2 = RewardMachine()
    assert guarded_step(g, s, a, task(1), LimitationSet(), rm2) == step(g, s, a, task(1))
    assert rm2.state == RMState.INIT


def test_guarded_step_printer_in_world_b():
    g = bundled_map("office_world_B")
    s, a = _approach(g, EntityKind.PRINTER)
    out = guarded_step(g, s, a, task(2), _lim("We need to be careful not to bump into any plants and printer."),
                       RewardMachine())
    assert out.done_reason == DoneReason.VIOLATION
    # plants only: the printer is harmless
    out = guarded_step(g, s, a, task(2), _lim("plants"), RewardMachine())
    assert out.done_reason == DoneReason.RUNNING


def test_empty_constraint_matches_env_step_on_random_traces():
    g = bundled_map("office_world_B")
    rng = np.random.default_rng(0)
    for episode in range(30):
        env = GuardedEnv(g, task(3), LimitationSet())
        s = env.reset(episode)
        while not env.done:
            a = ACTIONS[int(rng.integers(4))]
            ref = step(g, s, a, task(3))
            out = env.step(a)
            if env.t < env.max_steps:
                assert out == ref
            s = out.next_state


def test_guarded_env_max_steps_and_single_violation():
    g = bundled_map("office_world_A")
    env = GuardedEnv(g, task(1), LimitationSet(), max_steps=3)
    env.reset(0)
    reasons = [env.step("up").done_reason for _ in range(3)]
    assert reasons[-1] == DoneReason.MAX_STEPS and env.done
    with pytest.raises(ContractViolation):
        env.step("up")

    env = GuardedEnv(g, task(1), _lim("plants", "office_world_A"))
    rng = np.random.default_rng(2)
    hits = 0
    for episode in range(50):
        env.reset(rng)
        outs = []
        while not env.done:
            outs.append(env.step(ACTIONS[int(rng.integers(4))]))
        hits += sum(o.done_reason == DoneReason.VIOLATION for o in outs)
        assert sum(o.done_reason == DoneReason.VIOLATION for o in outs) <= 1
    assert hits > 0


def test_forbidden_mask_matches_limitation_set():
    g = bundled_map("office_world_B")
    assert GuardedEnv(g, task(1), _lim("plants and printers")).forbidden_mask == 16 | 32
    assert GuardedEnv(g, task(1), LimitationSet()).forbidden_mask == 0


def test_every_state_combination_is_checked_consistently():
    # the kernel-side bitmask test agrees with the set-based check for every label pattern
    names = ["haveCoffee", "haveMail", "deliveredCoffee", "deliveredMail", "onPlant", "onPrinter"]
    lim = _lim("plants and printers")
    mask = GuardedEnv(bundled_map("office_world_B"), task(1), lim).forbidden_mask
    for bits in itertools.product((0, 1), repeat=6):
        value = sum(b << i for i, b in enumerate(bits))
        state = S(*(n for n, b in zip(names, bits) if b))
        assert check_violation(state, lim) == bool(value & mask)
