import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soarl.symbolic import (
    ActionModel,
    Domain,
    NotExecutable,
    ParseError,
    Proposition,
    SymbolicState,
    SymbolicTransition,
    apply,
    is_executable,
    parse_domain,
    props,
    serialize_domain,
)

P = props


def test_proposition_text_forms():
    assert str(Proposition("at", ("agent", "room1"))) == "at(agent,room1)"
    assert Proposition.parse("at(agent, room1)") == Proposition("at", ("agent", "room1"))
    assert Proposition.parse("haveCoffee") == Proposition("haveCoffee")
    assert Proposition("p", ("a",)) != Proposition("p", ("b",))
    with pytest.raises(ValueError):
        Proposition("has space")
    with pytest.raises(ValueError):
        Proposition("")


def test_state_is_a_set():
    assert SymbolicState.of("p", "q", "p") == SymbolicState.of("q", "p")
    assert len(SymbolicState.of("p", "q", "p")) == 2
    assert "p" in SymbolicState.of("p")
    assert str(SymbolicState.of("q", "p")) == "{p, q}"


@pytest.mark.parametrize("state,expected", [
    (("p", "q"), True),
    (("p", "r"), False),
    ((), False),
])
def test_is_executable_examples(state, expected):
    a = ActionModel("a", pre_pos=P(["p"]), pre_neg=P(["r"]))
    assert is_executable(SymbolicState.of(*state), a) is expected


def test_empty_preconditions_always_executable():
    assert is_executable(SymbolicState(), ActionModel("noop"))


def test_apply_coffee_delivery():
    deliver = ActionModel("deliver", P(["haveCoffee"]), eff_pos=P(["deliveredCoffee"]), eff_neg=P(["haveCoffee"]))
    assert apply(SymbolicState.of("haveCoffee"), deliver) == SymbolicState.of("deliveredCoffee")


def test_apply_identity_and_overlap():
    assert apply(SymbolicState.of("p"), ActionModel("id")) == SymbolicState.of("p")
    # deletion happens before addition, so an overlapping effect keeps the proposition
    both = ActionModel("both", eff_pos=P(["q"]), eff_neg=P(["q"]))
    assert apply(SymbolicState.of("p", "q"), both) == SymbolicState.of("p", "q")


def test_apply_requires_executability():
    with pytest.raises(NotExecutable):
        apply(SymbolicState(), ActionModel("a", pre_pos=P(["p"])))


def test_contradictory_preconditions_rejected():
    with pytest.raises(ValueError):
        ActionModel("bad", pre_pos=P(["p"]), pre_neg=P(["p"]))


def test_domain_vocabulary_closure():
    with pytest.raises(ValueError):
        Domain(P(["p"]), {"a": ActionModel("a", eff_pos=P(["q"]))})


def test_transition_needs_change():
    with pytest.raises(ValueError):
        SymbolicTransition(SymbolicState.of("p"), SymbolicState.of("p"))


VOCAB6 = [f"p{i}" for i in range(6)]


@st.composite
def action_models(draw, vocab=VOCAB6, name="a"):
    roles = draw(st.lists(st.integers(0, 4), min_size=len(vocab), max_size=len(vocab)))
    pre_pos = {v for v, r in zip(vocab, roles) if r == 1}
    pre_neg = {v for v, r in zip(vocab, roles) if r == 2}
    eff = draw(st.lists(st.integers(0, 3), min_size=len(vocab), max_size=len(vocab)))
    eff_pos = {v for v, r in zip(vocab, eff) if r in (1, 3)}
    eff_neg = {v for v, r in zip(vocab, eff) if r == 2}
    return ActionModel(name, P(pre_pos), P(pre_neg), P(eff_pos), P(eff_neg))


@settings(max_examples=200, deadline=None)
@given(action_models(), st.sets(st.sampled_from(VOCAB6)))
def test_apply_postconditions(action, holds):
    s = SymbolicState(P(holds))
    if not is_executable(s, action):
        return
    out = apply(s, action)
    assert action.eff_pos <= out.holds
    assert not out.holds & (action.eff_neg - action.eff_pos)
    assert apply(s, action) == out


def test_exhaustive_state_enumeration_matches_oracle():
    a = ActionModel("a", P(["p0", "p2"]), P(["p5"]), P(["p1"]), P(["p0"]))
    for bits in range(64):
        holds = {VOCAB6[i] for i in range(6) if bits >> i & 1}
        expect = {"p0", "p2"} <= holds and "p5" not in holds
        assert is_executable(SymbolicState(P(holds)), a) is expect


SMALLEST = """
prop haveCoffee
action getCoffee pre+ - pre- - eff+ haveCoffee eff- -
"""


def test_parse_smallest_document():
    d = parse_domain(SMALLEST)
    assert list(d.actions) == ["getCoffee"]
    assert d.actions["getCoffee"].eff_pos == P(["haveCoffee"])


@pytest.mark.parametrize("text,line", [
    ("prop p\naction a pre+ q pre- - eff+ - eff- -\n", 2),
    ("prop p\nbogus p\n", 2),
    ("prop\n", 1),
    ("prop p\naction a pre+ p pre- p eff+ - eff- -\n", 2),
    ("prop p\naction a pre+ p eff+ - pre- - eff- -\n", 2),
    ("prop p\naction a pre+ - pre- - eff+ p eff- -\naction a pre+ - pre- - eff+ p eff- -\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_domain(text)
    assert exc.value.line == line


def test_serialize_empty_domain():
    assert serialize_domain(Domain()) == "# propositions\n# actions\n"
    assert parse_domain(serialize_domain(Domain())) == Domain()


def test_serialize_is_canonical():
    acts = [ActionModel("b", eff_pos=P(["q"])), ActionModel("a", P(["p"]), eff_neg=P(["p"]))]
    d1 = Domain(P(["q", "p"]), {a.name: a for a in acts})
    d2 = Domain(P(["p", "q"]), {a.name: a for a in reversed(acts)})
    assert serialize_domain(d1) == serialize_domain(d2)
    assert serialize_domain(d1).splitlines()[1:3] == ["prop p", "prop q"]


@st.composite
def domains(draw):
    n_props = draw(st.integers(1, 6))
    vocab = [f"f{i}" if i % 2 else f"at(r{i},x)" for i in range(n_props)]
    n_actions = draw(st.integers(0, 5))
    acts = {}
    for k in range(n_actions):
        a = draw(action_models(vocab, f"act{k}"))
        acts[a.name] = a
    return Domain(P(vocab), acts)


@settings(max_examples=50, deadline=None)
@given(domains())
def test_roundtrip(domain):
    text = serialize_domain(domain)
    again = parse_domain(text)
    assert again == domain
    assert serialize_domain(again) == text


def test_comments_and_blank_lines():
    d = parse_domain("# header\n\nprop p  # trailing\naction a pre+ p pre- - eff+ - eff- p\n")
    assert d.actions["a"].eff_neg == P(["p"])


def test_itertools_corpus_roundtrip():
    # every combination of three roles for two propositions
    vocab = ["x", "y"]
    for roles in itertools.product(range(3), repeat=2):
        a = ActionModel("a", P(v for v, r in zip(vocab, roles) if r == 1),
                        P(v for v, r in zip(vocab, roles) if r == 2), P(["x"]), P([]))
        d = Domain(P(vocab), {"a": a})
        assert parse_domain(serialize_domain(d)) == d
