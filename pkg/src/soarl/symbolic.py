"""Propositional states, STRIPS-style action models and the plain-text domain format."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

_IDENT = re.compile(r"^[^\s(),#]+$")
_PROP = re.compile(r"^(?P<name>[^\s(),#]+)(?:\((?P<args>[^()]*)\))?$")


class ParseError(ValueError):
    def __init__(self, line: int, token: str, message: str):
        super().__init__(f"line {line}: {message} (at {token!r})")
        self.line = line
        self.token = token


class NotExecutable(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Proposition:
    name: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not _IDENT.match(self.name):
            raise ValueError(f"invalid proposition name {self.name!r}")
        object.__setattr__(self, "args", tuple(self.args))
        for a in self.args:
            if not a or not _IDENT.match(a):
                raise ValueError(f"invalid proposition argument {a!r}")

    def __str__(self) -> str:
        if self.args:
            return f"{self.name}({','.join(self.args)})"
        return self.name

    @classmethod
    def parse(cls, text: str) -> "Proposition":
        m = _PROP.match(text.strip())
        if not m:
            raise ValueError(f"malformed proposition {text!r}")
        args = m.group("args")
        parts = tuple(a.strip() for a in args.split(",")) if args else ()
        return cls(m.group("name"), parts)


def prop(text: str | Proposition) -> Proposition:
    return text if isinstance(text, Proposition) else Proposition.parse(text)


def props(items: Iterable[str | Proposition]) -> frozenset[Proposition]:
    return frozenset(prop(p) for p in items)


@dataclass(frozen=True)
class SymbolicState:
    holds: frozenset[Proposition] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "holds", props(self.holds))

    @classmethod
    def of(cls, *items: str | Proposition) -> "SymbolicState":
        return cls(props(items))

    def __contains__(self, p) -> bool:
        return prop(p) in self.holds

    def __iter__(self):
        return iter(sorted(self.holds))

    def __len__(self) -> int:
        return len(self.holds)

    def __str__(self) -> str:
        return "{" + ", ".join(str(p) for p in self) + "}"

    def sort_key(self) -> tuple[str, ...]:
        return tuple(str(p) for p in self)


@dataclass(frozen=True)
class ActionModel:
    """Grounded operator. Effect sets may overlap; the add effect wins in `apply`."""

    name: str
    pre_pos: frozenset[Proposition] = frozenset()
    pre_neg: frozenset[Proposition] = frozenset()
    eff_pos: frozenset[Proposition] = frozenset()
    eff_neg: frozenset[Proposition] = frozenset()

    def __post_init__(self):
        if not self.name or not _IDENT.match(self.name):
            raise ValueError(f"invalid action name {self.name!r}")
        for f in ("pre_pos", "pre_neg", "eff_pos", "eff_neg"):
            object.__setattr__(self, f, props(getattr(self, f)))
        clash = self.pre_pos & self.pre_neg
        if clash:
            raise ValueError(f"{self.name}: contradictory preconditions {sorted(map(str, clash))}")

    def propositions(self) -> frozenset[Proposition]:
        return self.pre_pos | self.pre_neg | self.eff_pos | self.eff_neg


@dataclass(frozen=True)
class Domain:
    vocabulary: frozenset[Proposition] = frozenset()
    actions: Mapping[str, ActionModel] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", props(self.vocabulary))
        object.__setattr__(self, "actions", dict(self.actions))
        for name, a in self.actions.items():
            if name != a.name:
                raise ValueError(f"action keyed as {name!r} is named {a.name!r}")
            missing = a.propositions() - self.vocabulary
            if missing:
                raise ValueError(f"{name}: propositions outside vocabulary {sorted(map(str, missing))}")

    def __eq__(self, other):
        if not isinstance(other, Domain):
            return NotImplemented
        return self.vocabulary == other.vocabulary and dict(self.actions) == dict(other.actions)

    def __hash__(self):
        return hash((self.vocabulary, frozenset(self.actions.items())))


@dataclass(frozen=True)
class SymbolicTransition:
    before: SymbolicState
    after: SymbolicState
    extrinsic_reward: float = 0.0

    def __post_init__(self):
        if self.before == self.after:
            raise ValueError("a symbolic transition requires a state change")


def is_executable(state: SymbolicState, action: ActionModel) -> bool:
    return action.pre_pos <= state.holds and not (state.holds & action.pre_neg)


def apply(state: SymbolicState, action: ActionModel) -> SymbolicState:
    if not is_executable(state, action):
        raise NotExecutable(f"{action.name} is not executable in {state}")
    return SymbolicState((state.holds - action.eff_neg) | action.eff_pos)


# -- domain documents -------------------------------------------------------

_SECTIONS = ("pre+", "pre-", "eff+", "eff-")


def _split_list(token: str) -> list[str]:
    if token == "-":
        return []
    out, depth, cur = [], 0, []
    for ch in token:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def parse_domain(text: str) -> Domain:
    vocab: set[Proposition] = set()
    pending: list[tuple[int, str, dict[str, list[Proposition]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "prop":
            if len(tokens) != 2:
                raise ParseError(lineno, line, "expected 'prop <name>[(<arg>,...)]'")
            try:
                vocab.add(Proposition.parse(tokens[1]))
            except ValueError as e:
                raise ParseError(lineno, tokens[1], str(e)) from None
        elif head == "action":
            if len(tokens) != 10:
                raise ParseError(lineno, line, "expected 'action <name> pre+ .. pre- .. eff+ .. eff- ..'")
            name = tokens[1]
            parts: dict[str, list[Proposition]] = {}
            for i, key in enumerate(_SECTIONS):
                kw, lst = tokens[2 + 2 * i], tokens[3 + 2 * i]
                if kw != key:
                    raise ParseError(lineno, kw, f"expected section {key!r}")
                try:
                    parts[key] = [Proposition.parse(p) for p in _split_list(lst)]
                except ValueError as e:
                    raise ParseError(lineno, lst, str(e)) from None
            pending.append((lineno, name, parts))
        else:
            raise ParseError(lineno, head, "unknown declaration")

    actions: dict[str, ActionModel] = {}
    for lineno, name, parts in pending:
        if name in actions:
            raise ParseError(lineno, name, "duplicate action")
        for plist in parts.values():
            for p in plist:
                if p not in vocab:
                    raise ParseError(lineno, str(p), "undeclared proposition")
        try:
            actions[name] = ActionModel(name, parts["pre+"], parts["pre-"], parts["eff+"], parts["eff-"])
        except ValueError as e:
            raise ParseError(lineno, name, str(e)) from None
    return Domain(frozenset(vocab), actions)


def _fmt(ps: Iterable[Proposition]) -> str:
    items = sorted(str(p) for p in ps)
    return ",".join(items) if items else "-"


def serialize_domain(domain: Domain) -> str:
    lines = ["# propositions"]
    lines += [f"prop {p}" for p in sorted(str(p) for p in domain.vocabulary)]
    lines.append("# actions")
    for name in sorted(domain.actions):
        a = domain.actions[name]
        lines.append(
            f"action {name} pre+ {_fmt(a.pre_pos)} pre- {_fmt(a.pre_neg)} "
            f"eff+ {_fmt(a.eff_pos)} eff- {_fmt(a.eff_neg)}"
        )
    return "\n".join(lines) + "\n"
