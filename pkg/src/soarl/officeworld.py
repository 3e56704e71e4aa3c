"""Deterministic Office World gridworlds, their labeling function and entity registry."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .symbolic import Proposition, SymbolicState

Cell = tuple[int, int]

ACTIONS = ("up", "down", "left", "right")
MOVES = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}

# Bit layout shared with the rollout kernels.
HAVE_COFFEE, HAVE_MAIL, DELIVERED_COFFEE, DELIVERED_MAIL = 1, 2, 4, 8
ON_PLANT, ON_PRINTER = 16, 32
TASK_BITS = 0xF

TASK_PROPS = ("haveCoffee", "haveMail", "deliveredCoffee", "deliveredMail")
CONTACT_PROPS = ("onPlant", "onPrinter")
_BIT_PROPS = {
    HAVE_COFFEE: "haveCoffee",
    HAVE_MAIL: "haveMail",
    DELIVERED_COFFEE: "deliveredCoffee",
    DELIVERED_MAIL: "deliveredMail",
    ON_PLANT: "onPlant",
    ON_PRINTER: "onPrinter",
}
_PROP_BITS = {Proposition(v): k for k, v in _BIT_PROPS.items()}

TASK_VOCABULARY = frozenset(Proposition(p) for p in TASK_PROPS)
VOCABULARY = frozenset(Proposition(p) for p in TASK_PROPS + CONTACT_PROPS)


class MapParseError(ValueError):
    def __init__(self, row: int, col: int, message: str):
        super().__init__(f"row {row}, col {col}: {message}")
        self.row = row
        self.col = col


class EntityKind(str, Enum):
    COFFEE = "coffee"
    MAIL = "mail"
    OFFICE = "office"
    PLANT = "plant"
    PRINTER = "printer"
    START = "start"


# codes used by the kernels' cell_kind array
KIND_CODES = {None: 0, EntityKind.COFFEE: 1, EntityKind.MAIL: 2, EntityKind.OFFICE: 3,
              EntityKind.PLANT: 4, EntityKind.PRINTER: 5, EntityKind.START: 6}
_CONTACT_BITS = {EntityKind.PLANT: ON_PLANT, EntityKind.PRINTER: ON_PRINTER}


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    walls: frozenset[tuple[Cell, Cell]]
    placements: Mapping[Cell, EntityKind]
    name: str = "unnamed"

    def __post_init__(self):
        sym = set()
        for a, b in self.walls:
            for c in (a, b):
                if not self.in_bounds(c):
                    raise ValueError(f"wall cell {c} out of bounds")
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ValueError(f"wall {a}-{b} does not separate adjacent cells")
            sym.add((a, b))
            sym.add((b, a))
        object.__setattr__(self, "walls", frozenset(sym))
        object.__setattr__(self, "placements", dict(self.placements))
        for c in self.placements:
            if not self.in_bounds(c):
                raise ValueError(f"placement {c} out of bounds")

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def cells_of(self, kind: EntityKind) -> list[Cell]:
        return sorted((c for c, k in self.placements.items() if k == kind), key=lambda c: (c[1], c[0]))

    @property
    def start_cells(self) -> list[Cell]:
        return self.cells_of(EntityKind.START)

    def move(self, c: Cell, action: str) -> Cell:
        dx, dy = MOVES[action]
        n = (c[0] + dx, c[1] + dy)
        if not self.in_bounds(n) or (c, n) in self.walls:
            return c
        return n

    def cell_index(self, c: Cell) -> int:
        return c[1] * self.width + c[0]

    def index_cell(self, i: int) -> Cell:
        return (i % self.width, i // self.width)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def kinds_present(self) -> set[EntityKind]:
        return set(self.placements.values())


@dataclass(frozen=True)
class RawState:
    agent_pos: Cell
    have_coffee: bool = False
    have_mail: bool = False
    delivered_coffee: bool = False
    delivered_mail: bool = False

    @property
    def flags(self) -> int:
        return (HAVE_COFFEE * self.have_coffee | HAVE_MAIL * self.have_mail
                | DELIVERED_COFFEE * self.delivered_coffee | DELIVERED_MAIL * self.delivered_mail)

    @classmethod
    def from_flags(cls, pos: Cell, flags: int) -> "RawState":
        return cls(pos, bool(flags & HAVE_COFFEE), bool(flags & HAVE_MAIL),
                   bool(flags & DELIVERED_COFFEE), bool(flags & DELIVERED_MAIL))


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    deliver: frozenset[str]

    @property
    def goal(self) -> SymbolicState:
        return SymbolicState(frozenset(
            Proposition("deliveredCoffee" if d == "coffee" else "deliveredMail") for d in self.deliver))

    @property
    def required_mask(self) -> int:
        m = 0
        if "coffee" in self.deliver:
            m |= DELIVERED_COFFEE
        if "mail" in self.deliver:
            m |= DELIVERED_MAIL
        return m


TASKS = {
    1: TaskSpec(1, frozenset({"coffee"})),
    2: TaskSpec(2, frozenset({"mail"})),
    3: TaskSpec(3, frozenset({"coffee", "mail"})),
}


def task(task_id: int) -> TaskSpec:
    try:
        return TASKS[int(task_id)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown task id {task_id!r}; expected one of {sorted(TASKS)}") from None


class DoneReason(str, Enum):
    TASK_COMPLETE = "task_complete"
    VIOLATION = "violation"
    MAX_STEPS = "max_steps"
    RUNNING = "running"


@dataclass(frozen=True)
class StepOutcome:
    next_state: RawState
    reward: float
    done: bool
    done_reason: DoneReason

    def __post_init__(self):
        if (self.done_reason == DoneReason.RUNNING) == self.done:
            raise ValueError("done_reason must be running exactly when done is false")


@dataclass(frozen=True)
class RewardScheme:
    step_cost: float = -0.01
    task_reward: float = 1.0


# -- map documents ----------------------------------------------------------

_WALL = re.compile(r"^wall\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*-\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)$")


def load_map(text: str, name: str | None = None) -> GridMap:
    """Parse an ASCII map document.

    Layout: optional ``name <id>``, ``legend <char> <kind>`` lines, a ``grid:``
    block with one character per cell (``.`` is empty floor), then an
    optional ``walls:`` block of ``wall (x1,y1)-(x2,y2)`` lines.
    """
    legend: dict[str, EntityKind] = {}
    rows: list[tuple[int, str]] = []
    walls: list[tuple[Cell, Cell]] = []
    section = "header"
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip()
        stripped = line.strip()
        if section != "grid" and (not stripped or stripped.startswith("#")):
            continue
        if stripped == "grid:":
            section = "grid"
            continue
        if stripped == "walls:":
            section = "walls"
            continue
        if section == "header":
            parts = stripped.split()
            if parts[0] == "name" and len(parts) == 2:
                name = name or parts[1]
            elif parts[0] == "legend" and len(parts) == 3 and len(parts[1]) == 1:
                try:
                    kind = EntityKind(parts[2])
                except ValueError:
                    raise MapParseError(lineno, 0, f"unknown entity kind {parts[2]!r}") from None
                if parts[1] == ".":
                    raise MapParseError(lineno, 0, "'.' is reserved for empty cells")
                legend[parts[1]] = kind
            else:
                raise MapParseError(lineno, 0, f"unexpected header line {stripped!r}")
        elif section == "grid":
            if not stripped:
                continue
            rows.append((lineno, stripped))
        else:
            if stripped.startswith("#"):
                continue
            m = _WALL.match(stripped)
            if not m:
                raise MapParseError(lineno, 0, f"malformed wall {stripped!r}")
            x1, y1, x2, y2 = map(int, m.groups())
            walls.append(((x1, y1), (x2, y2)))
    if not rows:
        raise MapParseError(0, 0, "no grid block")
    width = len(rows[0][1])
    placements: dict[Cell, EntityKind] = {}
    for y, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise MapParseError(y, len(row), f"row width {len(row)} != {width}")
        for x, ch in enumerate(row):
            if ch == ".":
                continue
            if ch not in legend:
                raise MapParseError(y, x, f"character {ch!r} not in legend")
            placements[(x, y)] = legend[ch]
    try:
        return GridMap(width, len(rows), frozenset(walls), placements, name or "unnamed")
    except ValueError as e:
        raise MapParseError(0, 0, str(e)) from None


def dump_map(grid: GridMap) -> str:
    chars = {EntityKind.COFFEE: "C", EntityKind.MAIL: "M", EntityKind.OFFICE: "O",
             EntityKind.PLANT: "*", EntityKind.PRINTER: "P", EntityKind.START: "S"}
    out = [f"name {grid.name}"]
    for kind in sorted(grid.kinds_present(), key=lambda k: k.value):
        out.append(f"legend {chars[kind]} {kind.value}")
    out.append("grid:")
    for y in range(grid.height):
        out.append("".join(chars.get(grid.placements.get((x, y)), ".") for x in range(grid.width)))
    out.append("walls:")
    seen = set()
    for a, b in sorted(grid.walls):
        if (b, a) in seen:
            continue
        seen.add((a, b))
        out.append(f"wall ({a[0]},{a[1]})-({b[0]},{b[1]})")
    return "\n".join(out) + "\n"


def bundled_map(name: str) -> GridMap:
    """Load a map shipped with the package, e.g. ``office_world_A``."""
    text = resources.files("soarl.data.maps").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return load_map(text, name)


def read_map(path_or_name: str) -> GridMap:
    import os

    if os.path.exists(path_or_name):
        with open(path_or_name, encoding="utf-8") as fh:
            return load_map(fh.read(), os.path.splitext(os.path.basename(path_or_name))[0])
    return bundled_map(path_or_name)


# -- dynamics ---------------------------------------------------------------

def reset(grid: GridMap, seed) -> RawState:
    starts = grid.start_cells
    if not starts:
        raise ValueError(f"map {grid.name} has no start cells")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return RawState(starts[int(rng.integers(len(starts)))])


def transition_flags(kind: EntityKind | None, flags: int) -> int:
    if kind == EntityKind.COFFEE and not flags & (HAVE_COFFEE | DELIVERED_COFFEE):
        flags |= HAVE_COFFEE
    elif kind == EntityKind.MAIL and not flags & (HAVE_MAIL | DELIVERED_MAIL):
        flags |= HAVE_MAIL
    elif kind == EntityKind.OFFICE:
        if flags & HAVE_COFFEE:
            flags = (flags & ~HAVE_COFFEE) | DELIVERED_COFFEE
        if flags & HAVE_MAIL:
            flags = (flags & ~HAVE_MAIL) | DELIVERED_MAIL
    return flags


def step(grid: GridMap, state: RawState, action: str, spec: TaskSpec,
         rewards: RewardScheme = RewardScheme()) -> StepOutcome:
    pos = grid.move(state.agent_pos, action)
    before = state.flags
    after = transition_flags(grid.placements.get(pos), before)
    newly = (after & ~before) & spec.required_mask
    reward = rewards.step_cost + rewards.task_reward * bin(newly).count("1")
    done = (after & spec.required_mask) == spec.required_mask
    return StepOutcome(RawState.from_flags(pos, after), reward, done,
                       DoneReason.TASK_COMPLETE if done else DoneReason.RUNNING)


def label_bits(grid: GridMap, state: RawState) -> int:
    return state.flags | _CONTACT_BITS.get(grid.placements.get(state.agent_pos), 0)


def bits_to_state(bits: int) -> SymbolicState:
    return SymbolicState(frozenset(Proposition(p) for b, p in _BIT_PROPS.items() if bits & b))


def state_to_bits(state: SymbolicState) -> int:
    m = 0
    for p in state.holds:
        m |= _PROP_BITS[p]
    return m


def label_state(state: RawState, grid: GridMap) -> SymbolicState:
    return bits_to_state(label_bits(grid, state))


def task_view(sym: SymbolicState) -> SymbolicState:
    """Project a labeled state onto the task propositions used for planning."""
    return SymbolicState(sym.holds & TASK_VOCABULARY)


# -- entity registry --------------------------------------------------------

@dataclass(frozen=True)
class EntityRegistry:
    entities: Mapping[str, frozenset[Proposition]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entities", {k.lower(): frozenset(v) for k, v in self.entities.items()})

    def __contains__(self, name: str) -> bool:
        return name.lower() in self.entities

    def __getitem__(self, name: str) -> frozenset[Proposition]:
        return self.entities[name.lower()]

    def names(self) -> list[str]:
        return sorted(self.entities)

    def propositions(self) -> frozenset[Proposition]:
        out: frozenset[Proposition] = frozenset()
        for v in self.entities.values():
            out |= v
        return out

    def lookup(self, names: Iterable[str]) -> frozenset[Proposition]:
        out: set[Proposition] = set()
        for n in names:
            out |= self[n]
        return frozenset(out)


_ENTITY_PROPS = {
    EntityKind.COFFEE: ("haveCoffee",),
    EntityKind.MAIL: ("haveMail",),
    EntityKind.OFFICE: ("deliveredCoffee", "deliveredMail"),
    EntityKind.PLANT: ("onPlant",),
    EntityKind.PRINTER: ("onPrinter",),
}


def entity_registry(grid: GridMap) -> EntityRegistry:
    present = grid.kinds_present()
    return EntityRegistry({
        k.value: frozenset(Proposition(p) for p in ps) for k, ps in _ENTITY_PROPS.items() if k in present
    })


# -- compiled arrays for the kernels ----------------------------------------

@dataclass(frozen=True, eq=False)
class CompiledGrid:
    grid: GridMap
    next_cell: np.ndarray   # (n_cells, 4) int64
    cell_kind: np.ndarray   # (n_cells,) int64
    cell_label: np.ndarray  # (n_cells,) int64 contact bits


_COMPILED: dict[int, CompiledGrid] = {}


def compile_grid(grid: GridMap) -> CompiledGrid:
    hit = _COMPILED.get(id(grid))
    if hit is not None and hit.grid is grid:
        return hit
    n = grid.n_cells
    next_cell = np.zeros((n, 4), dtype=np.int64)
    kind = np.zeros(n, dtype=np.int64)
    label = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = grid.index_cell(i)
        for j, a in enumerate(ACTIONS):
            next_cell[i, j] = grid.cell_index(grid.move(c, a))
        k = grid.placements.get(c)
        kind[i] = KIND_CODES[k]
        label[i] = _CONTACT_BITS.get(k, 0)
    cg = CompiledGrid(grid, next_cell, kind, label)
    _COMPILED[id(grid)] = cg
    return cg
