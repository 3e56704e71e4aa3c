"""Semantic labels for options and the label-indexed skill library."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional

import numpy as np

from .annotator import (
    AnnotatorError,
    AnnotatorRequest,
    AnnotatorUnavailable,
    ParseFailure,
    RequestKind,
    SemanticLabel,
    canonical,
    complete,
    load_template,
    parse_label,
    render,
)
from .options import EpsilonSchedule, QTable, SymbolicOption
from .symbolic import SymbolicState

log = logging.getLogger(__name__)

LIBRARY_SCHEMA_VERSION = 1
DEFAULT_DOMAIN_INFO = (
    "Office World gridworld. Propositions: haveCoffee, haveMail, deliveredCoffee, deliveredMail. "
    "Objects: start, coffee, mail, office."
)


class SchemaVersionMismatch(ValueError):
    pass


class LibraryIOError(OSError):
    pass


def fallback_label(before: SymbolicState, after: SymbolicState) -> SemanticLabel:
    """Deterministic label built from the state diff, e.g. ``diff(havecoffee+)``."""
    added = sorted(str(p) for p in after.holds - before.holds)
    removed = sorted(str(p) for p in before.holds - after.holds)
    body = "".join(p + "+" for p in added) + "".join(p + "-" for p in removed)
    return SemanticLabel("diff", (body or "none",))


def _state_text(s: SymbolicState) -> str:
    return ", ".join(str(p) for p in s)


def label_request(s_before: SymbolicState, s_after: SymbolicState, last_label=None,
                  domain_info: str = DEFAULT_DOMAIN_INFO, metadata=None) -> AnnotatorRequest:
    prompt = render(
        load_template("label_transition"),
        domain=domain_info,
        last_label=str(last_label) if last_label is not None else "none",
        current_state=_state_text(s_before),
        next_state=_state_text(s_after),
    )
    return AnnotatorRequest(RequestKind.LABEL_TRANSITION, prompt, metadata or {})


def annotate_option(annotator, option: Optional[SymbolicOption], s_before: SymbolicState,
                    s_after: SymbolicState, last_label: Optional[SemanticLabel] = None, *,
                    max_retries: int = 2, fallback: bool = True, domain_info: str = DEFAULT_DOMAIN_INFO,
                    metadata=None) -> SemanticLabel:
    if s_before == s_after:
        raise ValueError("cannot label an option whose states do not differ")
    request = label_request(s_before, s_after, last_label, domain_info, metadata)
    error: Exception | None = None
    for _ in range(max_retries + 1):
        try:
            response = complete(annotator, request)
            return parse_label(response.raw)
        except ParseFailure as e:
            error = e
            log.debug("unparseable label response %r", e.raw)
        except AnnotatorError as e:
            error = e
    if fallback:
        label = fallback_label(s_before, s_after)
        log.info("annotator fell back to %s for option %s (%s)", label,
                 option.id if option is not None else "?", error)
        return label
    raise AnnotatorUnavailable(f"no usable label after {max_retries + 1} attempts: {error}")


@dataclass
class SkillRecord:
    label: SemanticLabel
    policy: QTable
    sr_at_save: float
    provenance: Mapping[str, Any] = field(default_factory=dict)


class AddOutcome(str, Enum):
    ADDED = "added"
    REPLACED = "replaced"
    REJECTED_LOW_SR = "rejected_low_sr"
    KEPT_EXISTING = "kept_existing"


@dataclass
class SkillLibrary:
    tau: float = 0.95
    records: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, label) -> bool:
        return canonical(label) in self.records

    def get(self, label) -> Optional[SkillRecord]:
        return self.records.get(canonical(label))

    def check(self) -> None:
        for label, rec in self.records.items():
            if rec.label != label:
                raise ValueError(f"record filed under {label} carries label {rec.label}")
            if rec.sr_at_save < self.tau:
                raise ValueError(f"record {label} has sr {rec.sr_at_save} below tau {self.tau}")


def try_add_skill(lib: SkillLibrary, option: SymbolicOption, label: SemanticLabel,
                  provenance: Mapping[str, Any] | None = None) -> AddOutcome:
    sr = option.success_rate
    if sr < lib.tau:
        return AddOutcome.REJECTED_LOW_SR
    label = canonical(label)
    record = SkillRecord(label, option.policy.copy(), sr, dict(provenance or {}))
    existing = lib.records.get(label)
    if existing is None:
        lib.records[label] = record
        return AddOutcome.ADDED
    if sr > existing.sr_at_save:
        lib.records[label] = record
        return AddOutcome.REPLACED
    return AddOutcome.KEPT_EXISTING


def lookup_and_reuse(lib: SkillLibrary, label: SemanticLabel, new_option: SymbolicOption) -> bool:
    rec = lib.records.get(canonical(label))
    if rec is None:
        return False
    new_option.policy.load_values(rec.policy)
    new_option.reused = True
    return True


# -- persistence ------------------------------------------------------------

def qtable_to_json(q: QTable) -> dict:
    per = 1 if q.key_mode == "position" else 16
    entries = {}
    for key in np.flatnonzero(np.any(q.values != 0.0, axis=1)).tolist():
        cell, flags = divmod(key, per)
        x, y = cell % q.width, cell // q.width
        name = f"{x},{y}" if per == 1 else f"{x},{y},{flags}"
        entries[name] = [repr(float(v)) for v in q.values[key]]
    return {
        "width": q.width,
        "height": q.height,
        "key_mode": q.key_mode,
        "alpha": repr(q.alpha),
        "gamma": repr(q.gamma),
        "epsilon": {"start": repr(q.epsilon.start), "end": repr(q.epsilon.end),
                    "decay_episodes": q.epsilon.decay_episodes},
        "entries": entries,
    }


def qtable_from_json(d: Mapping[str, Any]) -> QTable:
    eps = d.get("epsilon", {})
    q = QTable(int(d["width"]), int(d["height"]), d.get("key_mode", "position"), float(d["alpha"]),
               float(d["gamma"]),
               EpsilonSchedule(float(eps.get("start", 1.0)), float(eps.get("end", 0.05)),
                               int(eps.get("decay_episodes", 1800))))
    per = 1 if q.key_mode == "position" else 16
    for name, vals in d["entries"].items():
        parts = [int(v) for v in name.split(",")]
        key = (parts[1] * q.width + parts[0]) * per + (parts[2] if per == 16 else 0)
        q.values[key] = [float(v) for v in vals]
    return q


def library_to_json(lib: SkillLibrary) -> dict:
    lib.check()
    return {
        "version": LIBRARY_SCHEMA_VERSION,
        "tau": repr(lib.tau),
        "records": [
            {"label": str(label), "qtable": qtable_to_json(rec.policy), "sr": repr(rec.sr_at_save),
             "provenance": dict(rec.provenance)}
            for label, rec in sorted(lib.records.items())
        ],
    }


def library_from_json(d: Mapping[str, Any]) -> SkillLibrary:
    if d.get("version") != LIBRARY_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"skill library schema version {d.get('version')!r} != {LIBRARY_SCHEMA_VERSION}")
    lib = SkillLibrary(float(d["tau"]))
    for r in d["records"]:
        label = parse_label(r["label"])
        lib.records[label] = SkillRecord(label, qtable_from_json(r["qtable"]), float(r["sr"]),
                                         r.get("provenance", {}))
    lib.check()
    return lib


def save_library(lib: SkillLibrary, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(library_to_json(lib), fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise LibraryIOError(f"cannot write skill library {path}: {e}") from e


def load_library(path) -> SkillLibrary:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise LibraryIOError(f"cannot read skill library {path}: {e}") from e
    return library_from_json(data)


def provenance(world_id: str, task_id: int, episode: int, timestamp: float | None = None) -> dict:
    return {"world": world_id, "task": task_id, "episode": episode,
            "timestamp": time.time() if timestamp is None else timestamp}
