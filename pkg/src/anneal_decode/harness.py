"""Theory-of-Mind vignette evaluation: loading, prompting, answer
extraction, per-condition scoring and report files.

Vignette files are JSON lines with the fields of :class:`Vignette`. To use
BigToM, map each backward-inference item to one line: story text ->
``story``, belief question -> ``question``, the two belief statements ->
``options`` and the index of the correct one -> ``answer_index``; set
``condition`` to ``TB`` or ``FB``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import random
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ModelBackend
from .sampler import StrategyConfig, decode

log = logging.getLogger(__name__)

CONDITIONS = ("TB", "FB")
INFERENCES = ("forward", "backward")
UNPARSEABLE = -1
REPORT_HEADER = ["strategy", "condition", "correct", "incorrect", "unparseable", "accuracy"]


class VignetteError(ValueError):
    pass


def normalize(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class Vignette:
    id: str
    inference: str
    condition: str
    story: str
    question: str
    options: tuple[str, str]
    answer_index: int

    def __post_init__(self):
        if self.inference not in INFERENCES:
            raise VignetteError(f"inference must be one of {INFERENCES}, got {self.inference!r}")
        if self.condition not in CONDITIONS:
            raise VignetteError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if len(self.options) != 2:
            raise VignetteError(f"need exactly 2 options, got {len(self.options)}")
        if normalize(self.options[0]) == normalize(self.options[1]):
            raise VignetteError("options are identical after normalization")
        if self.answer_index not in (0, 1):
            raise VignetteError(f"answer_index must be 0 or 1, got {self.answer_index!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["options"] = list(self.options)
        return json.dumps(d, sort_keys=True)


_FIELDS = {"id": str, "inference": str, "condition": str, "story": str, "question": str,
           "options": list, "answer_index": int}


def parse_vignette(obj) -> Vignette:
    if not isinstance(obj, dict):
        raise VignetteError("expected a JSON object")
    for name, typ in _FIELDS.items():
        if name not in obj:
            raise VignetteError(f"missing field {name!r}")
        if not isinstance(obj[name], typ) or isinstance(obj[name], bool):
            raise VignetteError(f"field {name!r} must be {typ.__name__}")
    if not all(isinstance(o, str) for o in obj["options"]):
        raise VignetteError("options must be strings")
    return Vignette(obj["id"], obj["inference"], obj["condition"], obj["story"],
                    obj["question"], tuple(obj["options"]), obj["answer_index"])


def load_vignettes(path: str | Path) -> list[Vignette]:
    """Read a JSONL vignette file. Errors carry the 1-based line number."""
    out, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                v = parse_vignette(json.loads(line))
            except (json.JSONDecodeError, VignetteError) as exc:
                raise VignetteError(f"{path}:{lineno}: {exc}") from None
            if v.id in seen:
                raise VignetteError(f"{path}:{lineno}: duplicate vignette id {v.id!r}")
            seen.add(v.id)
            out.append(v)
    if not out:
        log.warning("%s contains no vignettes", path)
    return out


def write_vignettes(vignettes: Sequence[Vignette], path: str | Path) -> None:
    atomic_write(path, "".join(v.to_json() + "\n" for v in vignettes))


def build_prompt(v: Vignette, strategy: StrategyConfig) -> str:
    lines = [
        v.story.strip(),
        "",
        f"Question: {v.question.strip()}",
        f"(a) {v.options[0].strip()}",
        f"(b) {v.options[1].strip()}",
        "Answer with (a) or (b).",
    ]
    if strategy.kind == "cot":
        lines.append(strategy.cot_template)
    else:
        lines.append("Answer:")
    return "\n".join(lines)


_ANSWER_RE = re.compile(r"answer\s*(?:is\s*)?:?\s*\(?([ab])(?![a-z])")
_PAREN_RE = re.compile(r"\(([ab])\)")


def extract_answer(text: str, options: Sequence[str]) -> int:
    """0 or 1 for the chosen option, ``UNPARSEABLE`` otherwise.

    Precedence: "answer: x" markers, then "(x)" markers, then a unique
    option-text match. Within a tier, conflicting hits are unparseable.
    """
    norm = normalize(text)
    for pattern in (_ANSWER_RE, _PAREN_RE):
        letters = set(pattern.findall(norm))
        if len(letters) == 1:
            return "ab".index(letters.pop())
        if len(letters) > 1:
            return UNPARSEABLE
    hits = [i for i, opt in enumerate(options) if normalize(opt) and normalize(opt) in norm]
    return hits[0] if len(hits) == 1 else UNPARSEABLE


@dataclass
class Cell:
    strategy: str
    condition: str
    correct: int = 0
    incorrect: int = 0
    unparseable: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.incorrect + self.unparseable

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


@dataclass
class EvalReport:
    cells: list[Cell]
    seeds: list[int]
    backend: str
    failures: int = 0
    instances: list[dict] = field(default_factory=list)

    def cell(self, strategy: str, condition: str) -> Cell:
        for c in self.cells:
            if c.strategy == strategy and c.condition == condition:
                return c
        raise KeyError((strategy, condition))

    def overall_accuracy(self, strategy: str) -> float:
        cells = [c for c in self.cells if c.strategy == strategy]
        total = sum(c.total for c in cells)
        return sum(c.correct for c in cells) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "seeds": list(self.seeds),
            "failures": self.failures,
            "cells": [dict(asdict(c), accuracy=c.accuracy) for c in self.cells],
            "instances": self.instances,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cells = [Cell(c["strategy"], c["condition"], c["correct"], c["incorrect"], c["unparseable"])
                 for c in d["cells"]]
        return cls(cells, list(d["seeds"]), d["backend"], d.get("failures", 0), list(d.get("instances", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for c in self.cells:
            w.writerow([c.strategy, c.condition, c.correct, c.incorrect, c.unparseable, repr(c.accuracy)])
        return buf.getvalue()


def instance_rng(seed: int, strategy: str, vignette_id: str) -> np.random.Generator:
    """Generator keyed by (seed, strategy, vignette) so results do not depend
    on evaluation order or worker count."""
    words = [seed, zlib.crc32(strategy.encode()), zlib.crc32(vignette_id.encode())]
    return np.random.default_rng(np.random.SeedSequence(words))


def _run_instance(backend, strategy, v, seed):
    prompt = backend.codec.encode(build_prompt(v, strategy)) if backend.codec else None
    if prompt is None:
        raise ValueError(f"backend {backend.name} has no text vocabulary")
    seq = decode(strategy, backend, prompt, instance_rng(seed, strategy.name, v.id))
    text = backend.codec.decode(seq.generated)
    return text, extract_answer(text, v.options)


def evaluate(
    vignettes: Sequence[Vignette],
    strategies: Sequence[StrategyConfig],
    backend: ModelBackend,
    seeds: Sequence[int],
    workers: int = 1,
    exclude_failures: bool = False,
) -> EvalReport:
    """Decode every (strategy, vignette, seed) instance and tally per condition.

    Unparseable answers are their own count and never correct. A backend
    failure counts as incorrect unless ``exclude_failures``.
    """
    if not vignettes or not strategies or not seeds:
        raise ValueError("evaluate needs at least one vignette, strategy and seed")
    jobs = [(s, v, seed) for s in strategies for v in vignettes for seed in seeds]

    def run(job):
        s, v, seed = job
        try:
            return _run_instance(backend, s, v, seed), None
        except Exception as exc:  # recorded per instance
            log.warning("%s on %s (seed %d) failed: %s", s.name, v.id, seed, exc)
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    conditions = [c for c in CONDITIONS if any(v.condition == c for v in vignettes)]
    cells = {(s.name, c): Cell(s.name, c) for s in strategies for c in conditions}
    instances, failures = [], 0
    for (s, v, seed), (outcome, error) in sorted(
        zip(jobs, results), key=lambda item: (item[0][0].name, item[0][1].id, item[0][2])
    ):
        cell = cells[(s.name, v.condition)]
        record = {"strategy": s.name, "vignette": v.id, "seed": seed}
        if error is not None:
            failures += 1
            record["error"] = error
            if not exclude_failures:
                cell.incorrect += 1
        else:
            text, pred = outcome
            record.update(prediction=pred, text=text)
            if pred == UNPARSEABLE:
                cell.unparseable += 1
            elif pred == v.answer_index:
                cell.correct += 1
            else:
                cell.incorrect += 1
        instances.append(record)
    ordered = [cells[(s.name, c)] for s in strategies for c in conditions]
    return EvalReport(ordered, list(seeds), backend.name, failures, instances)


def atomic_write(path: str | Path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def emit_report(report: EvalReport, path: str | Path, fmt: str = "json") -> Path:
    if fmt == "json":
        atomic_write(path, report.to_json())
    elif fmt == "csv":
        atomic_write(path, report.to_csv())
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return Path(path)


# Synthetic vignettes ------------------------------------------------------

_AGENTS = ["Maya", "Tomas", "Priya", "Jonah", "Leila", "Owen", "Sofia", "Kenji", "Amara", "Felix"]
_SCENARIOS = [
    # goal, place, initial state, changed state, cause,
    # action under the initial belief, action under the changed belief
    ("water the garden", "the garden shed", "the hose is connected to the tap",
     "the hose is disconnected from the tap", "a gust of wind knocks the hose loose",
     "walks straight to the tap and turns it on", "reattaches the hose before turning on the tap"),
    ("bake bread", "the kitchen", "the flour jar is full",
     "the flour jar is empty", "a roommate uses all the flour for pancakes",
     "starts measuring out the yeast", "writes flour on the shopping list"),
    ("read on the porch", "the porch", "the porch light works",
     "the porch light bulb is burnt out", "a power surge burns out the bulb",
     "carries a book outside after sunset", "takes a new bulb out to the porch"),
    ("catch the morning train", "the station", "the train leaves at 8:15",
     "the train leaves at 7:50", "the railway posts a schedule change",
     "arrives at the platform at 8:10", "arrives at the platform at 7:45"),
    ("feed the cat", "the pantry", "the cat food is on the top shelf",
     "the cat food is on the bottom shelf", "a neighbor reorganizes the pantry",
     "reaches up to the top shelf", "bends down to the bottom shelf"),
    ("fix the bicycle", "the garage", "the toolbox is on the workbench",
     "the toolbox is in the car trunk", "a sibling borrows the toolbox and leaves it in the trunk",
     "walks over to the workbench", "opens the car trunk"),
    ("irrigate the field", "the river bank", "the valve is closed",
     "the valve is open", "rainfall makes the river overflow and forces the valve open",
     "calls a neighbor and asks them to open the valve", "starts planting without touching the valve"),
    ("paint the fence", "the backyard", "the paint can is unopened",
     "the paint can has dried out", "someone leaves the lid off overnight",
     "brings a fresh brush to the backyard", "drives to the store for more paint"),
]


def generate_synthetic(count: int, seed: int) -> list[Vignette]:
    """Balanced TB/FB backward-inference vignettes from slot-filled templates.

    TB stories say the agent observes the change; FB stories say the agent
    "does not observe" it. The correct belief is the updated state for TB
    and the initial state for FB. Option order is shuffled per item.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(seed)
    out = []
    for i in range(count):
        condition = "TB" if i % 2 == 0 else "FB"
        agent = rng.choice(_AGENTS)
        goal, place, initial, changed, cause, act_initial, act_changed = rng.choice(_SCENARIOS)
        if condition == "TB":
            perception, action = f"{agent} observes this happen.", act_changed
        else:
            perception, action = f"{agent} does not observe this happen.", act_initial
        story = (
            f"{agent} wants to {goal}. {agent} goes to {place} and sees that {initial}. "
            f"While {agent} is busy, {cause}, so now {changed}. {perception} "
            f"Later, {agent} {action}."
        )
        believed = changed if condition == "TB" else initial
        other = initial if condition == "TB" else changed
        options = [f"{agent} believes that {believed}", f"{agent} believes that {other}"]
        answer = 0
        if rng.random() < 0.5:
            options.reverse()
            answer = 1
        out.append(Vignette(
            id=f"tom-{i + 1:04d}",
            inference="backward",
            condition=condition,
            story=story,
            question=f"What does {agent} believe?",
            options=tuple(options),
            answer_index=answer,
        ))
    return out
