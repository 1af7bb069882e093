"""State-grounded logic programs built from decision paths.

A program is a conjunction of threshold predicates.  Conjunctions reduce to
one half-open interval ``(lo, hi]`` per state dimension: ``x <= c`` maps to
``(-inf, c]`` and ``x > c`` to ``(c, +inf)``; an interval is empty iff
``hi <= lo``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tree import DecisionTree, Predicate

__all__ = [
    "Predicate", "LogicProgram", "IntervalBox", "program_of", "programs_of_tree", "reduce",
    "conflict_rate", "render", "parse", "render_table", "parse_table", "ProgramParseError",
]

UNICODE_LE = "≤"
AND = " ∧ "


class ProgramParseError(ValueError):
    pass


@dataclass(frozen=True)
class LogicProgram:
    predicates: tuple[Predicate, ...] = ()
    neuron: object = None
    path: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))

    def __len__(self) -> int:
        return len(self.predicates)

    @property
    def is_empty(self) -> bool:
        return not self.predicates

    def box(self) -> "IntervalBox":
        return IntervalBox.from_predicates(self.predicates)

    @property
    def is_consistent(self) -> bool:
        return self.box().feasible

    def holds(self, state) -> bool:
        return all(bool(p.holds(state)) for p in self.predicates)


@dataclass
class IntervalBox:
    """Per-dimension ``(lo, hi]`` bounds; unconstrained dimensions are absent."""

    bounds: dict[int, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_predicates(cls, preds: Iterable[Predicate]) -> "IntervalBox":
        box = cls()
        for p in preds:
            box.add(p)
        return box

    def add(self, p: Predicate) -> None:
        lo, hi = self.bounds.get(p.feature, (-math.inf, math.inf))
        if p.op == "<=":
            hi = min(hi, p.threshold)
        else:
            lo = max(lo, p.threshold)
        self.bounds[p.feature] = (lo, hi)

    def empty_dims(self) -> list[int]:
        return sorted(j for j, (lo, hi) in self.bounds.items() if hi <= lo)

    @property
    def feasible(self) -> bool:
        return not self.empty_dims()

    def contains(self, state) -> bool:
        s = np.asarray(state)
        return all(lo < s[j] <= hi for j, (lo, hi) in self.bounds.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalBox):
            return NotImplemented
        return self.bounds == other.bounds


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------

def programs_of_tree(tree: DecisionTree, neuron=None) -> dict[int, LogicProgram]:
    """The path-id to program map of a fitted tree."""
    return {k: LogicProgram(tuple(preds), neuron, k) for k, preds in tree.enumerate_paths()}


def program_of(tree_paths, path: int, names: Sequence[str] | None = None, neuron=None) -> LogicProgram:
    """Program for one path of a tree (or of an ``enumerate_paths`` listing)."""
    if isinstance(tree_paths, DecisionTree):
        tree_paths = tree_paths.enumerate_paths()
    for k, preds in tree_paths:
        if k == path:
            if names is not None:
                for p in preds:
                    if not 0 <= p.feature < len(names):
                        raise ValueError(f"feature {p.feature} outside the {len(names)} state names")
            return LogicProgram(tuple(preds), neuron, k)
    raise KeyError(f"unknown path id {path}")


# --------------------------------------------------------------------------
# reduction and conflicts
# --------------------------------------------------------------------------

def reduce(programs: Sequence[LogicProgram]) -> tuple[IntervalBox, list[tuple[int, tuple]]]:
    """Intersect programs dimension by dimension.

    Returns the tightest box and, for every dimension whose intersection is
    empty, ``(feature, (upper_bound_source, lower_bound_source))``: the neuron
    holding the smallest upper bound and the one holding the largest lower
    bound.  Ties between sources go to the earliest program.
    """
    box = IntervalBox()
    hi_src: dict[int, object] = {}
    lo_src: dict[int, object] = {}
    for idx, prog in enumerate(programs):
        src = prog.neuron if prog.neuron is not None else idx
        for p in prog.predicates:
            lo, hi = box.bounds.get(p.feature, (-math.inf, math.inf))
            if p.op == "<=" and p.threshold < hi:
                hi_src[p.feature] = src
            elif p.op == ">" and p.threshold > lo:
                lo_src[p.feature] = src
            box.add(p)
    conflicts = [(j, (hi_src[j], lo_src[j])) for j in box.empty_dims()]
    return box, conflicts


def timestep_conflicts(programs: Sequence[LogicProgram]) -> tuple[int, int]:
    """``(clashing dims, dims constrained by >= 2 neurons)`` for one timestep."""
    per_dim: dict[int, list[tuple[float, float]]] = {}
    for idx, prog in enumerate(programs):
        for j, b in prog.box().bounds.items():
            per_dim.setdefault(j, []).append(b)
    shared = clash = 0
    for bounds in per_dim.values():
        if len(bounds) < 2:
            continue
        shared += 1
        lo = max(b[0] for b in bounds)
        hi = min(b[1] for b in bounds)
        if hi <= lo:
            clash += 1
    return clash, shared


def conflict_rate(interpreted: Sequence[Sequence[LogicProgram]]) -> float:
    """Mean over timesteps of the fraction of shared dimensions that clash.

    A dimension is *shared* at a timestep when at least two neurons'
    programs constrain it; timesteps without shared dimensions count as 0.
    """
    if len(interpreted) == 0:
        raise ValueError("conflict_rate needs at least one timestep")
    total = 0.0
    for programs in interpreted:
        clash, shared = timestep_conflicts(programs)
        if shared:
            total += clash / shared
    return total / len(interpreted)


# --------------------------------------------------------------------------
# text form
# --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _name(names: Sequence[str] | None, j: int) -> str:
    return names[j] if names is not None else f"s{j}"


def render(program: LogicProgram, names: Sequence[str] | None = None, ascii: bool = False) -> str:
    """Human-readable form, e.g. ``(theta_dot ≤ 0.33) ∧ (theta > -0.07)``.

    ``ascii=True`` spells the comparison ``<=``.  Empty programs render as
    ``None`` and self-contradictory ones as ``(conflict)``.
    """
    if program.is_empty:
        return "None"
    if not program.is_consistent:
        return "(conflict)"
    le = "<=" if ascii else UNICODE_LE
    return AND.join(
        f"({_name(names, p.feature)} {le if p.op == '<=' else '>'} {_fmt(p.threshold)})"
        for p in program.predicates
    )


_CLAUSE = re.compile(r"^\(\s*(?P<name>.+?)\s+(?P<op><=|≤|>)\s+(?P<num>[-−+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*\)$")
_SPLIT = re.compile(r"\s*(?:∧|&&)\s*")


def parse(text: str, names: Sequence[str] | None = None, neuron=None, path: int | None = None) -> LogicProgram:
    """Inverse of :func:`render` (``&&`` is accepted as a conjunction too)."""
    text = text.strip()
    if text == "None":
        return LogicProgram((), neuron, path)
    if text == "(conflict)":
        raise ProgramParseError("'(conflict)' carries no predicates")
    preds = []
    for clause in _SPLIT.split(text):
        m = _CLAUSE.match(clause)
        if not m:
            raise ProgramParseError(f"cannot parse clause {clause!r}")
        name = m["name"]
        if names is not None:
            if name not in names:
                raise ProgramParseError(f"unknown state name {name!r}")
            j = list(names).index(name)
        else:
            if not re.fullmatch(r"s\d+", name):
                raise ProgramParseError(f"unknown state name {name!r}")
            j = int(name[1:])
        op = ">" if m["op"] == ">" else "<="
        preds.append(Predicate(j, op, float(m["num"].replace("−", "-"))))
    return LogicProgram(tuple(preds), neuron, path)


def render_table(
    rows: Sequence[tuple[object, Sequence[LogicProgram | None]]],
    names: Sequence[str] | None = None,
    ascii: bool = False,
) -> str:
    """Markdown table with one row per neuron listing its numbered programs.

    ``None`` entries stand for programs known only to be contradictory.
    """
    lines = ["| Neuron | Logic Program |", "|---|---|"]
    for neuron, programs in rows:
        cell = " <br> ".join(
            f"{k}: {'(conflict)' if p is None else render(p, names, ascii)}" for k, p in enumerate(programs)
        )
        lines.append(f"| {neuron} | {cell} |")
    return "\n".join(lines) + "\n"


def parse_table(text: str, names: Sequence[str] | None = None) -> list[tuple[str, list[LogicProgram | None]]]:
    """Read :func:`render_table` output back; ``(conflict)`` entries become ``None``."""
    out = []
    for line in text.strip().splitlines()[2:]:
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        if len(cells) != 2:
            raise ProgramParseError(f"malformed table row {line!r}")
        neuron, body = cells
        programs: list[LogicProgram | None] = []
        for k, entry in enumerate(body.split("<br>")):
            label, _, prog = entry.strip().partition(": ")
            if label != str(k):
                raise ProgramParseError(f"expected path {k}, found {label!r}")
            programs.append(None if prog == "(conflict)" else parse(prog, names, neuron, k))
        out.append((neuron, programs))
    return out
