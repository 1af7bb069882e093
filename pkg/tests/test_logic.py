import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import interval_clash_fraction
from policyscope import logic, tree
from policyscope.logic import IntervalBox, LogicProgram, Predicate

NAMES = ["θ", "θ̇"]


def prog(*preds, neuron=None):
    return LogicProgram(tuple(Predicate(*p) for p in preds), neuron)


predicate = st.builds(
    Predicate,
    st.integers(0, 2),
    st.sampled_from(["<=", ">"]),
    st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 2)),
)
program = st.lists(predicate, max_size=4).map(lambda ps: LogicProgram(tuple(ps)))


# ---------------------------------------------------------------- reduce

def test_reduce_clash():
    box, conflicts = logic.reduce([prog((0, "<=", 3.0), neuron="A"), prog((0, ">", 4.0), neuron="B")])
    assert box.bounds[0] == (4.0, 3.0)
    assert conflicts == [(0, ("A", "B"))]


def test_reduce_nested_upper_bounds():
    box, conflicts = logic.reduce([prog((0, "<=", 3.0)), prog((0, "<=", 5.0))])
    assert box.bounds == {0: (-math.inf, 3.0)}
    assert conflicts == []


def test_reduce_two_dimensions():
    box, conflicts = logic.reduce([prog((0, ">", 1.0), (0, "<=", 2.0)), prog((1, "<=", 0.0))])
    assert box == IntervalBox({0: (1.0, 2.0), 1: (-math.inf, 0.0)})
    assert conflicts == []


def test_boundary_touch_is_empty():
    # (-inf, 3] and (3, inf) share no point
    _, conflicts = logic.reduce([prog((0, "<=", 3.0)), prog((0, ">", 3.0))])
    assert len(conflicts) == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(program, min_size=1, max_size=5), st.randoms())
def test_reduce_order_free(programs, r):
    shuffled = programs[:]
    r.shuffle(shuffled)
    a, _ = logic.reduce(programs)
    b, _ = logic.reduce(shuffled)
    assert a == b
    # grouping: reduce the first half into one program, then combine
    half = len(programs) // 2
    merged = LogicProgram(tuple(p for q in programs[:half] for p in q.predicates))
    c, _ = logic.reduce([merged] + programs[half:])
    assert a == c


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_tree_paths_are_feasible(seed, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 3))
    y = X @ rng.normal(size=3) + np.sin(4 * X[:, 0])
    t = tree.fit_regression(X, y, tree.TreeConfig("friedman_mse", depth, 0.02, 0.0))
    for p in logic.programs_of_tree(t).values():
        assert p.is_consistent


# ---------------------------------------------------------------- conflicts

def test_conflict_rate_examples():
    assert logic.conflict_rate([[prog(), prog()]] * 3) == 0.0
    clash = [prog((0, "<=", 3.0)), prog((0, ">", 4.0))]
    assert logic.conflict_rate([clash] * 4) == 1.0
    assert logic.conflict_rate([clash, [prog((0, "<=", 3.0)), prog((0, "<=", 5.0))]]) == 0.5
    with pytest.raises(ValueError):
        logic.conflict_rate([])


def test_conflict_rate_two_thresholds_against_oracle():
    # neuron A splits s0 at 0.0, neuron B at 0.5; programs follow the true state
    rng = np.random.default_rng(0)
    s = rng.uniform(-1, 1, 500)
    a = [prog((0, "<=", 0.0)) if v <= 0 else prog((0, ">", 0.0)) for v in s]
    # B's program is chosen from a shifted state, so it sometimes disagrees with A
    shifted = s + rng.normal(scale=0.4, size=s.size)
    b = [prog((0, "<=", 0.5)) if v <= 0.5 else prog((0, ">", 0.5)) for v in shifted]
    rows = [[pa, pb] for pa, pb in zip(a, b)]
    expect = np.mean([
        interval_clash_fraction([[(p.feature, p.op, p.threshold) for p in q.predicates] for q in row])
        for row in rows
    ])
    got = logic.conflict_rate(rows)
    assert got == pytest.approx(expect, abs=1e-15)
    assert 0.0 < got < 1.0


@settings(max_examples=150, deadline=None)
@given(st.lists(program, min_size=1, max_size=4))
def test_conflict_fraction_matches_oracle(programs):
    clash, shared = logic.timestep_conflicts(programs)
    expect = interval_clash_fraction([[(p.feature, p.op, p.threshold) for p in q.predicates] for q in programs])
    assert (clash / shared if shared else 0.0) == pytest.approx(expect)


@settings(max_examples=150, deadline=None)
@given(st.lists(program, min_size=1, max_size=4), program)
def test_adding_program_never_lowers_clash_count(programs, extra):
    before, _ = logic.timestep_conflicts(programs)
    after, _ = logic.timestep_conflicts(programs + [extra])
    assert after >= before


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(program, min_size=1, max_size=3), min_size=1, max_size=6))
def test_conflict_rate_bounded(rows):
    assert 0.0 <= logic.conflict_rate(rows) <= 1.0


# ---------------------------------------------------------------- text

def test_render_examples():
    assert logic.render(prog()) == "None"
    assert logic.render(prog((1, "<=", 0.33)), NAMES) == "(θ̇ ≤ 0.33)"
    assert logic.render(prog((1, "<=", 0.33)), NAMES, ascii=True) == "(θ̇ <= 0.33)"
    assert logic.render(prog((0, "<=", 1.5))) == "(s0 ≤ 1.50)"
    two = prog((1, "<=", 0.44), (1, ">", -0.33))
    assert logic.render(two, NAMES) == "(θ̇ ≤ 0.44) ∧ (θ̇ > -0.33)"
    assert logic.render(prog((0, "<=", 0.1), (0, ">", 0.2)), NAMES) == "(conflict)"


def test_program_of():
    t = tree.fit_regression([[0.0], [1.0], [2.0], [3.0]], [0.0, 0.0, 10.0, 10.0],
                            tree.TreeConfig("friedman_mse", 1, 0.25, 0.0))
    assert logic.program_of(t, 0).predicates == (Predicate(0, "<=", 1.5),)
    assert logic.program_of(t, 1).predicates == (Predicate(0, ">", 1.5),)
    with pytest.raises(KeyError):
        logic.program_of(t, 2)


def test_parse_accepts_ascii_spellings():
    p = logic.parse("(θ̇ <= 0.44) && (θ̇ > −0.33)", NAMES)
    assert p.predicates == (Predicate(1, "<=", 0.44), Predicate(1, ">", -0.33))
    assert logic.parse("None").is_empty
    with pytest.raises(logic.ProgramParseError):
        logic.parse("(conflict)")
    with pytest.raises(logic.ProgramParseError):
        logic.parse("(φ <= 1.00)", NAMES)
    with pytest.raises(logic.ProgramParseError):
        logic.parse("θ <= 1", NAMES)


@settings(max_examples=100, deadline=None)
@given(program, st.booleans())
def test_render_parse_round_trip(p, ascii):
    names = ["x", "y", "z"]
    text = logic.render(p, names, ascii)
    if text == "(conflict)":
        return
    back = logic.parse(text, names)
    assert back.predicates == p.predicates
    assert logic.render(back, names, ascii) == text


def test_table_round_trip_with_conflict_rows():
    rows = [
        (0, [prog((1, "<=", 0.33)), prog((1, ">", 0.33))]),
        (1, [prog()]),
        (2, [None, prog((0, ">", -1.27))]),
    ]
    text = logic.render_table(rows, NAMES, ascii=True)
    assert text.splitlines()[0] == "| Neuron | Logic Program |"
    assert "| 2 | 0: (conflict) <br> 1: (θ > -1.27) |" in text
    back = logic.parse_table(text, NAMES)
    assert [n for n, _ in back] == ["0", "1", "2"]
    assert back[2][1][0] is None
    assert [p.predicates for p in back[0][1]] == [r.predicates for r in rows[0][1]]


def test_box_contains_matches_holds():
    r = random.Random(3)
    for _ in range(200):
        p = prog(*[(r.randrange(2), r.choice(["<=", ">"]), r.uniform(-1, 1)) for _ in range(3)])
        s = np.array([r.uniform(-1.5, 1.5), r.uniform(-1.5, 1.5)])
        assert p.box().contains(s) == p.holds(s)
