import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prd.problems import (
    Attribute,
    CellAttributes,
    Configuration,
    Row,
    RpmProblem,
    RuleEntry,
    RuleKind,
    RuleSystem,
    _largest_remainder,
    as_cell,
    complete_row,
    rows_of,
    split_folds,
    stratified_subset,
)

from conftest import make_problem


def test_configuration_parse_aliases():
    assert Configuration.parse("center") is Configuration.CENTER
    assert Configuration.parse("center_single") is Configuration.CENTER
    assert Configuration.parse("2x2Grid") is Configuration.GRID_2X2
    assert Configuration.parse("distribute_four") is Configuration.GRID_2X2
    assert Configuration.parse("distribute_nine") is Configuration.GRID_3X3
    assert Configuration.parse("left_center_single_right_center_single") is Configuration.LEFT_RIGHT
    assert Configuration.parse("up_center_single_down_center_single") is Configuration.UP_DOWN
    assert Configuration.parse("in_center_single_out_center_single") is Configuration.OUT_IN_CENTER
    assert Configuration.parse("in_distribute_four_out_center_single") is Configuration.OUT_IN_GRID


def test_configuration_parse_rejects_unknown():
    with pytest.raises(ValueError, match="unknown configuration"):
        Configuration.parse("diagonal")


def test_rule_entry_step_and_sign_gating():
    RuleEntry(Attribute.SIZE, RuleKind.PROGRESSION, step=2)
    RuleEntry(Attribute.COLOR, RuleKind.ARITHMETIC, sign=-1)
    with pytest.raises(ValueError):
        RuleEntry(Attribute.SIZE, RuleKind.PROGRESSION, step=3)
    with pytest.raises(ValueError):
        RuleEntry(Attribute.SIZE, RuleKind.PROGRESSION)
    with pytest.raises(ValueError):
        RuleEntry(Attribute.SIZE, RuleKind.CONSTANT, step=1)
    with pytest.raises(ValueError):
        RuleEntry(Attribute.SIZE, RuleKind.ARITHMETIC, sign=0)
    with pytest.raises(ValueError):
        RuleEntry(Attribute.SIZE, RuleKind.CONSTANT, sign=1)


def test_rule_entry_json_round_trip():
    entries = [
        RuleEntry(Attribute.TYPE, RuleKind.CONSTANT),
        RuleEntry(Attribute.SIZE, RuleKind.PROGRESSION, step=-2),
        RuleEntry(Attribute.COLOR, RuleKind.ARITHMETIC, sign=1),
        RuleEntry(Attribute.NUMBER_POSITION, RuleKind.DISTRIBUTE_THREE),
    ]
    for e in entries:
        assert RuleEntry.from_json(e.to_json()) == e


def full_rule_system(nonconstant=()):
    entries = []
    special = {e.attribute: e for e in nonconstant}
    for attr in Attribute:
        entries.append(special.get(attr, RuleEntry(attr, RuleKind.CONSTANT)))
    return RuleSystem(entries=tuple(entries))


def test_rule_system_requires_full_coverage():
    with pytest.raises(ValueError, match="missing"):
        RuleSystem(entries=(RuleEntry(Attribute.TYPE, RuleKind.CONSTANT),))
    entries = tuple(RuleEntry(a, RuleKind.CONSTANT) for a in Attribute)
    with pytest.raises(ValueError, match="duplicate"):
        RuleSystem(entries=entries + (RuleEntry(Attribute.TYPE, RuleKind.CONSTANT),))


def test_rule_system_lookup_and_nonconstant():
    prog = RuleEntry(Attribute.SIZE, RuleKind.PROGRESSION, step=1)
    rs = full_rule_system([prog])
    assert rs.entry(Attribute.SIZE) is prog
    assert rs.nonconstant() == (prog,)
    assert RuleSystem.from_json(rs.to_json()) == rs


def test_cell_attributes_normalizes_occupancy():
    attrs = CellAttributes(shape_type=1, size_level=2, color_level=3, occupancy=(3, 1, 3))
    assert attrs.occupancy == (1, 3)
    with pytest.raises(ValueError):
        CellAttributes(shape_type=-1, size_level=0, color_level=0)
    with pytest.raises(ValueError):
        CellAttributes(shape_type=0, size_level=0, color_level=0, occupancy=())
    assert CellAttributes.from_json(attrs.to_json()) == attrs


def test_as_cell_validation():
    good = as_cell(np.zeros((4, 4), dtype=np.uint8))
    assert not good.flags.writeable
    with pytest.raises(ValueError, match="2-D"):
        as_cell(np.zeros((4, 4, 1), dtype=np.uint8))
    with pytest.raises(ValueError, match="uint8"):
        as_cell(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ValueError, match="square"):
        as_cell(np.zeros((4, 5), dtype=np.uint8))


def test_row_shape_checks():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((5, 5), dtype=np.uint8)
    assert Row(cells=(a, a, a)).resolution == 4
    with pytest.raises(ValueError, match="one resolution"):
        Row(cells=(a, a, b))


def test_problem_validation():
    rng = np.random.default_rng(0)
    problem = make_problem(rng)
    assert problem.resolution == 8
    cells = list(problem.context)
    with pytest.raises(ValueError, match="8 cells"):
        RpmProblem(context=tuple(cells[:7]), candidates=problem.candidates,
                   configuration=Configuration.CENTER)
    with pytest.raises(ValueError, match="answer index"):
        RpmProblem(context=problem.context, candidates=problem.candidates,
                   configuration=Configuration.CENTER, answer=8)
    with pytest.raises(ValueError, match="16 entries"):
        RpmProblem(context=problem.context, candidates=problem.candidates,
                   configuration=Configuration.CENTER,
                   cell_attrs=(CellAttributes(0, 0, 0),))
    with pytest.raises(ValueError, match="one resolution"):
        RpmProblem(
            context=problem.context,
            candidates=tuple(list(problem.candidates[:7]) + [np.zeros((9, 9), np.uint8)]),
            configuration=Configuration.CENTER,
        )


def test_without_labels_strips_metadata():
    rng = np.random.default_rng(1)
    problem = make_problem(rng)
    labeled = RpmProblem(
        context=problem.context,
        candidates=problem.candidates,
        configuration=Configuration.CENTER,
        answer=3,
        rules=full_rule_system(),
        cell_attrs=tuple(CellAttributes(0, 0, 0) for _ in range(16)),
        source_id="p000003",
    )
    bare = labeled.without_labels()
    assert bare.answer is None and bare.rules is None and bare.cell_attrs is None
    assert bare.source_id == "p000003"
    assert all(np.array_equal(x, y) for x, y in zip(bare.context, labeled.context))


def test_rows_of_and_complete_row():
    rng = np.random.default_rng(2)
    problem = make_problem(rng)
    row_a, row_b, (c7, c8) = rows_of(problem)
    assert all(row_a.cells[i] is problem.context[i] for i in range(3))
    assert all(row_b.cells[i] is problem.context[3 + i] for i in range(3))
    assert c7 is problem.context[6] and c8 is problem.context[7]
    for k in range(8):
        row = complete_row(problem, k)
        assert row.cells[2] is problem.candidates[k]
    with pytest.raises(ValueError):
        complete_row(problem, 8)
    with pytest.raises(ValueError):
        complete_row(problem, -1)


@given(
    n=st.integers(min_value=0, max_value=500),
    weights=st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=6),
)
def test_largest_remainder_is_exact_and_tight(n, weights):
    total = sum(weights)
    weights = [w / total for w in weights]
    alloc = _largest_remainder(n, weights)
    assert sum(alloc) == n
    for share, w in zip(alloc, weights):
        assert abs(share - n * w) < 1.0


def test_split_folds_partitions_and_stratifies():
    rng = np.random.default_rng(3)
    problems = []
    for cfg, count in ((Configuration.CENTER, 10), (Configuration.GRID_2X2, 5)):
        for _ in range(count):
            p = make_problem(rng)
            problems.append(RpmProblem(context=p.context, candidates=p.candidates,
                                       configuration=cfg))
    split = split_folds(problems, seed=11)
    assert len(split) == 15
    ids = [id(p) for p in split.train + split.val + split.test]
    assert sorted(ids) == sorted(id(p) for p in problems)
    center_train = sum(1 for p in split.train if p.configuration is Configuration.CENTER)
    assert center_train == 6  # 60% of 10 exactly
    grid_counts = tuple(
        sum(1 for p in fold if p.configuration is Configuration.GRID_2X2)
        for fold in (split.train, split.val, split.test)
    )
    assert sum(grid_counts) == 5 and grid_counts[0] == 3  # 3/1/1 by largest remainder


def test_split_folds_deterministic_and_guarded():
    rng = np.random.default_rng(4)
    problems = [make_problem(rng) for _ in range(12)]
    a = split_folds(problems, seed=5)
    b = split_folds(problems, seed=5)
    assert [id(p) for p in a.train] == [id(p) for p in b.train]
    assert [id(p) for p in a.test] == [id(p) for p in b.test]
    with pytest.raises(ValueError, match="at least 5"):
        split_folds(problems[:4], seed=0)


def test_stratified_subset_counts_and_determinism():
    rng = np.random.default_rng(6)
    problems = []
    for cfg, count in ((Configuration.CENTER, 12), (Configuration.GRID_2X2, 4)):
        for _ in range(count):
            p = make_problem(rng)
            problems.append(RpmProblem(context=p.context, candidates=p.candidates,
                                       configuration=cfg))
    subset = stratified_subset(problems, 8, seed=1)
    assert len(subset) == 8
    assert sum(1 for p in subset if p.configuration is Configuration.CENTER) == 6
    again = stratified_subset(problems, 8, seed=1)
    assert [id(p) for p in subset] == [id(p) for p in again]
    assert stratified_subset(problems, 0, seed=1) == ()
    assert len(stratified_subset(problems, 16, seed=1)) == 16
    with pytest.raises(ValueError):
        stratified_subset(problems, 17, seed=1)


@settings(max_examples=25, deadline=None)
@given(count=st.integers(min_value=0, max_value=16), seed=st.integers(0, 99))
def test_stratified_subset_never_duplicates(count, seed):
    rng = np.random.default_rng(7)
    problems = [make_problem(rng) for _ in range(16)]
    subset = stratified_subset(problems, count, seed)
    assert len(subset) == count
    assert len({id(p) for p in subset}) == count
