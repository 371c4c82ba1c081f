"""Canonical in-memory model of Raven-style matrix problems.

A problem is a 3x3 grid of square greyscale cells with the bottom-right
cell removed, plus eight candidate cells exactly one of which completes
the grid.  Rules hold row-wise.  Candidate indices are 0-based [0, 7];
in the 1..16 cell-labelling convention candidate k is cell k + 9.

Everything downstream (pair sampling, training, inference) works on the
types defined here, so their invariants are enforced eagerly at
construction time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Attribute",
    "CellAttributes",
    "Configuration",
    "DatasetSplit",
    "Row",
    "RpmProblem",
    "RuleEntry",
    "RuleKind",
    "RuleSystem",
    "as_cell",
    "complete_row",
    "rows_of",
    "split_folds",
    "stratified_subset",
]


class Configuration(enum.Enum):
    """The seven cell layouts of the RAVEN problem family."""

    CENTER = "center"
    GRID_2X2 = "2x2grid"
    GRID_3X3 = "3x3grid"
    LEFT_RIGHT = "left_right"
    UP_DOWN = "up_down"
    OUT_IN_CENTER = "out_in_center"
    OUT_IN_GRID = "out_in_grid"

    @classmethod
    def parse(cls, name: str) -> "Configuration":
        """Parse a configuration from its short name or a RAVEN directory name."""
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return _CONFIGURATION_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown configuration name: {name!r}") from None


_CONFIGURATION_ALIASES: dict[str, Configuration] = {
    "center": Configuration.CENTER,
    "center_single": Configuration.CENTER,
    "2x2grid": Configuration.GRID_2X2,
    "2x2_grid": Configuration.GRID_2X2,
    "distribute_four": Configuration.GRID_2X2,
    "3x3grid": Configuration.GRID_3X3,
    "3x3_grid": Configuration.GRID_3X3,
    "distribute_nine": Configuration.GRID_3X3,
    "left_right": Configuration.LEFT_RIGHT,
    "l_r": Configuration.LEFT_RIGHT,
    "left_center_single_right_center_single": Configuration.LEFT_RIGHT,
    "up_down": Configuration.UP_DOWN,
    "u_d": Configuration.UP_DOWN,
    "up_center_single_down_center_single": Configuration.UP_DOWN,
    "out_in_center": Configuration.OUT_IN_CENTER,
    "o_ic": Configuration.OUT_IN_CENTER,
    "in_center_single_out_center_single": Configuration.OUT_IN_CENTER,
    "out_in_grid": Configuration.OUT_IN_GRID,
    "o_ig": Configuration.OUT_IN_GRID,
    "in_distribute_four_out_center_single": Configuration.OUT_IN_GRID,
}


class Attribute(enum.Enum):
    TYPE = "type"
    SIZE = "size"
    COLOR = "color"
    NUMBER_POSITION = "number_position"


class RuleKind(enum.Enum):
    CONSTANT = "constant"
    PROGRESSION = "progression"
    ARITHMETIC = "arithmetic"
    DISTRIBUTE_THREE = "distribute_three"


_PROGRESSION_STEPS = (-2, -1, 1, 2)


@dataclass(frozen=True)
class RuleEntry:
    """One row-wise rule governing one attribute.

    ``step`` is set for progression rules only, ``sign`` (+1 or -1) for
    arithmetic rules only.
    """

    attribute: Attribute
    kind: RuleKind
    step: int | None = None
    sign: int | None = None

    def __post_init__(self) -> None:
        if self.kind is RuleKind.PROGRESSION:
            if self.step not in _PROGRESSION_STEPS:
                raise ValueError(f"progression step must be one of {_PROGRESSION_STEPS}, got {self.step}")
        elif self.step is not None:
            raise ValueError(f"{self.kind.value} rule takes no step")
        if self.kind is RuleKind.ARITHMETIC:
            if self.sign not in (-1, 1):
                raise ValueError(f"arithmetic sign must be +1 or -1, got {self.sign}")
        elif self.sign is not None:
            raise ValueError(f"{self.kind.value} rule takes no sign")

    def to_json(self) -> dict:
        out: dict = {"attribute": self.attribute.value, "rule": self.kind.value}
        if self.step is not None:
            out["step"] = self.step
        if self.sign is not None:
            out["sign"] = self.sign
        return out

    @classmethod
    def from_json(cls, data: dict) -> "RuleEntry":
        return cls(
            attribute=Attribute(data["attribute"]),
            kind=RuleKind(data["rule"]),
            step=data.get("step"),
            sign=data.get("sign"),
        )


@dataclass(frozen=True)
class RuleSystem:
    """The full rule assignment of one problem: exactly one rule per attribute."""

    entries: tuple[RuleEntry, ...]

    def __post_init__(self) -> None:
        attrs = [e.attribute for e in self.entries]
        if len(set(attrs)) != len(attrs):
            raise ValueError("duplicate rule for an attribute")
        if set(attrs) != set(Attribute):
            missing = sorted(a.value for a in set(Attribute) - set(attrs))
            raise ValueError(f"every attribute needs a rule; missing: {missing}")

    def entry(self, attribute: Attribute) -> RuleEntry:
        for e in self.entries:
            if e.attribute is attribute:
                return e
        raise KeyError(attribute)

    def nonconstant(self) -> tuple[RuleEntry, ...]:
        return tuple(e for e in self.entries if e.kind is not RuleKind.CONSTANT)

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries]}

    @classmethod
    def from_json(cls, data: dict) -> "RuleSystem":
        return cls(entries=tuple(RuleEntry.from_json(e) for e in data["entries"]))


@dataclass(frozen=True)
class CellAttributes:
    """Ground-truth attribute assignment of one rendered cell.

    ``occupancy`` lists the occupied layout slots of the cell's
    configuration, sorted ascending.  Single-slot layouts use ``(0,)``.
    """

    shape_type: int
    size_level: int
    color_level: int
    occupancy: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        for name in ("shape_type", "size_level", "color_level"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative int, got {v!r}")
        occ = tuple(sorted(set(int(s) for s in self.occupancy)))
        if not occ:
            raise ValueError("occupancy must name at least one slot")
        if any(s < 0 for s in occ):
            raise ValueError("occupancy slots must be non-negative")
        object.__setattr__(self, "occupancy", occ)

    def to_json(self) -> dict:
        return {
            "shape_type": self.shape_type,
            "size_level": self.size_level,
            "color_level": self.color_level,
            "occupancy": list(self.occupancy),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CellAttributes":
        return cls(
            shape_type=int(data["shape_type"]),
            size_level=int(data["size_level"]),
            color_level=int(data["color_level"]),
            occupancy=tuple(data["occupancy"]),
        )


def as_cell(pixels: np.ndarray) -> np.ndarray:
    """Validate one cell raster: square 2-D uint8. Returned array is read-only."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"cell must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"cell must be uint8, got {arr.dtype}")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"cell must be square, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Row:
    """An ordered triple of cells, the unit the relation extractor consumes."""

    cells: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        if len(self.cells) != 3:
            raise ValueError(f"a row has exactly 3 cells, got {len(self.cells)}")
        cells = tuple(as_cell(c) for c in self.cells)
        if not (cells[0].shape == cells[1].shape == cells[2].shape):
            raise ValueError("row cells must share one resolution")
        object.__setattr__(self, "cells", cells)

    @property
    def resolution(self) -> int:
        return int(self.cells[0].shape[0])


@dataclass(frozen=True)
class RpmProblem:
    """One matrix problem: 8 context cells (row-major), 8 candidates.

    ``answer`` is optional by design: training pools carry label-free
    problems and the trainer refuses pools where answers are present.
    ``rules`` and ``cell_attrs`` (16 entries: context then candidates)
    are populated only by the built-in generator and power the
    attribute-level rule oracle; externally sourced problems leave them
    unset.
    """

    context: tuple[np.ndarray, ...]
    candidates: tuple[np.ndarray, ...]
    configuration: Configuration
    answer: int | None = None
    rules: RuleSystem | None = None
    cell_attrs: tuple[CellAttributes, ...] | None = None
    source_id: str | None = None

    def __post_init__(self) -> None:
        if len(self.context) != 8:
            raise ValueError(f"context must hold 8 cells, got {len(self.context)}")
        if len(self.candidates) != 8:
            raise ValueError(f"candidates must hold 8 cells, got {len(self.candidates)}")
        context = tuple(as_cell(c) for c in self.context)
        candidates = tuple(as_cell(c) for c in self.candidates)
        shapes = {c.shape for c in context} | {c.shape for c in candidates}
        if len(shapes) != 1:
            raise ValueError(f"all 16 cells must share one resolution, got {sorted(shapes)}")
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "candidates", candidates)
        if not isinstance(self.configuration, Configuration):
            raise ValueError(f"configuration must be a Configuration, got {self.configuration!r}")
        if self.answer is not None and not (0 <= int(self.answer) <= 7):
            raise ValueError(f"answer index out of range [0, 7]: {self.answer}")
        if self.cell_attrs is not None and len(self.cell_attrs) != 16:
            raise ValueError(f"cell_attrs must hold 16 entries, got {len(self.cell_attrs)}")

    @property
    def resolution(self) -> int:
        return int(self.context[0].shape[0])

    def without_labels(self) -> "RpmProblem":
        """Copy with the answer and all oracle metadata removed."""
        return replace(self, answer=None, rules=None, cell_attrs=None)


def rows_of(problem: RpmProblem) -> tuple[Row, Row, tuple[np.ndarray, np.ndarray]]:
    """Split a problem into its two complete rows and the partial third row."""
    row_a = Row(cells=(problem.context[0], problem.context[1], problem.context[2]))
    row_b = Row(cells=(problem.context[3], problem.context[4], problem.context[5]))
    return row_a, row_b, (problem.context[6], problem.context[7])


def complete_row(problem: RpmProblem, candidate_index: int) -> Row:
    """Third row completed with candidate ``candidate_index``."""
    if not isinstance(candidate_index, (int, np.integer)) or not (0 <= candidate_index <= 7):
        raise ValueError(f"candidate index out of range [0, 7]: {candidate_index}")
    return Row(cells=(problem.context[6], problem.context[7], problem.candidates[int(candidate_index)]))


@dataclass(frozen=True)
class DatasetSplit:
    """A 60/20/20 train/val/test partition."""

    train: tuple[RpmProblem, ...]
    val: tuple[RpmProblem, ...]
    test: tuple[RpmProblem, ...]

    def __len__(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def _largest_remainder(n: int, weights: Sequence[float]) -> list[int]:
    """Integer allocation of n by weights; each part is within 1 of its quota."""
    quotas = [n * w for w in weights]
    base = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_folds(problems: Sequence[RpmProblem], seed: int) -> DatasetSplit:
    """Deterministic stratified 60/20/20 split.

    Problems are grouped by configuration, shuffled within each group by
    a generator seeded from ``seed``, and allocated per group by largest
    remainder, so each group's fold sizes deviate from exact 60/20/20 by
    less than one problem.
    """
    if len(problems) < 5:
        raise ValueError(f"need at least 5 problems to split, got {len(problems)}")
    rng = np.random.default_rng(seed)
    groups: dict[Configuration, list[int]] = {}
    for i, p in enumerate(problems):
        groups.setdefault(p.configuration, []).append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    test_idx: list[int] = []
    for cfg in Configuration:
        members = groups.get(cfg)
        if not members:
            continue
        order = [members[j] for j in rng.permutation(len(members))]
        n_train, n_val, n_test = _largest_remainder(len(order), (0.6, 0.2, 0.2))
        train_idx.extend(order[:n_train])
        val_idx.extend(order[n_train:n_train + n_val])
        test_idx.extend(order[n_train + n_val:])
    return DatasetSplit(
        train=tuple(problems[i] for i in train_idx),
        val=tuple(problems[i] for i in val_idx),
        test=tuple(problems[i] for i in test_idx),
    )


def stratified_subset(problems: Sequence[RpmProblem], count: int, seed: int) -> tuple[RpmProblem, ...]:
    """Deterministic configuration-stratified subsample of ``count`` problems."""
    if not (0 <= count <= len(problems)):
        raise ValueError(f"count must be in [0, {len(problems)}], got {count}")
    if count == 0:
        return ()
    rng = np.random.default_rng(seed)
    groups: dict[Configuration, list[int]] = {}
    for i, p in enumerate(problems):
        groups.setdefault(p.configuration, []).append(i)
    configs = [c for c in Configuration if c in groups]
    weights = [len(groups[c]) / len(problems) for c in configs]
    alloc = _largest_remainder(count, weights)
    # Largest remainder can overshoot a tiny group; clamp and spill the excess.
    for k, c in enumerate(configs):
        alloc[k] = min(alloc[k], len(groups[c]))
    spill = count - sum(alloc)
    while spill > 0:
        for k, c in enumerate(configs):
            if spill == 0:
                break
            if alloc[k] < len(groups[c]):
                alloc[k] += 1
                spill -= 1
    chosen: list[int] = []
    for k, c in enumerate(configs):
        members = groups[c]
        order = rng.permutation(len(members))
        chosen.extend(members[j] for j in order[:alloc[k]])
    return tuple(problems[i] for i in sorted(chosen))
