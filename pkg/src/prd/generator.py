"""Procedural generator of desk-scale Raven-style problems with a rule oracle.

The generator reimplements the RAVEN problem grammar in deliberately
simplified form so the whole pipeline can run without any external
dataset.  The semantics below are this artifact's ground truth; the
oracle (`verify_rules`) checks rows at the attribute level against
exactly these definitions, never against pixels.

Vocabulary
    shape types   0..4   triangle, square, pentagon, hexagon, circle
    size levels   0..5   linear in shape radius
    color levels  0..9   linear in fill intensity (0 = white fill)
    occupancy     the set of occupied layout slots of a cell

Layouts
    center        one full-cell slot
    2x2grid       four quadrant slots, variable occupancy
    3x3grid       nine slots, variable occupancy
    left_right    two half-cell slots, always both occupied
    up_down       two half-cell slots, always both occupied
    out_in_center a large outline-only slot plus a small centred slot,
                  always both occupied
    (out_in_grid is not generated)

All occupied slots of a cell share one (type, size, color) triple; only
grid layouts vary occupancy.  The NUMBER_POSITION attribute denotes the
occupancy set; on non-grid layouts it is forced Constant at full
occupancy.

Rules (row-wise; one rule per attribute)
    constant           the attribute holds one value across the whole
                       grid (all nine cells), hence also across each row
    progression(step)  the three row values form an arithmetic sequence
                       with the given step; step is shared by all rows,
                       row starting values are sampled independently;
                       on NUMBER_POSITION the sequence applies to the
                       occupancy COUNT and slots are re-sampled per cell
    arithmetic(sign)   third row value = first + sign * second, per row;
                       ordinal attributes (size, color) only
    distribute_three   one 3-value set is sampled and each row is a
                       permutation of it, arranged as a Latin square;
                       on NUMBER_POSITION the values are occupancy SETS

Legal non-constant rules per attribute
    type              progression, distribute_three
    size, color       progression, arithmetic, distribute_three
    number_position   progression, distribute_three (grid layouts only)
Progression steps are restricted to those whose full span fits the
attribute's range (2x2grid occupancy counts admit only steps of 1).

Sampling distribution (the reference for distribution tests): the
number of non-constant rules k is uniform on
[min_nonconstant_rules, max_nonconstant_rules]; the k governed
attributes are a uniform k-subset of the eligible attributes; each
chosen attribute's rule is uniform over its legal non-constant rules,
and rule parameters are uniform over their legal values.

Distractors perturb 1..max of the layout's governed attributes of the
answer cell (count uniform), drawing each new value uniformly from the
attribute's other values; candidates are pairwise distinct at the
attribute level and every distractor fails the rule check, so exactly
one candidate solves each emitted problem.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from multiprocessing import Pool
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .problems import (
    Attribute,
    CellAttributes,
    Configuration,
    RpmProblem,
    RuleEntry,
    RuleKind,
    RuleSystem,
)

__all__ = [
    "GeneratorConfig",
    "GenerationError",
    "UnsupportedProblemError",
    "SHAPE_NAMES",
    "SIZE_LEVELS",
    "COLOR_LEVELS",
    "generate_problem",
    "generate_problems",
    "instantiate_grid",
    "render_cell",
    "sample_rule_system",
    "verify_rules",
]

SHAPE_NAMES = ("triangle", "square", "pentagon", "hexagon", "circle")
SIZE_LEVELS = 6
COLOR_LEVELS = 10
BACKGROUND = 255

_SUPERSAMPLE = 4


class GenerationError(RuntimeError):
    """Bounded resampling was exhausted without a valid draw."""


class UnsupportedProblemError(ValueError):
    """The problem carries no oracle metadata (not produced by this generator)."""


@dataclass(frozen=True)
class Slot:
    """One layout slot: centre and half-extent as fractions of the cell edge."""

    cx: float
    cy: float
    half: float
    outline_only: bool = False


def _grid_slots(n: int) -> tuple[Slot, ...]:
    half = 1.0 / (2 * n)
    return tuple(
        Slot(cx=(2 * col + 1) * half, cy=(2 * row + 1) * half, half=half)
        for row in range(n)
        for col in range(n)
    )


LAYOUTS: dict[Configuration, tuple[Slot, ...]] = {
    Configuration.CENTER: (Slot(0.5, 0.5, 0.5),),
    Configuration.GRID_2X2: _grid_slots(2),
    Configuration.GRID_3X3: _grid_slots(3),
    Configuration.LEFT_RIGHT: (Slot(0.25, 0.5, 0.25), Slot(0.75, 0.5, 0.25)),
    Configuration.UP_DOWN: (Slot(0.5, 0.25, 0.25), Slot(0.5, 0.75, 0.25)),
    Configuration.OUT_IN_CENTER: (Slot(0.5, 0.5, 0.5, outline_only=True), Slot(0.5, 0.5, 0.22)),
}

GRID_CONFIGURATIONS = frozenset({Configuration.GRID_2X2, Configuration.GRID_3X3})
SUPPORTED_CONFIGURATIONS = tuple(LAYOUTS)


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the problem generator.

    ``min/max_nonconstant_rules`` bound how many attributes carry a
    non-constant rule.  ``distractor_max_changes`` bounds how many
    attributes each distractor perturbs (the count is uniform on
    [distractor_min_changes, distractor_max_changes]).
    """

    configurations: tuple[Configuration, ...] = (Configuration.CENTER, Configuration.GRID_2X2)
    resolution: int = 96
    min_nonconstant_rules: int = 1
    max_nonconstant_rules: int = 2
    distractor_min_changes: int = 1
    distractor_max_changes: int = 2
    seed: int = 0
    max_attempts: int = 200

    def __post_init__(self) -> None:
        if not self.configurations:
            raise ValueError("at least one configuration is required")
        cfgs = tuple(Configuration.parse(c) if isinstance(c, str) else c for c in self.configurations)
        for c in cfgs:
            if c not in LAYOUTS:
                raise ValueError(f"configuration not supported by the generator: {c.value}")
        object.__setattr__(self, "configurations", cfgs)
        if self.resolution < 32:
            raise ValueError(f"resolution must be >= 32, got {self.resolution}")
        if not (0 <= self.min_nonconstant_rules <= self.max_nonconstant_rules):
            raise ValueError("need 0 <= min_nonconstant_rules <= max_nonconstant_rules")
        if not (1 <= self.distractor_min_changes <= self.distractor_max_changes):
            raise ValueError("need 1 <= distractor_min_changes <= distractor_max_changes")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


def _value_range(attribute: Attribute, configuration: Configuration) -> tuple[int, int]:
    """Inclusive value range of a scalar attribute (occupancy uses counts)."""
    if attribute is Attribute.TYPE:
        return 0, len(SHAPE_NAMES) - 1
    if attribute is Attribute.SIZE:
        return 0, SIZE_LEVELS - 1
    if attribute is Attribute.COLOR:
        return 0, COLOR_LEVELS - 1
    if attribute is Attribute.NUMBER_POSITION:
        return 1, len(LAYOUTS[configuration])
    raise ValueError(attribute)


def _legal_steps(attribute: Attribute, configuration: Configuration) -> tuple[int, ...]:
    lo, hi = _value_range(attribute, configuration)
    span = hi - lo
    return tuple(s for s in (-2, -1, 1, 2) if 2 * abs(s) <= span)


def eligible_attributes(configuration: Configuration) -> tuple[Attribute, ...]:
    """Attributes that may carry a non-constant rule on this layout."""
    attrs = [Attribute.TYPE, Attribute.SIZE, Attribute.COLOR]
    if configuration in GRID_CONFIGURATIONS:
        attrs.append(Attribute.NUMBER_POSITION)
    return tuple(attrs)


def legal_nonconstant_rules(attribute: Attribute, configuration: Configuration) -> tuple[RuleKind, ...]:
    if attribute is Attribute.TYPE:
        return (RuleKind.PROGRESSION, RuleKind.DISTRIBUTE_THREE)
    if attribute in (Attribute.SIZE, Attribute.COLOR):
        return (RuleKind.PROGRESSION, RuleKind.ARITHMETIC, RuleKind.DISTRIBUTE_THREE)
    if attribute is Attribute.NUMBER_POSITION:
        if configuration in GRID_CONFIGURATIONS:
            return (RuleKind.PROGRESSION, RuleKind.DISTRIBUTE_THREE)
        return ()
    raise ValueError(attribute)


def sample_rule_system(
    config: GeneratorConfig,
    rng: np.random.Generator,
    configuration: Configuration | None = None,
) -> RuleSystem:
    """Draw one rule system per the documented sampling distribution."""
    if configuration is None:
        configuration = config.configurations[int(rng.integers(len(config.configurations)))]
    eligible = eligible_attributes(configuration)
    if config.min_nonconstant_rules > len(eligible):
        raise ValueError(
            f"{configuration.value} admits at most {len(eligible)} non-constant rules, "
            f"min_nonconstant_rules={config.min_nonconstant_rules} is unsatisfiable"
        )
    hi = min(config.max_nonconstant_rules, len(eligible))
    k = int(rng.integers(config.min_nonconstant_rules, hi + 1))
    chosen_idx = rng.choice(len(eligible), size=k, replace=False)
    chosen = {eligible[int(i)] for i in chosen_idx}
    entries = []
    for attribute in Attribute:
        if attribute in chosen:
            options = legal_nonconstant_rules(attribute, configuration)
            kind = options[int(rng.integers(len(options)))]
            if kind is RuleKind.PROGRESSION:
                steps = _legal_steps(attribute, configuration)
                entries.append(RuleEntry(attribute, kind, step=int(steps[int(rng.integers(len(steps)))])))
            elif kind is RuleKind.ARITHMETIC:
                entries.append(RuleEntry(attribute, kind, sign=int(rng.choice((-1, 1)))))
            else:
                entries.append(RuleEntry(attribute, kind))
        else:
            entries.append(RuleEntry(attribute, RuleKind.CONSTANT))
    return RuleSystem(entries=tuple(entries))


def _sample_occupancy(configuration: Configuration, count: int, rng: np.random.Generator) -> tuple[int, ...]:
    nslots = len(LAYOUTS[configuration])
    slots = rng.choice(nslots, size=count, replace=False)
    return tuple(sorted(int(s) for s in slots))


def _full_occupancy(configuration: Configuration) -> tuple[int, ...]:
    return tuple(range(len(LAYOUTS[configuration])))


def _latin_rows(values: Sequence, rng: np.random.Generator) -> list[list]:
    """Three rows, each a permutation of ``values``, arranged as a Latin square."""
    base = [values[int(i)] for i in rng.permutation(3)]
    shift = int(rng.integers(1, 3))
    rows = []
    for r in range(3):
        off = (r * shift) % 3
        rows.append([base[(off + c) % 3] for c in range(3)])
    return rows


def _instantiate_scalar(
    entry: RuleEntry,
    configuration: Configuration,
    rng: np.random.Generator,
    max_attempts: int,
) -> list[list[int]]:
    """Nine values (three rows) of one scalar attribute satisfying its rule."""
    lo, hi = _value_range(entry.attribute, configuration)
    if entry.kind is RuleKind.CONSTANT:
        v = int(rng.integers(lo, hi + 1))
        return [[v, v, v] for _ in range(3)]
    if entry.kind is RuleKind.PROGRESSION:
        step = entry.step
        start_lo = lo + max(0, -2 * step)
        start_hi = hi - max(0, 2 * step)
        return [
            [s, s + step, s + 2 * step]
            for s in (int(rng.integers(start_lo, start_hi + 1)) for _ in range(3))
        ]
    if entry.kind is RuleKind.ARITHMETIC:
        rows = []
        for _ in range(3):
            for _ in range(max_attempts):
                v1 = int(rng.integers(lo, hi + 1))
                v2 = int(rng.integers(lo, hi + 1))
                v3 = v1 + entry.sign * v2
                if lo <= v3 <= hi:
                    rows.append([v1, v2, v3])
                    break
            else:
                raise GenerationError(f"arithmetic sampling exhausted for {entry.attribute.value}")
        return rows
    if entry.kind is RuleKind.DISTRIBUTE_THREE:
        values = sorted(int(v) for v in rng.choice(np.arange(lo, hi + 1), size=3, replace=False))
        return _latin_rows(values, rng)
    raise ValueError(entry.kind)


def _instantiate_occupancy(
    entry: RuleEntry,
    configuration: Configuration,
    rng: np.random.Generator,
    max_attempts: int,
) -> list[list[tuple[int, ...]]]:
    """Nine occupancy sets (three rows) satisfying the NUMBER_POSITION rule."""
    if configuration not in GRID_CONFIGURATIONS:
        full = _full_occupancy(configuration)
        return [[full, full, full] for _ in range(3)]
    lo, hi = _value_range(Attribute.NUMBER_POSITION, configuration)
    if entry.kind is RuleKind.CONSTANT:
        count = int(rng.integers(lo, hi + 1))
        occ = _sample_occupancy(configuration, count, rng)
        return [[occ, occ, occ] for _ in range(3)]
    if entry.kind is RuleKind.PROGRESSION:
        step = entry.step
        start_lo = lo + max(0, -2 * step)
        start_hi = hi - max(0, 2 * step)
        rows = []
        for _ in range(3):
            s = int(rng.integers(start_lo, start_hi + 1))
            rows.append([_sample_occupancy(configuration, s + i * step, rng) for i in range(3)])
        return rows
    if entry.kind is RuleKind.DISTRIBUTE_THREE:
        for _ in range(max_attempts):
            sets = {
                _sample_occupancy(configuration, int(rng.integers(lo, hi + 1)), rng)
                for _ in range(3)
            }
            if len(sets) == 3:
                return _latin_rows(sorted(sets), rng)
        raise GenerationError("distribute_three occupancy sampling exhausted")
    raise ValueError(entry.kind)


def instantiate_grid(
    rules: RuleSystem,
    configuration: Configuration,
    rng: np.random.Generator,
    max_attempts: int = 200,
) -> tuple[CellAttributes, ...]:
    """Sample the 3x3 attribute grid realising ``rules`` on ``configuration``.

    Returns nine CellAttributes in row-major order; entry 8 is the true
    answer cell.
    """
    if configuration not in LAYOUTS:
        raise ValueError(f"configuration not supported by the generator: {configuration.value}")
    scalars = {
        a: _instantiate_scalar(rules.entry(a), configuration, rng, max_attempts)
        for a in (Attribute.TYPE, Attribute.SIZE, Attribute.COLOR)
    }
    occupancy = _instantiate_occupancy(
        rules.entry(Attribute.NUMBER_POSITION), configuration, rng, max_attempts
    )
    grid = tuple(
        CellAttributes(
            shape_type=scalars[Attribute.TYPE][r][c],
            size_level=scalars[Attribute.SIZE][r][c],
            color_level=scalars[Attribute.COLOR][r][c],
            occupancy=occupancy[r][c],
        )
        for r in range(3)
        for c in range(3)
    )
    for r in range(3):
        row = grid[3 * r:3 * r + 3]
        if not _row_satisfies_all(rules, row, grid[0:3]):
            raise GenerationError("instantiated grid violates its own rules")
    return grid


def _attr_value(attrs: CellAttributes, attribute: Attribute):
    if attribute is Attribute.TYPE:
        return attrs.shape_type
    if attribute is Attribute.SIZE:
        return attrs.size_level
    if attribute is Attribute.COLOR:
        return attrs.color_level
    if attribute is Attribute.NUMBER_POSITION:
        return attrs.occupancy
    raise ValueError(attribute)


def _row_satisfies(entry: RuleEntry, row: Sequence, reference_row: Sequence) -> bool:
    """Row-local rule check; distribute_three reads its value set off row one."""
    v = list(row)
    if entry.attribute is Attribute.NUMBER_POSITION:
        if entry.kind is RuleKind.CONSTANT:
            return v[0] == v[1] == v[2]
        if entry.kind is RuleKind.PROGRESSION:
            c = [len(x) for x in v]
            return c[1] - c[0] == entry.step and c[2] - c[1] == entry.step
        if entry.kind is RuleKind.DISTRIBUTE_THREE:
            return sorted(v) == sorted(reference_row) and len(set(v)) == 3
        raise ValueError(entry.kind)
    if entry.kind is RuleKind.CONSTANT:
        return v[0] == v[1] == v[2]
    if entry.kind is RuleKind.PROGRESSION:
        return v[1] - v[0] == entry.step and v[2] - v[1] == entry.step
    if entry.kind is RuleKind.ARITHMETIC:
        return v[2] == v[0] + entry.sign * v[1]
    if entry.kind is RuleKind.DISTRIBUTE_THREE:
        return sorted(v) == sorted(reference_row) and len(set(v)) == 3
    raise ValueError(entry.kind)


def _row_satisfies_all(
    rules: RuleSystem,
    row: Sequence[CellAttributes],
    reference_row: Sequence[CellAttributes],
) -> bool:
    for entry in rules.entries:
        values = [_attr_value(a, entry.attribute) for a in row]
        reference = [_attr_value(a, entry.attribute) for a in reference_row]
        if not _row_satisfies(entry, values, reference):
            return False
    return True


def verify_rules(problem: RpmProblem, candidate_index: int) -> bool:
    """Attribute-level oracle: does candidate ``candidate_index`` complete row 3?

    Requires generator metadata (rules and per-cell attributes); no
    pixel decoding is involved.
    """
    if problem.rules is None or problem.cell_attrs is None:
        raise UnsupportedProblemError("problem carries no rule metadata; only generated problems can be verified")
    if not (0 <= int(candidate_index) <= 7):
        raise ValueError(f"candidate index out of range [0, 7]: {candidate_index}")
    row3 = (problem.cell_attrs[6], problem.cell_attrs[7], problem.cell_attrs[8 + int(candidate_index)])
    return _row_satisfies_all(problem.rules, row3, problem.cell_attrs[0:3])


# --- rendering ---------------------------------------------------------------

_POLYGON_SIDES = {"triangle": 3, "square": 4, "pentagon": 5, "hexagon": 6}


def _fill_intensity(color_level: int) -> int:
    # color 0 -> white fill (outline only in effect), color 9 -> near black
    return BACKGROUND - round(color_level * 230 / (COLOR_LEVELS - 1))


def _radius_fraction(size_level: int) -> float:
    return 0.35 + 0.11 * size_level


def _polygon_points(cx: float, cy: float, radius: float, sides: int) -> list[tuple[float, float]]:
    # square axis-aligned, other polygons vertex-up
    offset = -math.pi / 4 if sides == 4 else -math.pi / 2
    return [
        (cx + radius * math.cos(offset + 2 * math.pi * k / sides),
         cy + radius * math.sin(offset + 2 * math.pi * k / sides))
        for k in range(sides)
    ]


@functools.lru_cache(maxsize=8192)
def _render_cached(attrs: CellAttributes, configuration: Configuration, resolution: int) -> np.ndarray:
    big = resolution * _SUPERSAMPLE
    img = Image.new("L", (big, big), color=BACKGROUND)
    draw = ImageDraw.Draw(img)
    slots = LAYOUTS[configuration]
    line_width = max(2, round(big * 0.010))
    shape = SHAPE_NAMES[attrs.shape_type]
    for slot_index in attrs.occupancy:
        slot = slots[slot_index]
        cx, cy = slot.cx * big, slot.cy * big
        radius = slot.half * big * _radius_fraction(attrs.size_level)
        fill = None if slot.outline_only else _fill_intensity(attrs.color_level)
        if shape == "circle":
            bbox = (cx - radius, cy - radius, cx + radius, cy + radius)
            draw.ellipse(bbox, fill=fill, outline=0, width=line_width)
        else:
            points = _polygon_points(cx, cy, radius, _POLYGON_SIDES[shape])
            if fill is not None:
                draw.polygon(points, fill=fill)
            draw.line(points + [points[0]], fill=0, width=line_width, joint="curve")
    out = np.asarray(img.resize((resolution, resolution), Image.BILINEAR), dtype=np.uint8)
    out.setflags(write=False)
    return out


def render_cell(attrs: CellAttributes, configuration: Configuration, resolution: int) -> np.ndarray:
    """Deterministic anti-aliased raster of one cell (white background 255).

    Identical inputs return identical pixels; results are cached and
    shared, so returned arrays are read-only.
    """
    if configuration not in LAYOUTS:
        raise ValueError(f"configuration not supported by the generator: {configuration.value}")
    if resolution < 32:
        raise ValueError(f"resolution must be >= 32, got {resolution}")
    nslots = len(LAYOUTS[configuration])
    if attrs.shape_type >= len(SHAPE_NAMES):
        raise ValueError(f"shape_type out of range [0, {len(SHAPE_NAMES) - 1}]: {attrs.shape_type}")
    if attrs.size_level >= SIZE_LEVELS:
        raise ValueError(f"size_level out of range [0, {SIZE_LEVELS - 1}]: {attrs.size_level}")
    if attrs.color_level >= COLOR_LEVELS:
        raise ValueError(f"color_level out of range [0, {COLOR_LEVELS - 1}]: {attrs.color_level}")
    if any(s >= nslots for s in attrs.occupancy):
        raise ValueError(f"occupancy slot out of range [0, {nslots - 1}]: {attrs.occupancy}")
    return _render_cached(attrs, configuration, resolution)


# --- distractors and full problems -------------------------------------------

def _perturb(
    answer: CellAttributes,
    configuration: Configuration,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> CellAttributes:
    perturbable = list(eligible_attributes(configuration))
    hi = min(config.distractor_max_changes, len(perturbable))
    lo = min(config.distractor_min_changes, hi)
    n_changes = int(rng.integers(lo, hi + 1))
    chosen = rng.choice(len(perturbable), size=n_changes, replace=False)
    values = {
        "shape_type": answer.shape_type,
        "size_level": answer.size_level,
        "color_level": answer.color_level,
        "occupancy": answer.occupancy,
    }
    for idx in chosen:
        attribute = perturbable[int(idx)]
        if attribute is Attribute.NUMBER_POSITION:
            lo_c, hi_c = _value_range(attribute, configuration)
            while True:
                occ = _sample_occupancy(configuration, int(rng.integers(lo_c, hi_c + 1)), rng)
                if occ != answer.occupancy:
                    values["occupancy"] = occ
                    break
        else:
            lo_v, hi_v = _value_range(attribute, configuration)
            current = _attr_value(answer, attribute)
            v = int(rng.integers(lo_v, hi_v))
            if v >= current:
                v += 1
            key = {Attribute.TYPE: "shape_type", Attribute.SIZE: "size_level", Attribute.COLOR: "color_level"}[attribute]
            values[key] = v
    return CellAttributes(**values)


def _sample_distractors(
    grid: Sequence[CellAttributes],
    rules: RuleSystem,
    configuration: Configuration,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> list[CellAttributes]:
    answer = grid[8]
    seen = {answer}
    out: list[CellAttributes] = []
    attempts = 0
    budget = config.max_attempts * 7
    while len(out) < 7:
        attempts += 1
        if attempts > budget:
            raise GenerationError("distractor sampling exhausted")
        d = _perturb(answer, configuration, config, rng)
        if d in seen:
            continue
        row3 = (grid[6], grid[7], d)
        if _row_satisfies_all(rules, row3, grid[0:3]):
            continue  # accidental second solution, e.g. count kept under an occupancy rule
        seen.add(d)
        out.append(d)
    return out


def generate_problem(config: GeneratorConfig, rng: np.random.Generator) -> RpmProblem:
    """Generate one problem with a uniformly placed, uniquely valid answer."""
    last_error: Exception | None = None
    for _ in range(config.max_attempts):
        configuration = config.configurations[int(rng.integers(len(config.configurations)))]
        rules = sample_rule_system(config, rng, configuration=configuration)
        try:
            grid = instantiate_grid(rules, configuration, rng, config.max_attempts)
            distractors = _sample_distractors(grid, rules, configuration, config, rng)
        except GenerationError as err:
            last_error = err
            continue
        answer_slot = int(rng.integers(8))
        candidate_attrs = list(distractors)
        candidate_attrs.insert(answer_slot, grid[8])
        render = lambda a: render_cell(a, configuration, config.resolution)
        problem = RpmProblem(
            context=tuple(render(a) for a in grid[:8]),
            candidates=tuple(render(a) for a in candidate_attrs),
            configuration=configuration,
            answer=answer_slot,
            rules=rules,
            cell_attrs=tuple(grid[:8]) + tuple(candidate_attrs),
        )
        passing = [k for k in range(8) if verify_rules(problem, k)]
        if passing != [answer_slot]:
            raise GenerationError(f"solvability sweep found candidates {passing}, expected [{answer_slot}]")
        return problem
    raise GenerationError(f"problem generation exhausted after {config.max_attempts} attempts: {last_error}")


def _problem_rng(seed: int, index: int) -> np.random.Generator:
    # Per-index child streams: the emitted sequence is independent of how
    # generation is chunked across workers.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _generate_range(args: tuple[GeneratorConfig, int, int]) -> list[RpmProblem]:
    config, start, stop = args
    return [generate_problem(config, _problem_rng(config.seed, i)) for i in range(start, stop)]


def generate_problems(config: GeneratorConfig, count: int, workers: int = 1) -> list[RpmProblem]:
    """Generate ``count`` problems; byte-identical for a given config and seed.

    Problem ids are assigned sequentially.  ``workers`` > 1 parallelises
    over index ranges without changing the emitted stream.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if count == 0:
        return []
    if workers == 1 or count < 4 * workers:
        problems = [generate_problem(config, _problem_rng(config.seed, i)) for i in range(count)]
    else:
        bounds = np.linspace(0, count, workers + 1, dtype=int)
        chunks = [(config, int(bounds[w]), int(bounds[w + 1])) for w in range(workers)]
        with Pool(processes=workers) as pool:
            parts = pool.map(_generate_range, chunks)
        problems = [p for part in parts for p in part]
    return [replace(p, source_id=f"p{i:06d}") for i, p in enumerate(problems)]
