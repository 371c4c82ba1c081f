"""Self-labelled row-pair sampling for discriminator training.

Real pairs (label 1) are the two complete context rows of one problem,
in random order.  Fake pairs (label 0) keep one context row and pit it
against a corrupted second row, drawn as:

* with probability 1/2, a context row of a different problem
  (``fake_cat_a``);
* with probability 1/4, the partial third row (cells 7 and 8) completed
  with a random cell of the unselected context row, then the three
  cells shuffled uniformly (``fake_cat_b_row_c``);
* with probability 1/4, the first two cells of the unselected context
  row plus a random candidate cell, then shuffled uniformly
  (``fake_cat_b_row_gamma``).

The uniform 6-permutation shuffle may return the original order; that
is accepted label noise.  Sampling is online: batches are drawn fresh
from the problem pool on every call and never cached.  Sampling never
reads ``RpmProblem.answer``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .problems import Row, RpmProblem, rows_of

__all__ = [
    "PairBatch",
    "PairSample",
    "Provenance",
    "make_batch",
    "sample_fake_pair",
    "sample_real_pair",
]


class Provenance(enum.Enum):
    REAL = "real"
    FAKE_CAT_A = "fake_cat_a"
    FAKE_CAT_B_ROW_C = "fake_cat_b_row_c"
    FAKE_CAT_B_ROW_GAMMA = "fake_cat_b_row_gamma"


@dataclass(frozen=True)
class PairSample:
    """One labeled row pair."""

    row_1: Row
    row_2: Row
    label: int
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if (self.label == 1) != (self.provenance is Provenance.REAL):
            raise ValueError(f"label {self.label} contradicts provenance {self.provenance.value}")


@dataclass(frozen=True)
class PairBatch:
    """A homogeneous batch: all-real or all-fake."""

    samples: tuple[PairSample, ...]
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("real", "fake"):
            raise ValueError(f"kind must be 'real' or 'fake', got {self.kind!r}")
        if not self.samples:
            raise ValueError("batch must not be empty")
        want = 1 if self.kind == "real" else 0
        if any(s.label != want for s in self.samples):
            raise ValueError(f"mixed labels in a {self.kind!r} batch")

    def __len__(self) -> int:
        return len(self.samples)


def sample_real_pair(problem: RpmProblem, rng: np.random.Generator) -> PairSample:
    """The two context rows of ``problem`` in random order, label 1."""
    row_a, row_b, _ = rows_of(problem)
    if rng.random() < 0.5:
        row_a, row_b = row_b, row_a
    return PairSample(row_1=row_a, row_2=row_b, label=1, provenance=Provenance.REAL)


def _sample_fake_by_index(
    pool: Sequence[RpmProblem],
    index: int,
    rng: np.random.Generator,
    on_small_pool: str,
) -> PairSample:
    problem = pool[index]
    row_a, row_b, _ = rows_of(problem)
    pick_b = rng.random() < 0.5
    row_1, row_gamma = (row_b, row_a) if pick_b else (row_a, row_b)
    while True:
        if rng.random() < 0.5:  # category A: a row of a different problem
            if len(pool) < 2:
                if on_small_pool == "resample":
                    continue
                raise ValueError("pool too small for cross-problem fakes (need >= 2 problems)")
            j = int(rng.integers(len(pool) - 1))
            if j >= index:
                j += 1
            other_a, other_b, _ = rows_of(pool[j])
            row_2 = other_b if rng.random() < 0.5 else other_a
            return PairSample(row_1=row_1, row_2=row_2, label=0, provenance=Provenance.FAKE_CAT_A)
        # category B: corrupted same-problem row, shuffled uniformly
        if rng.random() < 0.5:
            cells = [
                problem.context[6],
                problem.context[7],
                row_gamma.cells[int(rng.integers(3))],
            ]
            provenance = Provenance.FAKE_CAT_B_ROW_C
        else:
            cells = [
                row_gamma.cells[0],
                row_gamma.cells[1],
                problem.candidates[int(rng.integers(8))],
            ]
            provenance = Provenance.FAKE_CAT_B_ROW_GAMMA
        perm = rng.permutation(3)
        row_2 = Row(cells=tuple(cells[int(k)] for k in perm))
        return PairSample(row_1=row_1, row_2=row_2, label=0, provenance=provenance)


def sample_fake_pair(
    problem: RpmProblem,
    pool: Sequence[RpmProblem],
    rng: np.random.Generator,
    on_small_pool: str = "error",
) -> PairSample:
    """One fake pair anchored at ``problem``; see the module docstring.

    ``on_small_pool`` decides what a singleton pool does when the
    cross-problem branch is drawn: ``"error"`` raises, ``"resample"``
    redraws the branch.
    """
    if on_small_pool not in ("error", "resample"):
        raise ValueError(f"on_small_pool must be 'error' or 'resample', got {on_small_pool!r}")
    for index, candidate in enumerate(pool):
        if candidate is problem:
            return _sample_fake_by_index(pool, index, rng, on_small_pool)
    raise ValueError("problem must be a member of the pool")


def make_batch(
    pool: Sequence[RpmProblem],
    kind: str,
    rng: np.random.Generator,
    size: int = 32,
    on_small_pool: str = "error",
) -> PairBatch:
    """Draw a fresh homogeneous batch; source problems are uniform over the pool."""
    if kind not in ("real", "fake"):
        raise ValueError(f"kind must be 'real' or 'fake', got {kind!r}")
    if not pool:
        raise ValueError("pool must not be empty")
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    samples = []
    for _ in range(size):
        src = int(rng.integers(len(pool)))
        if kind == "real":
            samples.append(sample_real_pair(pool[src], rng))
        else:
            samples.append(_sample_fake_by_index(pool, src, rng, on_small_pool))
    return PairBatch(samples=tuple(samples), kind=kind)
