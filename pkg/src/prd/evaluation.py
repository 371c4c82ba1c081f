"""Inference over candidates, accuracy reports, and the two study runners.

For a problem with context rows A and B, every candidate k completes the
third row; the model scores the candidate row against each context row
and the candidate's combined score is the arithmetic mean:

    s_a[k] = score(r_A, r_Ck)
    s_b[k] = score(r_B, r_Ck)
    combined[k] = (s_a[k] + s_b[k]) / 2

The prediction is the argmax of the combined scores, ties broken toward
the lowest candidate index.  Context relations are extracted once per
problem and shared across all eight candidates.

Reports embed published full-scale RAVEN reference accuracies purely
for side-by-side display; they are static constants, clearly labeled,
and never influence any computation.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .dataset_io import PreprocessProfile, preprocess_rows
from .model import PrdModel, model_fingerprint
from .problems import (
    Configuration,
    DatasetSplit,
    RpmProblem,
    complete_row,
    rows_of,
    split_folds,
    stratified_subset,
)
from .training import TrainConfig, train, load_model

__all__ = [
    "AblationConfig",
    "CandidateScore",
    "EvalReport",
    "FULL_SCALE_REFERENCE",
    "RANDOM_BASELINE",
    "SubsetStudyConfig",
    "StudyReport",
    "evaluate",
    "run_distance_ablation",
    "run_subset_study",
    "score_candidates",
    "solve",
]

RANDOM_BASELINE = 12.50

_CONFIG_ORDER = [c.value for c in Configuration]

# Published accuracies (%) for the full-scale RAVEN recipe, display-only.
FULL_SCALE_REFERENCE: dict[str, dict[str, float]] = {
    "Random": {"avg": 12.50, "center": 12.50, "2x2grid": 12.50, "3x3grid": 12.50,
               "left_right": 12.50, "up_down": 12.50, "out_in_center": 12.50, "out_in_grid": 12.50},
    "MCPT": {"avg": 28.50, "center": 35.90, "2x2grid": 25.95, "3x3grid": 27.15,
             "left_right": 29.30, "up_down": 27.40, "out_in_center": 33.10, "out_in_grid": 20.70},
    "PRD (this method, full scale)": {"avg": 50.74, "center": 74.55, "2x2grid": 38.70, "3x3grid": 34.90,
                                      "left_right": 60.80, "up_down": 60.30, "out_in_center": 62.50, "out_in_grid": 23.40},
    "ResNet-18+DRT (supervised)": {"avg": 59.56, "center": 58.08, "2x2grid": 46.53, "3x3grid": 50.40,
                                   "left_right": 65.82, "up_down": 67.11, "out_in_center": 69.09, "out_in_grid": 60.11},
    "LEN+Teacher (supervised)": {"avg": 78.30, "center": 82.30, "2x2grid": 58.50, "3x3grid": 64.30,
                                 "left_right": 87.00, "up_down": 85.50, "out_in_center": 88.90, "out_in_grid": 81.90},
    "CoPINet (supervised)": {"avg": 91.42, "center": 95.05, "2x2grid": 77.45, "3x3grid": 78.85,
                             "left_right": 99.10, "up_down": 99.65, "out_in_center": 98.50, "out_in_grid": 91.35},
    "Human": {"avg": 84.41, "center": 95.45, "2x2grid": 81.82, "3x3grid": 79.55,
              "left_right": 86.36, "up_down": 81.81, "out_in_center": 86.36, "out_in_grid": 81.81},
}

# Published full-scale accuracies by training subset and by distance measure.
SUBSET_REFERENCE = {"train_20": 32.21, "test_20": 31.38, "train_60": 37.72, "full_100": 50.74}
MEASURE_REFERENCE = {"difference": 43.66, "l1": 50.74, "l2": 48.20, "concat": 38.72}


@dataclass(frozen=True)
class CandidateScore:
    """Scores of one candidate against the two context rows."""

    candidate_index: int
    s_a: float
    s_b: float
    combined: float

    def __post_init__(self) -> None:
        if self.combined != (self.s_a + self.s_b) / 2:
            raise ValueError("combined score must equal the mean of s_a and s_b")


def score_candidates(
    problem: RpmProblem,
    model: PrdModel,
    profile: PreprocessProfile,
) -> list[CandidateScore]:
    """Score all eight candidates; context relations are computed once."""
    row_a, row_b, _ = rows_of(problem)
    candidate_rows = [complete_row(problem, k) for k in range(8)]
    stack = preprocess_rows([row_a, row_b, *candidate_rows], profile)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            relations = model.extractor(stack)
            r_a = relations[0].unsqueeze(0).expand(8, -1)
            r_b = relations[1].unsqueeze(0).expand(8, -1)
            r_c = relations[2:]
            s_a = model.discriminator.score(r_a, r_c)
            s_b = model.discriminator.score(r_b, r_c)
    finally:
        if was_training:
            model.train()
    out = []
    for k in range(8):
        a, b = float(s_a[k]), float(s_b[k])
        out.append(CandidateScore(candidate_index=k, s_a=a, s_b=b, combined=(a + b) / 2))
    return out


def solve(problem: RpmProblem, model: PrdModel, profile: PreprocessProfile) -> int:
    """Predicted candidate index: argmax combined score, ties to lowest index."""
    scores = score_candidates(problem, model, profile)
    return int(np.argmax([s.combined for s in scores]))


@dataclass(frozen=True)
class ConfigurationAccuracy:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0


@dataclass(frozen=True)
class EvalReport:
    """Accuracy by configuration plus provenance fields."""

    per_configuration: dict[str, ConfigurationAccuracy]
    correct: int
    total: int
    model_fingerprint: str | None = None
    selection_mode: str | None = None
    seed: int | None = None

    @property
    def mean_accuracy(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "correct": self.correct,
            "total": self.total,
            "per_configuration": {
                name: {"correct": c.correct, "total": c.total, "accuracy": c.accuracy}
                for name, c in self.per_configuration.items()
            },
            "model_fingerprint": self.model_fingerprint,
            "selection_mode": self.selection_mode,
            "seed": self.seed,
            "reference_full_scale": FULL_SCALE_REFERENCE,
        }

    def format_table(self) -> str:
        names = [n for n in _CONFIG_ORDER if n in self.per_configuration]
        lines = [f"{'configuration':<16}{'accuracy':>10}{'correct':>10}{'total':>8}"]
        for name in names:
            c = self.per_configuration[name]
            lines.append(f"{name:<16}{c.accuracy:>9.2f}%{c.correct:>10}{c.total:>8}")
        lines.append(f"{'mean':<16}{self.mean_accuracy:>9.2f}%{self.correct:>10}{self.total:>8}")
        lines.append("")
        lines.append("published full-scale RAVEN references (display only):")
        for label, row in FULL_SCALE_REFERENCE.items():
            lines.append(f"  {label:<34}avg {row['avg']:>6.2f}%")
        return "\n".join(lines)


def evaluate(
    problems: Sequence[RpmProblem],
    model: PrdModel | None = None,
    profile: PreprocessProfile | None = None,
    solve_fn: Callable[[RpmProblem], int] | None = None,
    workers: int = 1,
    selection_mode: str | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Accuracy of the model (or an injected predictor) on labeled problems."""
    if not problems:
        raise ValueError("need at least one problem to evaluate")
    unlabeled = sum(1 for p in problems if p.answer is None)
    if unlabeled:
        raise ValueError(f"evaluation needs answers on every problem; {unlabeled} missing")
    if (model is None) == (solve_fn is None):
        raise ValueError("pass exactly one of model or solve_fn")
    if model is not None:
        if profile is None:
            raise ValueError("model evaluation needs a preprocessing profile")
        solve_fn = lambda p: solve(p, model, profile)
    predictions = [0] * len(problems)
    if workers > 1 and model is not None:
        # Threaded chunks; the model is shared read-only and eval is pure.
        chunks = np.array_split(np.arange(len(problems)), workers)
        def run_chunk(idx: np.ndarray) -> None:
            for i in idx:
                predictions[int(i)] = solve_fn(problems[int(i)])
        threads = [threading.Thread(target=run_chunk, args=(c,)) for c in chunks if len(c)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    else:
        for i, p in enumerate(problems):
            predictions[i] = solve_fn(p)
    counts: dict[str, list[int]] = {}
    correct = 0
    for p, pred in zip(problems, predictions):
        name = p.configuration.value
        bucket = counts.setdefault(name, [0, 0])
        bucket[1] += 1
        if pred == p.answer:
            bucket[0] += 1
            correct += 1
    per_configuration = {
        name: ConfigurationAccuracy(correct=c, total=t) for name, (c, t) in counts.items()
    }
    return EvalReport(
        per_configuration=per_configuration,
        correct=correct,
        total=len(problems),
        model_fingerprint=model_fingerprint(model) if model is not None else None,
        selection_mode=selection_mode,
        seed=seed,
    )


# --- studies -----------------------------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    name: str
    train_size: int
    report: EvalReport


@dataclass(frozen=True)
class StudyReport:
    """Rows of (condition, accuracy) plus static published references."""

    study: str
    rows: tuple[StudyRow, ...]
    reference: dict[str, float]

    def to_json(self) -> dict:
        return {
            "study": self.study,
            "rows": [
                {
                    "name": r.name,
                    "train_size": r.train_size,
                    "mean_accuracy": r.report.mean_accuracy,
                    "per_configuration": {
                        n: c.accuracy for n, c in r.report.per_configuration.items()
                    },
                }
                for r in self.rows
            ],
            "reference_full_scale": self.reference,
        }

    def format_table(self) -> str:
        lines = [f"{'condition':<14}{'train size':>12}{'accuracy':>10}{'full-scale ref':>16}"]
        for r in self.rows:
            ref = self.reference.get(r.name)
            ref_txt = f"{ref:>14.2f}%" if ref is not None else f"{'':>15}"
            lines.append(f"{r.name:<14}{r.train_size:>12}{r.report.mean_accuracy:>9.2f}%{ref_txt}")
        return "\n".join(lines)


SUBSET_NAMES = ("train_20", "test_20", "train_60", "full_100")


@dataclass(frozen=True)
class SubsetStudyConfig:
    """Train on nested subsets (and the test set itself), evaluate on the test set."""

    train_config: TrainConfig
    split_seed: int = 0
    subsets: tuple[str, ...] = SUBSET_NAMES

    def __post_init__(self) -> None:
        for s in self.subsets:
            if s not in SUBSET_NAMES:
                raise ValueError(f"unknown subset {s!r}; choose from {SUBSET_NAMES}")
        if not self.subsets:
            raise ValueError("at least one subset is required")


def _subset_pool(name: str, split: DatasetSplit, seed: int) -> tuple[RpmProblem, ...]:
    if name == "train_20":
        return stratified_subset(split.train, min(len(split.test), len(split.train)), seed)
    if name == "test_20":
        return split.test
    if name == "train_60":
        return split.train
    if name == "full_100":
        return split.train + split.val + split.test
    raise ValueError(name)


def run_subset_study(
    config: SubsetStudyConfig,
    problems: Sequence[RpmProblem],
    out_dir: str | Path,
) -> StudyReport:
    """One training per subset under identical seeds; all scored on the test fold."""
    out_dir = Path(out_dir)
    split = split_folds(problems, config.split_seed)
    if any(p.answer is None for p in split.test):
        raise ValueError("the subset study needs labeled problems (the test fold is scored)")
    rows = []
    for name in config.subsets:
        pool = tuple(p.without_labels() for p in _subset_pool(name, split, config.split_seed))
        result = train(pool, config.train_config, out_dir / name)
        model, cfg = load_model(result.final_checkpoint.path)
        report = evaluate(split.test, model, profile=cfg.profile(), seed=config.train_config.seed)
        rows.append(StudyRow(name=name, train_size=len(pool), report=report))
    return StudyReport(study="training_subsets", rows=tuple(rows), reference=dict(SUBSET_REFERENCE))


@dataclass(frozen=True)
class AblationConfig:
    """One training per distance measure under otherwise identical configs."""

    train_config: TrainConfig
    split_seed: int = 0
    measures: tuple[str, ...] = ("difference", "l1", "l2", "concat")

    def __post_init__(self) -> None:
        from .head import DistanceMeasure

        object.__setattr__(
            self, "measures", tuple(DistanceMeasure.parse(m).value for m in self.measures)
        )
        if not self.measures:
            raise ValueError("at least one measure is required")


def run_distance_ablation(
    config: AblationConfig,
    problems: Sequence[RpmProblem],
    out_dir: str | Path,
) -> StudyReport:
    out_dir = Path(out_dir)
    split = split_folds(problems, config.split_seed)
    if any(p.answer is None for p in split.test):
        raise ValueError("the ablation needs labeled problems (the test fold is scored)")
    pool = tuple(p.without_labels() for p in split.train)
    rows = []
    for measure in config.measures:
        train_config = replace(config.train_config, distance_measure=measure)
        result = train(pool, train_config, out_dir / measure)
        model, cfg = load_model(result.final_checkpoint.path)
        report = evaluate(split.test, model, profile=cfg.profile(), seed=train_config.seed)
        rows.append(StudyRow(name=measure, train_size=len(pool), report=report))
    return StudyReport(study="distance_measures", rows=tuple(rows), reference=dict(MEASURE_REFERENCE))


def save_report(report: "StudyReport | EvalReport", path: str | Path) -> None:
    """Write a report as JSON; the text table goes next to it with .txt."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    path.with_suffix(".txt").write_text(report.format_table() + "\n")
