"""Pairwise discriminator head: score how alike two relation vectors are.

The head computes an elementwise distance feature between the two
relations, passes it through dropout and a single 128-wide hidden layer,
and squashes the output through a sigmoid:

    score = sigmoid(W2 . relu(W1 . dropout(d(r_i, r_j)) + b1) + b2)

Distance measures (all elementwise, preserving width, except concat):

    difference   r_i - r_j
    l1           |r_i - r_j|
    l2           |r_i - r_j|^2
    concat       [r_i ; r_j]          (doubles the feature width)

Reported scores are clamped to the open interval (eps, 1 - eps) so they
are strictly inside (0, 1); training uses the logit path directly.
Dropout uses inverted scaling and is inactive in evaluation mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
from torch import nn

__all__ = [
    "DistanceMeasure",
    "HeadConfig",
    "PairwiseDiscriminator",
    "SCORE_EPS",
    "distance",
]

SCORE_EPS = 1e-7
HIDDEN_WIDTH = 128


class DistanceMeasure(enum.Enum):
    DIFFERENCE = "difference"
    L1 = "l1"
    L2 = "l2"
    CONCAT = "concat"

    @classmethod
    def parse(cls, name: "str | DistanceMeasure") -> "DistanceMeasure":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown distance measure {name!r}; choose from {[m.value for m in cls]}"
            ) from None


def distance(r_i: torch.Tensor, r_j: torch.Tensor, measure: DistanceMeasure) -> torch.Tensor:
    """Distance feature between relation vectors (batched or single)."""
    measure = DistanceMeasure.parse(measure)
    if r_i.shape != r_j.shape:
        raise ValueError(f"relation shapes differ: {tuple(r_i.shape)} vs {tuple(r_j.shape)}")
    if measure is DistanceMeasure.DIFFERENCE:
        return r_i - r_j
    if measure is DistanceMeasure.L1:
        return (r_i - r_j).abs()
    if measure is DistanceMeasure.L2:
        d = r_i - r_j
        return d * d
    return torch.cat([r_i, r_j], dim=-1)


@dataclass(frozen=True)
class HeadConfig:
    relation_dim: int
    measure: DistanceMeasure = DistanceMeasure.L1
    dropout_rate: float = 0.5
    hidden_width: int = HIDDEN_WIDTH

    def __post_init__(self) -> None:
        if self.relation_dim < 1:
            raise ValueError(f"relation_dim must be >= 1, got {self.relation_dim}")
        object.__setattr__(self, "measure", DistanceMeasure.parse(self.measure))
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")

    @property
    def feature_dim(self) -> int:
        return 2 * self.relation_dim if self.measure is DistanceMeasure.CONCAT else self.relation_dim


class PairwiseDiscriminator(nn.Module):
    """Similarity head over relation pairs."""

    def __init__(self, config: HeadConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.dropout = nn.Dropout(config.dropout_rate)
        self.hidden = nn.Linear(config.feature_dim, config.hidden_width, dtype=dtype)
        self.out = nn.Linear(config.hidden_width, 1, dtype=dtype)

    def logits(self, r_i: torch.Tensor, r_j: torch.Tensor) -> torch.Tensor:
        d = distance(r_i, r_j, self.config.measure)
        h = torch.relu(self.hidden(self.dropout(d)))
        return self.out(h).squeeze(-1)

    def score(self, r_i: torch.Tensor, r_j: torch.Tensor) -> torch.Tensor:
        """Similarity in the open interval (0, 1)."""
        return torch.sigmoid(self.logits(r_i, r_j)).clamp(SCORE_EPS, 1.0 - SCORE_EPS)

    forward = score
