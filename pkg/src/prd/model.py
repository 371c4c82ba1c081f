"""The full scorer: relation extractor plus pairwise discriminator."""

from __future__ import annotations

import hashlib

import torch
from torch import nn

from .backbone import BackboneConfig, RelationExtractor, build_backbone
from .head import HeadConfig, PairwiseDiscriminator

__all__ = ["PrdModel", "build_model", "model_fingerprint"]


class PrdModel(nn.Module):
    """Scores a batch of row pairs end to end."""

    def __init__(self, extractor: RelationExtractor, discriminator: PairwiseDiscriminator):
        super().__init__()
        if extractor.relation_dim != discriminator.config.relation_dim:
            raise ValueError(
                f"relation dims disagree: extractor {extractor.relation_dim}, "
                f"head {discriminator.config.relation_dim}"
            )
        self.extractor = extractor
        self.discriminator = discriminator

    def pair_logits(self, rows_1: torch.Tensor, rows_2: torch.Tensor) -> torch.Tensor:
        if rows_1.shape != rows_2.shape:
            raise ValueError(f"pair batches must align: {tuple(rows_1.shape)} vs {tuple(rows_2.shape)}")
        r_1 = self.extractor(rows_1)
        r_2 = self.extractor(rows_2)
        return self.discriminator.logits(r_1, r_2)

    def pair_scores(self, rows_1: torch.Tensor, rows_2: torch.Tensor) -> torch.Tensor:
        from .head import SCORE_EPS

        return torch.sigmoid(self.pair_logits(rows_1, rows_2)).clamp(SCORE_EPS, 1.0 - SCORE_EPS)

    forward = pair_scores


def build_model(backbone_config: BackboneConfig, head_config: HeadConfig) -> PrdModel:
    return PrdModel(build_backbone(backbone_config), PairwiseDiscriminator(head_config))


def model_fingerprint(model: nn.Module) -> str:
    """sha256 over parameter names and exact bytes, for report provenance."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
