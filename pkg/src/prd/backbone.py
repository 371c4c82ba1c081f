"""Relation extractors: map a 3-channel row image to a relation vector.

Two variants:

* ``paper_residual_18``: an 18-layer residual network (torchvision's
  resnet18 topology) with the 1000-way classification head removed, so
  the pooled 512-d feature is the relation vector.  Pretrained weights
  are consumed from a standard state-dict file passed by path; they are
  never bundled or downloaded here.  State-dict keys follow the
  torchvision resnet18 naming, so published checkpoints load directly
  (the classifier's ``fc.*`` keys are accepted and dropped).
* ``tiny``: four stride-2 conv blocks of widths 16/32/64/relation_dim
  with group normalisation, global average pooled.  Under 200k
  parameters; meant for desk-scale runs on generated problems.

When ``freeze_norm_layers`` is set (the default, matching the training
recipe), normalisation layers are pinned: batch-norm running statistics
are never updated (the layers stay in eval mode even during training)
and all normalisation affine parameters are excluded from gradient
updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

__all__ = [
    "BackboneConfig",
    "RelationExtractor",
    "WeightLoadError",
    "build_backbone",
    "count_parameters",
    "extract_relation",
    "extract_relations",
]

VARIANTS = ("paper_residual_18", "tiny")
RESIDUAL_18_DIM = 512
RESIDUAL_18_INPUT = 224
TINY_MIN_INPUT = 16


class WeightLoadError(RuntimeError):
    """A pretrained state dict did not match the network."""


TINY_DEFAULT_DIM = 64


@dataclass(frozen=True)
class BackboneConfig:
    """``relation_dim`` left unset resolves to the variant's width."""

    variant: str = "tiny"
    relation_dim: int | None = None
    pretrained_weights: str | None = None
    freeze_norm_layers: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.relation_dim is None:
            default = RESIDUAL_18_DIM if self.variant == "paper_residual_18" else TINY_DEFAULT_DIM
            object.__setattr__(self, "relation_dim", default)
        if self.relation_dim < 1:
            raise ValueError(f"relation_dim must be >= 1, got {self.relation_dim}")
        if self.variant == "paper_residual_18" and self.relation_dim != RESIDUAL_18_DIM:
            raise ValueError(
                f"paper_residual_18 produces a {RESIDUAL_18_DIM}-d relation, got relation_dim={self.relation_dim}"
            )
        if self.variant == "tiny" and self.pretrained_weights is not None:
            raise ValueError("pretrained weights exist only for paper_residual_18")


def _group_norm(width: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if width % groups == 0:
            return nn.GroupNorm(groups, width)
    return nn.GroupNorm(1, width)


def _tiny_net(relation_dim: int) -> nn.Sequential:
    widths = (16, 32, 64, relation_dim)
    layers: list[nn.Module] = []
    in_ch = 3
    for w in widths:
        layers.extend([
            nn.Conv2d(in_ch, w, kernel_size=3, stride=2, padding=1, bias=False),
            _group_norm(w),
            nn.ReLU(inplace=True),
        ])
        in_ch = w
    return nn.Sequential(*layers)


def _residual_18(pretrained_weights: str | None) -> nn.Module:
    import torchvision.models

    net = torchvision.models.resnet18(weights=None)
    if pretrained_weights is not None:
        path = Path(pretrained_weights)
        if not path.is_file():
            raise WeightLoadError(f"pretrained weights not found: {path}")
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as err:
            raise WeightLoadError(f"{path}: cannot read state dict ({err})") from err
        if not isinstance(state, dict):
            raise WeightLoadError(f"{path}: expected a state dict, got {type(state).__name__}")
        state = state.get("state_dict", state)
        missing, unexpected = net.load_state_dict(state, strict=False)
        # The stripped classifier is the only tolerated mismatch.
        missing = [k for k in missing if not k.startswith("fc.")]
        unexpected = [k for k in unexpected if not k.startswith("fc.")]
        if missing or unexpected:
            raise WeightLoadError(
                f"{path}: state dict mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}"
            )
    net.fc = nn.Identity()
    return net


class RelationExtractor(nn.Module):
    """Backbone wrapper enforcing input contracts and frozen-norm behaviour."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        if config.variant == "tiny":
            self.net = _tiny_net(config.relation_dim)
            self.min_input = TINY_MIN_INPUT
            self.fixed_input = None
        else:
            self.net = _residual_18(config.pretrained_weights)
            self.min_input = RESIDUAL_18_INPUT
            self.fixed_input = RESIDUAL_18_INPUT
        self.relation_dim = config.relation_dim
        self._frozen_norms: list[nn.Module] = []
        if config.freeze_norm_layers:
            for module in self.net.modules():
                if isinstance(module, (nn.modules.batchnorm._BatchNorm, nn.GroupNorm)):
                    for p in module.parameters(recurse=False):
                        p.requires_grad_(False)
                    self._frozen_norms.append(module)
            self._apply_norm_freeze()

    def _apply_norm_freeze(self) -> None:
        for module in self._frozen_norms:
            module.eval()

    def train(self, mode: bool = True) -> "RelationExtractor":
        super().train(mode)
        if self.config.freeze_norm_layers:
            self._apply_norm_freeze()
        return self

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if rows.ndim != 4 or rows.shape[1] != 3:
            raise ValueError(f"expected [N, 3, R, R] input, got shape {tuple(rows.shape)}")
        r = rows.shape[-1]
        if rows.shape[-2] != r:
            raise ValueError(f"input must be square, got shape {tuple(rows.shape)}")
        if self.fixed_input is not None and r != self.fixed_input:
            raise ValueError(f"{self.config.variant} expects {self.fixed_input}x{self.fixed_input} input, got {r}x{r}")
        if r < self.min_input:
            raise ValueError(f"{self.config.variant} needs input >= {self.min_input}, got {r}")
        if self.config.variant == "tiny":
            features = self.net(rows)
            return torch.flatten(nn.functional.adaptive_avg_pool2d(features, 1), 1)
        return self.net(rows)


def build_backbone(config: BackboneConfig) -> RelationExtractor:
    return RelationExtractor(config)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def extract_relations(model: RelationExtractor, rows: torch.Tensor) -> torch.Tensor:
    """Batched relation extraction in evaluation mode, no gradients."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(rows)
    finally:
        if was_training:
            model.train()
    return out


def extract_relation(model: RelationExtractor, row_tensor: torch.Tensor) -> torch.Tensor:
    """Single-row relation extraction; ``row_tensor`` is [3, R, R]."""
    if row_tensor.ndim != 3:
        raise ValueError(f"expected [3, R, R] input, got shape {tuple(row_tensor.shape)}")
    return extract_relations(model, row_tensor.unsqueeze(0))[0]
