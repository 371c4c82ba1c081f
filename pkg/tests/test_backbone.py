import numpy as np
import pytest
import torch

from prd.backbone import (
    BackboneConfig,
    RESIDUAL_18_DIM,
    RESIDUAL_18_INPUT,
    TINY_MIN_INPUT,
    WeightLoadError,
    build_backbone,
    count_parameters,
    extract_relation,
    extract_relations,
)
from prd.model import PrdModel, build_model, model_fingerprint
from prd.head import DistanceMeasure, HeadConfig, PairwiseDiscriminator


def tiny(relation_dim=32, freeze=True):
    return build_backbone(BackboneConfig(variant="tiny", relation_dim=relation_dim,
                                         freeze_norm_layers=freeze))


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(variant="resnet50")
    with pytest.raises(ValueError):
        BackboneConfig(variant="tiny", relation_dim=0)
    with pytest.raises(ValueError):
        BackboneConfig(variant="tiny", pretrained_weights="weights.pt")
    with pytest.raises(ValueError):
        BackboneConfig(variant="paper_residual_18", relation_dim=64)
    assert BackboneConfig(variant="paper_residual_18").relation_dim == RESIDUAL_18_DIM


def test_tiny_output_width_and_budget():
    torch.manual_seed(0)
    model = tiny(relation_dim=48)
    out = model(torch.randn(2, 3, 64, 64))
    assert out.shape == (2, 48)
    assert count_parameters(model) < 200_000


def test_tiny_input_validation():
    model = tiny()
    with pytest.raises(ValueError, match=r"N, 3, R, R"):
        model(torch.randn(3, 32, 32))
    with pytest.raises(ValueError, match=r"N, 3, R, R"):
        model(torch.randn(1, 1, 32, 32))
    with pytest.raises(ValueError, match="square"):
        model(torch.randn(1, 3, 32, 48))
    with pytest.raises(ValueError, match=str(TINY_MIN_INPUT)):
        model(torch.randn(1, 3, 8, 8))
    model(torch.randn(1, 3, TINY_MIN_INPUT, TINY_MIN_INPUT))


def test_residual_18_shape_and_input_contract():
    torch.manual_seed(1)
    model = build_backbone(BackboneConfig(variant="paper_residual_18"))
    out = model(torch.randn(1, 3, RESIDUAL_18_INPUT, RESIDUAL_18_INPUT))
    assert out.shape == (1, RESIDUAL_18_DIM)
    with pytest.raises(ValueError, match="224"):
        model(torch.randn(1, 3, 96, 96))
    n = count_parameters(model)
    assert 11_000_000 < n < 11_400_000


def test_residual_18_pretrained_by_path(tmp_path):
    torch.manual_seed(2)
    from torchvision.models import resnet18

    donor = resnet18(weights=None)
    path = tmp_path / "weights.pt"
    torch.save(donor.state_dict(), path)
    model = build_backbone(BackboneConfig(variant="paper_residual_18",
                                          pretrained_weights=str(path)))
    got = model(torch.zeros(1, 3, 224, 224))
    assert got.shape == (1, 512)
    # the fc head is dropped, so its weights must not matter
    donor_conv = donor.state_dict()["conv1.weight"]
    loaded_conv = dict(model.named_parameters())["net.conv1.weight"]
    assert torch.equal(donor_conv, loaded_conv)


def test_residual_18_pretrained_wrapper_and_fc_tolerance(tmp_path):
    from torchvision.models import resnet18

    donor = resnet18(weights=None)
    state = donor.state_dict()
    state.pop("fc.weight")
    state.pop("fc.bias")
    path = tmp_path / "wrapped.pt"
    torch.save({"state_dict": state}, path)
    build_backbone(BackboneConfig(variant="paper_residual_18", pretrained_weights=str(path)))


def test_residual_18_rejects_mismatched_weights(tmp_path):
    from torchvision.models import resnet18

    state = resnet18(weights=None).state_dict()
    state.pop("layer1.0.conv1.weight")
    state["bogus.weight"] = torch.zeros(1)
    path = tmp_path / "bad.pt"
    torch.save(state, path)
    with pytest.raises(WeightLoadError) as err:
        build_backbone(BackboneConfig(variant="paper_residual_18",
                                      pretrained_weights=str(path)))
    assert "layer1.0.conv1.weight" in str(err.value)
    assert "bogus.weight" in str(err.value)


def test_missing_weights_file():
    with pytest.raises((FileNotFoundError, WeightLoadError)):
        build_backbone(BackboneConfig(variant="paper_residual_18",
                                      pretrained_weights="/nonexistent/weights.pt"))


def test_frozen_norm_affine_parameters():
    model = tiny(freeze=True)
    norm_param_ids = {
        id(p)
        for m in model.modules()
        if isinstance(m, (torch.nn.GroupNorm, torch.nn.modules.batchnorm._BatchNorm))
        for p in m.parameters(recurse=False)
    }
    assert norm_param_ids, "tiny backbone should contain normalization layers"
    for p in model.parameters():
        assert p.requires_grad == (id(p) not in norm_param_ids)
    unfrozen = tiny(freeze=False)
    assert all(p.requires_grad for p in unfrozen.parameters())


def test_frozen_norms_stay_in_eval_during_train_mode():
    model = build_backbone(BackboneConfig(variant="paper_residual_18"))
    model.train()
    bn_layers = [m for m in model.modules() if isinstance(m, torch.nn.BatchNorm2d)]
    assert bn_layers and all(not m.training for m in bn_layers)
    before = {k: v.clone() for k, v in model.state_dict().items() if "running" in k}
    model(torch.randn(2, 3, 224, 224))
    after = model.state_dict()
    for key, tensor in before.items():
        assert torch.equal(tensor, after[key]), key


def test_extract_relations_restores_mode_and_blocks_grad():
    torch.manual_seed(3)
    model = tiny()
    model.train()
    rows = torch.randn(4, 3, 32, 32)
    out = extract_relations(model, rows)
    assert out.shape == (4, 32)
    assert not out.requires_grad
    assert model.training  # mode restored
    single = extract_relation(model, rows[0])
    assert torch.equal(single, extract_relations(model, rows[:1])[0])


def test_model_dims_must_agree():
    extractor = tiny(relation_dim=32)
    head = PairwiseDiscriminator(HeadConfig(relation_dim=16, measure=DistanceMeasure.L1))
    with pytest.raises(ValueError, match="relation"):
        PrdModel(extractor=extractor, discriminator=head)


def test_build_model_and_pair_scores():
    torch.manual_seed(4)
    model = build_model(
        BackboneConfig(variant="tiny", relation_dim=24),
        HeadConfig(relation_dim=24, measure=DistanceMeasure.L1),
    )
    model.eval()
    rows_1 = torch.randn(5, 3, 32, 32)
    rows_2 = torch.randn(5, 3, 32, 32)
    scores = model.pair_scores(rows_1, rows_2)
    assert scores.shape == (5,)
    assert torch.all((scores > 0) & (scores < 1))
    assert torch.equal(model(rows_1, rows_2), scores)
    with pytest.raises(ValueError):
        model.pair_logits(rows_1, rows_2[:3])


def test_model_fingerprint_tracks_weights():
    torch.manual_seed(5)
    model = build_model(
        BackboneConfig(variant="tiny", relation_dim=8),
        HeadConfig(relation_dim=8, measure=DistanceMeasure.L1),
    )
    a = model_fingerprint(model)
    assert a == model_fingerprint(model)
    with torch.no_grad():
        next(model.discriminator.parameters()).add_(1.0)
    assert a != model_fingerprint(model)
