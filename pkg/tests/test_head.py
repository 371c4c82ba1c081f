import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from prd.head import (
    SCORE_EPS,
    DistanceMeasure,
    HeadConfig,
    PairwiseDiscriminator,
    distance,
)


def t(values):
    return torch.tensor(values, dtype=torch.float64)


def test_distance_fixtures():
    r1, r2 = t([1.0, 2.0]), t([3.0, 0.0])
    assert torch.equal(distance(r1, r2, DistanceMeasure.DIFFERENCE), t([-2.0, 2.0]))
    assert torch.equal(distance(r1, r2, DistanceMeasure.L1), t([2.0, 2.0]))
    assert torch.equal(distance(r1, r2, DistanceMeasure.L2), t([4.0, 4.0]))
    assert torch.equal(distance(r1, r2, DistanceMeasure.CONCAT), t([1.0, 2.0, 3.0, 0.0]))


def test_distance_l2_is_elementwise_not_norm():
    r1, r2 = t([0.0, 3.0, 1.0]), t([4.0, 0.0, 1.0])
    out = distance(r1, r2, DistanceMeasure.L2)
    assert out.shape == r1.shape
    assert torch.equal(out, t([16.0, 9.0, 0.0]))


def test_distance_shape_mismatch():
    with pytest.raises(ValueError):
        distance(t([1.0, 2.0]), t([1.0]), DistanceMeasure.L1)


def test_distance_batched():
    r1 = torch.arange(6, dtype=torch.float64).reshape(2, 3)
    r2 = torch.ones(2, 3, dtype=torch.float64)
    assert distance(r1, r2, DistanceMeasure.CONCAT).shape == (2, 6)
    assert distance(r1, r2, DistanceMeasure.L1).shape == (2, 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_l1_l2_symmetry_exact(values):
    r1 = t(values)
    r2 = t(list(reversed(values)))
    for measure in (DistanceMeasure.L1, DistanceMeasure.L2):
        assert torch.equal(distance(r1, r2, measure), distance(r2, r1, measure))


def test_difference_antisymmetry():
    r1, r2 = t([1.5, -2.0]), t([0.5, 4.0])
    assert torch.equal(distance(r1, r2, DistanceMeasure.DIFFERENCE),
                       -distance(r2, r1, DistanceMeasure.DIFFERENCE))


def test_measure_parse():
    assert DistanceMeasure.parse("l1") is DistanceMeasure.L1
    assert DistanceMeasure.parse("L2") is DistanceMeasure.L2
    assert DistanceMeasure.parse(DistanceMeasure.CONCAT) is DistanceMeasure.CONCAT
    with pytest.raises(ValueError, match="difference"):
        DistanceMeasure.parse("cosine")


def test_head_config_feature_dim():
    base = HeadConfig(relation_dim=64, measure=DistanceMeasure.L1)
    assert base.feature_dim == 64
    doubled = HeadConfig(relation_dim=64, measure=DistanceMeasure.CONCAT)
    assert doubled.feature_dim == 128
    with pytest.raises(ValueError):
        HeadConfig(relation_dim=0, measure=DistanceMeasure.L1)
    with pytest.raises(ValueError):
        HeadConfig(relation_dim=4, measure=DistanceMeasure.L1, dropout_rate=1.0)


def test_scores_stay_in_open_interval():
    torch.manual_seed(0)
    head = PairwiseDiscriminator(HeadConfig(relation_dim=8, measure=DistanceMeasure.L1))
    head.eval()
    # huge relation gaps push the sigmoid to saturation; the clamp must hold
    r1 = torch.full((4, 8), 1e6)
    r2 = torch.full((4, 8), -1e6)
    for a, b in ((r1, r2), (r1, r1)):
        s = head.score(a, b)
        assert torch.all(s > 0.0) and torch.all(s < 1.0)
        assert torch.all(s >= SCORE_EPS) and torch.all(s <= 1.0 - SCORE_EPS)


def test_score_symmetric_for_symmetric_measures():
    torch.manual_seed(1)
    for measure in (DistanceMeasure.L1, DistanceMeasure.L2):
        head = PairwiseDiscriminator(HeadConfig(relation_dim=16, measure=measure))
        head.eval()
        r1 = torch.randn(8, 16)
        r2 = torch.randn(8, 16)
        assert torch.equal(head.score(r1, r2), head.score(r2, r1))


def test_dropout_only_active_in_train_mode():
    torch.manual_seed(2)
    head = PairwiseDiscriminator(HeadConfig(relation_dim=32, measure=DistanceMeasure.L1,
                                            dropout_rate=0.5))
    r1, r2 = torch.randn(16, 32), torch.randn(16, 32)
    head.eval()
    assert torch.equal(head.score(r1, r2), head.score(r1, r2))
    head.train()
    torch.manual_seed(3)
    a = head.score(r1, r2)
    b = head.score(r1, r2)
    assert not torch.equal(a, b)


def test_forward_is_score():
    torch.manual_seed(4)
    head = PairwiseDiscriminator(HeadConfig(relation_dim=8, measure=DistanceMeasure.L2))
    head.eval()
    r1, r2 = torch.randn(4, 8), torch.randn(4, 8)
    assert torch.equal(head(r1, r2), head.score(r1, r2))
    assert torch.allclose(torch.sigmoid(head.logits(r1, r2)), head.score(r1, r2))


def test_hidden_width_shapes():
    head = PairwiseDiscriminator(HeadConfig(relation_dim=10, measure=DistanceMeasure.CONCAT,
                                            hidden_width=128))
    weights = dict(head.named_parameters())
    shapes = sorted(tuple(p.shape) for p in weights.values())
    assert (128, 20) in shapes  # hidden layer sees the doubled feature width
    assert (1, 128) in shapes


@pytest.mark.parametrize("measure", list(DistanceMeasure))
def test_gradient_check_against_central_differences(measure):
    # double precision, dropout off; the full head must match finite differences
    torch.manual_seed(5)
    config = HeadConfig(relation_dim=6, measure=measure, dropout_rate=0.0, hidden_width=16)
    head = PairwiseDiscriminator(config, dtype=torch.float64)
    head.eval()
    r1 = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    r2 = torch.randn(3, 6, dtype=torch.float64)
    out = head.logits(r1, r2).sum()
    (grad,) = torch.autograd.grad(out, r1)
    eps = 1e-6
    numeric = torch.zeros_like(grad)
    with torch.no_grad():
        for i in range(r1.shape[0]):
            for j in range(r1.shape[1]):
                bumped = r1.detach().clone()
                bumped[i, j] += eps
                up = head.logits(bumped, r2).sum()
                bumped[i, j] -= 2 * eps
                down = head.logits(bumped, r2).sum()
                numeric[i, j] = (up - down) / (2 * eps)
    denom = torch.maximum(grad.abs(), numeric.abs()).clamp_min(1e-12)
    rel = ((grad - numeric).abs() / denom).max()
    assert float(rel) < 1e-4
