import math

import numpy as np
import pytest
import torch

from prd.pairs import make_batch
from prd.training import (
    TrainConfig,
    binary_cross_entropy,
    detect_plateau,
    init_train_state,
    load_checkpoint,
    load_model,
    save_checkpoint,
    select_checkpoint,
    train,
    train_step,
)

from conftest import make_problem


def desk_config(**overrides):
    base = dict(
        batch_size=4,
        max_steps=6,
        checkpoint_every=3,
        input_resolution=32,
        relation_dim=16,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def pixel_pool():
    rng = np.random.default_rng(0)
    return [make_problem(rng, resolution=32) for _ in range(8)]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(plateau_window=1)
    with pytest.raises(ValueError):
        TrainConfig(plateau_slope=0.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(distance_measure="cosine")
    assert TrainConfig(distance_measure="L1").distance_measure == "l1"
    assert TrainConfig(backbone_variant="paper_residual_18").relation_dim == 512


def test_config_fingerprint_tracks_fields():
    a = TrainConfig(seed=0)
    b = TrainConfig(seed=1)
    assert a.fingerprint() == TrainConfig(seed=0).fingerprint()
    assert a.fingerprint() != b.fingerprint()


def test_published_defaults():
    config = TrainConfig()
    assert config.batch_size == 32
    assert config.learning_rate == 2e-4
    assert config.dropout_rate == 0.5
    assert (config.adam_beta1, config.adam_beta2, config.adam_eps) == (0.9, 0.999, 1e-8)


def test_bce_at_half_is_ln2():
    scores = torch.full((16,), 0.5, dtype=torch.float64)
    for label in (0.0, 1.0):
        loss = binary_cross_entropy(scores, torch.full((16,), label, dtype=torch.float64))
        assert abs(float(loss) - math.log(2)) < 1e-9


def test_train_step_updates_and_logs(pixel_pool):
    config = desk_config()
    state = init_train_state(config)
    rng = np.random.default_rng(1)
    real = make_batch(pixel_pool, "real", rng, size=4)
    fake = make_batch(pixel_pool, "fake", rng, size=4)
    before = [p.clone() for p in state.model.parameters() if p.requires_grad]
    loss_real, loss_fake = train_step(state, real, fake)
    assert state.step == 1
    assert state.loss_history == [(loss_real, loss_fake)]
    assert loss_real > 0 and loss_fake > 0
    after = [p for p in state.model.parameters() if p.requires_grad]
    assert any(not torch.equal(a, b) for a, b in zip(before, after))
    with pytest.raises(ValueError):
        train_step(state, fake, real)
    small = make_batch(pixel_pool, "real", rng, size=2)
    with pytest.raises(ValueError, match="batch"):
        train_step(state, small, fake)


def test_frozen_norm_parameters_do_not_move(pixel_pool):
    config = desk_config(max_steps=10)
    state = init_train_state(config)
    norm_params = {
        name: p.clone()
        for name, p in state.model.named_parameters()
        if not p.requires_grad
    }
    assert norm_params
    rng = np.random.default_rng(2)
    for _ in range(10):
        real = make_batch(pixel_pool, "real", rng, size=4)
        fake = make_batch(pixel_pool, "fake", rng, size=4)
        train_step(state, real, fake)
    for name, before in norm_params.items():
        now = dict(state.model.named_parameters())[name]
        assert torch.equal(before, now), name


def test_train_writes_log_and_checkpoints(pixel_pool, tmp_path):
    config = desk_config()
    result = train(pixel_pool, config, tmp_path / "run")
    lines = (tmp_path / "run" / "loss_log.csv").read_text().splitlines()
    assert lines[0] == "step,loss_real,loss_fake"
    assert len(lines) == 7
    assert [c.step for c in result.checkpoints] == [3, 6]
    assert result.final_checkpoint.step == 6
    assert result.plateau_start_step is None  # far too short to qualify


def test_train_rejects_labeled_pool(pixel_pool, tmp_path):
    labeled = [
        type(p)(context=p.context, candidates=p.candidates,
                configuration=p.configuration, answer=0)
        for p in pixel_pool
    ]
    with pytest.raises(ValueError, match="without_labels"):
        train(labeled, desk_config(), tmp_path / "run")
    with pytest.raises(ValueError, match="empty"):
        train([], desk_config(), tmp_path / "run")


def test_train_determinism(pixel_pool, tmp_path):
    config = desk_config()
    train(pixel_pool, config, tmp_path / "a")
    train(pixel_pool, config, tmp_path / "b")
    a = (tmp_path / "a" / "loss_log.csv").read_bytes()
    b = (tmp_path / "b" / "loss_log.csv").read_bytes()
    assert a == b


def test_train_refuses_dirty_directory(pixel_pool, tmp_path):
    config = desk_config()
    train(pixel_pool, config, tmp_path / "run")
    with pytest.raises(ValueError, match="resume"):
        train(pixel_pool, config, tmp_path / "run")


def test_checkpoint_round_trip(pixel_pool, tmp_path):
    config = desk_config(max_steps=4, checkpoint_every=2)
    result = train(pixel_pool, config, tmp_path / "run")
    state = load_checkpoint(result.final_checkpoint.path)
    assert state.step == 4
    assert state.config == config
    assert len(state.loss_history) == 4
    model, loaded_config = load_model(result.final_checkpoint.path)
    assert loaded_config == config
    assert not model.training


def test_checkpoint_rejects_unknown_file(tmp_path):
    import json

    bogus = tmp_path / "x.pt"
    torch.save({"meta_json": json.dumps({"format": "other"})}, bogus)
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(bogus)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")


def test_resume_reproduces_loss_log_bit_exactly(pixel_pool, tmp_path):
    full_config = desk_config(max_steps=8, checkpoint_every=4)
    train(pixel_pool, full_config, tmp_path / "full")

    half_config = desk_config(max_steps=4, checkpoint_every=4)
    half = train(pixel_pool, half_config, tmp_path / "half")
    train(
        pixel_pool,
        desk_config(max_steps=8, checkpoint_every=4),
        tmp_path / "half",
        resume_from=half.final_checkpoint.path,
    )
    a = (tmp_path / "full" / "loss_log.csv").read_bytes()
    b = (tmp_path / "half" / "loss_log.csv").read_bytes()
    assert a == b


def test_resume_requires_compatible_config(pixel_pool, tmp_path):
    result = train(pixel_pool, desk_config(), tmp_path / "run")
    incompatible = desk_config(max_steps=12, dropout_rate=0.25)
    with pytest.raises(ValueError, match="max_steps"):
        train(pixel_pool, incompatible, tmp_path / "other",
              resume_from=result.final_checkpoint.path)


def test_detect_plateau_validation():
    with pytest.raises(ValueError):
        detect_plateau([1.0] * 10, window=1, slope_threshold=1e-5)
    with pytest.raises(ValueError):
        detect_plateau([1.0] * 10, window=2, slope_threshold=0.0)


def test_detect_plateau_cases():
    window = 50
    # too short: undecidable
    assert detect_plateau([1.0] * 99, window, 1e-5) is None
    # constant trace flattens immediately
    assert detect_plateau([0.7] * 200, window, 1e-5) == 0
    # strictly decaying trace never flattens (slope stays above threshold)
    decay = [1.0 - 0.001 * i for i in range(400)]
    assert detect_plateau(decay, window, 1e-5) is None
    # piecewise: linear decay to a knee, flat afterwards
    knee = 150
    trace = [1.0 - 0.002 * min(i, knee) for i in range(400)]
    found = detect_plateau(trace, window, 1e-5)
    assert found is not None and abs(found - knee) <= window


def test_detect_plateau_noisy_knee():
    rng = np.random.default_rng(3)
    knee = 200
    window = 60
    noise = rng.normal(0.0, 1e-4, size=600)
    trace = [1.0 - 0.003 * min(i, knee) + float(noise[i]) for i in range(600)]
    found = detect_plateau(trace, window, 5e-5)
    assert found is not None and knee - window <= found <= knee + window


def test_select_checkpoint_validated(center_pool, labeled_mixed, tmp_path):
    config = desk_config(max_steps=4, checkpoint_every=2, input_resolution=32)
    result = train(list(center_pool[:8]), config, tmp_path / "run")
    report = select_checkpoint(result.checkpoints, "validated",
                               val_set=list(labeled_mixed[:6]))
    assert report.mode == "validated"
    assert report.chosen in result.checkpoints
    assert set(report.accuracies) == {2, 4}
    # ties resolve to the latest step
    if report.accuracies[2] == report.accuracies[4]:
        assert report.chosen.step == 4


def test_select_checkpoint_validated_needs_labels(center_pool, tmp_path):
    config = desk_config(max_steps=2, checkpoint_every=2, input_resolution=32)
    result = train(list(center_pool[:8]), config, tmp_path / "run")
    with pytest.raises(ValueError, match="validation"):
        select_checkpoint(result.checkpoints, "validated", val_set=[])
    with pytest.raises(ValueError, match="answers"):
        select_checkpoint(result.checkpoints, "validated",
                          val_set=list(center_pool[:4]))


def test_select_checkpoint_label_free_uniform():
    from prd.training import CheckpointRef

    refs = [CheckpointRef(step=s, path=f"ckpt_{s}.pt") for s in (100, 200, 300, 400)]
    rng = np.random.default_rng(4)
    counts = {r.step: 0 for r in refs}
    n = 10_000
    for _ in range(n):
        report = select_checkpoint(refs, "label_free", rng=rng)
        counts[report.chosen.step] += 1
    expected = n / len(refs)
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    from scipy.stats import chi2 as chi2_dist
    assert chi2_dist.sf(chi2, df=len(refs) - 1) > 0.01
    with pytest.raises(ValueError, match="rng"):
        select_checkpoint(refs, "label_free")
    with pytest.raises(ValueError, match="mode"):
        select_checkpoint(refs, "accuracy")
    with pytest.raises(ValueError):
        select_checkpoint([], "label_free", rng=rng)
