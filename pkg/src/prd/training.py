"""Discriminator training: paired batches, checkpoints, plateau detection.

Each training step draws one fresh real batch and one fresh fake batch
from the (label-free) problem pool, computes the mean of the two binary
cross-entropies, and applies exactly one Adam update.  Losses are
appended to ``loss_log.csv`` (columns ``step,loss_real,loss_fake``,
steps 1-based) and checkpoints are written every ``checkpoint_every``
steps plus at the final step.

A checkpoint is a single file holding a JSON metadata header (step,
config, config fingerprint, RNG digest) plus named parameter blobs:
model and optimizer state, both RNG states (torch and the numpy
sampling generator) and the full loss history.  Loading one and
resuming reproduces the uninterrupted run bit-exactly, given the same
pool.

Plateau detection smooths the per-step combined loss with a
``window``-wide moving average and scans for the earliest start of a
``window``-long stretch of smoothed values whose least-squares slope is
below the threshold in absolute value.  The returned index is the
0-based position in the loss history where that flat stretch begins.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import BackboneConfig
from .dataset_io import PreprocessProfile, preprocess_rows
from .head import DistanceMeasure, HeadConfig
from .model import PrdModel, build_model
from .pairs import PairBatch, make_batch
from .problems import RpmProblem

__all__ = [
    "CheckpointRef",
    "SelectionReport",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "binary_cross_entropy",
    "detect_plateau",
    "init_train_state",
    "load_checkpoint",
    "load_model",
    "save_checkpoint",
    "select_checkpoint",
    "train",
    "train_step",
]

CHECKPOINT_FORMAT = "prd-checkpoint-v1"


@dataclass(frozen=True)
class TrainConfig:
    """Full training recipe; the checkpoint records its fingerprint."""

    batch_size: int = 32
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 5000
    checkpoint_every: int = 500
    plateau_window: int = 200
    plateau_slope: float = 1e-5
    seed: int = 0
    backbone_variant: str = "tiny"
    relation_dim: int | None = None
    pretrained_weights: str | None = None
    freeze_norm_layers: bool = True
    distance_measure: str = "l1"
    dropout_rate: float = 0.5
    hidden_width: int = 128
    input_resolution: int = 96

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.plateau_window < 2:
            raise ValueError(f"plateau_window must be >= 2, got {self.plateau_window}")
        if self.plateau_slope <= 0:
            raise ValueError(f"plateau_slope must be positive, got {self.plateau_slope}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        object.__setattr__(self, "distance_measure", DistanceMeasure.parse(self.distance_measure).value)
        if self.relation_dim is None:
            # Defer to the variant's width so the head always matches it.
            object.__setattr__(self, "relation_dim", self.backbone_config().relation_dim)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            variant=self.backbone_variant,
            relation_dim=self.relation_dim,
            pretrained_weights=self.pretrained_weights,
            freeze_norm_layers=self.freeze_norm_layers,
        )

    def head_config(self) -> HeadConfig:
        return HeadConfig(
            relation_dim=self.relation_dim,
            measure=DistanceMeasure.parse(self.distance_measure),
            dropout_rate=self.dropout_rate,
            hidden_width=self.hidden_width,
        )

    def profile(self) -> PreprocessProfile:
        return PreprocessProfile(target_resolution=self.input_resolution)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainState:
    """Mutable training state; everything needed to continue a run."""

    config: TrainConfig
    model: PrdModel
    optimizer: torch.optim.Adam
    sampling_rng: np.random.Generator
    step: int = 0
    loss_history: list[tuple[float, float]] = field(default_factory=list)


def init_train_state(config: TrainConfig) -> TrainState:
    ss = np.random.SeedSequence(config.seed)
    torch_child, sample_child = ss.spawn(2)
    torch.manual_seed(int(torch_child.generate_state(1, np.uint64)[0] % (2**63)))
    model = build_model(config.backbone_config(), config.head_config())
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad],
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    return TrainState(
        config=config,
        model=model,
        optimizer=optimizer,
        sampling_rng=np.random.default_rng(sample_child),
    )


def binary_cross_entropy(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Plain BCE over similarity scores; the training loop uses the logit form."""
    return -(targets * scores.log() + (1 - targets) * (1 - scores).log()).mean()


def train_step(state: TrainState, real_batch: PairBatch, fake_batch: PairBatch) -> tuple[float, float]:
    """One parameter update from one real and one fake batch."""
    if real_batch.kind != "real":
        raise ValueError(f"first batch must be real, got {real_batch.kind!r}")
    if fake_batch.kind != "fake":
        raise ValueError(f"second batch must be fake, got {fake_batch.kind!r}")
    b = state.config.batch_size
    if len(real_batch) != b or len(fake_batch) != b:
        raise ValueError(f"batches must hold {b} samples, got {len(real_batch)} real / {len(fake_batch)} fake")
    profile = state.config.profile()
    samples = list(real_batch.samples) + list(fake_batch.samples)
    rows_1 = preprocess_rows([s.row_1 for s in samples], profile)
    rows_2 = preprocess_rows([s.row_2 for s in samples], profile)
    state.model.train()
    logits = state.model.pair_logits(rows_1, rows_2)
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    loss_real = bce(logits[:b], torch.ones(b))
    loss_fake = bce(logits[b:], torch.zeros(b))
    loss = 0.5 * (loss_real + loss_fake)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    pair = (float(loss_real.detach()), float(loss_fake.detach()))
    state.loss_history.append(pair)
    return pair


# --- checkpoints ----------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointRef:
    step: int
    path: str


def _rng_digest(torch_rng: torch.Tensor, numpy_state: dict) -> str:
    h = hashlib.sha256()
    h.update(torch_rng.numpy().tobytes())
    h.update(json.dumps(numpy_state, sort_keys=True, default=int).encode())
    return h.hexdigest()


def save_checkpoint(state: TrainState, path: str | Path) -> CheckpointRef:
    """Atomic single-file checkpoint (write-temp-then-rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch_rng = torch.get_rng_state()
    numpy_state = state.sampling_rng.bit_generator.state
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": state.step,
        "config": asdict(state.config),
        "config_fingerprint": state.config.fingerprint(),
        "rng_digest": _rng_digest(torch_rng, numpy_state),
    }
    payload = {
        "meta_json": json.dumps(meta, sort_keys=True),
        "model_state": state.model.state_dict(),
        "optimizer_state": state.optimizer.state_dict(),
        "torch_rng": torch_rng,
        "numpy_rng": numpy_state,
        "loss_history": [list(p) for p in state.loss_history],
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return CheckpointRef(step=state.step, path=str(path))


def _read_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    meta = json.loads(payload["meta_json"])
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    payload["meta"] = meta
    return payload


def load_checkpoint(path: str | Path) -> TrainState:
    """Rebuild the full training state, including both RNG streams."""
    payload = _read_checkpoint(path)
    meta = payload["meta"]
    config = TrainConfig(**meta["config"])
    state = init_train_state(config)
    state.model.load_state_dict(payload["model_state"])
    state.optimizer.load_state_dict(payload["optimizer_state"])
    torch.set_rng_state(payload["torch_rng"])
    state.sampling_rng = np.random.default_rng()
    state.sampling_rng.bit_generator.state = payload["numpy_rng"]
    state.step = int(meta["step"])
    state.loss_history = [(float(a), float(b)) for a, b in payload["loss_history"]]
    return state


def load_model(path: str | Path) -> tuple[PrdModel, TrainConfig]:
    """Load just the model (eval-ready) and its training config."""
    payload = _read_checkpoint(path)
    config = TrainConfig(**payload["meta"]["config"])
    model = build_model(config.backbone_config(), config.head_config())
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, config


# --- the training loop -----------------------------------------------------------

@dataclass(frozen=True)
class TrainResult:
    out_dir: str
    loss_log_path: str
    checkpoints: tuple[CheckpointRef, ...]
    final_checkpoint: CheckpointRef
    plateau_start_step: int | None
    plateau_checkpoints: tuple[CheckpointRef, ...]


def _resume_compatible(a: TrainConfig, b: TrainConfig) -> bool:
    da, db = asdict(a), asdict(b)
    da.pop("max_steps")
    db.pop("max_steps")
    return da == db


def train(
    pool: Sequence[RpmProblem],
    config: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run (or resume) training on a label-free pool; see module docstring."""
    if not pool:
        raise ValueError("training pool must not be empty")
    labeled = sum(1 for p in pool if p.answer is not None)
    if labeled:
        raise ValueError(
            f"training pool must be label-free, found {labeled} problem(s) with answers; "
            "strip them with RpmProblem.without_labels()"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.csv"
    if resume_from is None and log_path.exists() and log_path.stat().st_size > 0:
        raise ValueError(
            f"{log_path} already has entries; resume with resume_from or use a fresh directory"
        )
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if not _resume_compatible(state.config, config):
            raise ValueError("resume config differs from the checkpoint's (only max_steps may change)")
        state = TrainState(
            config=config,
            model=state.model,
            optimizer=state.optimizer,
            sampling_rng=state.sampling_rng,
            step=state.step,
            loss_history=state.loss_history,
        )
    else:
        state = init_train_state(config)
    checkpoints: list[CheckpointRef] = []
    write_header = not log_path.exists() or log_path.stat().st_size == 0
    with open(log_path, "a") as log:
        if write_header:
            log.write("step,loss_real,loss_fake\n")
        while state.step < config.max_steps:
            real = make_batch(pool, "real", state.sampling_rng, size=config.batch_size)
            fake = make_batch(pool, "fake", state.sampling_rng, size=config.batch_size)
            loss_real, loss_fake = train_step(state, real, fake)
            log.write(f"{state.step},{loss_real!r},{loss_fake!r}\n")
            if state.step % config.checkpoint_every == 0 or state.step == config.max_steps:
                ref = save_checkpoint(state, out_dir / f"ckpt_{state.step:06d}.pt")
                checkpoints.append(ref)
    if not checkpoints:
        # Resume that was already at max_steps: re-emit the current state.
        checkpoints.append(save_checkpoint(state, out_dir / f"ckpt_{state.step:06d}.pt"))
    combined = [0.5 * (a + b) for a, b in state.loss_history]
    plateau_idx = detect_plateau(combined, config.plateau_window, config.plateau_slope)
    plateau_step = None if plateau_idx is None else plateau_idx + 1
    in_plateau = tuple(c for c in checkpoints if plateau_step is not None and c.step >= plateau_step)
    return TrainResult(
        out_dir=str(out_dir),
        loss_log_path=str(log_path),
        checkpoints=tuple(checkpoints),
        final_checkpoint=checkpoints[-1],
        plateau_start_step=plateau_step,
        plateau_checkpoints=in_plateau,
    )


# --- plateau detection and checkpoint selection ------------------------------------

def detect_plateau(losses: Sequence[float], window: int, slope_threshold: float) -> int | None:
    """Earliest 0-based index where the smoothed loss goes flat, else None.

    Smooths with a ``window``-wide moving average, then finds the first
    index m such that the least-squares slope of the ``window`` smoothed
    values starting at m is below ``slope_threshold`` in magnitude.
    Needs at least ``2 * window`` points.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if slope_threshold <= 0:
        raise ValueError(f"slope_threshold must be positive, got {slope_threshold}")
    y = np.asarray(losses, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("losses must be a flat sequence")
    if len(y) < 2 * window:
        return None
    means = np.convolve(y, np.full(window, 1.0 / window), mode="valid")
    x = np.arange(window, dtype=np.float64)
    x -= x.mean()
    var_x = float((x * x).sum())
    # Least-squares slope of every window-long stretch of smoothed values.
    slopes = np.convolve(means, x[::-1], mode="valid") / var_x
    hits = np.flatnonzero(np.abs(slopes) < slope_threshold)
    return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class SelectionReport:
    mode: str
    chosen: CheckpointRef
    accuracies: dict[int, float] | None


def select_checkpoint(
    checkpoints: Sequence[CheckpointRef],
    mode: str,
    val_set: Sequence[RpmProblem] | None = None,
    rng: np.random.Generator | None = None,
) -> SelectionReport:
    """Pick a checkpoint, either by validation accuracy or label-free at random.

    ``validated`` scores every candidate on a labeled validation set and
    keeps the best (ties go to the latest step); it is the only
    selection path that reads answers.  ``label_free`` draws uniformly
    from the candidates, which the caller should restrict to the loss
    plateau.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    if mode == "validated":
        if not val_set:
            raise ValueError("validated selection needs a non-empty labeled validation set")
        if any(p.answer is None for p in val_set):
            raise ValueError("validated selection needs answers on every validation problem")
        from .evaluation import evaluate

        accuracies: dict[int, float] = {}
        for ref in checkpoints:
            model, cfg = load_model(ref.path)
            report = evaluate(val_set, model, profile=cfg.profile())
            accuracies[ref.step] = report.mean_accuracy
        best = max(checkpoints, key=lambda c: (accuracies[c.step], c.step))
        return SelectionReport(mode=mode, chosen=best, accuracies=accuracies)
    if mode == "label_free":
        if rng is None:
            raise ValueError("label_free selection needs an rng")
        chosen = checkpoints[int(rng.integers(len(checkpoints)))]
        return SelectionReport(mode=mode, chosen=chosen, accuracies=None)
    raise ValueError(f"mode must be 'validated' or 'label_free', got {mode!r}")
