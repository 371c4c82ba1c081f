"""Dataset loading, the portable on-disk format, and row preprocessing.

Two disk formats are understood:

* RAVEN-native archives: one ``.npz`` per problem holding a 16x160x160
  uint8 ``image`` stack (frames 0-7 context, 8-15 candidates) and a
  scalar ``target`` in [0, 7]; the configuration is parsed from the
  parent directory name.
* The portable format written by this package: ``<dir>/manifest.jsonl``
  with one record per problem plus lossless greyscale PNGs under
  ``<dir>/cells/``, named ``<id>_<00..15>.png`` (00-07 context, 08-15
  candidates).  Each record stores the cell file names and their sha256
  digests, so tampering is detected at load time.

Preprocessing turns a row of three greyscale cells into a 3-channel
float tensor: bilinear resize to the target resolution, then divide by
255, then per-channel standardisation, in that order.  The channel
index is the cell's position in the row.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .problems import CellAttributes, Configuration, Row, RpmProblem, RuleSystem

__all__ = [
    "FormatError",
    "IntegrityError",
    "IMAGENET_MEANS",
    "IMAGENET_STDS",
    "PreprocessProfile",
    "load_portable",
    "load_raven_archive",
    "preprocess_row",
    "preprocess_rows",
    "save_portable",
]

IMAGENET_MEANS = (0.485, 0.456, 0.406)
IMAGENET_STDS = (0.229, 0.224, 0.225)


class FormatError(ValueError):
    """The on-disk data does not match the expected format."""


class IntegrityError(RuntimeError):
    """Manifest and pixel files disagree (missing files or checksum mismatch)."""


# --- RAVEN-native archives ----------------------------------------------------

def load_raven_archive(path: str | Path) -> RpmProblem:
    """Load one RAVEN-native ``.npz`` archive as a labeled problem."""
    path = Path(path)
    try:
        data = np.load(path)
    except Exception as err:
        raise FormatError(f"{path}: not a readable npz archive ({err})") from err
    if "image" not in data:
        raise FormatError(f"{path}: missing key 'image'")
    if "target" not in data:
        raise FormatError(f"{path}: missing key 'target'")
    image = data["image"]
    if image.ndim != 3 or image.shape[0] != 16:
        raise FormatError(f"{path}: field 'image' must be a 16-frame stack, got shape {image.shape}")
    if image.shape[1] != image.shape[2]:
        raise FormatError(f"{path}: field 'image' frames must be square, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise FormatError(f"{path}: field 'image' must be uint8, got {image.dtype}")
    target = np.asarray(data["target"]).reshape(-1)
    if target.size != 1:
        raise FormatError(f"{path}: field 'target' must be a scalar, got size {target.size}")
    answer = int(target[0])
    if not (0 <= answer <= 7):
        raise FormatError(f"{path}: field 'target' out of range [0, 7]: {answer}")
    try:
        configuration = Configuration.parse(path.parent.name)
    except ValueError as err:
        raise FormatError(f"{path}: cannot parse configuration from directory name ({err})") from err
    frames = [np.ascontiguousarray(image[i]) for i in range(16)]
    return RpmProblem(
        context=tuple(frames[:8]),
        candidates=tuple(frames[8:]),
        configuration=configuration,
        answer=answer,
        source_id=path.stem,
    )


# --- portable format ----------------------------------------------------------

def _png_bytes(cell: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(cell, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _rules_to_json(problem: RpmProblem) -> dict | None:
    if problem.rules is None and problem.cell_attrs is None:
        return None
    out: dict = {}
    if problem.rules is not None:
        out.update(problem.rules.to_json())
    if problem.cell_attrs is not None:
        out["cell_attributes"] = [a.to_json() for a in problem.cell_attrs]
    return out


def _rules_from_json(data: dict | None) -> tuple[RuleSystem | None, tuple[CellAttributes, ...] | None]:
    if data is None:
        return None, None
    rules = RuleSystem.from_json(data) if "entries" in data else None
    attrs = None
    if "cell_attributes" in data:
        attrs = tuple(CellAttributes.from_json(a) for a in data["cell_attributes"])
    return rules, attrs


def save_portable(problems: Sequence[RpmProblem], out_dir: str | Path) -> dict:
    """Write problems in the portable format; returns a summary dict.

    Ids are taken from ``source_id`` when present, else assigned
    sequentially.  Identical inputs produce byte-identical directories.
    """
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    ids = set()
    lines = []
    n_cells = 0
    for idx, problem in enumerate(problems):
        pid = problem.source_id or f"p{idx:06d}"
        if pid in ids:
            raise ValueError(f"duplicate problem id: {pid}")
        ids.add(pid)
        names = []
        digests = {}
        for k, cell in enumerate(problem.context + problem.candidates):
            name = f"{pid}_{k:02d}.png"
            payload = _png_bytes(cell)
            (cells_dir / name).write_bytes(payload)
            names.append(name)
            digests[name] = hashlib.sha256(payload).hexdigest()
            n_cells += 1
        record = {
            "id": pid,
            "configuration": problem.configuration.value,
            "answer": problem.answer,
            "rules": _rules_to_json(problem),
            "cells": names,
            "cell_sha256": digests,
        }
        lines.append(json.dumps(record, sort_keys=True))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    return {"dir": str(out_dir), "problems": len(lines), "cells": n_cells}


def load_portable(in_dir: str | Path) -> list[RpmProblem]:
    """Load a portable dataset; verifies every cell file against the manifest."""
    in_dir = Path(in_dir)
    manifest = in_dir / "manifest.jsonl"
    if not manifest.is_file():
        raise FormatError(f"{in_dir}: missing manifest.jsonl")
    records = []
    for line_no, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise FormatError(f"{manifest}: line {line_no} is not valid JSON ({err})") from err
    problems: list[RpmProblem] = []
    broken: list[str] = []
    for record in records:
        cells: list[np.ndarray] = []
        for name in record["cells"]:
            path = in_dir / "cells" / name
            if not path.is_file():
                broken.append(f"{name}: missing")
                continue
            payload = path.read_bytes()
            want = record.get("cell_sha256", {}).get(name)
            if want is not None and hashlib.sha256(payload).hexdigest() != want:
                broken.append(f"{name}: checksum mismatch")
                continue
            cells.append(np.asarray(Image.open(io.BytesIO(payload)).convert("L"), dtype=np.uint8))
        if broken:
            continue
        if len(cells) != 16:
            raise FormatError(f"{in_dir}: record {record.get('id')} names {len(record['cells'])} cells, expected 16")
        rules, cell_attrs = _rules_from_json(record.get("rules"))
        problems.append(
            RpmProblem(
                context=tuple(cells[:8]),
                candidates=tuple(cells[8:]),
                configuration=Configuration.parse(record["configuration"]),
                answer=record.get("answer"),
                rules=rules,
                cell_attrs=cell_attrs,
                source_id=record["id"],
            )
        )
    if broken:
        raise IntegrityError(f"{in_dir}: {len(broken)} cell file(s) failed verification: " + "; ".join(broken))
    return problems


# --- preprocessing ------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessProfile:
    """How raw cells become model input channels."""

    target_resolution: int = 224
    channel_means: tuple[float, float, float] = IMAGENET_MEANS
    channel_stds: tuple[float, float, float] = IMAGENET_STDS
    rescale: bool = True

    def __post_init__(self) -> None:
        if self.target_resolution < 8:
            raise ValueError(f"target_resolution must be >= 8, got {self.target_resolution}")
        if len(self.channel_means) != 3 or len(self.channel_stds) != 3:
            raise ValueError("channel_means and channel_stds must have 3 entries")
        if any(s <= 0 for s in self.channel_stds):
            raise ValueError(f"channel stds must be positive, got {self.channel_stds}")


def preprocess_rows(rows: Sequence[Row], profile: PreprocessProfile) -> torch.Tensor:
    """Batch of rows -> float32 tensor [N, 3, R, R].

    Channel c holds cell c after bilinear resize, divide-by-255 (when
    ``rescale`` is set) and per-channel standardisation, in that order.
    """
    if not rows:
        raise ValueError("need at least one row")
    resolutions = {r.resolution for r in rows}
    if len(resolutions) != 1:
        raise ValueError(f"rows in one batch must share a resolution, got {sorted(resolutions)}")
    stack = np.stack([np.stack(r.cells) for r in rows]).astype(np.float32)
    t = torch.from_numpy(stack)
    r = profile.target_resolution
    if t.shape[-1] != r:
        t = F.interpolate(t, size=(r, r), mode="bilinear", align_corners=False)
    if profile.rescale:
        t = t / 255.0
    means = torch.tensor(profile.channel_means, dtype=torch.float32).view(1, 3, 1, 1)
    stds = torch.tensor(profile.channel_stds, dtype=torch.float32).view(1, 3, 1, 1)
    return (t - means) / stds


def preprocess_row(row: Row, profile: PreprocessProfile) -> torch.Tensor:
    """Single row -> float32 tensor [3, R, R]; see ``preprocess_rows``."""
    return preprocess_rows([row], profile)[0]
