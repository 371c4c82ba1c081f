"""Command-line front end: generate, convert, train, solve, eval, and studies.

Every option resolves in precedence order: command-line flag, then the
``PRD_<NAME>`` environment variable, then the JSON file passed with
``--config-file``, then the built-in default.  Each run writes a JSON
run manifest (subcommand, fully resolved options, source fingerprint,
start timestamp) before doing any work, so a run can be reproduced from
the manifest alone.  Commands that emit a portable dataset place the
manifest next to the output directory, keeping the dataset itself
byte-reproducible across runs.

Exit codes: 0 on success, 2 on validation errors (bad flags, missing
paths, malformed data descriptions), 1 on runtime failures (generation
retry exhaustion, corrupt cell files, training errors).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .dataset_io import load_portable, load_raven_archive, save_portable
from .evaluation import (
    AblationConfig,
    SubsetStudyConfig,
    SUBSET_NAMES,
    evaluate,
    run_distance_ablation,
    run_subset_study,
    save_report,
    score_candidates,
)
from .generator import GeneratorConfig, generate_problems, verify_rules
from .model import model_fingerprint
from .problems import Configuration
from .training import TrainConfig, load_model, train

__all__ = ["main"]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


_PARSERS: dict[str, Callable[[str], object]] = {
    "int": int,
    "float": float,
    "str": str,
    "path": str,
    "bool": _parse_bool,
    "list": _parse_list,
}


@dataclass(frozen=True)
class Option:
    """One resolvable option: flag, env var PRD_<NAME>, config-file key, default."""

    name: str
    kind: str
    default: object = None
    help: str = ""
    required: bool = False
    aliases: tuple[str, ...] = ()

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def env_var(self) -> str:
        return "PRD_" + self.name.upper()


def _add_options(parser: argparse.ArgumentParser, options: Sequence[Option]) -> None:
    for opt in options:
        flags = (opt.flag,) + opt.aliases
        text = opt.help
        if opt.default is not None:
            shown = ",".join(opt.default) if isinstance(opt.default, list) else opt.default
            text = f"{text} (default: {shown})"
        if opt.kind == "bool":
            parser.add_argument(
                *flags, dest=opt.name, default=None, help=text,
                action=argparse.BooleanOptionalAction,
            )
        else:
            parser.add_argument(
                *flags, dest=opt.name, default=None, help=text,
                type=_PARSERS[opt.kind], metavar=opt.kind.upper(),
            )
    parser.add_argument(
        "--config-file", default=None, metavar="PATH",
        help="JSON file of option defaults (flags and PRD_* env vars win)",
    )


def _coerce_file_value(value: object, opt: Option) -> object:
    if isinstance(value, str) and opt.kind != "str" and opt.kind != "path":
        return _PARSERS[opt.kind](value)
    if opt.kind == "list":
        if isinstance(value, list):
            return [str(v) for v in value]
    elif opt.kind == "bool":
        if isinstance(value, bool):
            return value
    elif opt.kind == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif opt.kind == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(value, str):
        return value
    raise ValueError(f"config file key {opt.name!r} should be a {opt.kind}, got {value!r}")


def resolve_options(args: argparse.Namespace, options: Sequence[Option]) -> dict:
    """Apply the flag > env > config file > default precedence."""
    file_config: dict = {}
    config_path = args.config_file or os.environ.get("PRD_CONFIG_FILE")
    if config_path is not None:
        try:
            file_config = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(file_config, dict):
            raise ValueError(f"config file {config_path} must hold a single JSON object")
        unknown = sorted(set(file_config) - {o.name for o in options})
        if unknown:
            raise ValueError(f"config file {config_path} has unknown keys: {', '.join(unknown)}")
    resolved = {}
    for opt in options:
        value = getattr(args, opt.name)
        if value is None:
            env = os.environ.get(opt.env_var)
            if env is not None:
                try:
                    value = _PARSERS[opt.kind](env)
                except ValueError as exc:
                    raise ValueError(f"{opt.env_var}={env!r}: {exc}") from exc
        if value is None and opt.name in file_config:
            value = _coerce_file_value(file_config[opt.name], opt)
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise ValueError(f"missing required option {opt.flag} (or {opt.env_var})")
        resolved[opt.name] = value
    return resolved


def _source_fingerprint() -> str:
    root = Path(__file__).resolve().parent
    try:
        proc = subprocess.run(
            ["git", "-C", str(root), "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
        if proc.returncode == 0:
            return "git:" + proc.stdout.strip()
    except OSError:
        pass
    return f"prd:{__version__}"


def _write_run_manifest(path: Path, subcommand: str, options: dict, outputs: list[str]) -> None:
    manifest = {
        "subcommand": subcommand,
        "options": options,
        "seed": options.get("seed"),
        "source": _source_fingerprint(),
        "outputs": outputs,
        "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require_fresh_dir(path: Path) -> None:
    if path.exists() and any(path.iterdir()):
        raise ValueError(f"output directory {path} is not empty; choose a fresh one")


def _find_checkpoint(path: Path) -> Path:
    """Accept a checkpoint file directly, or pick the latest in a train directory."""
    if path.is_dir():
        candidates = sorted(path.glob("ckpt_*.pt"))
        if not candidates:
            raise FileNotFoundError(f"no ckpt_*.pt files in {path}")
        return candidates[-1]
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


# --- option tables ------------------------------------------------------------------

GEN_OPTIONS = [
    Option("out", "path", required=True, help="portable dataset directory to create"),
    Option("count", "int", 100, "number of problems to generate"),
    Option("configurations", "list", ["center", "2x2grid"],
           "comma-separated configurations to sample from", aliases=("--config",)),
    Option("resolution", "int", 96, "cell resolution in pixels"),
    Option("min_nonconstant", "int", 1, "fewest non-constant rules per problem"),
    Option("max_nonconstant", "int", 2, "most non-constant rules per problem"),
    Option("distractor_min_changes", "int", 1, "fewest attribute edits per distractor"),
    Option("distractor_max_changes", "int", 2, "most attribute edits per distractor"),
    Option("max_attempts", "int", 200, "retry budget per sampling stage"),
    Option("seed", "int", 0, "generation seed"),
    Option("workers", "int", 1, "worker processes (output is identical for any count)"),
]

CONVERT_OPTIONS = [
    Option("out", "path", required=True, help="portable dataset directory to create"),
]

_TRAIN_KNOBS = [
    Option("backbone", "str", "tiny", "relation extractor: tiny or paper_residual_18"),
    Option("relation_dim", "int", None,
           "relation vector width (default: 64 for tiny, fixed 512 for paper_residual_18)"),
    Option("pretrained_weights", "path", None,
           "state-dict file for the 18-layer extractor (consumed by path only)"),
    Option("freeze_norm_layers", "bool", True, "pin normalization layers during training"),
    Option("distance", "str", "l1", "pair distance: difference, l1, l2, or concat"),
    Option("dropout", "float", 0.5, "dropout rate in the similarity head, published full-scale value 0.5"),
    Option("hidden_width", "int", 128, "hidden layer width of the similarity head"),
    Option("input_resolution", "int", 96, "rows are resized to this before the extractor"),
    Option("batch_size", "int", 32, "pairs per batch, published full-scale value 32"),
    Option("lr", "float", 2e-4, "Adam learning rate, published full-scale value 0.0002"),
    Option("max_steps", "int", 5000, "optimizer steps (one per real/fake batch pair)"),
    Option("checkpoint_every", "int", 500, "steps between checkpoints"),
    Option("plateau_window", "int", 200, "moving-average width for plateau detection"),
    Option("plateau_slope", "float", 1e-5, "absolute slope below which the loss counts as flat"),
    Option("seed", "int", 0, "training seed"),
]

TRAIN_OPTIONS = [
    Option("data", "path", required=True, help="portable dataset directory (answers are ignored)"),
    Option("out", "path", required=True, help="directory for checkpoints and the loss log"),
    *_TRAIN_KNOBS,
    Option("resume_from", "path", None, "checkpoint to continue from (only max-steps may differ)"),
    Option("plots", "bool", False, "write a loss-curve PNG next to the log"),
]

SOLVE_OPTIONS = [
    Option("data", "path", required=True, help="portable dataset directory"),
    Option("checkpoint", "path", required=True, help="checkpoint file, or a train directory (latest wins)"),
    Option("out", "path", required=True, help="JSON file for the predictions"),
]

EVAL_OPTIONS = [
    Option("data", "path", required=True, help="labeled portable dataset directory"),
    Option("checkpoint", "path", required=True, help="checkpoint file, or a train directory (latest wins)"),
    Option("out", "path", required=True, help="directory for the report files"),
    Option("workers", "int", 1, "evaluation threads"),
    Option("plots", "bool", False, "write a per-configuration accuracy PNG"),
]

_STUDY_BASE = [
    Option("data", "path", required=True, help="labeled portable dataset directory"),
    Option("out", "path", required=True, help="directory for per-condition runs and the report"),
    *_TRAIN_KNOBS,
    Option("split_seed", "int", 0, "seed of the 60/20/20 fold split"),
]

SUBSETS_OPTIONS = [
    *_STUDY_BASE,
    Option("subsets", "list", list(SUBSET_NAMES), "conditions to run"),
]

DISTANCE_OPTIONS = [
    *_STUDY_BASE,
    Option("measures", "list", ["difference", "l1", "l2", "concat"], "distance measures to compare"),
]


def _train_config(opts: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=opts["batch_size"],
        learning_rate=opts["lr"],
        max_steps=opts["max_steps"],
        checkpoint_every=opts["checkpoint_every"],
        plateau_window=opts["plateau_window"],
        plateau_slope=opts["plateau_slope"],
        seed=opts["seed"],
        backbone_variant=opts["backbone"],
        relation_dim=opts["relation_dim"],
        pretrained_weights=opts["pretrained_weights"],
        freeze_norm_layers=opts["freeze_norm_layers"],
        distance_measure=opts["distance"],
        dropout_rate=opts["dropout"],
        hidden_width=opts["hidden_width"],
        input_resolution=opts["input_resolution"],
    )


# --- plotting (behind --plots) ------------------------------------------------------

def _plot_loss_curve(log_path: Path, out_path: Path, window: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    rows = np.genfromtxt(log_path, delimiter=",", names=True)
    steps = np.atleast_1d(rows["step"])
    loss_real = np.atleast_1d(rows["loss_real"])
    loss_fake = np.atleast_1d(rows["loss_fake"])
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.plot(steps, loss_real, label="real batches", alpha=0.5, linewidth=0.8)
    ax.plot(steps, loss_fake, label="fake batches", alpha=0.5, linewidth=0.8)
    combined = 0.5 * (loss_real + loss_fake)
    if len(combined) >= window:
        smoothed = np.convolve(combined, np.full(window, 1.0 / window), mode="valid")
        ax.plot(steps[window - 1:], smoothed, label=f"combined, {window}-step mean", linewidth=1.6)
    ax.set_xlabel("step")
    ax.set_ylabel("binary cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _plot_accuracy_bars(report, out_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [c.value for c in Configuration if c.value in report.per_configuration]
    values = [report.per_configuration[n].accuracy for n in names]
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.bar(range(len(names)), values)
    ax.axhline(12.5, linestyle="--", color="grey", label="random (12.50%)")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


# --- subcommands --------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    opts = resolve_options(args, GEN_OPTIONS)
    if opts["count"] < 0:
        raise ValueError(f"count must be >= 0, got {opts['count']}")
    out = Path(opts["out"])
    _require_fresh_dir(out)
    config = GeneratorConfig(
        configurations=tuple(opts["configurations"]),
        resolution=opts["resolution"],
        min_nonconstant_rules=opts["min_nonconstant"],
        max_nonconstant_rules=opts["max_nonconstant"],
        distractor_min_changes=opts["distractor_min_changes"],
        distractor_max_changes=opts["distractor_max_changes"],
        seed=opts["seed"],
        max_attempts=opts["max_attempts"],
    )
    _write_run_manifest(out.parent / (out.name + ".run.json"), "gen", opts, [str(out)])
    problems = generate_problems(config, opts["count"], workers=opts["workers"])
    summary = save_portable(problems, out)
    unique = sum(
        1 for p in problems
        if [k for k in range(8) if verify_rules(p, k)] == [p.answer]
    )
    print(f"wrote {summary['problems']} problems ({summary['cells']} cells) to {summary['dir']}")
    print(f"oracle-verified unique answers: {unique}/{len(problems)}")
    return 0 if unique == len(problems) else 1


def cmd_convert(args: argparse.Namespace) -> int:
    opts = resolve_options(args, CONVERT_OPTIONS)
    out = Path(opts["out"])
    _require_fresh_dir(out)
    files: list[Path] = []
    for source in args.sources:
        path = Path(source)
        if path.is_dir():
            files.extend(sorted(path.rglob("*.npz")))
        elif path.exists():
            files.append(path)
        else:
            raise FileNotFoundError(f"source not found: {path}")
    if not files:
        raise ValueError("no .npz archives found under the given sources")
    options = dict(opts, sources=[str(s) for s in args.sources])
    _write_run_manifest(out.parent / (out.name + ".run.json"), "convert", options, [str(out)])
    problems = [load_raven_archive(f) for f in files]
    stems = [p.source_id for p in problems]
    if len(set(stems)) < len(stems):
        # Same archive name under several configuration folders; disambiguate.
        problems = [
            replace(p, source_id=f"{f.parent.name}_{f.stem}")
            for p, f in zip(problems, files)
        ]
    summary = save_portable(problems, out)
    print(f"converted {summary['problems']} archives into {summary['dir']}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    opts = resolve_options(args, TRAIN_OPTIONS)
    config = _train_config(opts)
    out = Path(opts["out"])
    pool = tuple(p.without_labels() for p in load_portable(opts["data"]))
    _write_run_manifest(out / "run.json", "train", opts, [str(out)])
    result = train(pool, config, out, resume_from=opts["resume_from"])
    print(f"trained to step {result.final_checkpoint.step}; loss log at {result.loss_log_path}")
    print(f"checkpoints: {len(result.checkpoints)}, final {result.final_checkpoint.path}")
    if result.plateau_start_step is not None:
        print(
            f"loss begins to plateau at step {result.plateau_start_step}; "
            f"{len(result.plateau_checkpoints)} checkpoint(s) fall inside the plateau"
        )
    else:
        print("no loss plateau detected within the step budget")
    if opts["plots"]:
        plot_path = out / "loss_curve.png"
        _plot_loss_curve(Path(result.loss_log_path), plot_path, config.plateau_window)
        print(f"loss curve written to {plot_path}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    opts = resolve_options(args, SOLVE_OPTIONS)
    out = Path(opts["out"])
    problems = load_portable(opts["data"])
    if not problems:
        raise ValueError(f"dataset {opts['data']} is empty")
    checkpoint = _find_checkpoint(Path(opts["checkpoint"]))
    _write_run_manifest(out.parent / (out.name + ".run.json"), "solve", opts, [str(out)])
    model, config = load_model(checkpoint)
    profile = config.profile()
    records = []
    for idx, problem in enumerate(problems):
        scores = score_candidates(problem, model, profile)
        combined = [s.combined for s in scores]
        prediction = max(range(8), key=lambda k: (combined[k], -k))
        pid = problem.source_id or f"{idx:06d}"
        print(f"{pid}\t{prediction}")
        records.append({"id": pid, "prediction": prediction, "scores": combined})
    payload = {
        "checkpoint": str(checkpoint),
        "model_fingerprint": model_fingerprint(model),
        "predictions": records,
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    opts = resolve_options(args, EVAL_OPTIONS)
    out = Path(opts["out"])
    problems = load_portable(opts["data"])
    if not problems:
        raise ValueError(f"dataset {opts['data']} is empty")
    unlabeled = sum(1 for p in problems if p.answer is None)
    if unlabeled:
        raise ValueError(
            f"eval needs answers on every problem; {unlabeled} of {len(problems)} lack one"
        )
    checkpoint = _find_checkpoint(Path(opts["checkpoint"]))
    _write_run_manifest(out / "run.json", "eval", opts, [str(out)])
    model, config = load_model(checkpoint)
    report = evaluate(problems, model, profile=config.profile(), workers=opts["workers"])
    print(report.format_table())
    save_report(report, out / "report.json")
    print(f"report written to {out / 'report.json'}")
    if opts["plots"]:
        plot_path = out / "accuracy_by_configuration.png"
        _plot_accuracy_bars(report, plot_path)
        print(f"accuracy chart written to {plot_path}")
    return 0


def cmd_study_subsets(args: argparse.Namespace) -> int:
    opts = resolve_options(args, SUBSETS_OPTIONS)
    out = Path(opts["out"])
    problems = load_portable(opts["data"])
    config = SubsetStudyConfig(
        train_config=_train_config(opts),
        split_seed=opts["split_seed"],
        subsets=tuple(opts["subsets"]),
    )
    _write_run_manifest(out / "run.json", "study-subsets", opts, [str(out)])
    report = run_subset_study(config, problems, out)
    print(report.format_table())
    save_report(report, out / "report.json")
    print(f"report written to {out / 'report.json'}")
    return 0


def cmd_study_distance(args: argparse.Namespace) -> int:
    opts = resolve_options(args, DISTANCE_OPTIONS)
    out = Path(opts["out"])
    problems = load_portable(opts["data"])
    config = AblationConfig(
        train_config=_train_config(opts),
        split_seed=opts["split_seed"],
        measures=tuple(opts["measures"]),
    )
    _write_run_manifest(out / "run.json", "study-distance", opts, [str(out)])
    report = run_distance_ablation(config, problems, out)
    print(report.format_table())
    save_report(report, out / "report.json")
    print(f"report written to {out / 'report.json'}")
    return 0


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prd",
        description=(
            "Pairwise relations discriminator for Raven's Progressive Matrices: "
            "generate or convert datasets, train without answer labels, solve, "
            "evaluate, and run the two studies."
        ),
    )
    parser.add_argument("--version", action="version", version=f"prd {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    specs = [
        ("gen", cmd_gen, GEN_OPTIONS, "generate a portable mini dataset with oracle labels"),
        ("convert", cmd_convert, CONVERT_OPTIONS, "convert RAVEN .npz archives to the portable format"),
        ("train", cmd_train, TRAIN_OPTIONS, "train the discriminator on self-labelled row pairs"),
        ("solve", cmd_solve, SOLVE_OPTIONS, "predict answers and write them as JSON"),
        ("eval", cmd_eval, EVAL_OPTIONS, "score a checkpoint on labeled problems"),
        ("study-subsets", cmd_study_subsets, SUBSETS_OPTIONS, "accuracy vs training-subset size"),
        ("study-distance", cmd_study_distance, DISTANCE_OPTIONS, "accuracy per distance measure"),
    ]
    for name, func, options, help_text in specs:
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_options(p, options)
        if name == "convert":
            p.add_argument("sources", nargs="+", metavar="SRC",
                           help=".npz files, or directories scanned recursively")
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
