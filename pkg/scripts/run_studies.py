#!/usr/bin/env python3
"""Run the training-subset and distance-measure studies at desk scale.

    python3 scripts/run_studies.py --out runs/studies

Each study trains one model per condition on the same folds and prints
the accuracy table next to the published full-scale reference.
"""

import argparse
from pathlib import Path

from prd.evaluation import (
    AblationConfig,
    SubsetStudyConfig,
    run_distance_ablation,
    run_subset_study,
    save_report,
)
from prd.generator import GeneratorConfig, generate_problems
from prd.training import TrainConfig


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--count", type=int, default=1500, help="problems to generate")
    parser.add_argument("--configurations", default="center")
    parser.add_argument("--max-steps", type=int, default=1500)
    parser.add_argument("--input-resolution", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0, help="training seed")
    parser.add_argument("--gen-seed", type=int, default=300)
    parser.add_argument("--split-seed", type=int, default=0)
    parser.add_argument("--skip-subsets", action="store_true")
    parser.add_argument("--skip-distance", action="store_true")
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    problems = generate_problems(
        GeneratorConfig(configurations=tuple(args.configurations.split(",")),
                        seed=args.gen_seed),
        args.count,
    )
    train_config = TrainConfig(
        seed=args.seed,
        max_steps=args.max_steps,
        checkpoint_every=max(1, args.max_steps // 3),
        input_resolution=args.input_resolution,
    )

    if not args.skip_subsets:
        config = SubsetStudyConfig(train_config=train_config, split_seed=args.split_seed)
        report = run_subset_study(config, problems, args.out / "subsets")
        print(report.format_table())
        save_report(report, args.out / "subsets" / "report.json")
        print()

    if not args.skip_distance:
        config = AblationConfig(train_config=train_config, split_seed=args.split_seed)
        report = run_distance_ablation(config, problems, args.out / "distance")
        print(report.format_table())
        save_report(report, args.out / "distance" / "report.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
