#!/usr/bin/env python3
"""End-to-end desk pipeline: generate, train a few seeds, evaluate.

Reproduces the quickstart numbers from the README in one command:

    python3 scripts/run_desk_pipeline.py --out runs/desk_pipeline
"""

import argparse
import time
from pathlib import Path

from prd.evaluation import RANDOM_BASELINE, evaluate, save_report
from prd.generator import GeneratorConfig, generate_problems
from prd.training import TrainConfig, load_model, train


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--train-count", type=int, default=2000)
    parser.add_argument("--held-count", type=int, default=500)
    parser.add_argument("--configurations", default="center",
                        help="comma-separated problem configurations")
    parser.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    parser.add_argument("--max-steps", type=int, default=5000)
    parser.add_argument("--input-resolution", type=int, default=64)
    parser.add_argument("--gen-seed", type=int, default=100)
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    configurations = tuple(args.configurations.split(","))

    t0 = time.monotonic()
    train_set = generate_problems(
        GeneratorConfig(configurations=configurations, seed=args.gen_seed),
        args.train_count,
    )
    held_set = generate_problems(
        GeneratorConfig(configurations=configurations, seed=args.gen_seed + 100),
        args.held_count,
    )
    print(f"generated {len(train_set)} train / {len(held_set)} held-out problems "
          f"in {time.monotonic() - t0:.0f}s")

    pool = tuple(p.without_labels() for p in train_set)
    for seed in (int(s) for s in args.seeds.split(",")):
        config = TrainConfig(
            seed=seed,
            max_steps=args.max_steps,
            checkpoint_every=max(1, args.max_steps // 5),
            input_resolution=args.input_resolution,
        )
        run_dir = args.out / f"seed_{seed}"
        t1 = time.monotonic()
        result = train(pool, config, run_dir)
        model, cfg = load_model(result.final_checkpoint.path)
        report = evaluate(held_set, model, profile=cfg.profile(), seed=seed)
        save_report(report, run_dir / "report.json")
        plateau = (
            f"plateau from step {result.plateau_start_step}"
            if result.plateau_start_step is not None
            else "no plateau detected"
        )
        print(
            f"seed {seed}: {report.mean_accuracy:.2f}% "
            f"(random {RANDOM_BASELINE:.2f}%), {plateau}, "
            f"{(time.monotonic() - t1) / 60:.1f} min"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
