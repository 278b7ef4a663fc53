"""Desk-scale end-to-end run: BM25 vs untrained vs trained tied encoder.

    python scripts/desk_experiment.py --task-seed 0 --seed 42 --out results/desk.tsv
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from genrank.experiment import DESK_TRAIN, DeskConfig, run_desk_experiment
from genrank.synthetic import SyntheticConfig


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=DESK_TRAIN.seed)
    p.add_argument("--steps", type=int, default=DESK_TRAIN.steps)
    p.add_argument("--temperature", type=float, default=DESK_TRAIN.temperature)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", type=Path, help="also write the result lines here")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train = dataclasses.replace(
        DESK_TRAIN,
        seed=args.seed,
        steps=args.steps,
        temperature=args.temperature,
        normalize=not args.no_normalize,
    )
    result = run_desk_experiment(DeskConfig(task=SyntheticConfig(seed=args.task_seed), train=train))
    lines = result.lines()
    print("\n".join(lines))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
