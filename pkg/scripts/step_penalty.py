"""Compare question length and informativeness across step penalties with matched seeds."""

import argparse
import logging

import numpy as np

from qgen.board import sample_board
from qgen.evalcli import format_report, generation_dump, metrics_from_dump
from qgen.train import TrainConfig, train_rl


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--penalties", type=float, nargs="+", default=[0.0, 0.02, 0.05])
    ap.add_argument("--iterations", type=int, default=400)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    rng = np.random.default_rng(12345)
    boards = [sample_board(rng, TrainConfig().board_opts())[0] for _ in range(200)]
    rows = {}
    for lam in args.penalties:
        params, _ = train_rl(TrainConfig(step_penalty=lam, iterations=args.iterations, seed=args.seed))
        rows[f"sp{lam:g}"] = metrics_from_dump(generation_dump(params, boards, np.random.default_rng(8)))
        print(f"done lambda={lam:g}", flush=True)
    print(format_report(rows))


if __name__ == "__main__":
    main()
