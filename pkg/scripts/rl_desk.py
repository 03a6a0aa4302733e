"""Train the grammar policy with REINFORCE and report held-out question metrics.

    python3 scripts/rl_desk.py --step-penalty 0.02 --iterations 400 --out runs/sp002
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from qgen import policy
from qgen.board import sample_board
from qgen.evalcli import format_report, frequency_table, generation_dump, metrics_from_dump, write_dump
from qgen.policy import PolicyConfig
from qgen.train import TrainConfig, train_rl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step-penalty", type=float, default=0.02)
    ap.add_argument("--iterations", type=int, default=400)
    ap.add_argument("--time-budget", type=float, default=1800.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--eval-boards", type=int, default=200)
    ap.add_argument("--out", type=Path, default=Path("runs/rl"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    cfg = TrainConfig(step_penalty=args.step_penalty, iterations=args.iterations, seed=args.seed,
                      time_budget=args.time_budget)
    params, _ = train_rl(cfg, log_path=args.out / "train.jsonl", checkpoint_path=args.out / "policy.ckpt")

    rng = np.random.default_rng(12345)
    boards = [sample_board(rng, cfg.board_opts())[0] for _ in range(args.eval_boards)]
    untrained = policy.init(PolicyConfig(seed=args.seed), np.random.default_rng(args.seed))
    rows = {}
    for name, p in (("untrained", untrained), (f"rl_sp{args.step_penalty:g}", params)):
        records = generation_dump(p, boards, np.random.default_rng(7))
        write_dump(records, args.out / f"{name}.dump")
        rows[name] = metrics_from_dump(records)
    report = format_report(rows)
    (args.out / "report.tsv").write_text(report)
    print(report)
    print("most frequent questions:")
    for text, frac in frequency_table(params, boards, 1, np.random.default_rng(8))[:10]:
        print(f"  {frac:6.1%}  {text}")


if __name__ == "__main__":
    main()
