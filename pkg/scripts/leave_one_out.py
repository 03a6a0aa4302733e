"""Leave-one-board-out fine-tuning likelihoods, split by high and low board entropy.

No human question set ships with this repository, so the held-out questions
default to EIG-weighted synthetic ones. Pass ``--questions`` with a corpus file
(same format as ``qgen gen-corpus``) to use another set.
"""

import argparse
import logging

import numpy as np

from qgen import datagen, policy
from qgen.evalcli import entropy_groups, leave_one_out
from qgen.policy import PolicyConfig
from qgen.train import TrainConfig, train_supervised


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--questions", default=None)
    ap.add_argument("--pretrained", default=None, help="checkpoint; otherwise pretrain on a small corpus")
    ap.add_argument("--boards", type=int, default=18)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    rng = np.random.default_rng(args.seed)

    if args.questions:
        entries = datagen.read_corpus(args.questions)
    else:
        entries = datagen.gen_corpus(args.boards, K=10, pool_size=200, rng=rng)
    questions = {}
    for e in entries:
        questions.setdefault(e.board, []).append(e.program)

    if args.pretrained:
        params = policy.load(args.pretrained)
    else:
        pre = datagen.gen_corpus(200, K=10, pool_size=100, rng=rng)
        params = train_supervised(pre, policy.init(PolicyConfig(seed=args.seed)), TrainConfig(epochs=5))

    out = leave_one_out(params, questions, TrainConfig(epochs=args.epochs))
    print(f"mean held-out LL, all boards: {out['ll_all']:.3f}")
    if "ll_high" in out:
        print(f"high-entropy boards:          {out['ll_high']:.3f}")
        print(f"low-entropy boards:           {out['ll_low']:.3f}")
        high, low = entropy_groups(list(questions))
        print(f"groups: {len(high)} high, {len(low)} low")


if __name__ == "__main__":
    main()
