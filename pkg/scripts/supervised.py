"""Synthetic corpus -> supervised pretraining -> held-out likelihood and generation metrics."""

import argparse
import logging
from pathlib import Path

import numpy as np

from qgen import datagen, policy
from qgen.evalcli import format_report, generation_dump, metrics_from_dump
from qgen.grammar import default_grammar
from qgen.policy import PolicyConfig
from qgen.train import TrainConfig, corpus_nll, train_supervised, uniform_log_prob


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--boards", type=int, default=2000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--pool-size", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("runs/supervised"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    boards = datagen.gen_boards(args.boards, rng)
    corpus_path = args.out / "corpus.txt"
    if corpus_path.exists():
        corpus = datagen.read_corpus(corpus_path)
    else:
        corpus = datagen.gen_corpus(K=args.k, pool_size=args.pool_size, rng=rng, boards=boards)
        datagen.write_corpus(corpus, corpus_path)
    held = set(boards[int(0.9 * len(boards)):])
    train = [e for e in corpus if e.board not in held]
    test = [e for e in corpus if e.board in held]

    params = policy.init(PolicyConfig(seed=args.seed), np.random.default_rng(args.seed))
    history = []
    tuned = train_supervised(train, params, TrainConfig(epochs=args.epochs), history)
    policy.save(tuned, args.out / "policy.ckpt")

    g = default_grammar()
    print(f"train NLL per epoch: {' '.join(f'{h:.3f}' for h in history)}")
    print(f"held-out mean LL: {-corpus_nll(tuned, test):.3f}  uniform: "
          f"{np.mean([uniform_log_prob(e.derivation, g) for e in test]):.3f}")
    eval_boards = sorted(held, key=lambda b: b.to_compact())
    rows = {
        "untrained": metrics_from_dump(generation_dump(params, eval_boards, np.random.default_rng(1))),
        "supervised": metrics_from_dump(generation_dump(tuned, eval_boards, np.random.default_rng(1)),
                                        {e.program for e in train}),
    }
    print(format_report(rows))


if __name__ == "__main__":
    main()
