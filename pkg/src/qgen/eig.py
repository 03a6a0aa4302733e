"""Expected information gain of a question over a hypothesis space, and the RL reward.

With a uniform prior over ``n`` hypotheses, a question splits the space into
answer blocks of sizes ``n_d`` and

    EIG = log2(n) - sum_d (n_d / n) * log2(n_d)

which is the prior entropy minus the expected posterior entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import dsl
from .board import EmptySpace, HypothesisSpace
from .dsl import Expr, SpaceEvaluator, UnsupportedAnswerType

EIG_THRESHOLD = 0.95
EXACT_THRESHOLD = 100_000
SUBSAMPLE_SIZE = 100_000
SUBSAMPLE_SEED = 0


@dataclass(frozen=True)
class AnswerPartition:
    counts: dict
    total: int

    def __post_init__(self):
        assert sum(self.counts.values()) == self.total and all(c > 0 for c in self.counts.values())

    @property
    def block_sizes(self) -> list[int]:
        return sorted(self.counts.values(), reverse=True)


@dataclass(frozen=True)
class EigResult:
    eig_bits: float
    partition: AnswerPartition
    estimated: bool = False


class Invalid:
    """Outcome of a derivation that ran out of token budget."""

    def __init__(self, reason: str = "token budget exceeded"):
        self.reason = reason

    def __repr__(self):
        return f"Invalid({self.reason!r})"


def eig_from_counts(counts) -> float:
    counts = np.asarray(list(counts), dtype=np.float64)
    n = counts.sum()
    if len(counts) <= 1:
        return 0.0
    value = math.log2(n) - float(np.dot(counts, np.log2(counts))) / n
    return max(float(value), 0.0)


class EigScorer:
    """Scores many questions against one space, sharing evaluated subterms.

    Spaces above ``exact_threshold`` are replaced by a fixed-seed uniform
    subsample of ``subsample_size`` hypotheses and results are flagged.
    """

    def __init__(self, space: HypothesisSpace, exact_threshold: int = EXACT_THRESHOLD,
                 subsample_size: int = SUBSAMPLE_SIZE, seed: int = SUBSAMPLE_SEED):
        if len(space) == 0:
            raise EmptySpace("empty hypothesis space")
        self.estimated = len(space) > exact_threshold
        if self.estimated:
            rng = np.random.default_rng(seed)
            rows = np.sort(rng.choice(len(space), size=subsample_size, replace=False))
            space = space.subset(rows)
        self.space = space
        self.evaluator = SpaceEvaluator(space)

    def partition(self, e: Expr) -> AnswerPartition:
        t = dsl.typecheck(e)
        if t not in dsl.ANSWER_TYPES:
            raise UnsupportedAnswerType(f"questions must have an atomic answer, not {t.value}")
        values, counts = np.unique(self.evaluator(e), return_counts=True)
        return AnswerPartition(
            {dsl.decode_answer(t, v): int(c) for v, c in zip(values, counts)}, len(self.space)
        )

    def __call__(self, e: Expr) -> EigResult:
        part = self.partition(e)
        return EigResult(eig_from_counts(part.counts.values()), part, self.estimated)


def answer_partition(e: Expr, space: HypothesisSpace) -> AnswerPartition:
    return EigScorer(space, exact_threshold=max(len(space), 1)).partition(e)


def eig(e: Expr, space: HypothesisSpace, exact_threshold: int = EXACT_THRESHOLD,
        subsample_size: int = SUBSAMPLE_SIZE, seed: int = SUBSAMPLE_SEED) -> EigResult:
    return EigScorer(space, exact_threshold, subsample_size, seed)(e)


Outcome = Union[EigResult, Invalid]


def reward(outcome: Outcome, steps: int, step_penalty: float) -> float:
    if isinstance(outcome, Invalid):
        base = -1.0
    else:
        base = 1.0 if outcome.eig_bits > EIG_THRESHOLD else 0.0
    return base - step_penalty * steps
