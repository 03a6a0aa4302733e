"""Training: REINFORCE over grammar derivations, supervised derivation likelihood, generation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import dsl, policy
from .board import Board, BoardOpts, hypothesis_space, sample_board
from .datagen import CorpusEntry
from .eig import EigResult, EigScorer, Invalid, reward
from .grammar import DerivationState, Grammar
from .policy import PolicyConfig, PolicyParams, StepBatch, masked_softmax

log = logging.getLogger(__name__)


class NonFinite(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    step_penalty: float = 0.02
    max_tokens: int = 80
    batch_size: int = 64
    rollouts_per_board: int = 4
    iterations: int = 1500
    baseline_decay: float = 0.99
    lr: float = 0.05
    seed: int = 0
    max_space_size: Optional[int] = 100_000
    max_revealed: int = 18
    start: str = "A"
    time_budget: Optional[float] = None  # seconds
    checkpoint_every: int = 0
    # supervised track
    epochs: int = 15
    minibatch: int = 32

    def __post_init__(self):
        if self.step_penalty < 0:
            raise ValueError("step_penalty must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")

    def board_opts(self) -> BoardOpts:
        return BoardOpts(max_space_size=self.max_space_size, max_revealed=self.max_revealed)


@dataclass
class Episode:
    board: Board
    start: str
    rules: tuple[int, ...]
    program: Union[dsl.Expr, Invalid]
    steps: int
    eig: Optional[EigResult]
    reward: float
    logps: tuple[float, ...]

    @property
    def valid(self) -> bool:
        return not isinstance(self.program, Invalid)

    @property
    def text(self) -> Optional[str]:
        return dsl.print_program(self.program) if self.valid else None


# -- rollouts -----------------------------------------------------------------


def _decode(params: PolicyParams, boards: Sequence[Board], starts: Sequence[str], rng: Optional[np.random.Generator],
            greedy: bool, max_tokens: int) -> list[tuple[DerivationState, list[float], bool]]:
    """Run derivations for all boards in lockstep; returns (final state, step log-probs, invalid)."""
    grammar = params.grammar
    cfg = params.config
    d = policy.input_size(grammar, cfg.window)
    feats = {}
    board_feat = []
    for b in boards:
        if b not in feats:
            feats[b] = policy.featurize(b)
        board_feat.append(feats[b])
    states = [grammar.initial_state(s) for s in starts]
    logps: list[list[float]] = [[] for _ in boards]
    invalid = [False] * len(boards)
    active = [i for i, s in enumerate(states) if not grammar.is_complete(s)]
    while active:
        still = []
        for i in active:
            if grammar.lower_bound_tokens(states[i]) > max_tokens:
                invalid[i] = True
            else:
                still.append(i)
        active = still
        if not active:
            break
        x = np.zeros((len(active), d + 1))
        masks = np.empty((len(active), grammar.n_rules), dtype=bool)
        for k, i in enumerate(active):
            x[k, :policy.BOARD_FEATURES] = board_feat[i]
            idx, val = policy.state_sparse(states[i], grammar, cfg)
            x[k, np.asarray(idx, dtype=np.int64) + policy.BOARD_FEATURES] = val
            masks[k] = grammar.applicable(states[i])
        _, logits = policy._forward(params, x[:, :d])
        probs = masked_softmax(logits, masks)
        if greedy:
            actions = probs.argmax(axis=1)  # first maximum = lowest rule id
        else:
            cum = np.cumsum(probs, axis=1)
            u = rng.random(len(active)) * cum[:, -1]
            actions = (cum > u[:, None]).argmax(axis=1)
        for k, i in enumerate(active):
            a = int(actions[k])
            logps[i].append(float(np.log(probs[k, a])))
            states[i] = grammar.apply(states[i], a)
        active = [i for i in active if not grammar.is_complete(states[i])]
    for i, s in enumerate(states):
        if not invalid[i] and grammar.lower_bound_tokens(s) > max_tokens:
            invalid[i] = True
    return [(s, lp, inv) for s, lp, inv in zip(states, logps, invalid)]


def score_programs(boards: Sequence[Board], programs: Sequence[Optional[dsl.Expr]],
                   spaces: Optional[dict] = None) -> list[Optional[EigResult]]:
    """EIG per (board, program); programs on the same board share one evaluator."""
    out: list[Optional[EigResult]] = [None] * len(boards)
    by_board: dict[Board, list[int]] = {}
    for i, (b, e) in enumerate(zip(boards, programs)):
        if e is not None:
            by_board.setdefault(b, []).append(i)
    for b, rows in by_board.items():
        space = spaces[b] if spaces and b in spaces else hypothesis_space(b)
        scorer = EigScorer(space)
        memo: dict[str, EigResult] = {}
        for i in rows:
            text = dsl.print_program(programs[i])
            if text not in memo:
                memo[text] = scorer(programs[i])
            out[i] = memo[text]
    return out


def rollout_many(params: PolicyParams, boards: Sequence[Board], rng: np.random.Generator,
                 cfg: Optional[TrainConfig] = None, start: Optional[str] = None,
                 greedy: bool = False) -> list[Episode]:
    cfg = cfg or TrainConfig()
    start = start or cfg.start
    decoded = _decode(params, boards, [start] * len(boards), rng, greedy, cfg.max_tokens)
    grammar = params.grammar
    programs = [None if inv else grammar.program(s) for s, _, inv in decoded]
    results = score_programs(boards, programs)
    episodes = []
    for b, (s, lp, inv), e, res in zip(boards, decoded, programs, results):
        outcome = Invalid() if inv else res
        episodes.append(Episode(
            board=b, start=start, rules=s.history, program=outcome if inv else e, steps=s.steps,
            eig=None if inv else res, reward=reward(outcome, max(s.steps, 1), cfg.step_penalty),
            logps=tuple(lp),
        ))
    return episodes


def rollout(params: PolicyParams, b: Board, start: Optional[str], rng: np.random.Generator,
            cfg: Optional[TrainConfig] = None) -> Episode:
    return rollout_many(params, [b], rng, cfg, start)[0]


def generate(params: PolicyParams, b: Board, mode: str = "sample", start: str = "A",
             rng: Optional[np.random.Generator] = None, max_tokens: int = 80) -> Union[dsl.Expr, Invalid]:
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        rng = np.random.default_rng(0)
    state, _, inv = _decode(params, [b], [start], rng, mode == "greedy", max_tokens)[0]
    return Invalid() if inv else params.grammar.program(state)


# -- REINFORCE ----------------------------------------------------------------


@dataclass
class Baseline:
    """Exponential moving average of episode reward, warm-started on the first batch."""

    decay: float = 0.99
    value: Optional[float] = None

    def update(self, mean_reward: float) -> None:
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward


def episode_batch(params: PolicyParams, episodes: Sequence[Episode], weights: Sequence[float]) -> StepBatch:
    grammar = params.grammar
    batch = StepBatch()
    for ep, w in zip(episodes, weights):
        row = batch.add_board(ep.board)
        state = grammar.initial_state(ep.start)
        for a in ep.rules:
            batch.add_step(row, state, grammar.applicable(state), a, w, grammar, params.config)
            state = grammar.apply(state, a)
    return batch


def episode_stats(episodes: Sequence[Episode]) -> dict:
    valid = [ep for ep in episodes if ep.valid]
    eigs = [ep.eig.eig_bits for ep in valid]
    return {
        "mean_reward": float(np.mean([ep.reward for ep in episodes])),
        "mean_eig": float(np.mean(eigs)) if eigs else 0.0,
        "frac_eig_gt_095": float(np.mean([e > 0.95 for e in eigs])) if eigs else 0.0,
        "frac_eig_gt_0": float(np.mean([e > 0 for e in eigs])) if eigs else 0.0,
        "invalid_rate": 1.0 - len(valid) / len(episodes),
        "mean_length": float(np.mean([dsl.token_count(ep.program) for ep in valid])) if valid else 0.0,
        "mean_steps": float(np.mean([ep.steps for ep in episodes])),
    }


def reinforce_update(params: PolicyParams, episodes: Sequence[Episode], cfg: TrainConfig,
                     baseline: Optional[Baseline] = None) -> tuple[PolicyParams, dict]:
    """One ascent step on mean_episodes (R - b) * sum_t grad log pi(a_t | s_t)."""
    if not episodes:
        raise ValueError("no episodes")
    baseline = baseline if baseline is not None else Baseline(cfg.baseline_decay)
    rewards = np.array([ep.reward for ep in episodes])
    if baseline.value is None:
        baseline.value = float(rewards.mean())
    advantages = (rewards - baseline.value) / len(episodes)
    batch = episode_batch(params, episodes, advantages)
    stats = episode_stats(episodes)
    stats["baseline"] = baseline.value
    baseline.update(float(rewards.mean()))
    if len(batch) == 0 or not np.any(advantages):
        return params.copy(), stats
    _, grads, _ = policy.batch_logprob_grad(params, batch)
    if not grads.all_finite():
        raise NonFinite("non-finite policy gradient")
    return params.add_scaled(grads, cfg.lr), stats


def train_rl(cfg: TrainConfig, params: Optional[PolicyParams] = None, log_path: Union[str, Path, None] = None,
             checkpoint_path: Union[str, Path, None] = None,
             policy_config: Optional[PolicyConfig] = None) -> tuple[PolicyParams, list[dict]]:
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        pcfg = policy_config or PolicyConfig(seed=cfg.seed, lr=cfg.lr)
        params = policy.init(pcfg, np.random.default_rng(pcfg.seed))
    baseline = Baseline(cfg.baseline_decay)
    opts = cfg.board_opts()
    n_boards = max(1, cfg.batch_size // cfg.rollouts_per_board)
    records = []
    t0 = time.monotonic()
    logf = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for it in range(cfg.iterations):
            boards = [sample_board(rng, opts)[0] for _ in range(n_boards)]
            episodes = rollout_many(params, [b for b in boards for _ in range(cfg.rollouts_per_board)], rng, cfg)
            params, stats = reinforce_update(params, episodes, cfg, baseline)
            record = {"iteration": it, **stats, "elapsed": round(time.monotonic() - t0, 3)}
            records.append(record)
            if logf:
                logf.write(json.dumps(record) + "\n")
                logf.flush()
            if it % 50 == 0:
                log.info("iter %d reward %.3f eig %.3f >0.95 %.2f len %.2f", it, stats["mean_reward"],
                         stats["mean_eig"], stats["frac_eig_gt_095"], stats["mean_length"])
            if checkpoint_path and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                policy.save(params, checkpoint_path)
            if cfg.time_budget is not None and time.monotonic() - t0 > cfg.time_budget:
                break
    finally:
        if logf:
            logf.close()
    if checkpoint_path:
        policy.save(params, checkpoint_path)
    return params, records


# -- supervised ---------------------------------------------------------------


class CorpusBatch:
    """All decision steps of a corpus, with per-entry row ranges for minibatching."""

    def __init__(self, params: PolicyParams, entries: Sequence[CorpusEntry]):
        grammar = params.grammar
        self.batch = StepBatch()
        self.offsets = [0]
        rows: dict[Board, int] = {}
        for entry in entries:
            if entry.board not in rows:
                rows[entry.board] = self.batch.add_board(entry.board)
            state = grammar.initial_state()
            for a in entry.derivation:
                self.batch.add_step(rows[entry.board], state, grammar.applicable(state), a, 1.0, grammar,
                                    params.config)
                state = grammar.apply(state, a)
            if not grammar.is_complete(state):
                raise ValueError(f"incomplete derivation for {entry.program}")
            self.offsets.append(len(self.batch))
        self.offsets = np.asarray(self.offsets)
        self.batch.arrays()

    def __len__(self):
        return len(self.offsets) - 1

    def rows(self, entry_ids) -> np.ndarray:
        return np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in entry_ids])


def corpus_nll(params: PolicyParams, corpus: Union[CorpusBatch, Sequence[CorpusEntry]], chunk: int = 4096) -> float:
    """Mean negative log-likelihood per corpus entry."""
    cb = corpus if isinstance(corpus, CorpusBatch) else CorpusBatch(params, corpus)
    total = 0.0
    for start in range(0, len(cb.batch), chunk):
        rows = np.arange(start, min(start + chunk, len(cb.batch)))
        probs = policy.batch_probs(params, cb.batch, rows)
        chosen = probs[np.arange(len(rows)), cb.batch.arrays()["actions"][rows]]
        total += float(np.log(chosen).sum())
    return -total / len(cb)


def train_supervised(corpus: Sequence[CorpusEntry], params: PolicyParams, cfg: TrainConfig,
                     history: Optional[list] = None, rng: Optional[np.random.Generator] = None) -> PolicyParams:
    """Minibatch gradient descent on the mean derivation NLL for ``cfg.epochs`` epochs.

    ``history`` (if given) receives the full-corpus NLL before training and after each epoch.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = params.copy()
    cb = CorpusBatch(params, corpus)
    if history is not None:
        history.append(corpus_nll(params, cb))
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(cb))
        for start in range(0, len(order), cfg.minibatch):
            ids = order[start:start + cfg.minibatch]
            _, grads, _ = policy.batch_logprob_grad(params, cb.batch, cb.rows(ids))
            if not grads.all_finite():
                raise NonFinite("non-finite gradient in supervised training")
            params = params.add_scaled(grads, cfg.lr / len(ids))
        if history is not None:
            history.append(corpus_nll(params, cb))
            log.info("epoch %d nll %.4f", epoch, history[-1])
    return params


def uniform_log_prob(rules: Sequence[int], grammar: Grammar, start: Optional[str] = None) -> float:
    """Log-probability of a derivation under the policy that is uniform over allowed rules."""
    state = grammar.initial_state(start)
    total = 0.0
    for a in rules:
        total -= np.log(grammar.applicable(state).sum())
        state = grammar.apply(state, a)
    return float(total)

