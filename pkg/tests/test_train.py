import json
import time

import numpy as np
import pytest

from qgen import dsl, policy
from qgen.datagen import CorpusEntry
from qgen.eig import Invalid
from qgen.grammar import Grammar
from qgen.policy import PolicyConfig
from qgen.train import (
    Baseline, NonFinite, TrainConfig, corpus_nll, generate, reinforce_update, rollout_many, train_rl,
    train_supervised, uniform_log_prob,
)

from conftest import random_boards

BANDIT = Grammar([("A", ("(", "size", "Red", ")")), ("A", ("TRUE",))], nonterminals=("A",))


def bandit_params(seed=0):
    return policy.init(PolicyConfig(hidden=16, seed=seed), np.random.default_rng(seed), BANDIT)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(step_penalty=-1)
    with pytest.raises(ValueError):
        TrainConfig(max_tokens=0)


def test_baseline_warm_start():
    b = Baseline(0.5)
    params = bandit_params()
    eps = rollout_many(params, random_boards(4), np.random.default_rng(0), TrainConfig(step_penalty=0))
    reinforce_update(params, eps, TrainConfig(), b)
    mean = np.mean([e.reward for e in eps])
    assert b.value == pytest.approx(mean)


def test_bandit_learns_rewarded_rule():
    cfg = TrainConfig(iterations=500, batch_size=16, rollouts_per_board=4, step_penalty=0.0, lr=0.5,
                      max_revealed=6, seed=1)
    t0 = time.monotonic()
    params, records = train_rl(cfg, bandit_params())
    assert time.monotonic() - t0 < 60
    probs = [policy.action_distribution(params, b, BANDIT.initial_state())[0] for b in random_boards(20, seed=3)]
    assert np.mean(probs) > 0.9


def test_single_update_moves_toward_reward():
    params = bandit_params()
    boards = random_boards(8, seed=5, cap=100_000, max_revealed=4)
    eps = rollout_many(params, boards * 4, np.random.default_rng(1), TrainConfig(step_penalty=0))
    before = np.mean([policy.action_distribution(params, b, BANDIT.initial_state())[0] for b in boards])
    new, _ = reinforce_update(params, eps, TrainConfig(lr=1.0), Baseline(0.99, 0.0))
    after = np.mean([policy.action_distribution(new, b, BANDIT.initial_state())[0] for b in boards])
    assert after > before


def test_train_log_is_append_only(tmp_path):
    log = tmp_path / "log.jsonl"
    cfg = TrainConfig(iterations=2, batch_size=8)
    train_rl(cfg, log_path=log, checkpoint_path=tmp_path / "p.ckpt")
    first = log.read_text()
    train_rl(cfg, log_path=log)
    text = log.read_text()
    assert text.startswith(first) and len(text.splitlines()) == 4
    assert all("mean_reward" in json.loads(line) for line in text.splitlines())
    policy.load(tmp_path / "p.ckpt")


def test_time_budget_stops_early():
    cfg = TrainConfig(iterations=10_000, batch_size=8, time_budget=0.5)
    _, records = train_rl(cfg)
    assert len(records) < 10_000


def test_nonfinite_gradient_raises():
    params = bandit_params()
    params.W2[...] = np.nan
    eps = rollout_many(bandit_params(), random_boards(2), np.random.default_rng(0), TrainConfig())
    with pytest.raises((NonFinite, policy.IllegalAction)):
        reinforce_update(params, eps, TrainConfig(), Baseline(0.99, -5.0))


def test_token_budget_marks_invalid():
    rng = np.random.default_rng(0)
    params = policy.init(PolicyConfig(hidden=16, init_scale=0.5), rng)
    eps = rollout_many(params, random_boards(16), rng, TrainConfig(max_tokens=4, step_penalty=0.0))
    for ep in eps:
        if ep.valid:
            assert dsl.token_count(ep.program) <= 4
        else:
            assert ep.reward == -1.0


def test_generate_modes():
    params = policy.init(PolicyConfig(hidden=16, init_scale=0.5), np.random.default_rng(0))
    b = random_boards(1)[0]
    assert generate(params, b, "greedy") == generate(params, b, "greedy")
    with pytest.raises(ValueError):
        generate(params, b, "beam")


def test_seeded_generation_is_conjunction():
    params = policy.init(PolicyConfig(hidden=16, init_scale=0.5), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for b in random_boards(10):
        e = generate(params, b, "sample", "(and B B)", rng)
        if not isinstance(e, Invalid):
            assert e.op == "and"


def test_supervised_reduces_nll(grammar):
    rng = np.random.default_rng(0)
    boards = random_boards(6)
    texts = ["(size Blue)", "(> (size Red) 2)", "(orient Purple)", "(color 3-3)"]
    entries = [
        CorpusEntry(b, t, 0.0, tuple(p.id for p in grammar.derivation_of(dsl.parse_program(t))))
        for b in boards for t in texts
    ]
    params = policy.init(PolicyConfig(hidden=16), rng)
    history = []
    tuned = train_supervised(entries, params, TrainConfig(epochs=5, lr=0.5), history)
    assert len(history) == 6
    assert history[-1] < history[0]
    assert corpus_nll(tuned, entries) == pytest.approx(history[-1])


def test_uniform_log_prob(grammar):
    rules = [p.id for p in grammar.derivation_of(dsl.parse_program("(size Red)"))]
    assert uniform_log_prob(rules, grammar) == pytest.approx(-np.log(5 * 13 * 5))
