import numpy as np
import pytest
from hypothesis import given, strategies as st

from qgen import dsl
from qgen.grammar import (
    NONTERMINALS, OVERFLOW, CompleteState, Grammar, IllegalAction, default_grammar, default_rules,
)

from conftest import random_programs

WORKED_DERIVATION = ["0: A -> B", "7: B -> ( > N N )", "28: N -> ( size C )", "31: C -> Blue", "21: N -> 3"]


def test_rule_table_shape(grammar):
    assert grammar.n_rules == 81
    counts = {nt: sum(p.lhs == nt for p in grammar.productions) for nt in NONTERMINALS}
    assert counts == {"A": 5, "B": 13, "N": 13, "C": 5, "O": 3, "L": 39, "S": 2, "SB": 1}
    assert [p.id for p in grammar.productions] == list(range(81))


def test_hash_is_stable(grammar):
    assert Grammar(default_rules()).hash == grammar.hash
    assert len(grammar.hash) == 16
    assert Grammar(default_rules()[:-1]).hash != grammar.hash


def test_worked_derivation(grammar):
    rules = grammar.derivation_of(dsl.parse_program("( > (size Blue) 3)"))
    assert [str(p) for p in rules] == WORKED_DERIVATION
    assert grammar.text(grammar.replay(rules)) == "(> (size Blue) 3)"


@given(st.integers(0, 2**32 - 1))
def test_replay_derive_identity(seed):
    g = default_grammar()
    for e in random_programs(5, seed=seed, answerable=False):
        assert g.program(g.replay(g.derivation_of(e))) == e


def test_derivation_is_unique(grammar):
    # Exhaustive search over derivations up to 5 steps: each program text appears once.
    seen = {}

    def walk(state, depth):
        if grammar.is_complete(state):
            text = grammar.text(state)
            assert text not in seen, text
            seen[text] = state.history
            return
        if depth == 5:
            return
        for a in np.flatnonzero(grammar.applicable(state)):
            walk(grammar.apply(state, int(a)), depth + 1)

    walk(grammar.initial_state("B"), 0)
    assert len(seen) > 100


def _expected_mask(grammar, symbols):
    # Scan the string directly: leftmost nonterminal, and whether it sits in a lambda body.
    nts = set(grammar.nonterminals)
    i = next(k for k, s in enumerate(symbols) if s in nts)
    depth, lambda_depths = 0, []
    for s in symbols[:i]:
        if s == "(":
            depth += 1
        elif s == ")":
            if lambda_depths and lambda_depths[-1] == depth:
                lambda_depths.pop()
            depth -= 1
        elif s == "lambda":
            lambda_depths.append(depth)
    inside = bool(lambda_depths)
    out = np.zeros(grammar.n_rules, dtype=bool)
    for p in grammar.productions:
        if p.lhs != symbols[i]:
            continue
        if inside and ("lambda" in p.rhs or "SB" in p.rhs):
            continue
        if not inside and p.rhs == ("x",):
            continue
        out[p.id] = True
    return out


def _random_states(grammar, n, seed):
    rng = np.random.default_rng(seed)
    states = []
    while len(states) < n:
        s = grammar.initial_state(grammar.nonterminals[rng.integers(len(grammar.nonterminals))])
        for _ in range(rng.integers(0, 12)):
            if grammar.is_complete(s):
                break
            s = grammar.apply(s, int(rng.choice(np.flatnonzero(grammar.applicable(s)))))
        if not grammar.is_complete(s):
            states.append(s)
    return states


def test_mask_exactness(grammar):
    for s in _random_states(grammar, 1000, seed=0):
        assert (grammar.applicable(s) == _expected_mask(grammar, s.symbols)).all(), s.symbols


def test_masked_rules_complete_to_typed_programs(grammar):
    rng = np.random.default_rng(1)
    for s in _random_states(grammar, 100, seed=2):
        for a in np.flatnonzero(grammar.applicable(s)):
            t = grammar.apply(s, int(a))
            while not grammar.is_complete(t):
                ids = np.flatnonzero(grammar.applicable(t))
                costs = grammar.rule_min_tokens[ids]
                t = grammar.apply(t, int(rng.choice(ids[costs == costs.min()])))
            assert dsl.is_well_typed(grammar.program(t)), t.symbols


def test_variable_only_inside_lambda(grammar):
    x_rule = next(p.id for p in grammar.productions if p.rhs == ("x",))
    outside = grammar.initial_state("L")
    assert not grammar.applicable(outside)[x_rule]
    with pytest.raises(IllegalAction):
        grammar.apply(outside, x_rule)
    inside = grammar.initial_state("(map (lambda x (== (color L) Red)) (coloredTiles Blue))")
    assert inside.in_lambda and grammar.applicable(inside)[x_rule]


def test_complete_state(grammar):
    done = grammar.initial_state("TRUE")
    with pytest.raises(CompleteState):
        grammar.applicable(done)


def test_seeded_start(grammar):
    s = grammar.initial_state("(and B B)")
    assert s.symbols == ("(", "and", "B", "B", ")")
    assert grammar.lower_bound_tokens(s) == 5


def test_min_tokens(grammar):
    assert grammar.min_tokens["A"] == 1
    assert grammar.min_tokens["S"] == 4
    assert grammar.min_tokens["SB"] == 12


def test_sample_random_within_budget(grammar):
    rng = np.random.default_rng(0)
    n_overflow = 0
    for _ in range(500):
        e = grammar.sample_random(rng, max_tokens=20)
        if e is OVERFLOW:
            n_overflow += 1
            continue
        assert dsl.token_count(e) <= 20
        assert dsl.is_well_typed(e)
    assert n_overflow < 500


def test_sample_random_from_start(grammar):
    rng = np.random.default_rng(4)
    for _ in range(50):
        e = grammar.sample_random(rng, start="B")
        if e is not OVERFLOW:
            assert dsl.typecheck(e) is dsl.T.Bool
