import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qgen import dsl
from qgen.board import Board, Cell, Coord, board_entropy, enumerate_hypotheses, hypothesis_space, render
from qgen.eig import EigScorer, Invalid, answer_partition, eig, eig_from_counts, reward

from conftest import random_boards, random_programs
from oracles import answer_counts, direct_eig


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=12))
def test_counts_formula(counts):
    n = sum(counts)
    expected = -sum(c / n * math.log2(c / n) for c in counts)
    assert eig_from_counts(counts) == pytest.approx(expected, abs=1e-9)
    assert 0.0 <= eig_from_counts(counts) <= math.log2(len(counts)) + 1e-12


def test_even_split_is_one_bit():
    assert eig_from_counts([7, 7]) == pytest.approx(1.0)


@pytest.mark.parametrize("i", range(5))
def test_partition_matches_scalar(i):
    board = random_boards(5, seed=21, cap=2_000)[i]
    space = hypothesis_space(board)
    hs = space.hypotheses
    for e in random_programs(6, seed=i):
        part = answer_partition(e, space)
        assert part.counts == dict(answer_counts(e, hs))
        assert eig(e, space).eig_bits == pytest.approx(direct_eig(e, hs), abs=1e-9)


def test_bool_question_at_most_one_bit(small_boards):
    bools = [e for e in random_programs(60, seed=3) if dsl.typecheck(e) is dsl.T.Bool]
    for board in small_boards[:5]:
        scorer = EigScorer(hypothesis_space(board))
        for e in bools:
            assert scorer(e).eig_bits <= 1.0 + 1e-12


def test_fully_revealed_has_zero_eig():
    board = render(enumerate_hypotheses()[999])
    space = hypothesis_space(board)
    for e in random_programs(20, seed=5):
        assert eig(e, space).eig_bits == 0.0


def test_eig_bounded_by_entropy(small_boards):
    progs = random_programs(20, seed=8)
    for board in small_boards[:5]:
        scorer = EigScorer(hypothesis_space(board))
        for e in progs:
            assert scorer(e).eig_bits <= board_entropy(board) + 1e-9


def test_subsampling_is_flagged_and_deterministic():
    board = Board.hidden().reveal(Coord(3, 3), Cell.BLUE)
    space = hypothesis_space(board)
    assert len(space) > 100_000
    e = dsl.parse_program("(size Blue)")
    a, b = eig(e, space), eig(e, space)
    assert a.estimated and a.eig_bits == b.eig_bits
    assert a.partition.total == 100_000
    assert abs(a.eig_bits - eig(e, space, exact_threshold=len(space)).eig_bits) < 0.05


def test_loc_set_answer_unsupported(small_boards):
    with pytest.raises(dsl.UnsupportedAnswerType):
        eig(dsl.parse_program("(coloredTiles Red)"), hypothesis_space(small_boards[0]))


def test_reward_levels():
    space = hypothesis_space(random_boards(1, seed=2)[0])
    good = eig(dsl.parse_program("(size Blue)"), space)
    zero = eig(dsl.parse_program("TRUE"), space)
    assert reward(zero, 1, 0.0) == 0.0
    assert reward(Invalid(), 10, 0.0) == -1.0
    assert reward(zero, 5, 0.1) == pytest.approx(-0.5)
    if good.eig_bits > 0.95:
        assert reward(good, 4, 0.02) == pytest.approx(1 - 0.08)
