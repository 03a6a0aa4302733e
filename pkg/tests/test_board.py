import numpy as np
import pytest
from hypothesis import given, strategies as st

from qgen.board import (
    Board, BoardFormatError, BoardOpts, Cell, Color, Coord, EmptySpace, Hypothesis, Orient, ShipSpec,
    board_entropy, consistent, enumerate_hypotheses, enumerate_placements, hypothesis_space, render,
    sample_board, space_size,
)

from conftest import random_boards
from oracles import count_triples, placements_by_hand


@pytest.mark.parametrize("color", [Color.Blue, Color.Red, Color.Purple])
def test_placement_count(color):
    pl = enumerate_placements(color)
    assert len(pl) == 144
    assert len({p.tiles for p in pl}) == 144
    assert {frozenset((c.row - 1, c.col - 1) for c in p.cells()) for p in pl} == set(placements_by_hand())


def test_placement_order():
    pl = enumerate_placements(Color.Blue)
    keys = [(p.size, p.orientation, p.topleft.row, p.topleft.col) for p in pl]
    assert keys == sorted(keys)


def test_full_space_size():
    assert len(enumerate_hypotheses()) == 1_653_456


def test_ship_bounds():
    with pytest.raises(ValueError):
        ShipSpec(Color.Blue, Coord(1, 5), Orient.H, 3)
    with pytest.raises(ValueError):
        ShipSpec(Color.Water, Coord(1, 1), Orient.H, 2)


def test_overlap_rejected():
    a = ShipSpec(Color.Blue, Coord(1, 1), Orient.H, 2)
    b = ShipSpec(Color.Red, Coord(1, 2), Orient.V, 2)
    c = ShipSpec(Color.Purple, Coord(6, 1), Orient.H, 4)
    with pytest.raises(ValueError):
        Hypothesis(a, b, c)


@pytest.mark.parametrize("i", range(6))
def test_consistent_space_matches_triple_loop(i):
    b = random_boards(6, seed=11, cap=20_000)[i]
    assert space_size(b) == count_triples(b)


def test_consistent_space_members(small_boards):
    for b in small_boards[:5]:
        space = hypothesis_space(b)
        assert all(consistent(h, b) for h in space)
        assert len({tuple(h.ships) for h in space}) == len(space)


def test_render_revealed_is_singleton():
    h = enumerate_hypotheses()[123_456]
    full = render(h)
    space = hypothesis_space(full)
    assert len(space) == 1 and space[0] == h
    assert board_entropy(full) == 0.0


def test_inconsistent_board():
    b = Board.hidden().reveal(Coord(1, 1), Cell.BLUE).reveal(Coord(6, 6), Cell.BLUE)
    with pytest.raises(EmptySpace):
        hypothesis_space(b)


PERMS = [(2, 3, 4), (2, 4, 3), (3, 2, 4), (3, 4, 2), (4, 2, 3), (4, 3, 2)]


@given(st.integers(0, 10_000), st.sampled_from(PERMS))
def test_color_relabel_preserves_count(seed, perm):
    b = random_boards(1, seed=seed, cap=50_000)[0]
    relabel = {0: 0, 1: 1, 2: perm[0], 3: perm[1], 4: perm[2]}
    permuted = Board(tuple(relabel[c] for c in b.cells))
    assert space_size(permuted) == space_size(b)


@given(st.lists(st.sampled_from("-WBRP"), min_size=36, max_size=36))
def test_text_round_trip(cells):
    b = Board._from_rows(["".join(cells[r * 6:(r + 1) * 6]) for r in range(6)])
    assert Board.from_text(b.to_text()) == b
    assert Board.from_compact(b.to_compact()) == b
    assert Board.from_text(b.to_text()).to_text() == b.to_text()


@pytest.mark.parametrize("text", ["", "------\n" * 5, "------\n" * 5 + "-----X\n", "-------\n" * 6])
def test_bad_board_text(text):
    with pytest.raises(BoardFormatError):
        Board.from_text(text)


def test_sample_board_respects_options():
    rng = np.random.default_rng(3)
    opts = BoardOpts(max_space_size=1_000, max_revealed=12)
    for _ in range(20):
        b, h = sample_board(rng, opts)
        assert 1 <= b.n_revealed <= 12
        assert space_size(b) <= 1_000
        assert consistent(h, b)
        assert b.mask(Cell.BLUE) | b.mask(Cell.RED) | b.mask(Cell.PURPLE)


def test_sample_board_deterministic():
    a = [sample_board(np.random.default_rng(5))[0] for _ in range(3)]
    b = [sample_board(np.random.default_rng(5))[0] for _ in range(3)]
    assert a == b


def test_coord_text():
    assert str(Coord(2, 5)) == "2-5"
    assert Coord.from_index(Coord(4, 3).index) == Coord(4, 3)
