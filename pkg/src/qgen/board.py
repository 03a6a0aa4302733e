"""Battleship game model: placements, hypothesis enumeration, boards.

Cells are indexed row-major, ``index = 6 * (row - 1) + (col - 1)``, and bit
``index`` of an occupancy mask marks that cell. Hypotheses are stored as rows
of placement indices into the shared 144-entry placement table, so a whole
hypothesis space is three small integer columns plus derived mask arrays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Optional, Sequence

import numpy as np

SIZE = 6
N_CELLS = SIZE * SIZE
SHIP_SIZES = (2, 3, 4)
FULL_MASK = (1 << N_CELLS) - 1


class EmptySpace(ValueError):
    """No hypothesis is consistent with the board."""


class BoardFormatError(ValueError):
    pass


class Cell(IntEnum):
    HIDDEN = 0
    WATER = 1
    BLUE = 2
    RED = 3
    PURPLE = 4


class Color(IntEnum):
    """Colors share codes with :class:`Cell` so board values compare directly."""

    Water = 1
    Blue = 2
    Red = 3
    Purple = 4


class Orient(IntEnum):
    H = 0
    V = 1


SHIP_COLORS = (Color.Blue, Color.Red, Color.Purple)
CELL_CHARS = "-WBRP"


@dataclass(frozen=True, order=True)
class Coord:
    row: int
    col: int

    def __post_init__(self):
        if not (1 <= self.row <= SIZE and 1 <= self.col <= SIZE):
            raise ValueError(f"coordinate out of bounds: ({self.row},{self.col})")

    @property
    def index(self) -> int:
        return SIZE * (self.row - 1) + (self.col - 1)

    @classmethod
    def from_index(cls, i: int) -> "Coord":
        return cls(i // SIZE + 1, i % SIZE + 1)

    def __str__(self):
        return f"{self.row}-{self.col}"


def _tiles(topleft: Coord, orientation: Orient, size: int) -> int:
    dr, dc = (0, 1) if orientation == Orient.H else (1, 0)
    mask = 0
    for k in range(size):
        mask |= 1 << Coord(topleft.row + dr * k, topleft.col + dc * k).index
    return mask


@dataclass(frozen=True)
class ShipSpec:
    color: Color
    topleft: Coord
    orientation: Orient
    size: int
    tiles: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.color not in SHIP_COLORS:
            raise ValueError(f"{self.color!r} is not a ship color")
        if self.size not in SHIP_SIZES:
            raise ValueError(f"ship size must be one of {SHIP_SIZES}, got {self.size}")
        object.__setattr__(self, "tiles", _tiles(self.topleft, self.orientation, self.size))

    def cells(self) -> list[Coord]:
        return [Coord.from_index(i) for i in range(N_CELLS) if self.tiles >> i & 1]


@dataclass(frozen=True)
class Hypothesis:
    blue: ShipSpec
    red: ShipSpec
    purple: ShipSpec

    def __post_init__(self):
        b, r, p = self.blue.tiles, self.red.tiles, self.purple.tiles
        if b & r or b & p or r & p:
            raise ValueError("ships overlap")

    def ship(self, color: Color) -> ShipSpec:
        return {Color.Blue: self.blue, Color.Red: self.red, Color.Purple: self.purple}[color]

    @property
    def ships(self) -> tuple[ShipSpec, ShipSpec, ShipSpec]:
        return (self.blue, self.red, self.purple)


@dataclass(frozen=True)
class Board:
    cells: tuple[int, ...]

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != N_CELLS or any(c not in range(5) for c in cells):
            raise BoardFormatError("a board has 36 cells with values in 0..4")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def hidden(cls) -> "Board":
        return cls((Cell.HIDDEN,) * N_CELLS)

    def __getitem__(self, coord: Coord) -> Cell:
        return Cell(self.cells[coord.index])

    def reveal(self, coord: Coord, value: Cell) -> "Board":
        cells = list(self.cells)
        cells[coord.index] = value
        return Board(tuple(cells))

    def mask(self, value: Cell) -> int:
        return sum(1 << i for i, c in enumerate(self.cells) if c == value)

    @property
    def revealed_mask(self) -> int:
        return FULL_MASK & ~self.mask(Cell.HIDDEN)

    @property
    def n_revealed(self) -> int:
        return sum(c != Cell.HIDDEN for c in self.cells)

    def to_text(self) -> str:
        rows = ("".join(CELL_CHARS[c] for c in self.cells[r * SIZE:(r + 1) * SIZE]) for r in range(SIZE))
        return "".join(row + "\n" for row in rows)

    def to_compact(self) -> str:
        return "/".join(self.to_text().splitlines())

    @classmethod
    def from_text(cls, text: str) -> "Board":
        """Parse six newline-terminated lines of ``-WBRP``."""
        if not text.endswith("\n"):
            raise BoardFormatError("board text must be newline-terminated")
        return cls._from_rows(text[:-1].split("\n"))

    @classmethod
    def from_compact(cls, text: str) -> "Board":
        return cls._from_rows(text.split("/"))

    @classmethod
    def _from_rows(cls, rows: Sequence[str]) -> "Board":
        if len(rows) != SIZE or any(len(r) != SIZE for r in rows):
            raise BoardFormatError(f"expected {SIZE} rows of {SIZE} characters")
        cells = []
        for r, row in enumerate(rows, 1):
            for c, ch in enumerate(row, 1):
                if ch not in CELL_CHARS:
                    raise BoardFormatError(f"bad character {ch!r} at row {r}, col {c}")
                cells.append(CELL_CHARS.index(ch))
        return cls(tuple(cells))

    def __str__(self):
        return self.to_text()


# -- placements and hypotheses ------------------------------------------------


def enumerate_placements(color: Color) -> list[ShipSpec]:
    """All in-bounds placements: size ascending, H before V, row-major topleft."""
    out = []
    for size in SHIP_SIZES:
        for orientation in (Orient.H, Orient.V):
            max_row = SIZE if orientation == Orient.H else SIZE - size + 1
            max_col = SIZE - size + 1 if orientation == Orient.H else SIZE
            for row in range(1, max_row + 1):
                for col in range(1, max_col + 1):
                    out.append(ShipSpec(color, Coord(row, col), orientation, size))
    return out


@dataclass(frozen=True)
class _PlacementTable:
    masks: np.ndarray  # uint64 (P,)
    sizes: np.ndarray  # int64 (P,)
    orients: np.ndarray  # int64 (P,)
    rows: np.ndarray
    cols: np.ndarray


@functools.cache
def placement_table() -> _PlacementTable:
    specs = enumerate_placements(Color.Blue)
    return _PlacementTable(
        masks=np.array([s.tiles for s in specs], dtype=np.uint64),
        sizes=np.array([s.size for s in specs], dtype=np.int64),
        orients=np.array([int(s.orientation) for s in specs], dtype=np.int64),
        rows=np.array([s.topleft.row for s in specs], dtype=np.int64),
        cols=np.array([s.topleft.col for s in specs], dtype=np.int64),
    )


def _ship_from_index(color: Color, p: int) -> ShipSpec:
    t = placement_table()
    return ShipSpec(color, Coord(int(t.rows[p]), int(t.cols[p])), Orient(int(t.orients[p])), int(t.sizes[p]))


@functools.cache
def _placement_index() -> dict[tuple[int, int, int, int], int]:
    t = placement_table()
    return {
        (int(t.rows[p]), int(t.cols[p]), int(t.orients[p]), int(t.sizes[p])): p
        for p in range(len(t.masks))
    }


def placement_index(spec: ShipSpec) -> int:
    return _placement_index()[(spec.topleft.row, spec.topleft.col, int(spec.orientation), spec.size)]


class HypothesisSpace:
    """Ordered, immutable set of hypotheses stored as placement-index triples.

    ``masks``, ``sizes`` and ``orients`` are ``(n, 3)`` arrays in
    blue/red/purple column order; they back the vectorized evaluator.
    """

    def __init__(self, indices: np.ndarray, source_board: Board):
        indices = np.ascontiguousarray(indices, dtype=np.int16)
        indices.setflags(write=False)
        self.indices = indices
        self.source_board = source_board

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, i: int) -> Hypothesis:
        b, r, p = (int(v) for v in self.indices[i])
        return Hypothesis(
            _ship_from_index(Color.Blue, b),
            _ship_from_index(Color.Red, r),
            _ship_from_index(Color.Purple, p),
        )

    def __iter__(self) -> Iterator[Hypothesis]:
        for i in range(len(self)):
            yield self[i]

    @property
    def hypotheses(self) -> list[Hypothesis]:
        return list(self)

    @functools.cached_property
    def masks(self) -> np.ndarray:
        return placement_table().masks[self.indices]

    @functools.cached_property
    def sizes(self) -> np.ndarray:
        return placement_table().sizes[self.indices]

    @functools.cached_property
    def orients(self) -> np.ndarray:
        return placement_table().orients[self.indices]

    def subset(self, rows: np.ndarray) -> "HypothesisSpace":
        return HypothesisSpace(self.indices[rows], self.source_board)

    def index_of(self, h: Hypothesis) -> Optional[int]:
        key = np.array([placement_index(s) for s in h.ships], dtype=np.int16)
        hits = np.flatnonzero((self.indices == key).all(axis=1))
        return int(hits[0]) if len(hits) else None

    def __repr__(self):
        return f"HypothesisSpace(n={len(self)})"


def _triples(allowed: Sequence[np.ndarray]) -> np.ndarray:
    """Disjoint placement triples drawn from per-color candidate index lists, lexicographic."""
    masks = placement_table().masks
    a, b, c = (np.asarray(x, dtype=np.int64) for x in allowed)
    first, second = np.nonzero((masks[a][:, None] & masks[b][None, :]) == 0)
    first, second = a[first], b[second]
    pair_masks = masks[first] | masks[second]
    pair_rows, third = np.nonzero((pair_masks[:, None] & masks[c][None, :]) == 0)
    out = np.empty((len(third), 3), dtype=np.int16)
    out[:, 0] = first[pair_rows]
    out[:, 1] = second[pair_rows]
    out[:, 2] = c[third]
    return out


@functools.cache
def enumerate_hypotheses() -> HypothesisSpace:
    """Every non-overlapping (blue, red, purple) triple in lexicographic placement order."""
    every = np.arange(len(placement_table().masks))
    return HypothesisSpace(_triples([every, every, every]), Board.hidden())


def render(h: Hypothesis) -> Board:
    cells = [Cell.WATER] * N_CELLS
    for ship in h.ships:
        for i in range(N_CELLS):
            if ship.tiles >> i & 1:
                cells[i] = Cell(ship.color)
    return Board(tuple(cells))


def consistent(h: Hypothesis, b: Board) -> bool:
    shown = render(h).cells
    return all(c == Cell.HIDDEN or c == s for c, s in zip(b.cells, shown))


def _allowed_placements(b: Board) -> list[np.ndarray]:
    # A placement fits a color iff it covers exactly that color's revealed cells;
    # revealed water is then never covered.
    masks = placement_table().masks
    revealed = np.uint64(b.revealed_mask)
    return [np.flatnonzero((masks & revealed) == np.uint64(b.mask(Cell(color)))) for color in SHIP_COLORS]


def hypothesis_space(b: Board) -> HypothesisSpace:
    if b.n_revealed == 0:
        return enumerate_hypotheses()
    indices = _triples(_allowed_placements(b))
    if len(indices) == 0:
        raise EmptySpace(f"no ship configuration is consistent with\n{b.to_text()}")
    return HypothesisSpace(indices, b)


def space_size(b: Board) -> int:
    if b.n_revealed == 0:
        return len(enumerate_hypotheses())
    return len(_triples(_allowed_placements(b)))


def board_entropy(b: Board) -> float:
    """Entropy in bits of the uniform posterior over consistent hypotheses."""
    n = space_size(b)
    if n == 0:
        raise EmptySpace("board is inconsistent with every hypothesis")
    return math.log2(n)


# -- sampling -----------------------------------------------------------------


@dataclass
class BoardOpts:
    """``max_space_size=None`` disables the hypothesis-space cap."""

    max_space_size: Optional[int] = 100_000
    min_revealed: int = 1
    max_revealed: int = 18


def sample_board(rng: np.random.Generator, opts: Optional[BoardOpts] = None) -> tuple[Board, Hypothesis]:
    opts = opts or BoardOpts()
    full = enumerate_hypotheses()
    while True:
        h = full[int(rng.integers(len(full)))]
        shown = render(h).cells
        k = int(rng.integers(opts.min_revealed, opts.max_revealed + 1))
        positions = rng.choice(N_CELLS, size=k, replace=False)
        if not any(shown[i] >= Cell.BLUE for i in positions):
            continue
        cells = [Cell.HIDDEN] * N_CELLS
        for i in positions:
            cells[i] = shown[i]
        board = Board(tuple(cells))
        if opts.max_space_size is not None and space_size(board) > opts.max_space_size:
            continue
        return board, h
