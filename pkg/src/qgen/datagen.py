"""Pretraining corpus: random boards, EIG-scored candidate questions, EIG-weighted sampling.

Corpus file layout::

    qgen-corpus v1 grammar=<hash>
    board=<row1>/<row2>/.../<row6>\tprogram=<canonical program>\teig=<float>\tderivation=<ids>

``eig`` is written with ``repr`` so it reads back bit-exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from . import dsl
from .board import Board, BoardFormatError, BoardOpts, Hypothesis, hypothesis_space, sample_board
from .eig import EigResult, EigScorer
from .grammar import OVERFLOW, Grammar, default_grammar
from .policy import GrammarMismatch

log = logging.getLogger(__name__)

CORPUS_MAGIC = "qgen-corpus v1"
FIELDS = ("board", "program", "eig", "derivation")
MAX_TOKENS = 80


class PoolTooSmall(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class CorpusEntry:
    board: Board
    program: str
    eig: float
    derivation: tuple[int, ...]

    def to_record(self) -> str:
        return "\t".join([
            f"board={self.board.to_compact()}",
            f"program={self.program}",
            f"eig={self.eig!r}",
            "derivation=" + " ".join(map(str, self.derivation)),
        ])


def validate_entry(entry: CorpusEntry, grammar: Optional[Grammar] = None, max_tokens: int = MAX_TOKENS,
                   recompute_eig: bool = False) -> None:
    """Raise if the entry does not parse, typecheck, fit the budget, or replay."""
    grammar = grammar or default_grammar()
    e = dsl.parse_program(entry.program)
    dsl.typecheck(e)
    if dsl.token_count(e) > max_tokens:
        raise ValueError(f"{entry.program} is longer than {max_tokens} tokens")
    if grammar.text(grammar.replay(entry.derivation)) != entry.program:
        raise ValueError(f"derivation does not replay to {entry.program}")
    if recompute_eig:
        fresh = EigScorer(hypothesis_space(entry.board))(e).eig_bits
        if abs(fresh - entry.eig) > 1e-9:
            raise ValueError(f"stored eig {entry.eig} != recomputed {fresh}")


def gen_boards_with_hypotheses(n: int, rng: np.random.Generator,
                               opts: Optional[BoardOpts] = None) -> list[tuple[Board, Hypothesis]]:
    if n < 1:
        raise ValueError("n must be at least 1")
    return [sample_board(rng, opts) for _ in range(n)]


def gen_boards(n: int = 2000, rng: Optional[np.random.Generator] = None,
               opts: Optional[BoardOpts] = None) -> list[Board]:
    rng = rng if rng is not None else np.random.default_rng(0)
    return [b for b, _ in gen_boards_with_hypotheses(n, rng, opts)]


@dataclass
class CandidatePool:
    board: Board
    items: list[tuple[dsl.Expr, EigResult]]

    def __len__(self):
        return len(self.items)

    def __iter__(self) -> Iterator[tuple[dsl.Expr, EigResult]]:
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


def candidate_pool(b: Board, rng: np.random.Generator, pool_size: int = 2000, max_tokens: int = MAX_TOKENS,
                   depth_bound: int = 4, max_attempts: Optional[int] = None,
                   grammar: Optional[Grammar] = None) -> CandidatePool:
    """Distinct random programs scored by EIG on ``b``.

    Stops early (with fewer than ``pool_size`` items) after ``max_attempts``
    draws, 50 per requested item by default.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be at least 1")
    grammar = grammar or default_grammar()
    max_attempts = max_attempts or 50 * pool_size
    seen: dict[str, dsl.Expr] = {}
    for _ in range(max_attempts):
        if len(seen) >= pool_size:
            break
        e = grammar.sample_random(rng, max_tokens, depth_bound)
        if e is OVERFLOW or dsl.typecheck(e) not in dsl.ANSWER_TYPES:
            continue
        seen.setdefault(dsl.print_program(e), e)
    scorer = EigScorer(hypothesis_space(b))
    return CandidatePool(b, [(e, scorer(e)) for e in seen.values()])


def sample_questions(pool: CandidatePool, K: int = 10, beta: float = 1.0,
                     rng: Optional[np.random.Generator] = None,
                     grammar: Optional[Grammar] = None) -> list[CorpusEntry]:
    """K draws without replacement, each with probability proportional to exp(beta * eig)."""
    if K > len(pool):
        raise PoolTooSmall(f"cannot draw {K} questions from a pool of {len(pool)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    grammar = grammar or default_grammar()
    eigs = np.array([r.eig_bits for _, r in pool])
    remaining = np.ones(len(pool), dtype=bool)
    out = []
    for _ in range(K):
        logits = np.where(remaining, beta * eigs, -np.inf)
        w = np.exp(logits - logits.max())
        i = int(rng.choice(len(pool), p=w / w.sum()))
        remaining[i] = False
        e, result = pool[i]
        out.append(CorpusEntry(pool.board, dsl.print_program(e), result.eig_bits,
                               tuple(p.id for p in grammar.derivation_of(e))))
    return out


def gen_corpus(n_boards: int = 2000, K: int = 10, pool_size: int = 2000, beta: float = 1.0,
               rng: Optional[np.random.Generator] = None, opts: Optional[BoardOpts] = None,
               boards: Optional[Sequence[Board]] = None) -> list[CorpusEntry]:
    rng = rng if rng is not None else np.random.default_rng(0)
    boards = list(boards) if boards is not None else gen_boards(n_boards, rng, opts)
    entries = []
    for i, b in enumerate(boards):
        pool = candidate_pool(b, rng, pool_size)
        entries.extend(sample_questions(pool, K, beta, rng))
        if (i + 1) % 100 == 0:
            log.info("corpus: %d/%d boards", i + 1, len(boards))
    return entries


# -- persistence --------------------------------------------------------------


def write_corpus(entries: Iterable[CorpusEntry], path: Union[str, Path], grammar: Optional[Grammar] = None) -> None:
    grammar = grammar or default_grammar()
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{CORPUS_MAGIC} grammar={grammar.hash}\n")
        for entry in entries:
            f.write(entry.to_record() + "\n")


def parse_record(line: str, lineno: int) -> CorpusEntry:
    parts = line.split("\t")
    if len(parts) != len(FIELDS):
        raise FormatError(f"expected {len(FIELDS)} fields, got {len(parts)}", lineno)
    values = {}
    for want, part in zip(FIELDS, parts):
        key, sep, value = part.partition("=")
        if key != want or not sep:
            raise FormatError(f"expected field {want!r}", lineno)
        values[key] = value
    try:
        board = Board.from_compact(values["board"])
        eig = float(values["eig"])
        derivation = tuple(int(t) for t in values["derivation"].split())
    except (BoardFormatError, ValueError) as exc:
        raise FormatError(str(exc), lineno) from None
    if not math.isfinite(eig) or eig < 0:
        raise FormatError(f"bad eig {values['eig']!r}", lineno)
    return CorpusEntry(board, values["program"], eig, derivation)


def read_corpus(path: Union[str, Path], grammar: Optional[Grammar] = None) -> list[CorpusEntry]:
    grammar = grammar or default_grammar()
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(CORPUS_MAGIC + " grammar="):
        raise FormatError("missing corpus header", 1)
    stored = lines[0].split("grammar=", 1)[1]
    if stored != grammar.hash:
        raise GrammarMismatch(f"corpus grammar {stored} does not match active grammar {grammar.hash}")
    return [parse_record(line, i) for i, line in enumerate(lines[1:], start=2)]
