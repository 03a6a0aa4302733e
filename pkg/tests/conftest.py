import numpy as np
import pytest
from hypothesis import settings

from qgen import dsl
from qgen.board import BoardOpts, sample_board
from qgen.grammar import OVERFLOW, default_grammar

settings.register_profile("qgen", deadline=None, max_examples=50)
settings.load_profile("qgen")


def random_boards(n, seed=0, cap=5_000, max_revealed=18):
    rng = np.random.default_rng(seed)
    opts = BoardOpts(max_space_size=cap, max_revealed=max_revealed)
    return [sample_board(rng, opts)[0] for _ in range(n)]


def random_programs(n, seed=0, answerable=True, max_tokens=40):
    rng = np.random.default_rng(seed)
    g = default_grammar()
    out = []
    while len(out) < n:
        e = g.sample_random(rng, max_tokens)
        if e is OVERFLOW:
            continue
        if answerable and dsl.typecheck(e) not in dsl.ANSWER_TYPES:
            continue
        out.append(e)
    return out


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def small_boards():
    return random_boards(20, seed=7)


ACCEPTANCE: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    """Record one acceptance line; the summary prints them in order after the run."""
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
