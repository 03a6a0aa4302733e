"""Independent reference implementations used as test oracles."""

import math
from collections import Counter, defaultdict

from qgen import dsl


def placements_by_hand():
    """Cell sets of every placement of a 2-4 tile ship on a 6x6 grid, 0-based (row, col)."""
    out = []
    for size in (2, 3, 4):
        for r in range(6):
            for c in range(6):
                if c + size <= 6:
                    out.append(frozenset((r, c + k) for k in range(size)))
                if r + size <= 6:
                    out.append(frozenset((r + k, c) for k in range(size)))
    return out


def count_triples(board=None):
    """Triple loop over (blue, red, purple) placements with per-ship pruning."""
    cells = {} if board is None else {
        (i // 6, i % 6): v for i, v in enumerate(board.cells) if v != 0
    }
    pls = placements_by_hand()
    per_color = []
    for code in (2, 3, 4):  # Blue, Red, Purple
        shown = {rc for rc, v in cells.items() if v == code}
        per_color.append([
            p for p in pls
            if shown <= p and all(cells.get(rc, code) == code for rc in p)
        ])
    n = 0
    for a in per_color[0]:
        for b in per_color[1]:
            if a & b:
                continue
            ab = a | b
            for c in per_color[2]:
                if not ab & c:
                    n += 1
    return n


def entropy(probs):
    return -sum(p * math.log2(p) for p in probs if p > 0)


def direct_eig(e, hypotheses):
    """Prior entropy minus the expected posterior entropy, computed hypothesis by hypothesis."""
    n = len(hypotheses)
    prior = entropy([1.0 / n] * n)
    by_answer = defaultdict(list)
    for h in hypotheses:
        by_answer[dsl.evaluate(e, h)].append(h)
    expected_post = 0.0
    for hs in by_answer.values():
        p_answer = len(hs) / n
        post = entropy([1.0 / len(hs)] * len(hs))
        expected_post += p_answer * post
    return prior - expected_post


def answer_counts(e, hypotheses):
    return Counter(dsl.evaluate(e, h) for h in hypotheses)
