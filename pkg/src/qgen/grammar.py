"""Context-free grammar over the question language and its leftmost-derivation engine.

A derivation state is a tuple of symbols; nonterminals are the names in
``Grammar.nonterminals`` and everything else is a terminal token of the
printed program. The only context beyond the CFG is a lambda-scope flag: the
variable rule ``L -> x`` is legal only inside a lambda body, and rules that
would open a second lambda are illegal there.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import dsl
from .dsl import Atom, Call, Expr, Lambda, TypeTag

START = "A"
NONTERMINALS = ("A", "B", "N", "C", "O", "L", "S", "SB")
TYPE_SYMBOL = {
    TypeTag.Bool: "B",
    TypeTag.Num: "N",
    TypeTag.Color: "C",
    TypeTag.Orient: "O",
    TypeTag.Loc: "L",
    TypeTag.LocSet: "S",
    TypeTag.BoolSet: "SB",
}
SYMBOL_TYPE = {v: k for k, v in TYPE_SYMBOL.items()}


class CompleteState(ValueError):
    pass


class IllegalAction(ValueError):
    pass


class Overflow:
    """Returned by :meth:`Grammar.sample_random` when the token budget runs out."""

    def __repr__(self):
        return "OVERFLOW"


OVERFLOW = Overflow()


@dataclass(frozen=True)
class Production:
    id: int
    lhs: str
    rhs: tuple[str, ...]

    def __str__(self):
        return f"{self.id}: {self.lhs} -> {' '.join(self.rhs)}"


@dataclass(frozen=True)
class DerivationState:
    symbols: tuple[str, ...]
    in_lambda: bool = False
    steps: int = 0
    history: tuple[int, ...] = ()  # production ids applied so far


def _call(op: str, *args: str) -> tuple[str, ...]:
    return ("(", op, *args, ")")


def default_rules() -> list[tuple[str, tuple[str, ...]]]:
    rules: list[tuple[str, tuple[str, ...]]] = [("A", (s,)) for s in ("B", "N", "C", "O", "L")]
    rules += [("B", ("TRUE",)), ("B", ("FALSE",))]
    rules += [("B", _call(op, "N", "N")) for op in (">", "<")]
    rules += [("B", _call("==", s, s)) for s in ("N", "O", "C", "L")]
    rules += [("B", _call("and", "B", "B")), ("B", _call("or", "B", "B")), ("B", _call("not", "B"))]
    rules += [("B", _call("any", "SB")), ("B", _call("all", "SB"))]
    rules += [("N", (d,)) for d in dsl.DIGITS]
    rules += [("N", _call("size", "C")), ("N", _call("setSize", "S")), ("N", _call("+", "N", "N"))]
    rules += [("C", (c,)) for c in dsl.COLOR_LITERALS] + [("C", _call("color", "L"))]
    rules += [("O", (o,)) for o in dsl.ORIENT_LITERALS] + [("O", _call("orient", "C"))]
    rules += [("L", (loc,)) for loc in dsl.LOC_LITERALS]
    rules += [("L", _call("topleft", "S")), ("L", _call("bottomright", "S")), ("L", (dsl.VAR,))]
    rules += [("S", _call("coloredTiles", "C")), ("S", _call("union", "S", "S"))]
    rules += [("SB", _call("map", "(", "lambda", dsl.VAR, "B", ")", "S"))]
    return rules


class Grammar:
    def __init__(self, rules: Iterable[tuple[str, Sequence[str]]], nonterminals: Sequence[str] = NONTERMINALS,
                 start: str = START):
        self.nonterminals = tuple(nonterminals)
        self.start = start
        self.productions = tuple(Production(i, lhs, tuple(rhs)) for i, (lhs, rhs) in enumerate(rules))
        for p in self.productions:
            if p.lhs not in self.nonterminals or not p.rhs:
                raise ValueError(f"bad production {p}")
        self.n_rules = len(self.productions)
        self._nt_set = frozenset(self.nonterminals)
        self._lookup = {(p.lhs, p.rhs): p for p in self.productions}
        self.lambda_only = np.array([p.rhs == (dsl.VAR,) for p in self.productions])
        # rules that open a lambda, directly or through SB
        self.outside_only = np.array(["lambda" in p.rhs or "SB" in p.rhs for p in self.productions])
        self._lhs_masks = {nt: np.array([p.lhs == nt for p in self.productions]) for nt in self.nonterminals}
        self.min_tokens = self._min_tokens()
        self.rule_min_tokens = np.array([self._rhs_tokens(p.rhs) for p in self.productions])

    def _rhs_tokens(self, rhs: Sequence[str]) -> float:
        return sum(self.min_tokens.get(s, 1) if s in self._nt_set else 1 for s in rhs)

    def _min_tokens(self) -> dict[str, float]:
        best = {nt: float("inf") for nt in self.nonterminals}
        changed = True
        while changed:
            changed = False
            for p in self.productions:
                cost = sum(best[s] if s in self._nt_set else 1 for s in p.rhs)
                if cost < best[p.lhs]:
                    best[p.lhs] = cost
                    changed = True
        return best

    @functools.cached_property
    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    def dump(self) -> str:
        return "".join(f"{p}\n" for p in self.productions)

    def is_nonterminal(self, symbol: str) -> bool:
        return symbol in self._nt_set

    # -- states ---------------------------------------------------------------

    def leftmost(self, state: DerivationState) -> Optional[int]:
        for i, s in enumerate(state.symbols):
            if s in self._nt_set:
                return i
        return None

    def is_complete(self, state: DerivationState) -> bool:
        return self.leftmost(state) is None

    def _scope(self, symbols: Sequence[str], upto: Optional[int]) -> bool:
        if upto is None:
            return False
        stack: list[bool] = []
        for s in symbols[:upto]:
            if s == "(":
                stack.append(False)
            elif s == ")":
                if stack:
                    stack.pop()
            elif s == "lambda" and stack:
                stack[-1] = True
        return any(stack)

    def initial_state(self, start: Union[str, Sequence[str], None] = None) -> DerivationState:
        """A state from a nonterminal (``"B"``) or a seeded string (``"(and B B)"``)."""
        start = self.start if start is None else start
        if isinstance(start, str):
            symbols = tuple(tok for tok, _ in dsl.tokenize(start))
        else:
            symbols = tuple(start)
        if not symbols:
            raise ValueError("empty start state")
        return DerivationState(symbols, self._scope(symbols, self._leftmost_of(symbols)), 0)

    def _leftmost_of(self, symbols: Sequence[str]) -> Optional[int]:
        return next((i for i, s in enumerate(symbols) if s in self._nt_set), None)

    def applicable(self, state: DerivationState) -> np.ndarray:
        i = self.leftmost(state)
        if i is None:
            raise CompleteState("no nonterminal left to expand")
        mask = self._lhs_masks[state.symbols[i]].copy()
        if state.in_lambda:
            mask &= ~self.outside_only
        else:
            mask &= ~self.lambda_only
        return mask

    def apply(self, state: DerivationState, p: Union[Production, int]) -> DerivationState:
        if not isinstance(p, Production):
            p = self.productions[p]
        if not self.applicable(state)[p.id]:
            raise IllegalAction(f"rule {p} is not allowed here")
        i = self.leftmost(state)
        symbols = state.symbols[:i] + p.rhs + state.symbols[i + 1:]
        return DerivationState(symbols, self._scope(symbols, self._leftmost_of(symbols)), state.steps + 1,
                               state.history + (p.id,))

    def lower_bound_tokens(self, state: DerivationState) -> float:
        """Fewest tokens any completion of ``state`` can print to."""
        return sum(self.min_tokens[s] if s in self._nt_set else 1 for s in state.symbols)

    def depth(self, state: DerivationState) -> int:
        """Parenthesis depth at the leftmost nonterminal."""
        i = self.leftmost(state)
        prefix = state.symbols[:i]
        return prefix.count("(") - prefix.count(")")

    def program(self, state: DerivationState) -> Expr:
        if not self.is_complete(state):
            raise ValueError("derivation is not complete")
        return dsl.parse_tokens([(s, i) for i, s in enumerate(state.symbols)])

    def text(self, state: DerivationState) -> str:
        return dsl.print_program(self.program(state))

    def replay(self, rules: Iterable[Union[Production, int]], start=None) -> DerivationState:
        state = self.initial_state(start)
        for p in rules:
            state = self.apply(state, p)
        return state

    # -- programs -> derivations -------------------------------------------------

    def derivation_of(self, e: Expr, start: str = START) -> list[Production]:
        """The leftmost derivation of ``e`` from a single nonterminal."""
        out: list[Production] = []
        self._derive(e, start, False, out)
        return out

    def _rule(self, lhs: str, rhs: tuple[str, ...]) -> Production:
        try:
            return self._lookup[(lhs, rhs)]
        except KeyError:
            raise IllegalAction(f"no production {lhs} -> {' '.join(rhs)}") from None

    def _derive(self, e: Expr, lhs: str, in_lambda: bool, out: list[Production]) -> None:
        t = dsl._typecheck(e, in_lambda, ())
        sym = TYPE_SYMBOL[t]
        if lhs != sym:
            out.append(self._rule(lhs, (sym,)))
            lhs = sym
        if isinstance(e, Atom):
            out.append(self._rule(lhs, (e.token,)))
            return
        if isinstance(e, Lambda):
            raise IllegalAction("bare lambda has no derivation")
        if e.op == "map":
            fn, items = e.args
            out.append(self._rule(lhs, _call("map", "(", "lambda", fn.var, "B", ")", "S")))
            self._derive(fn.body, "B", True, out)
            self._derive(items, "S", in_lambda, out)
            return
        arg_syms = tuple(TYPE_SYMBOL[dsl._typecheck(a, in_lambda, ())] for a in e.args)
        out.append(self._rule(lhs, _call(e.op, *arg_syms)))
        for a, s in zip(e.args, arg_syms):
            self._derive(a, s, in_lambda, out)

    # -- random programs -----------------------------------------------------

    def sample_random(self, rng: np.random.Generator, max_tokens: int = 80, depth_bound: int = 4,
                      start=None) -> Union[Expr, Overflow]:
        """Uniform over allowed rules; past ``depth_bound`` only the cheapest rules stay eligible."""
        state = self.initial_state(start)
        while not self.is_complete(state):
            if self.lower_bound_tokens(state) > max_tokens:
                return OVERFLOW
            ids = np.flatnonzero(self.applicable(state))
            if self.depth(state) >= depth_bound:
                costs = self.rule_min_tokens[ids]
                ids = ids[costs == costs.min()]
            state = self.apply(state, int(ids[rng.integers(len(ids))]))
        if self.lower_bound_tokens(state) > max_tokens:
            return OVERFLOW
        return self.program(state)


@functools.cache
def default_grammar() -> Grammar:
    return Grammar(default_rules())


def rule_table() -> list[Production]:
    return list(default_grammar().productions)


def applicable(state: DerivationState) -> np.ndarray:
    return default_grammar().applicable(state)


def apply_rule(state: DerivationState, p: Union[Production, int]) -> DerivationState:
    return default_grammar().apply(state, p)


def derivation_of(e: Expr) -> list[Production]:
    return default_grammar().derivation_of(e)


def sample_random(rng: np.random.Generator, max_tokens: int = 80, depth_bound: int = 4):
    return default_grammar().sample_random(rng, max_tokens, depth_bound)
