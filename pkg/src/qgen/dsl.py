"""The typed question language.

Programs are s-expressions such as ``(> (size Blue) 3)``. Two evaluators
share the semantics: :func:`evaluate` walks the tree for one hypothesis, and
:class:`SpaceEvaluator` computes a program over a whole hypothesis space with
numpy arrays (one element per hypothesis), caching shared subterms.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .board import FULL_MASK, N_CELLS, SHIP_COLORS, Color, Coord, Hypothesis, HypothesisSpace, Orient


class TypeTag(Enum):
    Bool = "Bool"
    Num = "Num"
    Color = "Color"
    Orient = "Orient"
    Loc = "Loc"
    LocSet = "LocSet"
    BoolSet = "BoolSet"


class ParseError(SyntaxError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class DslTypeError(TypeError):
    def __init__(self, msg: str, path: tuple[int, ...] = ()):
        super().__init__(f"{msg} (at node {'/'.join(map(str, path)) or 'root'})")
        self.path = path


class ScopeError(DslTypeError):
    pass


class EmptySetError(ValueError):
    pass


class UnsupportedAnswerType(ValueError):
    pass


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    token: str

    def __str__(self):
        return self.token


@dataclass(frozen=True)
class Lambda:
    var: str
    body: "Expr"

    def __str__(self):
        return f"(lambda {self.var} {self.body})"


@dataclass(frozen=True)
class Call:
    op: str
    args: tuple["Expr", ...]

    def __str__(self):
        return "(" + " ".join([self.op, *map(str, self.args)]) + ")"


Expr = Union[Atom, Lambda, Call]

VAR = "x"
BOOL_LITERALS = ("TRUE", "FALSE")
DIGITS = tuple(str(d) for d in range(10))
COLOR_LITERALS = ("Blue", "Red", "Purple", "Water")
ORIENT_LITERALS = ("H", "V")
LOC_LITERALS = tuple(f"{r}-{c}" for r in range(1, 7) for c in range(1, 7))

T = TypeTag
# op -> (argument types, result type); `==` is handled separately.
SIGNATURES: dict[str, tuple[tuple[TypeTag, ...], TypeTag]] = {
    "size": ((T.Color,), T.Num),
    "orient": ((T.Color,), T.Orient),
    "coloredTiles": ((T.Color,), T.LocSet),
    "color": ((T.Loc,), T.Color),
    "topleft": ((T.LocSet,), T.Loc),
    "bottomright": ((T.LocSet,), T.Loc),
    "setSize": ((T.LocSet,), T.Num),
    "union": ((T.LocSet, T.LocSet), T.LocSet),
    "+": ((T.Num, T.Num), T.Num),
    ">": ((T.Num, T.Num), T.Bool),
    "<": ((T.Num, T.Num), T.Bool),
    "and": ((T.Bool, T.Bool), T.Bool),
    "or": ((T.Bool, T.Bool), T.Bool),
    "not": ((T.Bool,), T.Bool),
    "any": ((T.BoolSet,), T.Bool),
    "all": ((T.BoolSet,), T.Bool),
}
EQ_TYPES = (T.Num, T.Orient, T.Color, T.Loc)
ARITY = {op: len(sig[0]) for op, sig in SIGNATURES.items()} | {"==": 2, "map": 2}
ANSWER_TYPES = (T.Bool, T.Num, T.Color, T.Orient, T.Loc)


def atom_type(token: str) -> Optional[TypeTag]:
    if token in BOOL_LITERALS:
        return T.Bool
    if token in DIGITS:
        return T.Num
    if token in COLOR_LITERALS:
        return T.Color
    if token in ORIENT_LITERALS:
        return T.Orient
    if token in LOC_LITERALS or token == VAR:
        return T.Loc
    return None


# -- parsing and printing -----------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")


def tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        tok = m.group(1) or m.group(2) or m.group(3)
        tokens.append((tok, m.start(m.lastindex)))
        pos = m.end()
    return tokens


def parse_tokens(tokens: list[tuple[str, int]]) -> Expr:
    pos = 0

    def peek_pos() -> int:
        return tokens[pos][1] if pos < len(tokens) else (tokens[-1][1] + 1 if tokens else 0)

    def expr(allow_lambda: bool = False) -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input", peek_pos())
        tok, at = tokens[pos]
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'", at)
        if tok != "(":
            if atom_type(tok) is None:
                raise ParseError(f"unknown atom {tok!r}", at)
            return Atom(tok)
        if pos >= len(tokens):
            raise ParseError("unexpected end of input", peek_pos())
        op, op_at = tokens[pos]
        pos += 1
        if op == "lambda":
            if not allow_lambda:
                raise ParseError("lambda is only allowed as the first argument of map", op_at)
            if pos >= len(tokens) or tokens[pos][0] != VAR:
                raise ParseError(f"lambda must bind {VAR!r}", peek_pos())
            pos += 1
            node: Expr = Lambda(VAR, expr())
        elif op in ARITY:
            args = []
            for i in range(ARITY[op]):
                if pos < len(tokens) and tokens[pos][0] == ")":
                    raise ParseError(f"{op} expects {ARITY[op]} arguments", tokens[pos][1])
                args.append(expr(allow_lambda=(op == "map" and i == 0)))
            if op == "map" and not isinstance(args[0], Lambda):
                raise ParseError("map expects a lambda as its first argument", op_at)
            node = Call(op, tuple(args))
        else:
            raise ParseError(f"unknown operator {op!r}", op_at)
        if pos >= len(tokens):
            raise ParseError("missing ')'", peek_pos())
        if tokens[pos][0] != ")":
            raise ParseError(f"too many arguments to {op}", tokens[pos][1])
        pos += 1
        return node

    result = expr()
    if pos != len(tokens):
        raise ParseError("trailing input", tokens[pos][1])
    return result


def parse_program(text: str) -> Expr:
    tokens = tokenize(text)
    if not tokens:
        raise ParseError("empty program", 0)
    return parse_tokens(tokens)


def print_program(e: Expr) -> str:
    return str(e)


@functools.lru_cache(maxsize=1 << 16)
def token_count(e: Expr) -> int:
    """Parentheses and atoms of the printed form, one token each."""
    if isinstance(e, Atom):
        return 1
    if isinstance(e, Lambda):
        return 4 + token_count(e.body)
    return 3 + sum(token_count(a) for a in e.args)


# -- types --------------------------------------------------------------------


def typecheck(e: Expr) -> TypeTag:
    return _typecheck(e, False, ())


@functools.lru_cache(maxsize=1 << 16)
def _typecheck(e: Expr, in_lambda: bool, path: tuple[int, ...]) -> TypeTag:
    if isinstance(e, Atom):
        if e.token == VAR and not in_lambda:
            raise ScopeError(f"variable {VAR} used outside a lambda", path)
        t = atom_type(e.token)
        if t is None:
            raise DslTypeError(f"unknown atom {e.token!r}", path)
        return t
    if isinstance(e, Lambda):
        raise DslTypeError("lambda outside map", path)
    if e.op == "map":
        fn, items = e.args
        if not isinstance(fn, Lambda):
            raise DslTypeError("map expects a lambda", path + (0,))
        if in_lambda:
            raise ScopeError("nested lambda", path + (0,))
        if _typecheck(fn.body, True, path + (0, 0)) != T.Bool:
            raise DslTypeError("lambda body must be Bool", path + (0, 0))
        if _typecheck(items, in_lambda, path + (1,)) != T.LocSet:
            raise DslTypeError("map expects a LocSet", path + (1,))
        return T.BoolSet
    arg_types = [_typecheck(a, in_lambda, path + (i,)) for i, a in enumerate(e.args)]
    if e.op == "==":
        a, b = arg_types
        if a != b or a not in EQ_TYPES:
            raise DslTypeError(f"== cannot compare {a.value} with {b.value}", path)
        return T.Bool
    if e.op not in SIGNATURES:
        raise DslTypeError(f"unknown operator {e.op!r}", path)
    expected, result = SIGNATURES[e.op]
    if len(expected) != len(arg_types):
        raise DslTypeError(f"{e.op} expects {len(expected)} arguments", path)
    for i, (want, got) in enumerate(zip(expected, arg_types)):
        if want != got:
            raise DslTypeError(f"{e.op} argument {i} must be {want.value}, got {got.value}", path + (i,))
    return result


def is_well_typed(e: Expr) -> bool:
    try:
        typecheck(e)
    except DslTypeError:
        return False
    return True


def answer_domain(t: TypeTag) -> frozenset:
    if t == T.Bool:
        return frozenset({True, False})
    if t == T.Orient:
        return frozenset(Orient)
    if t == T.Color:
        return frozenset(Color)
    if t == T.Loc:
        return frozenset(Coord.from_index(i) for i in range(N_CELLS))
    if t == T.Num:
        return frozenset(range(13))
    raise UnsupportedAnswerType(f"{t.value} is not an answer type")


# -- single-hypothesis evaluation ----------------------------------------------


@dataclass(frozen=True)
class LocSet:
    mask: int

    def locations(self) -> list[Coord]:
        return [Coord.from_index(i) for i in range(N_CELLS) if self.mask >> i & 1]


Value = Union[bool, int, Color, Orient, Coord, LocSet, tuple]


def _ship_mask(h: Hypothesis, c: Color) -> int:
    if c == Color.Water:
        return FULL_MASK & ~(h.blue.tiles | h.red.tiles | h.purple.tiles)
    return h.ship(c).tiles


def _literal(token: str) -> Value:
    if token in BOOL_LITERALS:
        return token == "TRUE"
    if token in DIGITS:
        return int(token)
    if token in COLOR_LITERALS:
        return Color[token]
    if token in ORIENT_LITERALS:
        return Orient[token]
    r, c = token.split("-")
    return Coord(int(r), int(c))


def evaluate(e: Expr, h: Hypothesis, x: Optional[Coord] = None) -> Value:
    """Evaluate ``e`` against one hypothesis.

    Water is treated as a pseudo-ship with no size (0), orientation H, and the
    water cells as its tiles, so every well-typed program is total.
    """
    if isinstance(e, Atom):
        if e.token == VAR:
            if x is None:
                raise ScopeError(f"variable {VAR} used outside a lambda")
            return x
        return _literal(e.token)
    if isinstance(e, Lambda):
        raise DslTypeError("lambda outside map")
    op = e.op
    if op == "map":
        fn, items = e.args
        locs = evaluate(items, h, x).locations()
        return tuple(bool(evaluate(fn.body, h, loc)) for loc in locs)
    args = [evaluate(a, h, x) for a in e.args]
    if op == "size":
        return 0 if args[0] == Color.Water else h.ship(args[0]).size
    if op == "orient":
        return Orient.H if args[0] == Color.Water else h.ship(args[0]).orientation
    if op == "coloredTiles":
        return LocSet(_ship_mask(h, args[0]))
    if op == "color":
        for ship in h.ships:
            if ship.tiles >> args[0].index & 1:
                return ship.color
        return Color.Water
    if op in ("topleft", "bottomright"):
        locs = args[0].locations()
        if not locs:
            raise EmptySetError(f"{op} of an empty set")
        return min(locs) if op == "topleft" else max(locs)
    if op == "setSize":
        return bin(args[0].mask).count("1")
    if op == "union":
        return LocSet(args[0].mask | args[1].mask)
    if op == "+":
        return args[0] + args[1]
    if op == ">":
        return args[0] > args[1]
    if op == "<":
        return args[0] < args[1]
    if op == "==":
        return args[0] == args[1]
    if op == "and":
        return args[0] and args[1]
    if op == "or":
        return args[0] or args[1]
    if op == "not":
        return not args[0]
    if op == "any":
        return any(args[0])
    if op == "all":
        return all(args[0])
    raise DslTypeError(f"unknown operator {op!r}")


# -- vectorized evaluation ----------------------------------------------------

_ONE = np.uint64(1)


@functools.lru_cache(maxsize=1 << 16)
def _uses_var(e: Expr) -> bool:
    if isinstance(e, Atom):
        return e.token == VAR
    if isinstance(e, Lambda):
        return False  # binds its own variable
    return any(_uses_var(a) for a in e.args)


def _highest_bit(m: np.ndarray) -> np.ndarray:
    # frexp is exact: masks are below 2**36
    return np.frexp(m.astype(np.float64))[1].astype(np.int64) - 1


def _lowest_bit(m: np.ndarray) -> np.ndarray:
    return _highest_bit(m & (~m + _ONE))


class SpaceEvaluator:
    """Evaluates programs on every hypothesis of a space at once.

    Returned arrays use integer codes: Color by :class:`Color` value, Orient by
    :class:`Orient` value, Loc by cell index. A BoolSet is a pair of masks
    ``(members, members_where_true)``.
    """

    def __init__(self, space: HypothesisSpace, cache_cells: int = 20_000_000):
        self.space = space
        self.n = len(space)
        masks = space.masks
        water = np.uint64(FULL_MASK) & ~(masks[:, 0] | masks[:, 1] | masks[:, 2])
        # column k holds Color value k (0 unused)
        self._tiles = np.stack([water, water, masks[:, 0], masks[:, 1], masks[:, 2]], axis=1)
        zero = np.zeros(self.n, dtype=np.int64)
        self._sizes = np.stack([zero, zero, *space.sizes.T], axis=1)
        self._orients = np.stack([zero, zero, *space.orients.T], axis=1)
        self._rows = np.arange(self.n)
        self._cache: dict = {}
        self._cache_limit = max(64, cache_cells // max(self.n, 1))

    def __call__(self, e: Expr):
        if len(self._cache) > self._cache_limit:
            self._cache.clear()
        return self._eval(e, None)

    def _eval(self, e: Expr, x: Optional[int]):
        key = (e, x if _uses_var(e) else None)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self._compute(e, key[1])
        return hit

    def _compute(self, e: Expr, x: Optional[int]):
        n = self.n
        if isinstance(e, Atom):
            if e.token == VAR:
                if x is None:
                    raise ScopeError(f"variable {VAR} used outside a lambda")
                return np.full(n, x, dtype=np.int64)
            value = _literal(e.token)
            if isinstance(value, bool):
                return np.full(n, value, dtype=bool)
            if isinstance(value, Coord):
                return np.full(n, value.index, dtype=np.int64)
            return np.full(n, int(value), dtype=np.int64)
        if isinstance(e, Lambda):
            raise DslTypeError("lambda outside map")
        op = e.op
        if op == "map":
            fn, items = e.args
            members = self._eval(items, x)
            if not _uses_var(fn.body):
                return members, np.where(self._eval(fn.body, None), members, np.uint64(0))
            true = np.zeros(n, dtype=np.uint64)
            for loc in range(N_CELLS):
                bit = np.uint64(1 << loc)
                inside = (members & bit) != 0
                if inside.any():
                    true |= np.where(inside & self._eval(fn.body, loc), bit, np.uint64(0))
            return members, true
        args = [self._eval(a, x) for a in e.args]
        if op == "size":
            return self._sizes[self._rows, args[0]]
        if op == "orient":
            return self._orients[self._rows, args[0]]
        if op == "coloredTiles":
            return self._tiles[self._rows, args[0]]
        if op == "color":
            bit = _ONE << args[0].astype(np.uint64)
            out = np.full(n, int(Color.Water), dtype=np.int64)
            for col, color in enumerate(SHIP_COLORS):
                out[(self.space.masks[:, col] & bit) != 0] = int(color)
            return out
        if op in ("topleft", "bottomright"):
            if (args[0] == 0).any():
                raise EmptySetError(f"{op} of an empty set")
            return _lowest_bit(args[0]) if op == "topleft" else _highest_bit(args[0])
        if op == "setSize":
            return np.bitwise_count(args[0]).astype(np.int64)
        if op == "union":
            return args[0] | args[1]
        if op == "+":
            return args[0] + args[1]
        if op == ">":
            return args[0] > args[1]
        if op == "<":
            return args[0] < args[1]
        if op == "==":
            return args[0] == args[1]
        if op == "and":
            return args[0] & args[1]
        if op == "or":
            return args[0] | args[1]
        if op == "not":
            return ~args[0]
        if op == "any":
            return args[0][1] != 0
        if op == "all":
            return args[0][1] == args[0][0]
        raise DslTypeError(f"unknown operator {op!r}")


def decode_answer(t: TypeTag, code) -> Value:
    """Map a vectorized answer code back to the value :func:`evaluate` returns."""
    if t == T.Bool:
        return bool(code)
    if t == T.Num:
        return int(code)
    if t == T.Color:
        return Color(int(code))
    if t == T.Orient:
        return Orient(int(code))
    if t == T.Loc:
        return Coord.from_index(int(code))
    raise UnsupportedAnswerType(f"{t.value} is not an answer type")
