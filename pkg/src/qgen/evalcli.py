"""Generation metrics, log-likelihood reports, and the ``qgen`` command line."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import datagen, dsl, policy
from .board import Board, BoardFormatError, BoardOpts, EmptySpace, board_entropy, hypothesis_space, sample_board
from .datagen import CorpusEntry, FormatError
from .eig import EigScorer, UnsupportedAnswerType
from .grammar import CompleteState, IllegalAction, default_grammar
from .policy import CheckpointError, GrammarMismatch, PolicyConfig, PolicyParams
from .train import NonFinite, TrainConfig, rollout_many, train_rl, train_supervised

log = logging.getLogger(__name__)

DUMP_MAGIC = "qgen-dump v1"
METRIC_FIELDS = ("avg_eig", "frac_eig_gt_095", "frac_eig_gt_0", "n_unique", "n_unique_novel",
                 "avg_length_tokens", "n_invalid")


class TooFewBoards(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    avg_eig: float
    frac_eig_gt_095: float
    frac_eig_gt_0: float
    n_unique: int
    n_unique_novel: int
    avg_length_tokens: float
    n_invalid: int


@dataclass(frozen=True)
class DumpRecord:
    board: Board
    program: Optional[str]  # None when invalid
    eig: Optional[float]
    steps: int

    @property
    def valid(self) -> bool:
        return self.program is not None

    def to_record(self) -> str:
        return "\t".join([
            f"board={self.board.to_compact()}",
            f"program={self.program or ''}",
            f"eig={'' if self.eig is None else repr(self.eig)}",
            f"steps={self.steps}",
            f"valid={int(self.valid)}",
        ])


def generation_dump(params: PolicyParams, boards: Sequence[Board], rng: np.random.Generator,
                    start: str = "A", max_tokens: int = 80) -> list[DumpRecord]:
    """One sampled question per board."""
    cfg = TrainConfig(max_tokens=max_tokens, start=start, step_penalty=0.0)
    return [
        DumpRecord(ep.board, ep.text, ep.eig.eig_bits if ep.valid else None, ep.steps)
        for ep in rollout_many(params, boards, rng, cfg)
    ]


def write_dump(records: Iterable[DumpRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(DUMP_MAGIC + "\n")
        for r in records:
            f.write(r.to_record() + "\n")


def read_dump(path: Union[str, Path]) -> list[DumpRecord]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != DUMP_MAGIC:
        raise FormatError("missing dump header", 1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.partition("=") for p in line.split("\t")]
        keys = tuple(k for k, _, _ in parts)
        if keys != ("board", "program", "eig", "steps", "valid"):
            raise FormatError("expected fields board, program, eig, steps, valid", lineno)
        v = {k: val for k, _, val in parts}
        try:
            valid = {"1": True, "0": False}[v["valid"]]
            board = Board.from_compact(v["board"])
            steps = int(v["steps"])
            eig = float(v["eig"]) if valid else None
        except (KeyError, ValueError) as exc:
            raise FormatError(str(exc), lineno) from None
        if valid == (v["program"] == ""):
            raise FormatError("valid flag disagrees with program", lineno)
        out.append(DumpRecord(board, v["program"] if valid else None, eig, steps))
    return out


def metrics_from_dump(records: Sequence[DumpRecord], reference: Iterable[str] = ()) -> MetricsRow:
    """EIG averages and fractions count invalid questions as EIG 0; lengths cover valid ones only."""
    if not records:
        raise ValueError("no records")
    reference = set(reference)
    eigs = np.array([r.eig if r.valid else 0.0 for r in records])
    valid = [r for r in records if r.valid]
    unique = {r.program for r in valid}
    lengths = [dsl.token_count(dsl.parse_program(r.program)) for r in valid]
    return MetricsRow(
        avg_eig=float(eigs.mean()),
        frac_eig_gt_095=float((eigs > 0.95).mean()),
        frac_eig_gt_0=float((eigs > 0).mean()),
        n_unique=len(unique),
        n_unique_novel=len(unique - reference),
        avg_length_tokens=float(np.mean(lengths)) if lengths else 0.0,
        n_invalid=len(records) - len(valid),
    )


def metrics(params: PolicyParams, boards: Sequence[Board], reference_corpus: Iterable[CorpusEntry] = (),
            rng: Optional[np.random.Generator] = None, start: str = "A") -> MetricsRow:
    if not boards:
        raise ValueError("boards must be nonempty")
    rng = rng if rng is not None else np.random.default_rng(0)
    reference = {e.program for e in reference_corpus}
    return metrics_from_dump(generation_dump(params, boards, rng, start), reference)


def format_report(rows: dict[str, MetricsRow]) -> str:
    header = ["model", *METRIC_FIELDS]
    lines = ["\t".join(header)]
    for name, row in rows.items():
        vals = []
        for f in METRIC_FIELDS:
            v = getattr(row, f)
            vals.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        lines.append("\t".join([name, *vals]))
    return "\n".join(lines) + "\n"


# -- likelihoods --------------------------------------------------------------


@dataclass
class LoglikResult:
    values: list[Optional[float]]
    errors: list[Optional[str]]

    @property
    def total(self) -> float:
        return float(sum(v for v in self.values if v is not None))


def loglikelihood(params: PolicyParams, board: Board, programs: Sequence[str]) -> LoglikResult:
    grammar = params.grammar
    values: list[Optional[float]] = []
    errors: list[Optional[str]] = []
    for text in programs:
        try:
            rules = grammar.derivation_of(dsl.parse_program(text))
            values.append(policy.log_prob(params, board, rules))
            errors.append(None)
        except (IllegalAction, dsl.ParseError, dsl.DslTypeError) as exc:
            values.append(None)
            errors.append(f"{type(exc).__name__}: {exc}")
    return LoglikResult(values, errors)


def uniform_policy(grammar=None, config: Optional[PolicyConfig] = None) -> PolicyParams:
    """All-zero weights: uniform over the allowed rules at every step."""
    p = policy.init(config or PolicyConfig(), np.random.default_rng(0), grammar)
    for a in p.arrays():
        a[...] = 0.0
    return p


def entropy_groups(boards: Sequence[Board], m: int = 5) -> tuple[list[Board], list[Board]]:
    """Top-m and bottom-m boards by hypothesis-space entropy (ties by board text)."""
    if len(boards) < 2 * m:
        raise TooFewBoards(f"need at least {2 * m} boards, got {len(boards)}")
    ranked = sorted(boards, key=lambda b: (-board_entropy(b), b.to_text()))
    return ranked[:m], ranked[-m:]


def frequency_table(params: PolicyParams, boards: Sequence[Board], n_samples_per_board: int = 1,
                    rng: Optional[np.random.Generator] = None, start: str = "A") -> list[tuple[str, float]]:
    rng = rng if rng is not None else np.random.default_rng(0)
    repeated = [b for b in boards for _ in range(n_samples_per_board)]
    cfg = TrainConfig(start=start, step_penalty=0.0)
    texts = [ep.text for ep in rollout_many(params, repeated, rng, cfg)]
    total = len(texts)
    counts = Counter(t for t in texts if t is not None)
    return sorted(((t, c / total) for t, c in counts.items()), key=lambda tc: (-tc[1], tc[0]))


def leave_one_out(pretrained: PolicyParams, questions: dict[Board, Sequence[str]], cfg: TrainConfig,
                  m: int = 5) -> dict:
    """Fine-tune on every board but one, score the held-out board's questions; repeat per board.

    Returns per-board summed log-likelihoods, their mean, and the means over the
    high- and low-entropy groups.
    """
    grammar = pretrained.grammar
    boards = list(questions)
    entries = {
        b: [CorpusEntry(b, q, 0.0, tuple(p.id for p in grammar.derivation_of(dsl.parse_program(q))))
            for q in qs]
        for b, qs in questions.items()
    }
    per_board = {}
    for held in boards:
        train = [e for b in boards if b != held for e in entries[b]]
        tuned = train_supervised(train, pretrained, cfg)
        per_board[held] = loglikelihood(tuned, held, list(questions[held])).total
    out = {"per_board": per_board, "ll_all": float(np.mean(list(per_board.values())))}
    if len(boards) >= 2 * m:
        high, low = entropy_groups(boards, m)
        out["ll_high"] = float(np.mean([per_board[b] for b in high]))
        out["ll_low"] = float(np.mean([per_board[b] for b in low]))
    return out


# -- board list files ---------------------------------------------------------


def write_boards(boards: Iterable[Board], path: Union[str, Path]) -> None:
    Path(path).write_text("\n".join(b.to_text() for b in boards), encoding="utf-8")


def read_boards(path: Union[str, Path]) -> list[Board]:
    """Boards in the six-line text format, separated by blank lines."""
    text = Path(path).read_text(encoding="utf-8")
    blocks = [blk for blk in text.split("\n\n") if blk.strip()]
    return [Board.from_text(blk.strip("\n") + "\n") for blk in blocks]


def load_board(arg: str) -> Board:
    """A board file path, or the compact ``row/row/...`` form."""
    path = Path(arg)
    if path.exists():
        return Board.from_text(path.read_text(encoding="utf-8"))
    if "/" in arg and not path.parent.exists():
        return Board.from_compact(arg)
    raise BoardFormatError(f"no board file {arg!r}")


# -- config -------------------------------------------------------------------


def read_config(path: Union[str, Path]) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError("expected key = value", lineno)
        out[key.strip()] = value.strip()
    return out


def _coerce(cls, values: dict[str, str]):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in values.items():
        if k not in fields:
            continue
        t = str(fields[k])
        if v.lower() == "none" and "Optional" in t:
            kwargs[k] = None
        elif "int" in t:
            kwargs[k] = int(v)
        elif "float" in t:
            kwargs[k] = float(v)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def build_configs(args) -> tuple[TrainConfig, PolicyConfig]:
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config(args.config))
    known = {f.name for f in dataclasses.fields(TrainConfig)} | {f.name for f in dataclasses.fields(PolicyConfig)}
    unknown = set(values) - known
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(sorted(unknown))}", 0)
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return _coerce(TrainConfig, values), _coerce(PolicyConfig, values)


# -- CLI ----------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _params(args, pcfg: PolicyConfig) -> PolicyParams:
    if getattr(args, "checkpoint", None):
        return policy.load(args.checkpoint)
    return policy.init(pcfg, np.random.default_rng(pcfg.seed))


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_parse(args, tcfg, pcfg) -> None:
    e = dsl.parse_program(args.program)
    print(dsl.print_program(e))
    print(dsl.typecheck(e).value)


def cmd_grammar_dump(args, tcfg, pcfg) -> None:
    g = default_grammar()
    _emit(args, f"# grammar {g.hash}\n" + g.dump())


def cmd_enumerate(args, tcfg, pcfg) -> None:
    b = load_board(args.board)
    space = hypothesis_space(b)
    print(f"hypotheses\t{len(space)}")
    print(f"entropy_bits\t{math.log2(len(space))!r}")


def cmd_eig(args, tcfg, pcfg) -> None:
    b = load_board(args.board)
    e = dsl.parse_program(args.program)
    result = EigScorer(hypothesis_space(b))(e)
    print(repr(result.eig_bits))


def cmd_sample_boards(args, tcfg, pcfg) -> None:
    rng = np.random.default_rng(tcfg.seed)
    cap = None if args.no_cap else tcfg.max_space_size
    opts = BoardOpts(max_space_size=cap, max_revealed=tcfg.max_revealed)
    boards = [sample_board(rng, opts)[0] for _ in range(args.n)]
    _emit(args, "\n".join(b.to_text() for b in boards))


def cmd_gen_corpus(args, tcfg, pcfg) -> None:
    if not args.out:
        raise UsageError("gen-corpus requires --out")
    rng = np.random.default_rng(tcfg.seed)
    boards = read_boards(args.boards) if args.boards else None
    entries = datagen.gen_corpus(args.n_boards, args.k, args.pool_size, args.beta, rng, tcfg.board_opts(), boards)
    datagen.write_corpus(entries, args.out)
    print(f"wrote {len(entries)} entries to {args.out}")


def cmd_train_rl(args, tcfg, pcfg) -> None:
    if not args.out:
        raise UsageError("train-rl requires --out")
    params = policy.load(args.init) if args.init else None
    params, records = train_rl(tcfg, params, log_path=args.log, checkpoint_path=args.out, policy_config=pcfg)
    last = records[-1] if records else {}
    print(json.dumps({"iterations": len(records), **{k: last.get(k) for k in ("mean_reward", "mean_eig")}}))


def cmd_train_supervised(args, tcfg, pcfg) -> None:
    if not args.out:
        raise UsageError("train-supervised requires --out")
    corpus = datagen.read_corpus(args.corpus)
    params = policy.load(args.init) if args.init else policy.init(pcfg, np.random.default_rng(pcfg.seed))
    history: list[float] = []
    params = train_supervised(corpus, params, tcfg, history)
    policy.save(params, args.out)
    print(json.dumps({"nll": history}))


def cmd_generate(args, tcfg, pcfg) -> None:
    from .train import generate

    params = _params(args, pcfg)
    b = load_board(args.board)
    rng = np.random.default_rng(tcfg.seed)
    lines = []
    for _ in range(args.n):
        e = generate(params, b, args.mode, args.start, rng, tcfg.max_tokens)
        if isinstance(e, dsl.Expr.__args__):
            lines.append(f"{dsl.print_program(e)}\t{dsl.typecheck(e).value}")
        else:
            lines.append("INVALID")
    _emit(args, "\n".join(lines) + "\n")


def cmd_evaluate(args, tcfg, pcfg) -> None:
    params = _params(args, pcfg)
    rng = np.random.default_rng(tcfg.seed)
    if args.boards:
        boards = read_boards(args.boards)
    else:
        cap = None if args.no_cap else tcfg.max_space_size
        opts = BoardOpts(max_space_size=cap, max_revealed=tcfg.max_revealed)
        boards = [sample_board(rng, opts)[0] for _ in range(args.n_boards)]
    reference = datagen.read_corpus(args.reference) if args.reference else []
    records = generation_dump(params, boards, rng, args.start, tcfg.max_tokens)
    if args.dump:
        write_dump(records, args.dump)
    row = metrics_from_dump(records, {e.program for e in reference})
    _emit(args, format_report({args.name: row}))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="flat key = value file; flags override it")
    common.add_argument("--out", default=None)
    parser = _Parser(prog="qgen", description="Battleship question synthesis", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.set_defaults(fn=fn)
        return p

    p = add("parse", cmd_parse)
    p.add_argument("program")
    add("grammar-dump", cmd_grammar_dump)
    p = add("enumerate", cmd_enumerate)
    p.add_argument("board")
    p = add("eig", cmd_eig)
    p.add_argument("board")
    p.add_argument("program")
    p = add("sample-boards", cmd_sample_boards)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--no-cap", action="store_true")
    p.add_argument("--max-revealed", dest="max_revealed", type=int)
    p = add("gen-corpus", cmd_gen_corpus)
    p.add_argument("--n-boards", type=int, default=2000)
    p.add_argument("--boards", default=None, help="board list file instead of sampling")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--pool-size", type=int, default=2000)
    p.add_argument("--beta", type=float, default=1.0)
    p = add("train-rl", cmd_train_rl)
    p.add_argument("--init", default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--step-penalty", dest="step_penalty", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float)
    p.add_argument("--lr", type=float)
    p = add("train-supervised", cmd_train_supervised)
    p.add_argument("--corpus", required=True)
    p.add_argument("--init", default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p = add("generate", cmd_generate)
    p.add_argument("board")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--start", default="A")
    p.add_argument("--mode", choices=("greedy", "sample"), default="sample")
    p.add_argument("--n", type=int, default=1)
    p = add("evaluate", cmd_evaluate)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--boards", default=None)
    p.add_argument("--n-boards", type=int, default=1000)
    p.add_argument("--no-cap", action="store_true")
    p.add_argument("--reference", default=None, help="corpus whose programs count as not novel")
    p.add_argument("--dump", default=None)
    p.add_argument("--start", default="A")
    p.add_argument("--name", default="policy")
    return parser


DATA_ERRORS = (OSError, BoardFormatError, FormatError, GrammarMismatch, CheckpointError, EmptySpace,
               dsl.ParseError, dsl.DslTypeError, UnsupportedAnswerType, IllegalAction, CompleteState,
               datagen.PoolTooSmall, ValueError)


def cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError("a command is required")
        tcfg, pcfg = build_configs(args)
        args.fn(args, tcfg, pcfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (NonFinite, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(cli())
