"""Rule-selection policy: a two-layer tanh network over board and derivation features.

The network scores every production; a softmax restricted to the productions
the grammar allows gives the action distribution, so disallowed rules get
probability exactly zero and never receive gradient.

Input layout (length ``180 + 2 * n_nonterminals + window * n_rules + 2``):

* board one-hots, cell-major, channels Hidden/Water/Blue/Red/Purple;
* count of each nonterminal in the current string;
* one-hot of the leftmost nonterminal;
* one-hot of each of the last ``window`` applied rules (slot 0 = most recent);
* lambda-scope flag and ``steps / step_scale``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .board import N_CELLS, Board
from .grammar import DerivationState, Grammar, IllegalAction, Production, default_grammar

N_CHANNELS = 5
BOARD_FEATURES = N_CELLS * N_CHANNELS
CHECKPOINT_MAGIC = "qgen-policy v1"


class GrammarMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def featurize(b: Board) -> np.ndarray:
    x = np.zeros((N_CELLS, N_CHANNELS))
    x[np.arange(N_CELLS), b.cells] = 1.0
    return x.reshape(-1)


@dataclass
class PolicyConfig:
    hidden: int = 128
    window: int = 8
    lr: float = 0.05
    seed: int = 0
    init_scale: float = 0.01
    step_scale: float = 20.0


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    config: PolicyConfig
    grammar_hash: str
    grammar: Grammar = dataclasses.field(repr=False, compare=False, default_factory=default_grammar)

    ARRAYS = ("W1", "b1", "W2", "b2")

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.ARRAYS]

    def copy(self) -> "PolicyParams":
        return dataclasses.replace(self, **{k: getattr(self, k).copy() for k in self.ARRAYS},
                                   config=dataclasses.replace(self.config))

    def add_scaled(self, grads: "Grads", scale: float) -> "PolicyParams":
        out = self.copy()
        for k in self.ARRAYS:
            getattr(out, k)[...] += scale * getattr(grads, k)
        return out


@dataclass
class Grads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def input_size(grammar: Grammar, window: int) -> int:
    return BOARD_FEATURES + 2 * len(grammar.nonterminals) + window * grammar.n_rules + 2


def init(config: Optional[PolicyConfig] = None, rng: Optional[np.random.Generator] = None,
         grammar: Optional[Grammar] = None) -> PolicyParams:
    config = config or PolicyConfig()
    grammar = grammar or default_grammar()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    d = input_size(grammar, config.window)
    s = config.init_scale
    return PolicyParams(
        W1=rng.normal(0.0, s, (d, config.hidden)),
        b1=np.zeros(config.hidden),
        W2=rng.normal(0.0, s, (config.hidden, grammar.n_rules)),
        b2=np.zeros(grammar.n_rules),
        config=config,
        grammar_hash=grammar.hash,
        grammar=grammar,
    )


# -- state features -----------------------------------------------------------


def state_sparse(state: DerivationState, grammar: Grammar, config: PolicyConfig) -> tuple[list[int], list[float]]:
    """Nonzero (offset, value) entries of the state part of the input, offsets relative to its start."""
    nts = grammar.nonterminals
    n_nt = len(nts)
    idx: list[int] = []
    val: list[float] = []
    leftmost = None
    for j, nt in enumerate(nts):
        c = state.symbols.count(nt)
        if c:
            idx.append(j)
            val.append(float(c))
    i = grammar.leftmost(state)
    if i is not None:
        leftmost = nts.index(state.symbols[i])
        idx.append(n_nt + leftmost)
        val.append(1.0)
    base = 2 * n_nt
    recent = state.history[::-1][:config.window]
    for slot, rule in enumerate(recent):
        idx.append(base + slot * grammar.n_rules + rule)
        val.append(1.0)
    base += config.window * grammar.n_rules
    if state.in_lambda:
        idx.append(base)
        val.append(1.0)
    idx.append(base + 1)
    val.append(state.steps / config.step_scale)
    return idx, val


def encode_state(state: DerivationState, grammar: Grammar, config: PolicyConfig) -> np.ndarray:
    out = np.zeros(input_size(grammar, config.window) - BOARD_FEATURES)
    idx, val = state_sparse(state, grammar, config)
    out[idx] = val
    return out


class StepBatch:
    """Decision steps gathered from any number of derivations, for batched forward/backward.

    Steps are appended as Python lists and frozen into padded numpy arrays on
    first use; appending after that re-freezes.
    """

    def __init__(self):
        self.boards: list[np.ndarray] = []
        self.board_row: list[int] = []
        self.state_idx: list[list[int]] = []
        self.state_val: list[list[float]] = []
        self.masks: list[np.ndarray] = []
        self.actions: list[int] = []
        self.weights: list[float] = []
        self._frozen: Optional[dict] = None

    def add_board(self, b: Board) -> int:
        self.boards.append(featurize(b))
        self._frozen = None
        return len(self.boards) - 1

    def add_step(self, board_row: int, state: DerivationState, mask: np.ndarray, action: int, weight: float,
                 grammar: Grammar, config: PolicyConfig) -> None:
        idx, val = state_sparse(state, grammar, config)
        self.board_row.append(board_row)
        self.state_idx.append(idx)
        self.state_val.append(val)
        self.masks.append(mask)
        self.actions.append(action)
        self.weights.append(weight)
        self._frozen = None

    def __len__(self):
        return len(self.actions)

    def arrays(self) -> dict:
        if self._frozen is None:
            n = len(self)
            width = max((len(i) for i in self.state_idx), default=0)
            idx = np.full((n, width), -1, dtype=np.int64)
            val = np.zeros((n, width))
            for r, (i, v) in enumerate(zip(self.state_idx, self.state_val)):
                idx[r, :len(i)] = i
                val[r, :len(v)] = v
            self._frozen = dict(
                boards=np.asarray(self.boards).reshape(-1, BOARD_FEATURES),
                board_row=np.asarray(self.board_row, dtype=np.int64),
                idx=idx,
                val=val,
                masks=np.asarray(self.masks, dtype=bool),
                actions=np.asarray(self.actions, dtype=np.int64),
                weights=np.asarray(self.weights, dtype=np.float64),
            )
        return self._frozen

    def set_weights(self, weights) -> None:
        self.weights = list(map(float, weights))
        if self._frozen is not None:
            self._frozen["weights"] = np.asarray(self.weights, dtype=np.float64)

    def dense_inputs(self, grammar: Grammar, config: PolicyConfig, rows: Optional[np.ndarray] = None) -> np.ndarray:
        a = self.arrays()
        rows = np.arange(len(self)) if rows is None else rows
        d = input_size(grammar, config.window)
        x = np.zeros((len(rows), d + 1))
        x[:, :BOARD_FEATURES] = a["boards"][a["board_row"][rows]]
        idx = a["idx"][rows]
        # padding (-1) lands in the spare last column, which is dropped
        idx = np.where(idx < 0, d, idx + BOARD_FEATURES)
        np.put_along_axis(x, idx, a["val"][rows], axis=1)
        return x[:, :d]


# -- forward / backward -------------------------------------------------------


def _forward(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(x @ params.W1 + params.b1)
    return hidden, hidden @ params.W2 + params.b2


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the allowed entries only; disallowed entries are exactly 0."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def batch_probs(params: PolicyParams, batch: StepBatch, rows: Optional[np.ndarray] = None) -> np.ndarray:
    rows = np.arange(len(batch)) if rows is None else rows
    x = batch.dense_inputs(params.grammar, params.config, rows)
    _, logits = _forward(params, x)
    return masked_softmax(logits, batch.arrays()["masks"][rows])


def batch_logprob_grad(params: PolicyParams, batch: StepBatch,
                       rows: Optional[np.ndarray] = None) -> tuple[float, Grads, np.ndarray]:
    """Weighted sum of chosen-action log-probabilities and its gradient.

    Returns ``(sum_i w_i log p_i, gradient, per-row log p_i)``.
    """
    rows = np.arange(len(batch)) if rows is None else rows
    a = batch.arrays()
    x = batch.dense_inputs(params.grammar, params.config, rows)
    masks, actions, weights = a["masks"][rows], a["actions"][rows], a["weights"][rows]
    hidden, logits = _forward(params, x)
    probs = masked_softmax(logits, masks)
    n = len(rows)
    chosen = probs[np.arange(n), actions]
    if (chosen <= 0).any():
        raise IllegalAction("a chosen action is masked out")
    logp = np.log(chosen)
    g_logits = -probs
    g_logits[np.arange(n), actions] += 1.0
    g_logits *= weights[:, None]
    g_logits[~masks] = 0.0
    g_hidden = g_logits @ params.W2.T
    g_pre = g_hidden * (1.0 - hidden ** 2)
    grads = Grads(
        W1=x.T @ g_pre,
        b1=g_pre.sum(axis=0),
        W2=hidden.T @ g_logits,
        b2=g_logits.sum(axis=0),
    )
    return float(np.dot(weights, logp)), grads, logp


def zero_grads(params: PolicyParams) -> Grads:
    return Grads(*(np.zeros_like(a) for a in params.arrays()))


# -- single-derivation API ----------------------------------------------------


def action_distribution(params: PolicyParams, b: Board, s: DerivationState) -> np.ndarray:
    grammar = params.grammar
    mask = grammar.applicable(s)
    x = np.concatenate([featurize(b), encode_state(s, grammar, params.config)])
    _, logits = _forward(params, x[None, :])
    return masked_softmax(logits, mask[None, :])[0]


def derivation_batch(params: PolicyParams, b: Board, rules: Iterable[Union[Production, int]],
                     start=None, weight: float = 1.0) -> StepBatch:
    grammar = params.grammar
    batch = StepBatch()
    row = batch.add_board(b)
    state = grammar.initial_state(start)
    for p in rules:
        pid = p.id if isinstance(p, Production) else int(p)
        if grammar.is_complete(state):
            raise IllegalAction("derivation continues past a complete string")
        mask = grammar.applicable(state)
        if not mask[pid]:
            raise IllegalAction(f"rule {grammar.productions[pid]} is not allowed here")
        batch.add_step(row, state, mask, pid, weight, grammar, params.config)
        state = grammar.apply(state, pid)
    return batch


def log_prob(params: PolicyParams, b: Board, rules: Sequence[Union[Production, int]], start=None) -> float:
    batch = derivation_batch(params, b, rules, start)
    if len(batch) == 0:
        return 0.0
    total, _, _ = batch_logprob_grad(params, batch)
    return total


def grad_log_prob(params: PolicyParams, b: Board, rules: Sequence[Union[Production, int]], start=None) -> Grads:
    batch = derivation_batch(params, b, rules, start)
    if len(batch) == 0:
        return zero_grads(params)
    _, grads, _ = batch_logprob_grad(params, batch)
    return grads


# -- checkpoints --------------------------------------------------------------


def save(params: PolicyParams, path: Union[str, Path]) -> None:
    """Text checkpoint; floats are written with ``float.hex`` so reloads are bit-exact."""
    lines = [f"{CHECKPOINT_MAGIC} grammar={params.grammar_hash}"]
    cfg = dataclasses.asdict(params.config)
    lines.append("config " + " ".join(f"{k}={v!r}" for k, v in cfg.items()))
    for name in PolicyParams.ARRAYS:
        a = getattr(params, name)
        shape = ",".join(map(str, a.shape))
        lines.append(f"{name} {shape} " + " ".join(float(v).hex() for v in a.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path: Union[str, Path], grammar: Optional[Grammar] = None) -> PolicyParams:
    grammar = grammar or default_grammar()
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + " grammar="):
        raise CheckpointError(f"{path}: not a policy checkpoint")
    stored = lines[0].split("grammar=", 1)[1]
    if stored != grammar.hash:
        raise GrammarMismatch(f"checkpoint grammar {stored} does not match active grammar {grammar.hash}")
    if len(lines) != 2 + len(PolicyParams.ARRAYS) or not lines[1].startswith("config "):
        raise CheckpointError(f"{path}: malformed checkpoint")
    fields = {f.name: f.type for f in dataclasses.fields(PolicyConfig)}
    cfg = {}
    for item in lines[1].split()[1:]:
        k, v = item.split("=", 1)
        if k not in fields:
            raise CheckpointError(f"unknown config key {k!r}")
        cfg[k] = int(v) if fields[k] in ("int", int) else float(v)
    arrays = {}
    for name, line in zip(PolicyParams.ARRAYS, lines[2:]):
        parts = line.split(" ")
        if parts[0] != name:
            raise CheckpointError(f"expected array {name}, found {parts[0]}")
        shape = tuple(int(s) for s in parts[1].split(","))
        arrays[name] = np.array([float.fromhex(v) for v in parts[2:]], dtype=np.float64).reshape(shape)
    return PolicyParams(**arrays, config=PolicyConfig(**cfg), grammar_hash=stored, grammar=grammar)
