"""Test-time optimization on one problem, answer selection, and sessions."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import diffcore as dc
from .model import FreezeSpec, ModelState, encode, relation_score, sequence_loss


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 10
    lr: float = 1e-5
    alpha: float = 0.99
    eps: float = 1e-8
    freeze: FreezeSpec = FreezeSpec()

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class Selection:
    scores: np.ndarray
    chosen: int
    correct: bool
    loss_trace: list[float] = field(default_factory=list)
    diagnostic: str | None = None
    wall_time: float = 0.0
    # sequence loss after the last update
    final_loss: float = float("nan")


def optimize_on_sequence(model: ModelState, seq: np.ndarray, cfg: OptimConfig,
                         fresh_optimizer: bool = True,
                         on_step: Callable[[int, ModelState], None] | None = None) -> list[float]:
    """Run ``cfg.steps`` full-batch RMSprop steps on the sequence loss, in place.

    Returns the loss before each update. Raises PoisonedGradientError when
    the loss stops being finite.
    """
    model.apply_freeze(cfg.freeze)
    opt = model.opt
    opt.lr, opt.alpha, opt.eps = cfg.lr, cfg.alpha, cfg.eps
    if fresh_optimizer:
        opt.reset()
    seq = np.asarray(seq, dtype=model.dtype)
    trace = []
    for step in range(cfg.steps):
        model.params.zero_grad()
        loss = sequence_loss(model, seq)
        trace.append(float(loss.data))
        dc.backward(loss)
        dc.rmsprop_step(model.params, opt)
        if on_step is not None:
            on_step(step, model)
    model.params.zero_grad()
    return trace


def score_choices(model: ModelState, last_seq_image: np.ndarray, choices: np.ndarray) -> np.ndarray:
    """Relation score of each choice placed after the last sequence image."""
    batch = np.concatenate([np.asarray(last_seq_image)[None], np.asarray(choices)]).astype(model.dtype, copy=False)
    z = encode(model, batch)
    k = len(choices)
    anchor = z[np.zeros(k, dtype=int)]
    return np.asarray(relation_score(model, anchor, z[1:]).data, dtype=np.float64)


def _evaluate(model: ModelState, seq: np.ndarray, choices: np.ndarray) -> tuple[np.ndarray, float]:
    """Choice scores and the post-optimization sequence loss from one forward pass."""
    batch = np.concatenate([np.asarray(seq), np.asarray(choices)]).astype(model.dtype, copy=False)
    z = encode(model, batch)
    n, k = len(seq), len(choices)
    loss = relation_score(model, z[0 : n - 1], z[1:n]).mean()
    anchor = z[np.full(k, n - 1)]
    scores = np.asarray(relation_score(model, anchor, z[n:]).data, dtype=np.float64)
    return scores, float(loss.data)


def select(scores: np.ndarray) -> int:
    # np.argmin returns the first minimum, i.e. lowest index on ties
    return int(np.argmin(scores))


def solve_problem(model: ModelState, seq: np.ndarray, choices: np.ndarray, answer_idx: int,
                  cfg: OptimConfig, fresh_optimizer: bool = True) -> Selection:
    """Optimize on the sequence only, then pick the lowest-scoring choice.

    A non-finite loss ends the problem early; it is recorded as incorrect
    with a diagnostic instead of raising.
    """
    t0 = time.perf_counter()
    try:
        trace = optimize_on_sequence(model, seq, cfg, fresh_optimizer)
        scores, final = _evaluate(model, seq, choices)
        if not np.all(np.isfinite(scores)):
            raise dc.PoisonedGradientError("non-finite choice scores")
    except dc.PoisonedGradientError as exc:
        nan = np.full(len(choices), np.nan)
        return Selection(nan, -1, False, [], f"aborted: {exc}", time.perf_counter() - t0)
    chosen = select(scores)
    return Selection(scores, chosen, chosen == answer_idx, trace, None, time.perf_counter() - t0, final)


@dataclass
class SessionItem:
    """One problem in a session; ``choices`` None means sequence-only practice."""

    seq: np.ndarray
    choices: np.ndarray | None = None
    answer_idx: int = -1


def run_session(model: ModelState, problems: Iterable[SessionItem], cfg: OptimConfig, reset_between: bool,
                init: Callable[[int], ModelState] | None = None,
                carry_optimizer: bool = False) -> tuple[list[Selection | list[float]], ModelState]:
    """Solve problems in order, carrying weights forward unless ``reset_between``.

    With ``reset_between`` each problem starts from ``init(k)``, the naive
    protocol. The optimizer's running averages restart per problem unless
    ``carry_optimizer``. Sequence-only items yield their loss trace.
    """
    if reset_between and init is None:
        raise ValueError("reset_between needs an init function")
    results: list = []
    for k, item in enumerate(problems):
        if reset_between:
            model = init(k)
        fresh = not carry_optimizer or reset_between
        if item.choices is None:
            results.append(optimize_on_sequence(model, item.seq, cfg, fresh_optimizer=fresh))
        else:
            results.append(solve_problem(model, item.seq, item.choices, item.answer_idx, cfg, fresh_optimizer=fresh))
    return results, model
