"""Independent-problem runs: one condition, or a profile's whole suite."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from ..analysis import Aggregate, ConditionResult, aggregate_propagate, binomial_ci
from ..model import init_model
from ..probgen import Feature, ProblemFeatures, TestCondition, sample_problem
from ..raster import render_problem
from ..solver import solve_problem
from .profiles import WORKERS_ENV, ExperimentProfile, derive_seed, model_rng, problem_rng

log = logging.getLogger(__name__)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, workers)


def parallel_map(fn: Callable, items: list, workers: int | None = None) -> list:
    """Order-preserving map; results never depend on the worker count."""
    workers = worker_count(workers)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


@dataclass
class ProblemRow:
    profile: str
    condition_idx: int
    condition: str
    problem_idx: int
    seed: int
    chosen: int
    answer: int
    correct: bool
    final_loss: float
    wall_time: float
    diagnostic: str = ""


def build_problem(profile: ExperimentProfile, cond: TestCondition, seed: int) -> tuple[ProblemFeatures, np.ndarray, np.ndarray]:
    p = sample_problem(cond, problem_rng(seed), seed=seed)
    seq, choices = render_problem(p, profile.render)
    return p, seq, choices


def fresh_model(profile: ExperimentProfile, seed: int):
    return init_model(profile.arch, profile.relation, model_rng(seed), profile.freeze, dtype=profile.np_dtype)


def solve_one(task: tuple[ExperimentProfile, int, TestCondition, int]) -> ProblemRow:
    profile, cidx, cond, k = task
    seed = derive_seed(profile.base_seed, profile.name, cidx, k)
    p, seq, choices = build_problem(profile, cond, seed)
    sel = solve_problem(fresh_model(profile, seed), seq, choices, p.answer_idx, profile.optim)
    return ProblemRow(profile.name, cidx, cond.label, k, seed, sel.chosen, p.answer_idx, bool(sel.correct),
                      sel.final_loss, sel.wall_time, sel.diagnostic or "")


@dataclass
class ConditionRun:
    condition_idx: int
    condition: TestCondition
    result: ConditionResult
    rows: list[ProblemRow] = field(default_factory=list)

    @property
    def n_aborted(self) -> int:
        return sum(1 for r in self.rows if r.diagnostic)


def _index_of(profile: ExperimentProfile, cond: TestCondition) -> int:
    for idx, c in profile.conditions():
        if c == cond:
            return idx
    raise ValueError(f"condition {cond.label} is not part of profile {profile.name}")


def run_condition(profile: ExperimentProfile, condition: TestCondition, n_problems: int | None = None,
                  seed: int | None = None, condition_idx: int | None = None,
                  workers: int | None = None) -> ConditionRun:
    """``n_problems`` independent solves, each on a freshly initialized network."""
    n = profile.problems_per_condition if n_problems is None else n_problems
    if n < 1:
        raise ValueError("n_problems must be >= 1")
    if seed is not None and seed != profile.base_seed:
        profile = replace(profile, base_seed=seed)
    cidx = _index_of(profile, condition) if condition_idx is None else condition_idx
    rows = parallel_map(solve_one, [(profile, cidx, condition, k) for k in range(n)], workers)
    successes = sum(r.correct for r in rows)
    aborted = sum(1 for r in rows if r.diagnostic)
    if aborted:
        log.warning("%s: %d of %d problems aborted on non-finite loss", condition.label, aborted, n)
    return ConditionRun(cidx, condition, binomial_ci(successes, n), rows)


@dataclass
class SuiteResult:
    profile: ExperimentProfile
    runs: list[ConditionRun]

    def by_feature(self) -> dict[tuple[str, Feature], list[ConditionRun]]:
        out: dict = {}
        for r in self.runs:
            out.setdefault((r.condition.rule.kind.value, r.condition.predictive), []).append(r)
        return out

    def feature_aggregates(self) -> dict[tuple[str, Feature], Aggregate]:
        return {k: aggregate_propagate([r.result for r in v]) for k, v in self.by_feature().items()}

    def global_aggregate(self) -> Aggregate:
        return aggregate_propagate(list(self.feature_aggregates().values()))

    def by_difficulty(self) -> dict[int, Aggregate]:
        groups: dict[int, list] = {}
        for r in self.runs:
            groups.setdefault(r.condition.difficulty, []).append(r.result)
        return {d: aggregate_propagate(v) for d, v in sorted(groups.items())}

    def pooled(self) -> ConditionResult:
        return binomial_ci(sum(r.result.successes for r in self.runs), sum(r.result.n for r in self.runs))

    @property
    def rows(self) -> list[ProblemRow]:
        return [row for r in self.runs for row in r.rows]


def run_suite(profile: ExperimentProfile, select: Callable[[TestCondition], bool] | None = None,
              n_problems: int | None = None, workers: int | None = None,
              on_condition: Callable[[ConditionRun], None] | None = None) -> SuiteResult:
    """Every condition of every rule and predictive feature in the profile.

    ``select`` restricts the conditions (seeds are unchanged); ``on_condition``
    sees each finished condition, so callers can flush partial results.
    """
    runs = []
    todo: Iterable = [(i, c) for i, c in profile.conditions() if select is None or select(c)]
    for cidx, cond in todo:
        run = run_condition(profile, cond, n_problems, condition_idx=cidx, workers=workers)
        log.info("%s %s: %d/%d", profile.name, cond.label, run.result.successes, run.result.n)
        runs.append(run)
        if on_condition is not None:
            on_condition(run)
    if not runs:
        raise ValueError("no conditions selected")
    return SuiteResult(profile, runs)
