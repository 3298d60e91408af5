"""The experiments behind the acceptance suite, with on-disk reuse.

Outputs go to ``$SEQREASON_RESULTS`` (default ``results/acceptance`` under
the current directory). Finished outputs whose stored configuration matches
are reused; set ``SEQREASON_FRESH=1`` to recompute everything. The
full-resolution runs only happen with ``SEQREASON_FULL=1``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

from ..probgen import Feature
from . import experiments
from .profiles import Scale, make_profile
from .sessions import Schedule

RESULTS_ENV = "SEQREASON_RESULTS"
FRESH_ENV = "SEQREASON_FRESH"
FULL_ENV = "SEQREASON_FULL"

SEED = 0


def results_dir() -> Path:
    return Path(os.environ.get(RESULTS_ENV, "results/acceptance"))


def reuse() -> bool:
    return os.environ.get(FRESH_ENV, "") != "1"


def full_enabled() -> bool:
    return os.environ.get(FULL_ENV, "") == "1"


def _zero(c) -> bool:
    return c.difficulty == 0


def zero_distractor_suite(out_dir: Path | None = None, use_cache: bool | None = None) -> experiments.SuiteSummary:
    """Vanilla desk profile, the three 0-distractor conditions, 100 problems each."""
    prof = make_profile("vanilla", Scale.DESK, SEED)
    return experiments.run_suite_to_dir(prof, out_dir or results_dir(), _zero, tag="vanilla_desk_zero",
                                        reuse=reuse() if use_cache is None else use_cache, select_key="maxd=0")


def desk_suite(name: str) -> experiments.SuiteSummary:
    prof = make_profile(name, Scale.DESK, SEED)
    return experiments.run_suite_to_dir(prof, results_dir(), reuse=reuse())


def full_suite(name: str) -> experiments.SuiteSummary:
    prof = make_profile(name, Scale.FULL, SEED)
    return experiments.run_suite_to_dir(prof, results_dir(), reuse=reuse())


@dataclass(frozen=True)
class OrderGradPlan:
    n_problems: int = 200


def order_grad(plan: OrderGradPlan = OrderGradPlan()) -> list[tuple]:
    out = results_dir()
    prof = make_profile("vanilla", Scale.DESK, SEED)
    path = out / f"order_grad_{prof.name}_{prof.scale.value}.csv"
    key = {"profile": prof.to_dict(), "n": plan.n_problems}
    meta = out / "order_grad.meta.json"
    if reuse() and experiments.load_if_same(meta, key) is not None:
        return _read_rows(path, (int, str, int, float, float, int))
    rows = experiments.order_gradient_study(prof, plan.n_problems, out)
    experiments.save_meta(meta, key)
    return rows


def correlation_pre_post(n_networks: int = 400) -> list[tuple]:
    """Output-layer |r| with the predictive feature at step 0 and after the last step."""
    out = results_dir()
    prof = make_profile("vanilla", Scale.DESK, SEED)
    path = out / f"correlations_{prof.name}_{prof.scale.value}.csv"
    key = {"profile": prof.to_dict(), "n": n_networks, "steps": [prof.steps]}
    meta = out / "correlations.meta.json"
    if reuse() and experiments.load_if_same(meta, key) is not None:
        return _read_rows(path, (int, str, str, str, int, float, int, int))
    rows = experiments.correlation_trend(prof, n_networks, out, record_steps={prof.steps})
    experiments.save_meta(meta, key)
    return rows


@dataclass(frozen=True)
class CrystalPlan:
    n_train: int = 200
    n_networks: int = 20
    tests_per_condition: int = 3


def crystallization(plan: CrystalPlan = CrystalPlan()):
    prof = make_profile("vanilla", Scale.DESK, SEED)
    return experiments.run_crystallization_to_dir(prof, Feature.NUMBER, (Feature.NUMBER, Feature.SIZE),
                                                  results_dir(), plan.n_train, plan.n_networks,
                                                  plan.tests_per_condition, with_naive=True, reuse=reuse())


@dataclass(frozen=True)
class SchedulePlan:
    total: int = 2000
    test_every: int = 500
    test_problems: int = 25
    n_networks: int = 4


def schedule(mode: str, plan: SchedulePlan = SchedulePlan()):
    prof = make_profile("vanilla", Scale.DESK, SEED)
    sched = Schedule.make(mode, plan.total, test_every=plan.test_every, test_problems=plan.test_problems,
                          conflict_control=True)
    return experiments.run_schedule_to_dir(prof, sched, results_dir(), plan.n_networks, reuse=reuse())


def _read_rows(path: Path, types) -> list[tuple]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [tuple(t(v) for t, v in zip(types, row)) for row in r]


# cheapest first, so partial runs still settle the quick criteria
PLAN = (
    ("zero-distractor suite", zero_distractor_suite),
    ("order-gradient study", order_grad),
    ("correlation trend", correlation_pre_post),
    ("vanilla suite", lambda: desk_suite("vanilla")),
    ("frozen-encoder suite", lambda: desk_suite("frozen-encoder")),
    ("frozen-fc suite", lambda: desk_suite("frozen-fc")),
    ("frozen-relation suite", lambda: desk_suite("frozen-relation")),
    ("alternating-rule suite", lambda: desk_suite("alternating-rule")),
    ("crystallization", crystallization),
    ("blocked schedule", lambda: schedule("blocked")),
    ("interleaved schedule", lambda: schedule("interleaved")),
)
