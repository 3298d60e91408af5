"""Weight-carrying sessions: knowledge crystallization and blocked/interleaved schedules."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..analysis import ConditionResult, aggregate_propagate, binomial_ci
from ..model import ModelState
from ..probgen import Feature, TestCondition, enumerate_conditions
from ..solver import OptimConfig, optimize_on_sequence, solve_problem
from .profiles import ExperimentProfile, derive_seed
from .runner import build_problem, fresh_model, parallel_map

log = logging.getLogger(__name__)

# competing-feature values held fixed under conflict control
CONFLICT_PIN = {Feature.SIZE: (Feature.NUMBER, 5), Feature.NUMBER: (Feature.SIZE, 4)}


def easy_condition(pf: Feature, conflict_control: bool = False) -> TestCondition:
    pinned = (CONFLICT_PIN[pf],) if conflict_control and pf in CONFLICT_PIN else ()
    return TestCondition(pf, pinned=pinned)


def hard_condition(pf: Feature, conflict_control: bool = False) -> TestCondition:
    others = set(enumerate_conditions(pf)[-1].distractors)
    if conflict_control and pf in CONFLICT_PIN:
        other, value = CONFLICT_PIN[pf]
        others.discard(other)
        return TestCondition(pf, distractors=frozenset(others), pinned=((other, value),))
    return TestCondition(pf, distractors=frozenset(others))


def train_on(model: ModelState, profile: ExperimentProfile, cond: TestCondition, seed: int,
             cfg: OptimConfig) -> list[float]:
    """One unsupervised practice problem: optimize on its sequence, never see choices."""
    _, seq, _ = build_problem(profile, cond, seed)
    return optimize_on_sequence(model, seq, cfg)


def evaluate_from(snapshot: ModelState, profile: ExperimentProfile, cond: TestCondition, seed: int,
                  cfg: OptimConfig) -> bool:
    """Solve one test problem starting from a copy, so tests never leak into training."""
    p, seq, choices = build_problem(profile, cond, seed)
    return bool(solve_problem(snapshot.copy(), seq, choices, p.answer_idx, cfg).correct)


# crystallization -----------------------------------------------------------------------


@dataclass
class CrystallizationResult:
    train_pf: Feature
    test_pfs: tuple[Feature, ...]
    n_train: int
    n_networks: int
    tests_per_condition: int
    # [test_pf][condition position] -> successes summed over networks
    trained: dict[Feature, list[int]]
    naive: dict[Feature, list[int]] | None = None
    train_loss: list[list[float]] = field(default_factory=list)

    def condition_results(self, pf: Feature, naive: bool = False) -> list[ConditionResult]:
        table = self.naive if naive else self.trained
        if table is None:
            raise ValueError("this run has no naive baseline")
        n = self.n_networks * self.tests_per_condition
        return [binomial_ci(s, n) for s in table[pf]]

    def aggregate(self, pf: Feature, naive: bool = False):
        return aggregate_propagate(self.condition_results(pf, naive))

    def pooled(self, pf: Feature, naive: bool = False) -> ConditionResult:
        res = self.condition_results(pf, naive)
        return binomial_ci(sum(r.successes for r in res), sum(r.n for r in res))


def _crystallize_network(task) -> tuple[dict, dict | None, list[float]]:
    profile, train_pf, test_pfs, n_train, tests_per_condition, net, with_naive = task
    tag = f"{profile.name}/crystallize/{train_pf.value}"
    cfg = profile.optim
    model = fresh_model(profile, derive_seed(profile.base_seed, tag + "/init", net, 0))
    easy = easy_condition(train_pf)
    losses = []
    for k in range(n_train):
        trace = train_on(model, profile, easy, derive_seed(profile.base_seed, tag + "/train", net, k), cfg)
        losses.append(trace[-1] if trace else float("nan"))
    trained, naive = {}, ({} if with_naive else None)
    for pf in test_pfs:
        trained[pf.value], counts_n = [], []
        for ci, cond in enumerate(enumerate_conditions(pf)):
            ok_t = ok_n = 0
            for t in range(tests_per_condition):
                seed = derive_seed(profile.base_seed, f"{tag}/test/{pf.value}", net, ci * 1000 + t)
                ok_t += evaluate_from(model, profile, cond, seed, cfg)
                if with_naive:
                    p, seq, choices = build_problem(profile, cond, seed)
                    fresh = fresh_model(profile, derive_seed(profile.base_seed, f"{tag}/naive", net, ci * 1000 + t))
                    ok_n += bool(solve_problem(fresh, seq, choices, p.answer_idx, cfg).correct)
            trained[pf.value].append(ok_t)
            counts_n.append(ok_n)
        if with_naive:
            naive[pf.value] = counts_n
    return trained, naive, losses


def run_crystallization(profile: ExperimentProfile, train_pf: Feature, test_pfs: tuple[Feature, ...] | None = None,
                        n_train: int = 1000, n_networks: int = 50, tests_per_condition: int = 10,
                        with_naive: bool = False, workers: int | None = None) -> CrystallizationResult:
    """Practice each network on ``n_train`` easy sequences, then sweep all 16 test conditions.

    Weights carry across practice problems; the optimizer's running averages
    restart with each problem. Each test problem starts from the trained
    weights. With ``with_naive`` every test problem is also solved by a
    freshly initialized network, giving a paired baseline.
    """
    test_pfs = tuple(test_pfs or (train_pf,))
    if n_networks < 1 or tests_per_condition < 1 or n_train < 0:
        raise ValueError("need n_networks >= 1, tests_per_condition >= 1, n_train >= 0")
    tasks = [(profile, train_pf, test_pfs, n_train, tests_per_condition, net, with_naive) for net in range(n_networks)]
    out = parallel_map(_crystallize_network, tasks, workers)
    trained = {pf: [sum(o[0][pf.value][c] for o in out) for c in range(16)] for pf in test_pfs}
    naive = None
    if with_naive:
        naive = {pf: [sum(o[1][pf.value][c] for o in out) for c in range(16)] for pf in test_pfs}
    return CrystallizationResult(train_pf, test_pfs, n_train, n_networks, tests_per_condition, trained, naive,
                                 [o[2] for o in out])


# schedules ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    pfs: tuple[Feature, Feature] = (Feature.SIZE, Feature.NUMBER)
    total_problems: int = 30_000
    block_size: int = 15_000
    test_every: int = 1875
    test_problems: int = 25
    conflict_control: bool = True
    # set by make(); otherwise derived from the block size
    kind: str | None = None

    def __post_init__(self):
        if self.block_size < 1 or self.total_problems % (2 * self.block_size):
            raise ValueError("total_problems must be divisible by 2 * block_size")
        if self.test_every < 1 or self.test_problems < 1:
            raise ValueError("test_every and test_problems must be >= 1")
        if self.pfs[0] == self.pfs[1]:
            raise ValueError("a schedule alternates two different predictive features")

    @property
    def mode(self) -> str:
        if self.kind is not None:
            return self.kind
        return "blocked" if 2 * self.block_size == self.total_problems else "interleaved"

    def training_order(self) -> list[Feature]:
        return [self.pfs[(k // self.block_size) % 2] for k in range(self.total_problems)]

    def test_points(self) -> list[int]:
        return list(range(0, self.total_problems + 1, self.test_every)) if self.total_problems else [0]

    @classmethod
    def make(cls, mode: str, total_problems: int = 30_000, **kw) -> Schedule:
        if mode == "blocked":
            block = total_problems // 2
        elif mode == "interleaved":
            block = 5
        else:
            raise ValueError(f"unknown schedule mode {mode!r}")
        return cls(total_problems=total_problems, block_size=block, kind=mode, **kw)


@dataclass
class CurvePoint:
    step: int
    pf: Feature
    successes: int
    n: int
    # accuracy of each network at this point, for the across-network spread
    per_network: list[float]

    @property
    def result(self) -> ConditionResult:
        return binomial_ci(self.successes, self.n)

    @property
    def network_std(self) -> float:
        return float(np.std(self.per_network, ddof=1)) if len(self.per_network) > 1 else 0.0


@dataclass
class ScheduleResult:
    schedule: Schedule
    n_networks: int
    points: list[CurvePoint]

    def curve(self, pf: Feature) -> list[CurvePoint]:
        return [p for p in self.points if p.pf is pf]

    def at(self, step: int, pf: Feature) -> CurvePoint:
        for p in self.points:
            if p.step == step and p.pf is pf:
                return p
        raise KeyError((step, pf))

    def final_joint(self) -> float:
        last = self.schedule.test_points()[-1]
        return float(np.mean([self.at(last, pf).result.p for pf in self.schedule.pfs]))


def _schedule_network(task) -> dict[tuple[int, str], int]:
    profile, sched, net = task
    tag = f"{profile.name}/schedule/{sched.mode}/{int(sched.conflict_control)}/{sched.pfs[0].value}"
    cfg = profile.optim
    model = fresh_model(profile, derive_seed(profile.base_seed, tag + "/init", net, 0))
    easy = {pf: easy_condition(pf, sched.conflict_control) for pf in sched.pfs}
    hard = {pf: hard_condition(pf, sched.conflict_control) for pf in sched.pfs}
    # the same test problems at every time point: the curves are paired over time
    test_seeds = {pf: [derive_seed(profile.base_seed, f"{tag}/test/{pf.value}", net, t)
                       for t in range(sched.test_problems)] for pf in sched.pfs}
    order = sched.training_order()
    points = set(sched.test_points())
    out = {}

    def test(step):
        for pf in sched.pfs:
            out[(step, pf.value)] = sum(evaluate_from(model, profile, hard[pf], s, cfg) for s in test_seeds[pf])

    if 0 in points:
        test(0)
    for k, pf in enumerate(order):
        train_on(model, profile, easy[pf], derive_seed(profile.base_seed, tag + "/train", net, k), cfg)
        if k + 1 in points:
            test(k + 1)
    return out


def run_schedule(profile: ExperimentProfile, schedule: Schedule, n_networks: int = 20,
                 workers: int | None = None) -> ScheduleResult:
    """Train on the schedule's stream of easy problems; test difficult ones every ``test_every``."""
    if n_networks < 1:
        raise ValueError("n_networks must be >= 1")
    outs = parallel_map(_schedule_network, [(profile, schedule, net) for net in range(n_networks)], workers)
    points = []
    for step in schedule.test_points():
        for pf in schedule.pfs:
            per = [o[(step, pf.value)] for o in outs]
            points.append(CurvePoint(step, pf, sum(per), n_networks * schedule.test_problems,
                                     [c / schedule.test_problems for c in per]))
    return ScheduleResult(schedule, n_networks, points)

