"""End-to-end experiments that write their artifacts to a directory.

Each function can reuse finished outputs from an earlier run with the same
configuration (``reuse=True``); the configuration is stored next to the
results and compared key by key before anything is reused.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..analysis import (
    Aggregate,
    ConditionResult,
    aggregate_propagate,
    binomial_ci,
    correlation_profile_from,
    logit_regression_wald,
    order_covariance_and_gradnorm,
    probe_set,
    render_probes,
)
from ..probgen import PREDICTIVE_FEATURES, Feature, TestCondition, enumerate_conditions
from ..solver import optimize_on_sequence, solve_problem
from . import report
from .profiles import ExperimentProfile, derive_seed
from .runner import ConditionRun, build_problem, fresh_model, parallel_map, run_suite
from .sessions import CrystallizationResult, Schedule, ScheduleResult, run_crystallization, run_schedule

log = logging.getLogger(__name__)


def load_if_same(meta_path: Path, key: dict) -> dict | None:
    if not meta_path.exists():
        return None
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError:
        return None
    return meta if meta.get("key") == key and meta.get("complete") else None


def save_meta(meta_path: Path, key: dict, **extra) -> None:
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps({"key": key, "complete": True, **extra}, indent=2, sort_keys=True) + "\n")


# suites -------------------------------------------------------------------------------


@dataclass
class SuiteSummary:
    rows: list[report.ConditionRow]

    def _results(self, pred: Callable[[report.ConditionRow], bool] = lambda r: True) -> list[ConditionResult]:
        return [binomial_ci(r.successes, r.n) for r in self.rows if pred(r)]

    def feature_aggregates(self) -> dict[tuple[str, str], Aggregate]:
        keys = sorted({(r.rule, r.pf) for r in self.rows})
        return {k: aggregate_propagate(self._results(lambda r, k=k: (r.rule, r.pf) == k)) for k in keys}

    def global_aggregate(self) -> Aggregate:
        return aggregate_propagate(list(self.feature_aggregates().values()))

    def by_difficulty(self) -> dict[int, Aggregate]:
        ds = sorted({bin(r.condition_bitmask).count("1") for r in self.rows})
        return {d: aggregate_propagate(self._results(lambda r, d=d: bin(r.condition_bitmask).count("1") == d))
                for d in ds}

    def pooled(self, pred: Callable[[report.ConditionRow], bool] = lambda r: True) -> ConditionResult:
        sel = [r for r in self.rows if pred(r)]
        return binomial_ci(sum(r.successes for r in sel), sum(r.n for r in sel))

    def text(self) -> str:
        lines = []
        for (rule, pf), agg in self.feature_aggregates().items():
            lines.append(f"  {pf:<7} {rule:<12} {agg.mean:.3f} +/- {agg.ci95:.3f}")
        g = self.global_aggregate()
        lines.append(f"  global               {g.mean:.3f} +/- {g.ci95:.3f}")
        for d, agg in self.by_difficulty().items():
            lines.append(f"  {d} distractors        {agg.mean:.3f} +/- {agg.ci95:.3f}")
        return "\n".join(lines)


def suite_paths(out_dir, tag: str) -> dict[str, Path]:
    out = Path(out_dir)
    return {k: out / f"{tag}.{k}" for k in ("conditions.csv", "problems.csv", "svg", "profile.json", "meta.json")}


def run_suite_to_dir(profile: ExperimentProfile, out_dir, select: Callable[[TestCondition], bool] | None = None,
                     tag: str | None = None, n_problems: int | None = None, reuse: bool = False,
                     workers: int | None = None, select_key: str = "all") -> SuiteSummary:
    """Run (or reuse) a suite; writes condition/problem CSVs, an SVG chart, and the profile JSON."""
    if tag is None:
        tag = f"{profile.name}_{profile.scale.value}_seed{profile.base_seed}"
        if select_key != "all":
            tag += "_" + hashlib.sha256(select_key.encode()).hexdigest()[:8]
    paths = suite_paths(out_dir, tag)
    key = {"profile": profile.to_dict(), "select": select_key, "n_problems": n_problems}
    if reuse and load_if_same(paths["meta.json"], key) is not None:
        log.info("reusing %s", paths["conditions.csv"])
        return SuiteSummary(report.read_condition_csv(paths["conditions.csv"]))
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    profile.save(paths["profile.json"])
    done: list[ConditionRun] = []

    def flush(run: ConditionRun) -> None:
        # partial results survive an interrupted run
        done.append(run)
        report.write_condition_csv([report.ConditionRow.make(profile, r.condition, r.result) for r in done],
                                   paths["conditions.csv"])

    suite = run_suite(profile, select, n_problems, workers, on_condition=flush)
    rows = report.suite_rows(suite)
    report.write_condition_csv(rows, paths["conditions.csv"])
    report.write_problem_csv(suite.rows, paths["problems.csv"])
    report.bar_chart_svg(rows, paths["svg"], f"{profile.name} ({profile.scale.value})")
    save_meta(paths["meta.json"], key)
    return SuiteSummary(rows)


# crystallization ---------------------------------------------------------------------


CRYSTAL_COLUMNS = ("train_pf", "test_pf", "arm", "condition_bitmask", "n", "successes", "p", "se", "ci95")


def run_crystallization_to_dir(profile: ExperimentProfile, train_pf: Feature, test_pfs, out_dir, n_train: int,
                               n_networks: int, tests_per_condition: int, with_naive: bool = True,
                               reuse: bool = False, workers: int | None = None) -> CrystallizationResult:
    test_pfs = tuple(test_pfs)
    tag = f"crystallize_{train_pf.value}_to_{'-'.join(f.value for f in test_pfs)}_{profile.scale.value}"
    out = Path(out_dir)
    meta_path = out / f"{tag}.meta.json"
    key = {"profile": profile.to_dict(), "train_pf": train_pf.value, "test_pfs": [f.value for f in test_pfs],
           "n_train": n_train, "n_networks": n_networks, "tests": tests_per_condition, "naive": with_naive}
    meta = load_if_same(meta_path, key) if reuse else None
    if meta is not None:
        r = meta["result"]
        return CrystallizationResult(train_pf, test_pfs, n_train, n_networks, tests_per_condition,
                                     {Feature(k): v for k, v in r["trained"].items()},
                                     {Feature(k): v for k, v in r["naive"].items()} if r["naive"] else None)
    res = run_crystallization(profile, train_pf, test_pfs, n_train, n_networks, tests_per_condition, with_naive,
                              workers)
    rows = []
    conds = {pf: enumerate_conditions(pf) for pf in test_pfs}
    for pf in test_pfs:
        arms = [("trained", False)] + ([("naive", True)] if with_naive else [])
        for arm, naive in arms:
            for cond, r in zip(conds[pf], res.condition_results(pf, naive)):
                rows.append((train_pf.value, pf.value, arm, cond.bitmask, r.n, r.successes, r.p, r.se, r.ci95))
    report.write_table_csv(CRYSTAL_COLUMNS, rows, out / f"{tag}.csv")
    series = {}
    for pf in test_pfs:
        for arm, naive in [("trained", False)] + ([("naive", True)] if with_naive else []):
            by_d: dict[int, list] = {}
            for cond, r in zip(conds[pf], res.condition_results(pf, naive)):
                by_d.setdefault(cond.difficulty, []).append(r)
            series[f"{pf.value} {arm}"] = [(d, aggregate_propagate(v).mean, aggregate_propagate(v).ci95)
                                           for d, v in sorted(by_d.items())]
    report.line_chart_svg(series, out / f"{tag}.svg", f"trained on {train_pf.value}", xlabel="distractors")
    save_meta(meta_path, key, result={
        "trained": {pf.value: v for pf, v in res.trained.items()},
        "naive": {pf.value: v for pf, v in res.naive.items()} if res.naive else None,
        "train_loss_mean": [float(np.mean(l)) if l else None for l in res.train_loss],
    })
    return res


# schedules -----------------------------------------------------------------------------


def run_schedule_to_dir(profile: ExperimentProfile, schedule: Schedule, out_dir, n_networks: int,
                        reuse: bool = False, workers: int | None = None) -> ScheduleResult:
    from .sessions import CurvePoint

    tag = (f"schedule_{schedule.mode}_{'cc' if schedule.conflict_control else 'nocc'}_"
           f"{schedule.pfs[0].value}-{schedule.pfs[1].value}_{schedule.total_problems}_{profile.scale.value}")
    out = Path(out_dir)
    meta_path = out / f"{tag}.meta.json"
    key = {"profile": profile.to_dict(), "pfs": [f.value for f in schedule.pfs],
           "total": schedule.total_problems, "block": schedule.block_size, "test_every": schedule.test_every,
           "test_problems": schedule.test_problems, "conflict_control": schedule.conflict_control,
           "n_networks": n_networks}
    meta = load_if_same(meta_path, key) if reuse else None
    if meta is not None:
        pts = [CurvePoint(p["step"], Feature(p["pf"]), p["successes"], p["n"], p["per_network"])
               for p in meta["points"]]
        return ScheduleResult(schedule, n_networks, pts)
    res = run_schedule(profile, schedule, n_networks, workers)
    report.write_curve_csv([res], out / f"{tag}.csv")
    report.curves_svg(res, out / f"{tag}.svg")
    save_meta(meta_path, key, points=[{"step": p.step, "pf": p.pf.value, "successes": p.successes, "n": p.n,
                                        "per_network": p.per_network} for p in res.points])
    return res


# correlation analyses --------------------------------------------------------------------


CORR_COLUMNS = ("network", "pf", "probe_feature", "layer", "step", "mean_abs_r", "n_probes", "n_degenerate")


def _correlation_network(task) -> list[tuple]:
    profile, net, record_steps, per_value = task
    seed = derive_seed(profile.base_seed, f"{profile.name}/correlations", net, 0)
    conds = [c for _, c in profile.conditions()]
    cond = conds[seed % len(conds)]
    p, seq, _ = build_problem(profile, cond, seed)
    model = fresh_model(profile, seed)
    pf = cond.predictive
    vecs, ys = probe_set(pf, np.random.default_rng([seed, 2]), per_value, values=None)
    probes = render_probes(vecs, profile.render)
    values = tuple(int(v) for v in dict.fromkeys(ys))
    rows = []

    def record(step: int) -> None:
        prof = correlation_profile_from(model, probes, ys, pf, values)
        for layer, v in prof.layer_means.items():
            rows.append((net, pf.value, pf.value, layer, step, v, prof.n_probes, prof.n_degenerate))

    record(0)

    def on_step(step, _model):
        # activations after the update of this step
        if step + 1 in record_steps:
            record(step + 1)

    optimize_on_sequence(model, seq, profile.optim, on_step=on_step)
    return rows


def correlation_trend(profile: ExperimentProfile, n_networks: int, out_dir=None, record_steps=None,
                      per_value: int = 20, workers: int | None = None) -> list[tuple]:
    """Per network: |r| of every FC layer with the problem's predictive feature, before and during optimization.

    Probes and the problem are drawn from the network's seed; recorded steps
    are post-update (step 0 is the initial network).
    """
    record_steps = set(range(1, profile.steps + 1) if record_steps is None else record_steps)
    tasks = [(profile, net, record_steps, per_value) for net in range(n_networks)]
    rows = [r for rs in parallel_map(_correlation_network, tasks, workers) for r in rs]
    if out_dir is not None:
        report.write_table_csv(CORR_COLUMNS, rows, Path(out_dir) / f"correlations_{profile.name}_{profile.scale.value}.csv")
    return rows


ORDER_COLUMNS = ("problem", "pf", "condition_bitmask", "grad_corr", "weight_grad_corr", "degenerate")


def _order_problem(task) -> tuple:
    profile, k = task
    seed = derive_seed(profile.base_seed, f"{profile.name}/order-grad", k, 0)
    conds = [c for _, c in profile.conditions()]
    cond = conds[k % len(conds)]
    _, seq, _ = build_problem(profile, cond, seed)
    res = order_covariance_and_gradnorm(fresh_model(profile, seed), seq)
    return (k, cond.predictive.value, cond.bitmask, res.correlation, res.weight_correlation, int(res.degenerate))


def order_gradient_study(profile: ExperimentProfile, n_problems: int, out_dir=None,
                         workers: int | None = None) -> list[tuple]:
    """Per problem: correlation across conv-output neurons of |order covariance| with gradient norms."""
    rows = parallel_map(_order_problem, [(profile, k) for k in range(n_problems)], workers)
    if out_dir is not None:
        report.write_table_csv(ORDER_COLUMNS, rows, Path(out_dir) / f"order_grad_{profile.name}_{profile.scale.value}.csv")
    return rows


REGRESSION_COLUMNS = ("pf", "condition_bitmask", "n", "successes", "accuracy", "ratio")


def _ratio_problem(task) -> tuple[bool, float]:
    profile, cidx, cond, k, per_value = task
    seed = derive_seed(profile.base_seed, f"{profile.name}/ratio", cidx, k)
    p, seq, choices = build_problem(profile, cond, seed)
    model = fresh_model(profile, seed)
    sel = solve_problem(model, seq, choices, p.answer_idx, profile.optim)
    rng = np.random.default_rng([seed, 3])

    def out_r(feature: Feature) -> float:
        vecs, ys = probe_set(feature, rng, per_value)
        prof = correlation_profile_from(model, render_probes(vecs, profile.render), ys, feature, ())
        return prof.output

    dis = [f for f in cond.distractors if f in PREDICTIVE_FEATURES]
    rho_pf = out_r(cond.predictive)
    rho_dis = float(np.mean([out_r(f) for f in dis])) if dis else float("nan")
    return bool(sel.correct), rho_pf / rho_dis if rho_dis > 0 else float("nan")


def correlation_ratio_regression(profile: ExperimentProfile, n_per_condition: int, out_dir=None,
                                 per_value: int = 20, workers: int | None = None):
    """Accuracy vs |rho_PF| / |rho_Dis| over conditions with a color/number/size distractor, then logit OLS."""
    todo = [(i, c) for i, c in profile.conditions() if any(f in PREDICTIVE_FEATURES for f in c.distractors)]
    rows = []
    for cidx, cond in todo:
        outs = parallel_map(_ratio_problem, [(profile, cidx, cond, k, per_value) for k in range(n_per_condition)],
                            workers)
        ratios = [r for _, r in outs if np.isfinite(r)]
        succ = sum(ok for ok, _ in outs)
        rows.append((cond.predictive.value, cond.bitmask, len(outs), succ, succ / len(outs),
                     float(np.mean(ratios)) if ratios else float("nan")))
    usable = [r for r in rows if np.isfinite(r[5])]
    xs = [r[5] for r in usable]
    ys = [r[4] for r in usable]
    reg = logit_regression_wald(xs, ys, n_trials=n_per_condition)
    if out_dir is not None:
        out = Path(out_dir)
        report.write_table_csv(REGRESSION_COLUMNS, rows, out / f"ratio_points_{profile.name}.csv")
        report.write_table_csv(("slope", "intercept", "se_slope", "t", "p_value", "r2", "n", "clamped"),
                               [(reg.slope, reg.intercept, reg.se_slope, reg.t, reg.p_value, reg.r2, reg.n,
                                 reg.clamped)], out / f"ratio_regression_{profile.name}.csv")
    return rows, reg
