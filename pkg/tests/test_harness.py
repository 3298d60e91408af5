import json
import xml.etree.ElementTree as ET
from dataclasses import fields, replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_profile
from seqreason.harness import PROFILES, ExperimentProfile, derive_seed, load_profile, make_profile, report
from seqreason.harness import experiments
from seqreason.harness.profiles import WORKERS_ENV, Scale
from seqreason.harness.runner import build_problem, fresh_model, run_condition, run_suite, worker_count
from seqreason.harness.sessions import (
    CONFLICT_PIN,
    Schedule,
    easy_condition,
    hard_condition,
    run_crystallization,
    run_schedule,
)
from seqreason.model import EncoderArch, FreezeSpec
from seqreason.probgen import Feature, ProblemFeatures, Rule, RuleKind, TestCondition, enumerate_conditions
from seqreason.raster import read_pgm


def color_easy():
    return enumerate_conditions(Feature.COLOR)[0]


# profiles -------------------------------------------------------------------------


def test_every_ablation_has_a_profile():
    assert set(PROFILES) == {
        "vanilla", "frozen-encoder", "frozen-relation", "no-conv", "frozen-conv", "frozen-fc",
        "frozen-conv+relation", "complex-relation", "exp-rule", "sqrt-rule", "alternating-rule",
    }


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_profiles_build_runnable_models(name):
    prof = tiny_profile(name)
    idx, cond = prof.conditions()[0]
    p, seq, choices = build_problem(prof, cond, 7)
    assert seq.shape == (5, 16, 16) and choices.shape == (4, 16, 16)
    assert fresh_model(prof, 7).arch.input_resolution == 16


def test_scales():
    desk, full = make_profile("vanilla", Scale.DESK), make_profile("vanilla", "full")
    assert (desk.arch.input_resolution, desk.arch.pool_kernels, desk.problems_per_condition) == (56, (2, 3), 100)
    assert (full.arch.input_resolution, full.arch.pool_kernels, full.problems_per_condition) == (224, (4, 6), 500)
    assert desk.arch.conv_channels == (4, 8, 8)


def test_rule_profiles_restrict_features():
    assert {c.predictive for _, c in make_profile("exp-rule").conditions()} == {Feature.COLOR, Feature.SIZE}
    assert len(make_profile("vanilla").conditions()) == 48
    assert len(make_profile("sqrt-rule").conditions()) == 32


def test_profile_json_round_trip(tmp_path):
    for name in PROFILES:
        prof = make_profile(name, "desk", 5)
        assert ExperimentProfile.from_dict(json.loads(json.dumps(prof.to_dict()))) == prof
        assert load_profile(prof.save(tmp_path / f"{name}.json")) == prof


def test_bad_profile_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x"}')
    with pytest.raises(ValueError):
        load_profile(path)


def test_unknown_profile():
    with pytest.raises(KeyError):
        make_profile("no-such-thing")


def test_config_hash_tracks_every_field():
    base = make_profile("vanilla")
    changed = {
        "name": "other",
        "arch": replace(base.arch, fc_widths=(100, 1)),
        "relation": replace(base.relation, mlp_widths=(8, 1)),
        "freeze": FreezeSpec(fc_frozen=True),
        "rules": (Rule(RuleKind.SQRT),),
        "predictive": (Feature.SIZE,),
        "problems_per_condition": 7,
        "scale": Scale.FULL,
        "base_seed": 1,
        "steps": 3,
        "lr": 2e-5,
        "dtype": "float32",
        "render": replace(base.render, background=0.05),
    }
    assert set(changed) == {f.name for f in fields(ExperimentProfile)}
    hashes = {base.config_hash()}
    for k, v in changed.items():
        h = replace(base, **{k: v}).config_hash()
        assert h not in hashes, k
        hashes.add(h)
    assert make_profile("vanilla").config_hash() == base.config_hash()


def test_mismatched_resolutions_rejected():
    base = make_profile("vanilla")
    with pytest.raises(ValueError):
        replace(base, arch=EncoderArch(input_resolution=64))


# seeds -----------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 200), st.integers(0, 10_000))
def test_derive_seed_is_a_pure_function(base, c, k):
    assert derive_seed(base, "vanilla", c, k) == derive_seed(base, "vanilla", c, k)
    assert derive_seed(base, "vanilla", c, k) != derive_seed(base, "vanilla", c, k + 1)
    assert derive_seed(base, "vanilla", c, k) != derive_seed(base, "frozen-fc", c, k)


def test_condition_indices_unique_and_stable_under_subsets():
    prof = make_profile("vanilla")
    idx = [i for i, _ in prof.conditions()]
    assert len(set(idx)) == len(idx)
    sub = replace(prof, predictive=(Feature.SIZE,))
    full = dict((c, i) for i, c in prof.conditions())
    assert all(full[c] == i for i, c in sub.conditions())


def test_worker_count(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3 and worker_count(2) == 2
    monkeypatch.setenv(WORKERS_ENV, "lots")
    with pytest.raises(ValueError):
        worker_count()


# runs ------------------------------------------------------------------------------


def _strip(rows):
    return [replace(r, wall_time=0.0) for r in rows]


def test_run_condition_is_deterministic():
    prof = tiny_profile()
    a = run_condition(prof, color_easy(), 4)
    b = run_condition(prof, color_easy(), 4)
    assert a.result == b.result and _strip(a.rows) == _strip(b.rows)
    assert a.result.n == 4 and [r.problem_idx for r in a.rows] == [0, 1, 2, 3]


def test_run_condition_needs_problems():
    with pytest.raises(ValueError):
        run_condition(tiny_profile(), color_easy(), 0)


def test_seed_argument_changes_problems():
    prof = tiny_profile()
    a = run_condition(prof, color_easy(), 3)
    b = run_condition(prof, color_easy(), 3, seed=11)
    assert [r.seed for r in a.rows] != [r.seed for r in b.rows]


def test_worker_count_does_not_change_results():
    prof = tiny_profile()
    one = run_condition(prof, color_easy(), 4, workers=1)
    two = run_condition(prof, color_easy(), 4, workers=2)
    assert _strip(one.rows) == _strip(two.rows)


def test_condition_outside_profile():
    with pytest.raises(ValueError):
        run_condition(tiny_profile("exp-rule"), enumerate_conditions(Feature.NUMBER)[0], 1)


def test_suite_subset_and_aggregates():
    prof = tiny_profile(n=2)
    suite = run_suite(prof, select=lambda c: c.difficulty == 0)
    assert len(suite.runs) == 3 and len(suite.rows) == 6
    assert set(suite.by_difficulty()) == {0}
    assert suite.pooled().n == 6
    with pytest.raises(ValueError):
        run_suite(prof, select=lambda c: False)


def test_suite_to_dir_is_byte_identical_and_reusable(tmp_path):
    prof = tiny_profile(n=2)
    sel = lambda c: c.difficulty == 0
    a = experiments.run_suite_to_dir(prof, tmp_path / "a", sel, select_key="d0")
    experiments.run_suite_to_dir(prof, tmp_path / "b", sel, select_key="d0")
    name = next((tmp_path / "a").glob("*.conditions.csv")).name
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    again = experiments.run_suite_to_dir(prof, tmp_path / "a", sel, select_key="d0", reuse=True)
    assert again.rows == a.rows
    for r in a.rows:
        r.check()
    assert a.global_aggregate().k == 3


# reports ----------------------------------------------------------------------------


def _rows():
    prof = tiny_profile(n=2)
    return report.suite_rows(run_suite(prof, select=lambda c: c.difficulty <= 1)), prof


def test_condition_csv_round_trip(tmp_path):
    rows, _ = _rows()
    path = report.write_condition_csv(rows, tmp_path / "c.csv")
    assert report.read_condition_csv(path) == rows
    head = path.read_text().splitlines()[0]
    assert head == "profile,pf,rule,condition_bitmask,n,successes,p,se,ci95,seed,config_hash"
    for r in rows:
        assert r.successes <= r.n
        r.check()


def test_problem_csv_round_trip(tmp_path):
    prof = tiny_profile()
    run = run_condition(prof, color_easy(), 3)
    path = report.write_problem_csv(run.rows, tmp_path / "p.csv")
    assert report.read_problem_csv(path) == run.rows


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 1000), st.floats(0, 1)), min_size=1, max_size=10))
def test_condition_rows_round_trip_any_counts(counts):
    import tempfile
    from pathlib import Path

    from seqreason.analysis import binomial_ci

    prof = make_profile("vanilla")
    rows = [report.ConditionRow.make(prof, enumerate_conditions(Feature.SIZE)[i % 16],
                                     binomial_ci(int(n * f), n)) for i, (n, f) in enumerate(counts)]
    with tempfile.TemporaryDirectory() as d:
        assert report.read_condition_csv(report.write_condition_csv(rows, Path(d) / "x.csv")) == rows


def test_tampered_row_fails_check():
    rows, _ = _rows()
    with pytest.raises(ValueError):
        replace(rows[0], p=rows[0].p + 0.01).check()


def test_empty_results_rejected(tmp_path):
    with pytest.raises(ValueError):
        report.write_condition_csv([], tmp_path / "x.csv")
    with pytest.raises(ValueError):
        report.write_problem_csv([], tmp_path / "x.csv")
    with pytest.raises(ValueError):
        report.bar_chart_svg([], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        report.write_curve_csv([], tmp_path / "x.csv")


def test_write_failure_names_the_path(tmp_path):
    rows, _ = _rows()
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(report.ReportError, match="file"):
        report.write_condition_csv(rows, blocker / "sub" / "c.csv")


def test_svgs_are_well_formed(tmp_path):
    rows, _ = _rows()
    ET.parse(report.bar_chart_svg(rows, tmp_path / "bar.svg", "t"))
    ET.parse(report.line_chart_svg({"a": [(0, 0.2, 0.1), (5, 0.6, 0.05)]}, tmp_path / "line.svg"))


def test_dump_problem(tmp_path):
    prof = tiny_profile()
    cond = report.parse_condition("number/linear/color+shape")
    paths = report.dump_problem(prof, cond, 42, tmp_path)
    assert sorted(p.name for p in paths) == sorted(
        [f"seq{i}.pgm" for i in range(1, 6)] + [f"choice{i}.pgm" for i in range(4)] + ["problem.json"])
    p, seq, choices = build_problem(prof, cond, 42)
    manifest = json.loads((tmp_path / "problem.json").read_text())
    assert ProblemFeatures.from_dict(manifest) == p
    assert manifest["render"]["resolution"] == 16
    np.testing.assert_allclose(read_pgm(tmp_path / "seq1.pgm"), seq[0], atol=0.5 / 255 + 1e-12)


def test_parse_condition():
    c = report.parse_condition("size/none")
    assert c == TestCondition(Feature.SIZE)
    assert report.parse_condition("color/alternating-1-4/number").rule == Rule(RuleKind.ALTERNATING, (1, 4))
    for bad in ("size", "shape/none", "size/cubic/none", "color/linear/colour"):
        with pytest.raises(ValueError):
            report.parse_condition(bad)


# sessions -----------------------------------------------------------------------------


def test_schedule_divisibility():
    with pytest.raises(ValueError):
        Schedule(total_problems=100, block_size=30)
    with pytest.raises(ValueError):
        Schedule(pfs=(Feature.SIZE, Feature.SIZE))
    with pytest.raises(ValueError):
        Schedule.make("shuffled", 100)
    assert Schedule.make("blocked", 30_000).block_size == 15_000
    assert Schedule.make("interleaved", 30_000).block_size == 5


def test_schedule_orders():
    b = Schedule.make("blocked", 20, test_every=5)
    assert b.training_order() == [Feature.SIZE] * 10 + [Feature.NUMBER] * 10
    assert b.test_points() == [0, 5, 10, 15, 20] and b.mode == "blocked"
    i = Schedule.make("interleaved", 20, test_every=5)
    assert i.training_order()[:10] == [Feature.SIZE] * 5 + [Feature.NUMBER] * 5 and i.mode == "interleaved"
    full = Schedule()
    assert len(full.test_points()) == 17


def test_conflict_controlled_conditions():
    assert easy_condition(Feature.SIZE).distractors == frozenset()
    assert easy_condition(Feature.SIZE, True).pinned == ((Feature.NUMBER, 5),)
    assert hard_condition(Feature.NUMBER).difficulty == 4
    h = hard_condition(Feature.SIZE, True)
    assert Feature.NUMBER not in h.distractors and h.difficulty == 3 and h.pinned == ((Feature.NUMBER, 5),)
    assert CONFLICT_PIN[Feature.NUMBER] == (Feature.SIZE, 4)
    p, _, _ = build_problem(tiny_profile(), h, 3)
    assert all(fv.count == 5 for fv in p.sequence + p.choices)


def test_crystallization_runs_and_is_deterministic():
    prof = tiny_profile()
    a = run_crystallization(prof, Feature.NUMBER, (Feature.NUMBER,), n_train=2, n_networks=2,
                            tests_per_condition=1, with_naive=True)
    b = run_crystallization(prof, Feature.NUMBER, (Feature.NUMBER,), n_train=2, n_networks=2,
                            tests_per_condition=1, with_naive=True, workers=2)
    assert a.trained == b.trained and a.naive == b.naive
    assert len(a.condition_results(Feature.NUMBER)) == 16
    assert a.pooled(Feature.NUMBER).n == 32
    assert len(a.train_loss) == 2 and len(a.train_loss[0]) == 2
    with pytest.raises(ValueError):
        run_crystallization(prof, Feature.NUMBER, n_networks=0)


def test_crystallization_without_naive_arm():
    prof = tiny_profile()
    res = run_crystallization(prof, Feature.COLOR, n_train=0, n_networks=1, tests_per_condition=1)
    assert res.naive is None
    with pytest.raises(ValueError):
        res.condition_results(Feature.COLOR, naive=True)


def test_schedule_run(tmp_path):
    prof = tiny_profile()
    sched = Schedule.make("blocked", 4, test_every=2, test_problems=2)
    res = run_schedule(prof, sched, n_networks=2)
    assert [p.step for p in res.curve(Feature.SIZE)] == [0, 2, 4]
    assert res.at(4, Feature.NUMBER).n == 4
    assert 0 <= res.final_joint() <= 1
    path = report.write_curve_csv([res], tmp_path / "curve.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(report.CURVE_COLUMNS) and len(lines) == 7
    ET.parse(report.curves_svg(res, tmp_path / "curve.svg"))
    with pytest.raises(KeyError):
        res.at(3, Feature.SIZE)


def test_schedule_tests_at_the_start():
    prof = tiny_profile()
    res = run_schedule(prof, Schedule.make("blocked", 2, test_every=1, test_problems=3), n_networks=1)
    assert res.schedule.total_problems == 2
    assert res.at(0, Feature.SIZE).n == 3


def test_correlation_and_order_outputs(tmp_path):
    prof = tiny_profile()
    rows = experiments.correlation_trend(prof, 2, tmp_path, record_steps={prof.steps}, per_value=2)
    assert {r[4] for r in rows} == {0, prof.steps}
    order = experiments.order_gradient_study(prof, 3, tmp_path)
    assert len(order) == 3 and all(-1 <= r[3] <= 1 for r in order)
    assert len(list(tmp_path.glob("*.csv"))) == 2


def test_ratio_regression_outputs(tmp_path):
    prof = replace(tiny_profile(), predictive=(Feature.COLOR,))
    rows, reg = experiments.correlation_ratio_regression(prof, 2, tmp_path, per_value=2)
    assert len(rows) == 12 and all(r[2] == 2 for r in rows)
    assert reg.n <= 12 and np.isfinite(reg.slope)
    assert {p.name for p in tmp_path.iterdir()} == {"ratio_points_vanilla.csv", "ratio_regression_vanilla.csv"}
