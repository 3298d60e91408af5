"""Command-line entry point: ``seqreason <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from ..probgen import PREDICTIVE_FEATURES, Feature
from . import experiments, report
from .profiles import PROFILES, WORKERS_ENV, ExperimentProfile, Scale, load_profile, make_profile
from .sessions import Schedule

log = logging.getLogger("seqreason")


def _profile(args, name: str | None = None) -> ExperimentProfile:
    if getattr(args, "profile_json", None):
        prof = load_profile(args.profile_json)
        if args.seed is not None:
            prof = replace(prof, base_seed=args.seed)
        return prof
    overrides = {}
    if getattr(args, "n_problems", None):
        overrides["problems_per_condition"] = args.n_problems
    return make_profile(name or args.profile, args.scale, args.seed or 0, **overrides)


def _select(args):
    pfs = {Feature(p) for p in args.pf} if getattr(args, "pf", None) else None
    maxd = getattr(args, "max_distractors", None)

    def keep(c):
        return (pfs is None or c.predictive in pfs) and (maxd is None or c.difficulty <= maxd)

    key = f"pf={sorted(p.value for p in pfs) if pfs else 'all'};maxd={maxd}"
    return (keep, key) if pfs is not None or maxd is not None else (None, "all")


def _common(p: argparse.ArgumentParser, profile: bool = True) -> None:
    if profile:
        p.add_argument("--profile", default="vanilla", choices=sorted(PROFILES))
        p.add_argument("--profile-json", help="JSON file with a full ExperimentProfile; overrides --profile/--scale")
    p.add_argument("--scale", default="desk", choices=[s.value for s in Scale])
    p.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--reuse", action="store_true", help="reuse finished outputs with an identical configuration")


def _suite_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-problems", type=int, default=None, help="problems per condition")
    p.add_argument("--pf", action="append", choices=[f.value for f in PREDICTIVE_FEATURES],
                   help="restrict to a predictive feature (repeatable)")
    p.add_argument("--max-distractors", type=int, default=None)


def _cmd_suite(args, name: str | None = None) -> int:
    prof = _profile(args, name)
    select, key = _select(args)
    summary = experiments.run_suite_to_dir(prof, args.out, select, reuse=args.reuse, workers=args.workers,
                                           select_key=key)
    print(f"{prof.name} ({prof.scale.value}, seed {prof.base_seed}, hash {prof.config_hash()})")
    print(summary.text())
    return 0


def _cmd_ablation(args) -> int:
    return _cmd_suite(args, args.name)


def _cmd_crystallize(args) -> int:
    prof = _profile(args)
    test_pfs = tuple(Feature(p) for p in (args.test_pf or [args.train_pf]))
    res = experiments.run_crystallization_to_dir(prof, Feature(args.train_pf), test_pfs, args.out, args.n_train,
                                                 args.n_networks, args.tests_per_condition, args.naive,
                                                 args.reuse, args.workers)
    for pf in test_pfs:
        t = res.pooled(pf)
        line = f"{args.train_pf} -> {pf.value}: trained {t.p:.3f} +/- {t.ci95:.3f}"
        if res.naive is not None:
            n = res.pooled(pf, naive=True)
            line += f", naive {n.p:.3f} +/- {n.ci95:.3f}"
        print(line)
    return 0


def _cmd_schedule(args) -> int:
    prof = _profile(args)
    pfs = tuple(Feature(p) for p in args.pfs.split(","))
    sched = Schedule.make(args.mode, args.total, pfs=pfs, test_every=args.test_every,
                          test_problems=args.test_problems, conflict_control=args.conflict_control)
    res = experiments.run_schedule_to_dir(prof, sched, args.out, args.n_networks, args.reuse, args.workers)
    for pf in pfs:
        pts = " ".join(f"{p.step}:{p.result.p:.2f}" for p in res.curve(pf))
        print(f"{pf.value}: {pts}")
    print(f"final joint accuracy {res.final_joint():.3f}")
    return 0


def _cmd_dump(args) -> int:
    prof = _profile(args)
    cond = report.parse_condition(args.condition)
    paths = report.dump_problem(prof, cond, args.seed or 0, args.out)
    print("\n".join(str(p) for p in paths))
    return 0


def _cmd_correlations(args) -> int:
    prof = _profile(args)
    rows = experiments.correlation_trend(prof, args.n_networks, args.out, workers=args.workers)
    out = max(r[3] for r in rows)
    for step in sorted({r[4] for r in rows}):
        vals = [r[5] for r in rows if r[3] == out and r[4] == step]
        print(f"step {step}: output |r| {sum(vals) / len(vals):.3f}")
    return 0


def _cmd_order_grad(args) -> int:
    import numpy as np

    prof = _profile(args)
    rows = experiments.order_gradient_study(prof, args.n_problems, args.out, workers=args.workers)
    print(f"median activation-gradient correlation {np.median([r[3] for r in rows]):.3f}")
    print(f"median weight-gradient correlation {np.median([r[4] for r in rows]):.3f}")
    return 0


def _cmd_ratio(args) -> int:
    prof = _profile(args)
    _, reg = experiments.correlation_ratio_regression(prof, args.n_per_condition, args.out, workers=args.workers)
    print(f"slope {reg.slope:.3f} (p={reg.p_value:.2g}), intercept {reg.intercept:.3f}, R^2 {reg.r2:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqreason", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("suite", help="run every condition of a profile")
    _common(p)
    _suite_args(p)
    p.set_defaults(fn=_cmd_suite)

    p = sub.add_parser("ablation", help="run a named ablation profile")
    p.add_argument("--name", required=True, choices=sorted(PROFILES))
    _common(p, profile=False)
    _suite_args(p)
    p.set_defaults(fn=_cmd_ablation)

    p = sub.add_parser("crystallize", help="practice on easy problems, then sweep the test conditions")
    _common(p)
    p.add_argument("--train-pf", required=True, choices=[f.value for f in PREDICTIVE_FEATURES])
    p.add_argument("--test-pf", action="append", choices=[f.value for f in PREDICTIVE_FEATURES])
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-networks", type=int, default=50)
    p.add_argument("--tests-per-condition", type=int, default=10)
    p.add_argument("--naive", action="store_true", help="also solve every test problem with a fresh network")
    p.set_defaults(fn=_cmd_crystallize)

    p = sub.add_parser("schedule", help="blocked or interleaved training on two predictive features")
    _common(p)
    p.add_argument("--mode", required=True, choices=["blocked", "interleaved"])
    p.add_argument("--conflict-control", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--pfs", default="size,number", help="the two predictive features, comma separated")
    p.add_argument("--total", type=int, default=30_000)
    p.add_argument("--test-every", type=int, default=1875)
    p.add_argument("--test-problems", type=int, default=25)
    p.add_argument("--n-networks", type=int, default=20)
    p.set_defaults(fn=_cmd_schedule)

    p = sub.add_parser("dump-problem", help="write one problem as PGM images and a JSON manifest")
    _common(p)
    p.add_argument("--condition", required=True, help="e.g. number/linear/color+shape or size/none")
    p.set_defaults(fn=_cmd_dump)

    p = sub.add_parser("correlations", help="FC-layer |r| with the predictive feature over optimization steps")
    _common(p)
    p.add_argument("--n-networks", type=int, default=100)
    p.set_defaults(fn=_cmd_correlations)

    p = sub.add_parser("order-grad", help="order covariance vs gradient norm of conv-output neurons")
    _common(p)
    p.add_argument("--n-problems", type=int, default=200)
    p.set_defaults(fn=_cmd_order_grad)

    p = sub.add_parser("ratio-regression", help="accuracy vs correlation ratio, logit regression")
    _common(p)
    p.add_argument("--n-per-condition", type=int, default=20)
    p.set_defaults(fn=_cmd_ratio)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
