"""Knowledge crystallization (every train/test feature pair) and the four schedule panels.

Defaults follow the published design (1000 practice problems, 50 networks,
10 tests per condition; 30,000-problem schedules, 20 networks). Expect days
of CPU time at those sizes; shrink with the flags for a quick look.
"""
from __future__ import annotations

import argparse
import logging

from seqreason.harness import experiments, make_profile
from seqreason.harness.sessions import Schedule
from seqreason.probgen import PREDICTIVE_FEATURES


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", default="desk", choices=["desk", "full"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/sessions")
    ap.add_argument("--n-train", type=int, default=1000)
    ap.add_argument("--n-networks", type=int, default=50)
    ap.add_argument("--tests-per-condition", type=int, default=10)
    ap.add_argument("--schedule-total", type=int, default=30_000)
    ap.add_argument("--test-every", type=int, default=1875)
    ap.add_argument("--schedule-networks", type=int, default=20)
    ap.add_argument("--skip-crystallization", action="store_true")
    ap.add_argument("--skip-schedules", action="store_true")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    prof = make_profile("vanilla", args.scale, args.seed)
    if not args.skip_crystallization:
        for train in PREDICTIVE_FEATURES:
            res = experiments.run_crystallization_to_dir(prof, train, PREDICTIVE_FEATURES, args.out, args.n_train,
                                                         args.n_networks, args.tests_per_condition,
                                                         with_naive=True, reuse=True, workers=args.workers)
            for pf in PREDICTIVE_FEATURES:
                t, n = res.aggregate(pf), res.aggregate(pf, naive=True)
                print(f"train {train.value} test {pf.value}: {t.mean:.3f} +/- {t.ci95:.3f} "
                      f"(naive {n.mean:.3f} +/- {n.ci95:.3f})", flush=True)
    if not args.skip_schedules:
        for mode in ("blocked", "interleaved"):
            for cc in (True, False):
                sched = Schedule.make(mode, args.schedule_total, test_every=args.test_every, conflict_control=cc)
                res = experiments.run_schedule_to_dir(prof, sched, args.out, args.schedule_networks, reuse=True,
                                                      workers=args.workers)
                print(f"{mode} conflict_control={cc}: final joint {res.final_joint():.3f}", flush=True)


if __name__ == "__main__":
    main()
