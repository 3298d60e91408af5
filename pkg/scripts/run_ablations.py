"""Run the suite of every named profile (vanilla plus all ablations).

Usage: python scripts/run_ablations.py --scale desk --out results/ablations [--only frozen-fc ...]
"""
from __future__ import annotations

import argparse
import logging

from seqreason.harness import PROFILES, experiments, make_profile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", default="desk", choices=["desk", "full"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/ablations")
    ap.add_argument("--only", action="append", choices=sorted(PROFILES))
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.only or PROFILES:
        prof = make_profile(name, args.scale, args.seed)
        summary = experiments.run_suite_to_dir(prof, args.out, reuse=True, workers=args.workers)
        print(f"{name}\n{summary.text()}", flush=True)


if __name__ == "__main__":
    main()
