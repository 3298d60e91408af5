"""Correlation trend over optimization steps, order covariance vs gradients, and the ratio regression."""
from __future__ import annotations

import argparse
import logging

import numpy as np

from seqreason.harness import experiments, make_profile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", default="desk", choices=["desk", "full"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/analyses")
    ap.add_argument("--networks", type=int, default=100, help="networks for the correlation trend")
    ap.add_argument("--order-problems", type=int, default=200)
    ap.add_argument("--ratio-per-condition", type=int, default=50)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    prof = make_profile("vanilla", args.scale, args.seed)

    rows = experiments.correlation_trend(prof, args.networks, args.out, workers=args.workers)
    for step in range(prof.steps + 1):
        by_layer = {}
        for r in rows:
            if r[4] == step:
                by_layer.setdefault(r[3], []).append(r[5])
        print(f"step {step}: " + " ".join(f"{k} {np.mean(v):.3f}" for k, v in sorted(by_layer.items())))

    order = experiments.order_gradient_study(prof, args.order_problems, args.out, workers=args.workers)
    print(f"order covariance vs activation-gradient norm: median r {np.median([r[3] for r in order]):.3f}")
    print(f"order covariance vs weight-gradient norm: median r {np.median([r[4] for r in order]):.3f}")

    _, reg = experiments.correlation_ratio_regression(prof, args.ratio_per_condition, args.out,
                                                      workers=args.workers)
    print(f"logit(accuracy) ~ ratio: slope {reg.slope:.3f}, p {reg.p_value:.3g}, R^2 {reg.r2:.3f}")


if __name__ == "__main__":
    main()
