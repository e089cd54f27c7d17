#!/usr/bin/env python3
"""Run the six-point verifier grid through one engine and print the phase labels."""

import argparse
import os

from grpo_meanfield.bandit import SimConfig
from grpo_meanfield.noise import NoiseSpec
from grpo_meanfield.sweep import SweepSpec, run_sweep

GRID = [(0.0, 0.0), (0.2, 0.1), (0.0, 0.7), (0.7, 0.0), (0.5, 0.5), (0.6, 0.5)]  # (FPR, FNR)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--engine", choices=("ode", "sim", "wright_fisher"), default="sim")
    ap.add_argument("--replicas", type=int, default=100)
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--eta", type=float, default=1e-3)
    ap.add_argument("--G", type=int, default=8)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", default="out/phase_sweep")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    a = ap.parse_args()
    spec = SweepSpec(
        points=tuple(NoiseSpec(fnr, fpr) for fpr, fnr in GRID),
        engine=a.engine,
        sim=SimConfig(G=a.G, eta=a.eta, steps=a.steps, record_every=max(1, a.steps // 500)),
        replicas=a.replicas,
        out=a.out,
        seed=a.seed,
        threads=a.threads,
    )
    for r in run_sweep(spec):
        print(f"FPR={r.fpr:<4g} FNR={r.delta_fn:<4g} J={r.J:+.2f}  p: {r.p0_mean:.4f} -> {r.pT_mean:.4f} (SE {r.pT_se:.1e})  "
              f"median steps to 0.1: {r.hit_01:g}  {r.phase}")
    print(f"summary written to {a.out}/summary.csv")


if __name__ == "__main__":
    main()
