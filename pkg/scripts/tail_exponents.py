#!/usr/bin/env python3
"""Late-time decay of the bad mass (or good mass when J < 0) from the ODE.

Writes log-spaced trajectories and prints fitted log-log slopes.
"""

import argparse
from pathlib import Path

from grpo_meanfield.meanfield import OdeConfig, integrate, tail_exponent
from grpo_meanfield.noise import NoiseSpec
from grpo_meanfield.simplex import BlockState

CASES = {
    "fn_only": (NoiseSpec(0.1, 0.0), "bad", (1e4, 1e6)),
    "fp_only": (NoiseSpec(0.0, 0.1), "bad", (1e2, 1e4)),
    "reversed": (NoiseSpec(0.5, 0.6), "good", (1e4, 1e6)),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/tails")
    ap.add_argument("--K", type=int, default=1)
    ap.add_argument("--M", type=int, default=1)
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = OdeConfig(eta=1.0, step=1.0, horizon=1e7, method="rk45_adaptive", log_samples=400, abs_tol=1e-12, rel_tol=1e-10)
    for name, (spec, mass, window) in CASES.items():
        tr = integrate(BlockState.uniform(0.5, a.K, a.M), spec, cfg)
        tr.write_csv(out / f"{name}.csv")
        print(f"{name:9s} dFN={spec.delta_fn:g} dFP={spec.delta_fp:g}: slope of {mass} mass on {window} = {tail_exponent(tr, window, mass):+.4f}")


if __name__ == "__main__":
    main()
