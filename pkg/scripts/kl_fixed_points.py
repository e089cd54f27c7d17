#!/usr/bin/env python3
"""Anchored fixed point across a log-spaced range of penalty strengths."""

import argparse
from pathlib import Path

import numpy as np

from grpo_meanfield.cli import FIXED_POINT_COLUMNS, fixed_point_rows
from grpo_meanfield.meanfield import write_rows
from grpo_meanfield.noise import NoiseSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta-fn", type=float, default=0.5)
    ap.add_argument("--delta-fp", type=float, default=0.6)
    ap.add_argument("--p-ref", type=float, default=0.5)
    ap.add_argument("--s2", type=float, default=1.0)
    ap.add_argument("--t2", type=float, default=1.0)
    ap.add_argument("--out", default="out/kl_fixed_points.csv")
    a = ap.parse_args()
    betas = np.logspace(-6, 6, 49)
    rows = fixed_point_rows(NoiseSpec(a.delta_fn, a.delta_fp), 1.0, a.p_ref, a.s2, a.t2, betas)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    write_rows(a.out, FIXED_POINT_COLUMNS, rows)
    for r in rows[::8]:
        print("  ".join(f"{c}={v:.6g}" for c, v in zip(FIXED_POINT_COLUMNS, r)))
    print(f"wrote {len(rows)} rows to {a.out}")


if __name__ == "__main__":
    main()
