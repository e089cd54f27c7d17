"""Command-line front end.

Every subcommand accepts ``--seed``, ``--out``, ``--config`` and ``--threads``.
A config file is a flat JSON object whose keys are the long flag names with
dashes replaced by underscores; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bandit, kl, meanfield, sweep
from .meanfield import OdeConfig, fmt_num
from .noise import NoiseError, NoiseSpec, learnability_argmax, learnability_speed, reward_std, spec_from_flags, youden
from .simplex import BlockState

DEFAULTS = {
    "seed": 0,
    "out": "-",
    "threads": 0,
    "K": 3,
    "M": 2,
    "p0": 0.4,
    "eta": 1.0,
    "step": 0.05,
    "horizon": 20.0,
    "method": "rk4_fixed",
    "tol": 1e-9,
    "G": 8,
    "steps": 1000,
    "replicas": 1,
    "mode": "reinforce",
    "clip_low": 0.0,
    "clip_high": 0.0,
    "beta": 0.0,
    "p_ref": None,
    "kl_mode": "two_class",
    "nu": 1.0,
    "record_every": 1,
    "engine": "ode",
    "points": None,
    "point_order": "fpr_fnr",
    "j_grid": None,
    "factorization": "symmetric",
    "s2": None,
    "t2": None,
    "beta_min": 1e-3,
    "beta_max": 1e3,
    "n_beta": 25,
    "n": 101,
    "tpr": None,
    "fpr": None,
    "delta_fn": None,
    "delta_fp": None,
}


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _pairs(text: str) -> list[list[float]]:
    """``"a:b,c:d"`` -> [[a, b], [c, d]]."""
    return [[float(x) for x in item.split(":")] for item in text.split(",") if item.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output file ('-' for stdout) or, for sweeps, a directory")
    g.add_argument("--config", help="JSON file of default values")
    g.add_argument("--threads", type=int, help="worker processes (0 = all cores)")
    return p


def _noise_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("verifier noise (give one pair)")
    g.add_argument("--tpr", type=float)
    g.add_argument("--fpr", type=float)
    g.add_argument("--delta-fn", dest="delta_fn", type=float)
    g.add_argument("--delta-fp", dest="delta_fp", type=float)


def _shape_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, help="number of correct arms")
    p.add_argument("--M", type=int, help="number of incorrect arms")
    p.add_argument("--p0", type=float, help="initial bad mass (uniform within blocks)")


def _ode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--method", choices=["rk4_fixed", "rk45_adaptive"])
    p.add_argument("--tol", type=float)


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--G", type=int, help="group size")
    p.add_argument("--steps", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--mode", choices=list(bandit.MODES))
    p.add_argument("--clip-low", dest="clip_low", type=float)
    p.add_argument("--clip-high", dest="clip_high", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--p-ref", dest="p_ref", type=float)
    p.add_argument("--kl-mode", dest="kl_mode", choices=list(kl.MODES))
    p.add_argument("--nu", type=float)
    p.add_argument("--record-every", dest="record_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="grpo-mf", description="Mean-field and bandit experiments on noisy-verifier policy optimisation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ode", parents=[common], help="integrate the deterministic flow")
    _noise_flags(p)
    _shape_flags(p)
    _ode_flags(p)

    p = sub.add_parser("simulate", parents=[common], help="run the stochastic bandit")
    _noise_flags(p)
    _shape_flags(p)
    _sim_flags(p)
    p.add_argument("--eta", type=float)

    p = sub.add_parser("sweep", parents=[common], help="run a grid of noise settings")
    _shape_flags(p)
    _ode_flags(p)
    _sim_flags(p)
    p.add_argument("--engine", choices=list(sweep.ENGINES))
    p.add_argument("--points", type=_pairs, help="noise pairs 'a:b,c:d'")
    p.add_argument("--point-order", dest="point_order", choices=["fpr_fnr", "deltas"])
    p.add_argument("--j-grid", dest="j_grid", type=_float_list, help="comma list of J values")
    p.add_argument("--factorization", choices=list(sweep.FACTORIZATIONS))

    p = sub.add_parser("transition", parents=[common], help="estimate the critical J from a sweep")
    _shape_flags(p)
    _ode_flags(p)
    _sim_flags(p)
    p.add_argument("--engine", choices=list(sweep.ENGINES))
    p.add_argument("--j-grid", dest="j_grid", type=_float_list)
    p.add_argument("--factorization", choices=list(sweep.FACTORIZATIONS))

    p = sub.add_parser("fixed-point", parents=[common], help="KL-anchored fixed points over a beta grid")
    _noise_flags(p)
    p.add_argument("--eta", type=float)
    p.add_argument("--p-ref", dest="p_ref", type=float)
    p.add_argument("--s2", type=float, help="good-block collision mass (default 1/K)")
    p.add_argument("--t2", type=float, help="bad-block collision mass (default 1/M)")
    p.add_argument("--K", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--beta-min", dest="beta_min", type=float)
    p.add_argument("--beta-max", dest="beta_max", type=float)
    p.add_argument("--n-beta", dest="n_beta", type=int)

    p = sub.add_parser("phase-surface", parents=[common], help="variance and learnability optima over a delta grid")
    p.add_argument("--n", type=int, help="grid points per axis on [0, 1]")

    p = sub.add_parser("learnability", parents=[common], help="learnability profile for one verifier")
    _noise_flags(p)
    p.add_argument("--n", type=int, help="grid points on [0, 1]")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    opts = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise SystemExit("config file must hold a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in cfg.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")})
    return opts


def _spec(o: dict) -> NoiseSpec:
    return spec_from_flags(o["tpr"], o["fpr"], o["delta_fn"], o["delta_fp"])


def _initial(o: dict) -> np.ndarray:
    K, M, p0 = o["K"], o["M"], o["p0"]
    return np.concatenate((np.full(K, (1 - p0) / K), np.full(M, p0 / M)))


def _ode_cfg(o: dict) -> OdeConfig:
    return OdeConfig(
        eta=o["eta"], step=o["step"], horizon=o["horizon"], method=o["method"], abs_tol=o["tol"], rel_tol=o["tol"]
    )


def _sim_cfg(o: dict) -> bandit.SimConfig:
    return bandit.SimConfig(
        K=o["K"], M=o["M"], G=o["G"], eta=o["eta"], steps=o["steps"], clip_low=o["clip_low"],
        clip_high=o["clip_high"], beta=o["beta"], p_ref=o["p_ref"], kl_mode=o["kl_mode"], seed=o["seed"],
        mode=o["mode"], record_every=o["record_every"], nu=o["nu"],
    )  # fmt: skip


def _open_out(target: str):
    if target == "-":
        return sys.stdout
    Path(target).parent.mkdir(parents=True, exist_ok=True)
    return open(target, "w", newline="")


def _emit(target: str, header, rows) -> None:
    fh = _open_out(target)
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_num(v) for v in r])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _sweep_points(o: dict) -> list[NoiseSpec]:
    if o["j_grid"] is not None:
        fac = sweep.FACTORIZATIONS[o["factorization"]]
        return [fac(J) for J in o["j_grid"]]
    if o["points"] is None:
        raise NoiseError("a sweep needs --points or --j-grid")
    order = o["point_order"]
    if order == "fpr_fnr":
        return [NoiseSpec(fnr, fpr) for fpr, fnr in o["points"]]
    return [NoiseSpec(a, b) for a, b in o["points"]]


def _sweep_spec(o: dict, points) -> sweep.SweepSpec:
    out = o["out"] if o["out"] != "-" else "sweep_out"
    return sweep.SweepSpec(
        points=tuple(points),
        engine=o["engine"],
        K=o["K"],
        M=o["M"],
        p0=o["p0"],
        ode=_ode_cfg(o),
        sim=_sim_cfg(o),
        replicas=o["replicas"],
        out=out,
        seed=o["seed"],
        threads=o["threads"],
    )


# ---------------------------------------------------------------- commands


def cmd_ode(o: dict) -> int:
    x0 = _initial(o)
    st = BlockState(o["p0"], x0[: o["K"]] / x0[: o["K"]].sum(), x0[o["K"] :] / x0[o["K"] :].sum())
    traj = meanfield.integrate(st, _spec(o), _ode_cfg(o))
    _emit(o["out"], traj.columns(), traj.rows())
    return 0


def cmd_simulate(o: dict) -> int:
    traj = bandit.run(_sim_cfg(o), _spec(o), _initial(o), replicas=o["replicas"])
    rows = [r for j in range(traj.n_replicas) for r in traj.replica_rows(j)]
    _emit(o["out"], traj.columns(), rows)
    return 0


def cmd_sweep(o: dict) -> int:
    results = sweep.run_sweep(_sweep_spec(o, _sweep_points(o)))
    failed = [r for r in results if r.status != "ok"]
    for r in failed:
        print(f"run {r.index}: {r.status}", file=sys.stderr)
    return 1 if failed else 0


def cmd_transition(o: dict) -> int:
    if o["j_grid"] is None:
        o = dict(o, j_grid=[-0.2, -0.1, 0.0, 0.1, 0.2])
    results = sweep.run_sweep(_sweep_spec(o, _sweep_points(o)))
    try:
        Jc = sweep.detect_transition(results)
    except sweep.TransitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"critical_J,{fmt_num(Jc)}")
    return 1 if any(r.status != "ok" for r in results) else 0


FIXED_POINT_COLUMNS = ["beta", "p_star", "stability_sign", "strong_kl_pred", "weak_kl_pred"]


def fixed_point_rows(spec: NoiseSpec, eta: float, p_ref: float, s2: float, t2: float, betas) -> list[list]:
    rows = []
    for b in betas:
        cfg = kl.KlConfig(beta=float(b), p_ref=p_ref)
        ps = kl.interior_fixed_point(spec, eta, cfg, s2, t2)
        rows.append(
            [
                float(b),
                ps,
                kl.fixed_point_stability(ps, spec, eta, cfg, s2, t2),
                kl.strong_kl_prediction(spec, eta, cfg, s2, t2),
                kl.weak_kl_prediction(spec, eta, cfg, s2, t2),
            ]
        )
    return rows


def cmd_fixed_point(o: dict) -> int:
    if o["p_ref"] is None:
        raise NoiseError("fixed-point needs --p-ref")
    s2 = o["s2"] if o["s2"] is not None else 1.0 / o["K"]
    t2 = o["t2"] if o["t2"] is not None else 1.0 / o["M"]
    betas = np.geomspace(o["beta_min"], o["beta_max"], o["n_beta"])
    _emit(o["out"], FIXED_POINT_COLUMNS, fixed_point_rows(_spec(o), o["eta"], o["p_ref"], s2, t2, betas))
    return 0


def cmd_phase_surface(o: dict) -> int:
    grid = np.linspace(0.0, 1.0, o["n"])
    rows = sweep.phase_surface_rows(grid, grid)
    _emit(o["out"], sweep.PHASE_SURFACE_COLUMNS, rows)
    return 0


def cmd_learnability(o: dict) -> int:
    spec = _spec(o)
    if youden(spec) <= 0:
        raise NoiseError("learnability needs J > 0")
    p = np.linspace(0.0, 1.0, o["n"])
    L = learnability_speed(spec, p)
    sig = reward_std(spec, p)
    star = learnability_argmax(spec)
    rows = [[pi, Li, si, star] for pi, Li, si in zip(p, L, sig)]
    _emit(o["out"], ["p", "learnability", "sigma", "p_dagger"], rows)
    return 0


COMMANDS = {
    "ode": cmd_ode,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "transition": cmd_transition,
    "fixed-point": cmd_fixed_point,
    "phase-surface": cmd_phase_surface,
    "learnability": cmd_learnability,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = resolve(args)
    try:
        return COMMANDS[args.command](opts)
    except (NoiseError, ValueError, sweep.SweepError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
