"""Parameter sweeps over verifier noise, with reproducible seeding and CSV output.

A sweep directory holds ``summary.csv``, one ``runs/<index>.csv`` per grid
point and ``config.resolved`` (JSON). Every summary row is computed by
reading back the run CSV, so recomputing from the artifacts reproduces it
exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bandit, meanfield
from .meanfield import OdeConfig, fmt_num
from .noise import NoiseError, NoiseSpec, learnability_argmax, learnability_speed, reward_std, variance_argmax, youden
from .simplex import BlockState

ENGINES = ("ode", "sim", "wright_fisher")
THRESHOLDS = (0.5, 0.1, 0.01)
SUMMARY_COLUMNS = [
    "index", "delta_fn", "delta_fp", "tpr", "fpr", "J", "engine", "replicas", "seed",
    "p0_mean", "p0_se", "pT_mean", "pT_se",
    "hit_0.5", "hit_0.1", "hit_0.01", "tail_exponent", "phase", "status",
]  # fmt: skip


class SweepError(RuntimeError):
    pass


class TransitionError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: a list of noise points run with a single engine.

    ``initial`` is the starting arm vector (good arms first); when omitted
    the policy starts with bad mass ``p0`` spread uniformly in each block.
    """

    points: tuple
    engine: str = "ode"
    K: int = 3
    M: int = 2
    p0: float = 0.4
    initial: tuple | None = None
    ode: OdeConfig = field(default_factory=lambda: OdeConfig(eta=1.0, step=0.05, horizon=20.0))
    sim: bandit.SimConfig = field(default_factory=bandit.SimConfig)
    replicas: int = 1
    out: str = "sweep_out"
    seed: int = 0
    threads: int = 0

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise SweepError(f"engine must be one of {ENGINES}")
        if not self.points:
            raise SweepError("empty noise grid")
        pts = tuple(p if isinstance(p, NoiseSpec) else NoiseSpec(*p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if self.replicas < 1:
            raise SweepError("replicas must be >= 1")
        if self.initial is not None:
            x = np.asarray(self.initial, dtype=float)
            if x.size != self.K + self.M or abs(x.sum() - 1) > 1e-12:
                raise SweepError("initial must be a probability vector of length K + M")

    def initial_vector(self) -> np.ndarray:
        if self.initial is not None:
            return np.asarray(self.initial, dtype=float)
        return np.concatenate((np.full(self.K, (1 - self.p0) / self.K), np.full(self.M, self.p0 / self.M)))

    def run_seed(self, index: int) -> int:
        """64-bit seed of grid point ``index``, derived from the base seed."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(index,))
        return int(ss.generate_state(1, np.uint64)[0])

    def to_json(self) -> dict:
        d = asdict(self)
        d["points"] = [[p.delta_fn, p.delta_fp] for p in self.points]
        d["point_order"] = "delta_fn,delta_fp"
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        d.pop("point_order", None)
        d["points"] = tuple(NoiseSpec(a, b) for a, b in d["points"])
        d["ode"] = OdeConfig(**d["ode"])
        sim = dict(d["sim"])
        for k in ("y_ref", "z_ref"):
            if sim.get(k) is not None:
                sim[k] = tuple(sim[k])
        d["sim"] = bandit.SimConfig(**sim)
        if d.get("initial") is not None:
            d["initial"] = tuple(d["initial"])
        return cls(**d)


@dataclass(frozen=True)
class RunSummary:
    index: int
    delta_fn: float
    delta_fp: float
    tpr: float
    fpr: float
    J: float
    engine: str
    replicas: int
    seed: int
    p0_mean: float
    p0_se: float
    pT_mean: float
    pT_se: float
    hit_05: float
    hit_01: float
    hit_001: float
    tail_exponent: float
    phase: str
    status: str = "ok"

    def row(self) -> list:
        return [
            self.index, self.delta_fn, self.delta_fp, self.tpr, self.fpr, self.J, self.engine,
            self.replicas, self.seed, self.p0_mean, self.p0_se, self.pT_mean, self.pT_se,
            self.hit_05, self.hit_01, self.hit_001, self.tail_exponent, self.phase, self.status,
        ]  # fmt: skip


def phase_label(diff: float, se: float, tol: float = 1e-12) -> str:
    """Sign test on final-minus-initial bad mass at 3 standard errors."""
    band = max(3.0 * se, tol) if np.isfinite(se) else tol
    if diff < -band:
        return "learning"
    if diff > band:
        return "anti-learning"
    return "neutral"


# ---------------------------------------------------------------- single run


def _write_run(spec: SweepSpec, index: int, path: Path) -> None:
    point = spec.points[index]
    seed = spec.run_seed(index)
    x0 = spec.initial_vector()
    if spec.engine == "ode":
        st = BlockState(
            float(x0[spec.K :].sum()),
            x0[: spec.K] / x0[: spec.K].sum(),
            x0[spec.K :] / x0[spec.K :].sum(),
        )
        traj = meanfield.integrate(st, point, spec.ode)
        traj.write_csv(path)
        return
    mode = "wright_fisher" if spec.engine == "wright_fisher" else spec.sim.mode
    if spec.engine == "sim" and mode == "wright_fisher":
        raise SweepError("the sim engine needs a sampled update mode, not wright_fisher")
    cfg = replace(spec.sim, K=spec.K, M=spec.M, seed=seed, mode=mode)
    traj = bandit.run(cfg, point, x0, replicas=spec.replicas)
    traj.write_csv(path)


def _read_columns(path: Path) -> dict[str, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: [r[i] for r in body] for i, h in enumerate(header)}


def summarize_run_csv(path, point: NoiseSpec, engine: str, index: int, seed: int, status: str = "ok") -> RunSummary:
    """Summary statistics of one run, computed from its CSV alone."""
    cols = _read_columns(Path(path))
    t = np.array([float(v) for v in cols["t"]])
    p = np.array([float(v) for v in cols["p"]])
    if "replica" in cols:
        rep = np.array([int(v) for v in cols["replica"]])
        ids = np.unique(rep)
        n_t = int(np.sum(rep == ids[0]))
        P = p.reshape(ids.size, n_t).T  # (time, replica)
        t = t[:n_t]
    else:
        P = p[:, None]
    n = P.shape[1]
    mean = P.mean(axis=1)
    se = P.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(P.shape[0])
    hits = []
    for thr in THRESHOLDS:
        below = P <= thr
        first = np.where(below.any(0), t[np.argmax(below, axis=0)], np.nan)
        hits.append(float(np.nanmedian(first)) if np.any(np.isfinite(first)) else float("nan"))
    tail = _tail_from_mean(t, mean)
    diff = float(mean[-1] - mean[0])
    return RunSummary(
        index=index,
        delta_fn=point.delta_fn,
        delta_fp=point.delta_fp,
        tpr=point.tpr,
        fpr=point.fpr,
        J=youden(point),
        engine=engine,
        replicas=n,
        seed=seed,
        p0_mean=float(mean[0]),
        p0_se=float(se[0]),
        pT_mean=float(mean[-1]),
        pT_se=float(se[-1]),
        hit_05=hits[0],
        hit_01=hits[1],
        hit_001=hits[2],
        tail_exponent=tail,
        phase=phase_label(diff, float(se[-1])),
        status=status,
    )


def _tail_from_mean(t: np.ndarray, p: np.ndarray) -> float:
    """Log-log slope over the last decade of time once the mass is below 0.05."""
    ok = (p < 0.05) & (p > 0) & (t > 0)
    if not ok.any():
        return float("nan")
    t_first = t[np.argmax(ok)]
    sel = ok & (t >= max(t_first, t[-1] / 10.0))
    if sel.sum() < 3:
        return float("nan")
    return float(np.polyfit(np.log(t[sel]), np.log(p[sel]), 1)[0])


def _run_one(args):
    spec_json, index, out = args
    spec = SweepSpec.from_json(spec_json)
    path = Path(out) / "runs" / f"{index}.csv"
    point = spec.points[index]
    seed = spec.run_seed(index)
    try:
        _write_run(spec, index, path)
        return summarize_run_csv(path, point, spec.engine, index, seed)
    except Exception as exc:  # a failed run is reported, not fatal
        nan = float("nan")
        return RunSummary(
            index, point.delta_fn, point.delta_fp, point.tpr, point.fpr, youden(point), spec.engine,
            spec.replicas, seed, nan, nan, nan, nan, nan, nan, nan, nan, "failed", f"failed: {exc}",
        )  # fmt: skip


def run_sweep(spec: SweepSpec) -> list[RunSummary]:
    """Run every grid point, write per-run CSVs and the summary; results are ordered by index."""
    out = Path(spec.out)
    try:
        (out / "runs").mkdir(parents=True, exist_ok=True)
        with open(out / "config.resolved", "w") as fh:
            json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise SweepError(f"cannot write to {out}: {exc}") from exc
    jobs = [(spec.to_json(), i, str(out)) for i in range(len(spec.points))]
    workers = spec.threads or os.cpu_count() or 1
    if workers <= 1 or len(jobs) == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_run_one, jobs))
    results.sort(key=lambda r: r.index)
    write_summary(out / "summary.csv", results)
    return results


def write_summary(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in results:
            w.writerow([fmt_num(v) if not isinstance(v, str) else v for v in r.row()])


def replay_run(out_dir, index: int, dest) -> None:
    """Regenerate run ``index`` of a finished sweep from its resolved config."""
    with open(Path(out_dir) / "config.resolved") as fh:
        spec = SweepSpec.from_json(json.load(fh))
    _write_run(spec, index, Path(dest))


# ---------------------------------------------------------------- analysis


def detect_transition(summaries) -> float:
    """Critical J where the mean change in bad mass flips from growth to decay.

    Uses the first positive-to-nonpositive sign change along increasing J,
    linearly interpolated.
    """
    pts = sorted(((s.J, s.pT_mean - s.p0_mean) for s in summaries if s.status == "ok"), key=lambda v: v[0])
    if len(pts) < 2:
        raise TransitionError("need at least two successful grid points")
    Js = np.array([a for a, _ in pts])
    ds = np.array([b for _, b in pts])
    if not (Js.min() < 0 < Js.max()):
        raise TransitionError("J grid must span negative and positive values")
    for i in range(len(pts) - 1):
        a, b = ds[i], ds[i + 1]
        if a > 0 and b <= 0:
            if b == 0:
                return float(Js[i + 1])
            return float(Js[i] + (Js[i + 1] - Js[i]) * a / (a - b))
    raise TransitionError("no sign change of the bad-mass trend across the grid")


def symmetric_factorization(J: float) -> NoiseSpec:
    d = (1.0 - J) / 2.0
    return NoiseSpec(d, d)


def fn_only_factorization(J: float) -> NoiseSpec:
    """Put all corruption into false negatives when possible (J >= 0), else split the excess."""
    if J >= 0:
        return NoiseSpec(1.0 - J, 0.0)
    return NoiseSpec(1.0, -J)


FACTORIZATIONS = {"symmetric": symmetric_factorization, "fn_only": fn_only_factorization}


def phase_surface_rows(delta_fn_grid, delta_fp_grid) -> list[list]:
    """Variance argmax, learnability argmax, peak std and peak learnability per cell.

    Cells with J <= 0 are masked (NaN values, ``masked = 1``).
    """
    rows = []
    for dfn in delta_fn_grid:
        for dfp in delta_fp_grid:
            sp = NoiseSpec(float(dfn), float(dfp))
            J = youden(sp)
            if J <= 1e-12:
                rows.append([sp.delta_fn, sp.delta_fp, J, 1] + [float("nan")] * 4)
                continue
            p_star = variance_argmax(sp)
            p_dag = learnability_argmax(sp)
            rows.append(
                [sp.delta_fn, sp.delta_fp, J, 0, p_star, p_dag, float(reward_std(sp, p_star)), learnability_speed(sp, p_dag)]
            )
    return rows


PHASE_SURFACE_COLUMNS = ["delta_fn", "delta_fp", "J", "masked", "p_star", "p_dagger", "sigma_max", "L_max"]


def emit_phase_surface(delta_fn_grid, delta_fp_grid, path) -> list[list]:
    rows = phase_surface_rows(delta_fn_grid, delta_fp_grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHASE_SURFACE_COLUMNS)
        for r in rows:
            w.writerow([fmt_num(v) for v in r])
    return rows


def ensure_informative(spec: NoiseSpec) -> None:
    if youden(spec) <= 0:
        raise NoiseError("this quantity needs J > 0")
