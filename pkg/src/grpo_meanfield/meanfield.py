"""Deterministic mean-field dynamics of the bad mass and the block shapes.

State layout used by the integrators is the flat vector ``[p, y_1..y_K,
z_1..z_M]``. Time is measured in optimizer iterations with the learning
rate kept explicit in the drift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp
from scipy.optimize import brentq

from .noise import (
    NoiseError,
    NoiseSchedule,
    NoiseSpec,
    as_schedule,
    drift_factor,
    reward_mean,
    youden,
)
from .simplex import BlockState, SimplexError, jacobian_apply, recompose

P_CLAMP = 1e-12
P_ABSORB = 1e-9


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OdeConfig:
    """Integrator settings.

    For ``rk4_fixed`` the trajectory is recorded every ``record_every``
    steps. For ``rk45_adaptive`` ``step`` is the output cadence, unless
    ``log_samples`` > 0 asks for log-spaced output times instead.
    """

    eta: float = 1.0
    step: float = 1e-2
    horizon: float = 10.0
    method: str = "rk4_fixed"
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    record_every: int = 1
    log_samples: int = 0
    stop_at_boundary: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.step <= self.horizon:
            raise ValueError("need 0 < step <= horizon")
        if self.method not in ("rk4_fixed", "rk45_adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (0 < self.abs_tol < 1e-3 and 0 < self.rel_tol < 1e-3):
            raise ValueError("tolerances must lie in (0, 1e-3)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


class BlockVelocity(NamedTuple):
    p: float
    y: np.ndarray
    z: np.ndarray


# ---------------------------------------------------------------- drift


def _kappa(spec: NoiseSpec, p, eta: float):
    return eta * drift_factor(spec, p)


def coupled_drift(state: BlockState, spec: NoiseSpec, eta: float) -> BlockVelocity:
    """Time derivative of (p, y, z) under the population-normalised flow."""
    p, y, z = state.p, state.y, state.z
    kappa = _kappa(spec, p, eta)
    s2, t2 = y @ y, z @ z
    dy = kappa * y * (y - s2)
    dz = -kappa * z * (z - t2)
    dp = -kappa * p * (1.0 - p) * (s2 + t2)
    return BlockVelocity(float(dp), dy, dz)


def flat_field(state: BlockState, spec: NoiseSpec, eta: float) -> np.ndarray:
    """Same flow written on the flat arm vector: eta * Jac(x) Jac(x) A."""
    from .noise import reward_stats

    x = recompose(state)
    A = reward_stats(spec, state.p).advantages(state.K, state.M)
    return eta * jacobian_apply(x, jacobian_apply(x, A))


def _kappa_fn(spec: NoiseSpec, eta: float):
    """Scalar ``eta J p (1 - p) / sigma(p)`` built from plain floats for speed."""
    a, b = 1.0 - spec.delta_fn, spec.delta_fp
    c, d = spec.delta_fn, 1.0 - spec.delta_fp
    eJ = eta * youden(spec)

    def kappa(p: float) -> float:
        pq = p * (1.0 - p)
        var = (a * (1.0 - p) + b * p) * (c * (1.0 - p) + d * p)
        if pq <= 0.0 or var <= 0.0:
            return 0.0
        return eJ * pq / math.sqrt(var)

    return kappa


def _rhs_factory(K: int, spec: NoiseSpec, eta: float, extra=None):
    kappa_of = _kappa_fn(spec, eta)

    def rhs(t, x):
        p = min(max(x[0], P_CLAMP), 1.0 - P_CLAMP)
        y, z = x[1 : 1 + K], x[1 + K :]
        kappa = kappa_of(p)
        s2, t2 = y @ y, z @ z
        out = np.empty_like(x)
        out[0] = -kappa * p * (1.0 - p) * (s2 + t2)
        out[1 : 1 + K] = kappa * y * (y - s2)
        out[1 + K :] = -kappa * z * (z - t2)
        if extra is not None:
            dp, dy, dz = extra(p, y, z)
            out[0] += dp
            out[1 : 1 + K] += dy
            out[1 + K :] += dz
        return out

    return rhs


def _tidy(x: np.ndarray, K: int) -> np.ndarray:
    x = x.copy()
    x[0] = min(max(x[0], P_CLAMP), 1.0 - P_CLAMP)
    for blk in (slice(1, 1 + K), slice(1 + K, None)):
        v = np.maximum(x[blk], 0.0)
        s = v.sum()
        if abs(s - 1.0) > 1e-12:
            v = v / s
        x[blk] = v
    return x


def _absorbed(p: float) -> bool:
    return p < P_ABSORB or p > 1.0 - P_ABSORB


# ---------------------------------------------------------------- trajectory


@dataclass
class Trajectory:
    """Sampled solution plus per-sample diagnostics.

    ``status`` is ``"ok"`` when the horizon was reached and
    ``"converged"`` when the bad mass entered the absorbing band first.
    """

    times: np.ndarray
    p: np.ndarray
    y: np.ndarray
    z: np.ndarray
    tau: np.ndarray
    lyapunov: np.ndarray
    eta: float
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.y.shape[1]

    @property
    def M(self) -> int:
        return self.z.shape[1]

    @property
    def s2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.y, self.y)

    @property
    def t2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.z, self.z)

    @property
    def c_geo(self) -> np.ndarray:
        return self.s2 + self.t2

    @property
    def logit(self) -> np.ndarray:
        return np.log(self.p) - np.log1p(-self.p)

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> BlockState:
        return BlockState(self.p[i], self.y[i], self.z[i])

    def columns(self) -> list[str]:
        return csv_header(self.K, self.M)

    def rows(self) -> np.ndarray:
        return np.column_stack(
            (self.times, self.tau, self.p, self.logit, self.s2, self.t2, self.c_geo, self.lyapunov, self.y, self.z)
        )

    def write_csv(self, path) -> None:
        write_rows(path, self.columns(), self.rows())


def csv_header(K: int, M: int) -> list[str]:
    return (
        ["t", "tau", "p", "logit", "s2", "t2", "c_geo", "lyapunov"]
        + [f"y_{i + 1}" for i in range(K)]
        + [f"z_{j + 1}" for j in range(M)]
    )


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_num(v) for v in r])


def fmt_num(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v)) if not float(v).is_integer() or abs(v) > 2**53 else str(int(v))


def _build_trajectory(times, X, K, sched: NoiseSchedule, eta, status, meta=None) -> Trajectory:
    p = X[:, 0]
    y = X[:, 1 : 1 + K]
    z = X[:, 1 + K :]
    specs = [sched.at(t) for t in times]
    if len(sched.specs) == 1:
        rate = eta * np.abs(drift_factor(sched.specs[0], p))
    else:
        rate = np.array([abs(drift_factor(s, pi)) for s, pi in zip(specs, p)]) * eta
    tau = cumulative_trapezoid(rate, times, initial=0.0) if times.size > 1 else np.zeros(1)
    if len(sched.specs) == 1:
        lyap = lyapunov_from_p(p, sched.specs[0])
    else:
        lyap = np.array([lyapunov_from_p(pi, s) for s, pi in zip(specs, p)])
    return Trajectory(times, p, y, z, tau, lyap, eta, status, dict(meta or {}))


# ---------------------------------------------------------------- integrators


def _rk4_segment(x, t0, t1, h, K, spec, eta, record_every, stop, extra=None):
    rhs = _rhs_factory(K, spec, eta, extra)
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-9)))
    ts, xs = [], []
    t = t0
    status = "ok"
    for i in range(n):
        dt = min(h, t1 - t)
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = _tidy(x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), K)
        t = t0 + (i + 1) * h if i < n - 1 else t1
        absorbed = stop and _absorbed(x[0])
        if (i + 1) % record_every == 0 or i == n - 1 or absorbed:
            ts.append(t)
            xs.append(x)
        if absorbed:
            status = "converged"
            break
    return x, ts, xs, status


def _rk45_segment(x, t0, t1, t_eval, K, spec, eta, cfg: OdeConfig, extra=None):
    rhs = _rhs_factory(K, spec, eta, extra)
    events = []
    if cfg.stop_at_boundary:

        def low(t, x):
            return x[0] - P_ABSORB

        def high(t, x):
            return (1.0 - P_ABSORB) - x[0]

        low.terminal = high.terminal = True
        events = [low, high]
    sol = solve_ivp(
        rhs,
        (t0, t1),
        x,
        method="RK45",
        t_eval=t_eval,
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        events=events or None,
    )
    if sol.status == -1:
        raise IntegrationError(f"adaptive integration failed at t={sol.t[-1] if sol.t.size else t0}: {sol.message}")
    ts = list(sol.t)
    xs = [_tidy(col, K) for col in sol.y.T]
    status = "ok"
    if sol.status == 1:
        status = "converged"
        te = [e for e in sol.t_events if e.size]
        if te:
            xe = [e for e in sol.y_events if e.size][0][0]
            ts.append(float(te[0][0]))
            xs.append(_tidy(xe, K))
        xlast = xs[-1]
    else:
        # re-evaluate endpoint exactly even if t_eval skipped it
        xlast = _tidy(sol.y[:, -1], K) if sol.y.size else x
    return xlast, ts, xs, status


def integrate(initial: BlockState, spec, cfg: OdeConfig, extra_drift=None) -> Trajectory:
    """Integrate the coupled flow from ``initial`` over ``[0, cfg.horizon]``.

    ``spec`` may be a constant ``NoiseSpec`` or a piecewise-constant
    ``NoiseSchedule``; switch points are integrated across exactly.
    ``extra_drift(p, y, z) -> (dp, dy, dz)`` is added to the reward flow
    (used for KL anchoring).
    """
    sched = as_schedule(spec)
    K = initial.K
    x = np.concatenate(([initial.p], initial.y, initial.z)).astype(float)
    T = float(cfg.horizon)
    if _absorbed(initial.p) and cfg.stop_at_boundary:
        # the flow vanishes identically on the boundary
        return _build_trajectory(np.array([0.0]), x[None, :], K, sched, cfg.eta, "converged")
    x = _tidy(x, K)

    if cfg.method == "rk45_adaptive":
        if cfg.log_samples > 0:
            grid = np.concatenate(([0.0], np.geomspace(cfg.step, T, cfg.log_samples)))
        else:
            n = int(math.floor(T / cfg.step + 1e-9))
            grid = np.arange(n + 1) * cfg.step
            if T - grid[-1] > 1e-12 * T:
                grid = np.append(grid, T)
        grid[-1] = T

    ts, xs = [0.0], [x]
    status = "ok"
    for a, b, seg_spec in sched.segments(0.0, T):
        if cfg.method == "rk4_fixed":
            x, t_seg, x_seg, status = _rk4_segment(
                x, a, b, cfg.step, K, seg_spec, cfg.eta, cfg.record_every, cfg.stop_at_boundary, extra_drift
            )
        else:
            t_eval = grid[(grid > a) & (grid <= b)]
            if t_eval.size == 0 or t_eval[-1] < b:
                t_eval = np.append(t_eval, b)
            x, t_seg, x_seg, status = _rk45_segment(x, a, b, t_eval, K, seg_spec, cfg.eta, cfg, extra_drift)
            if b < T and status == "ok":
                # drop the synthetic segment endpoint unless it is on the grid
                if not np.any(np.isclose(grid, b, rtol=0, atol=1e-12 * T)):
                    t_seg, x_seg = t_seg[:-1], x_seg[:-1]
        ts.extend(t_seg)
        xs.extend(x_seg)
        if status == "converged":
            break
    times = np.asarray(ts)
    X = np.vstack(xs)
    keep = np.concatenate(([True], np.diff(times) > 0))
    return _build_trajectory(times[keep], X[keep], K, sched, cfg.eta, status, {"method": cfg.method})


def integrate_internal_time(initial: BlockState, J_sign: int, tau_grid, rtol=1e-12, atol=1e-14):
    """Integrate the flow reparametrised by internal time.

    In internal time the system is autonomous and independent of the noise
    level except through the sign of J:
    ``dL/dtau = -s C``, ``dy/dtau = s y (y - s2)``, ``dz/dtau = -s z (z - t2)``
    with ``s = sign(J)``. Returns ``(tau, L, y, z)`` sampled on ``tau_grid``.
    """
    if J_sign == 0:
        raise NoiseError("internal time is undefined when J = 0")
    s = 1.0 if J_sign > 0 else -1.0
    K = initial.K
    tau_grid = np.asarray(tau_grid, dtype=float)

    def rhs(tau, x):
        y, z = x[1 : 1 + K], x[1 + K :]
        sy, sz = y.sum(), z.sum()
        # dividing by the block sums makes each sum a conserved quantity; off the
        # simplex the plain field pushes the sum away from 1 at rate t2
        yy, zz = (y @ y) / sy, (z @ z) / sz
        out = np.empty_like(x)
        out[0] = -s * (yy / sy + zz / sz)
        out[1 : 1 + K] = s * y * (y - yy)
        out[1 + K :] = -s * z * (z - zz)
        return out

    x0 = np.concatenate(([initial.logit], initial.y, initial.z))
    sol = solve_ivp(rhs, (tau_grid[0], tau_grid[-1]), x0, method="DOP853", t_eval=tau_grid, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(sol.message)
    return sol.t, sol.y[0], sol.y[1 : 1 + K].T, sol.y[1 + K :].T


def two_class_drift(p: float, spec: NoiseSpec, eta: float) -> float:
    """Bad-mass velocity when the policy is a single Bernoulli logit.

    With one logit the geometry factor is absent; the two-arm softmax
    model above moves exactly twice as fast (its ``s2 + t2`` equals 2).
    """
    return float(-eta * drift_factor(spec, p) * p * (1.0 - p))


def integrate_two_class(p0: float, spec: NoiseSpec, cfg: OdeConfig) -> Trajectory:
    """Integrate the single-logit bad-mass law with the same integrators."""
    sched = as_schedule(spec)
    if sched.specs[1:]:
        raise NoiseError("the scalar path takes a constant spec")
    sp = sched.specs[0]
    T = float(cfg.horizon)

    kappa_of = _kappa_fn(sp, cfg.eta)

    def rhs(t, x):
        p = min(max(x[0], P_CLAMP), 1.0 - P_CLAMP)
        return np.array([-kappa_of(p) * p * (1.0 - p)])

    if cfg.method == "rk45_adaptive":
        n = int(math.floor(T / cfg.step + 1e-9))
        grid = np.arange(n + 1) * cfg.step
        if T - grid[-1] > 1e-12 * T:
            grid = np.append(grid, T)
        sol = solve_ivp(rhs, (0.0, T), [p0], method="RK45", t_eval=grid, rtol=cfg.rel_tol, atol=cfg.abs_tol)
        if sol.status == -1:
            raise IntegrationError(sol.message)
        times, ps = sol.t, sol.y[0]
    else:
        n = max(1, int(math.ceil(T / cfg.step - 1e-9)))
        ps = np.empty(n + 1)
        times = np.minimum(np.arange(n + 1) * cfg.step, T)
        ps[0] = x = p0
        for i in range(n):
            h = times[i + 1] - times[i]
            k1 = rhs(0, [x])[0]
            k2 = rhs(0, [x + h / 2 * k1])[0]
            k3 = rhs(0, [x + h / 2 * k2])[0]
            k4 = rhs(0, [x + h * k3])[0]
            x = min(max(x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), P_CLAMP), 1.0 - P_CLAMP)
            ps[i + 1] = x
        sel = np.arange(0, n + 1, cfg.record_every)
        if sel[-1] != n:
            sel = np.append(sel, n)
        times, ps = times[sel], ps[sel]
    X = np.column_stack((ps, np.ones_like(ps), np.ones_like(ps)))
    return _build_trajectory(np.asarray(times), X, 1, sched, cfg.eta, "ok", {"method": cfg.method, "model": "two_class"})


# ---------------------------------------------------------------- closed forms


def _phi(p):
    return (2.0 * p - 1.0) / np.sqrt(p * (1.0 - p))


def closed_form_p(p0: float, eta: float, t):
    """Exact bad mass for a noise-free verifier with one good and one bad arm."""
    t = np.asarray(t, dtype=float)
    if p0 <= 0.0 or p0 >= 1.0:
        out = np.full_like(t, float(p0))
        return out if out.ndim else float(out)
    x = _phi(p0) - eta * t / 2.0
    out = 0.5 + 0.5 * x / np.sqrt(4.0 + x * x)
    return out if out.ndim else float(out)


def internal_time(traj: Trajectory, spec: NoiseSpec, eta: float) -> np.ndarray:
    """Cumulative trapezoid of ``eta |J| p (1 - p) / sigma(p)`` over the samples."""
    if youden(spec) == 0:
        raise NoiseError("internal time is undefined when J = 0")
    rate = eta * np.abs(drift_factor(spec, traj.p))
    if traj.times.size < 2:
        return np.zeros(traj.times.size)
    return cumulative_trapezoid(rate, traj.times, initial=0.0)


class Expansion(NamedTuple):
    logit: np.ndarray
    in_regime: np.ndarray


def heterogeneity_expansion(initial: BlockState, K: int, M: int, tau, spec: NoiseSpec) -> Expansion:
    """Logit prediction for nearly uniform block shapes.

    Valid while ``sqrt(zeta0) exp(tau / K) <= 1/2`` and ``sqrt(xi0) <= 1/2``;
    ``in_regime`` flags where that holds, values outside are advisory.
    """
    J = youden(spec)
    if J == 0:
        raise NoiseError("expansion needs J != 0")
    if initial.K != K or initial.M != M:
        raise SimplexError("block sizes do not match the state")
    s = 1.0 if J > 0 else -1.0
    tau = np.asarray(tau, dtype=float)
    zeta0 = max(initial.s2 - 1.0 / K, 0.0)
    xi0 = max(initial.t2 - 1.0 / M, 0.0)
    L0 = initial.logit
    L = (
        L0
        - s * (1.0 / K + 1.0 / M) * tau
        - s * (K / 2.0) * zeta0 * np.expm1(2.0 * tau / K)
        + s * (M / 2.0) * xi0 * np.expm1(-2.0 * tau / M)
    )
    ok = (np.sqrt(zeta0) * np.exp(tau / K) <= 0.5) & (math.sqrt(xi0) <= 0.5)
    return Expansion(L, ok)


def logit_envelopes(p0: float, K: int, M: int, tau):
    """Lower and upper bounds on the bad mass at internal time ``tau`` (J > 0)."""
    if not 0.0 < p0 < 1.0:
        raise SimplexError("p0 must be interior")
    tau = np.asarray(tau, dtype=float)
    r = (1.0 - p0) / p0
    lower = 1.0 / (1.0 + r * np.exp(2.0 * tau))
    upper = 1.0 / (1.0 + r * np.exp((1.0 / K + 1.0 / M) * tau))
    return lower, upper


def hitting_time_bracket(p0: float, p_star: float, K: int, M: int) -> tuple[float, float]:
    """Internal-time window in which the bad mass first reaches ``p_star``."""
    if not 0.0 < p_star < p0 < 1.0:
        raise ValueError("need 0 < p_star < p0 < 1")
    lam = math.log(p0 * (1.0 - p_star) / ((1.0 - p0) * p_star))
    return lam / 2.0, lam / (1.0 / K + 1.0 / M)


def inner_good_closed_form(q, I: float) -> np.ndarray:
    """Good-block shape ``y_j ~ q_j / (1 - I q_j)`` at flow parameter ``I``."""
    q = np.asarray(q, dtype=float)
    if not 0.0 <= I < 1.0 / q.max():
        raise ValueError(f"I must lie in [0, 1/max q) = [0, {1.0 / q.max():.6g})")
    w = q / (1.0 - I * q)
    return w / w.sum()


def inner_bad_closed_form(q, I: float) -> np.ndarray:
    """Bad-block shape ``z_j ~ q_j / (1 + I q_j)``; tends to uniform as I grows."""
    q = np.asarray(q, dtype=float)
    if I < 0:
        raise ValueError("I must be nonnegative")
    w = q / (1.0 + I * q)
    return w / w.sum()


def good_parameter_at(q, tau: float) -> float:
    """Solve ``-sum log(1 - I q_j) = tau`` for I in [0, 1/max q)."""
    q = np.asarray(q, dtype=float)
    if tau <= 0:
        return 0.0
    top = 1.0 / q.max()
    f = lambda I: -np.sum(np.log1p(-I * q)) - tau
    hi = top * (1.0 - 1e-16)
    while f(hi) < 0:  # pragma: no cover - only for absurdly large tau
        raise ValueError("tau too large to resolve in double precision")
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15)


def bad_parameter_at(q, tau: float) -> float:
    """Solve ``sum log(1 + I q_j) = tau`` for I >= 0."""
    q = np.asarray(q, dtype=float)
    if tau <= 0:
        return 0.0
    f = lambda I: np.sum(np.log1p(I * q)) - tau
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15)


# ---------------------------------------------------------------- Lyapunov


def lyapunov_from_p(p, spec: NoiseSpec):
    """Lyapunov value as a function of the bad mass.

    The integrand ``J / sigma`` has the antiderivative ``2 arcsin sqrt(q)``
    in the reward mean ``q``, so the integral over good mass from 0 to
    ``1 - p`` is exact.
    """
    p = np.asarray(p, dtype=float)
    if youden(spec) == 0:
        out = np.zeros_like(p)
    else:
        q_p = np.clip(reward_mean(spec, p), 0.0, 1.0)
        q_1 = min(max(float(reward_mean(spec, 1.0)), 0.0), 1.0)
        out = 2.0 * (np.arcsin(np.sqrt(q_p)) - math.asin(math.sqrt(q_1)))
    return out if out.ndim else float(out)


def lyapunov_value(state: BlockState, spec: NoiseSpec) -> float:
    return lyapunov_from_p(state.p, spec)


def lyapunov_rate(state: BlockState, spec: NoiseSpec, eta: float) -> float:
    """``eta * |Jac(x) A|^2``, the predicted time derivative of the Lyapunov value."""
    from .noise import reward_stats

    rs = reward_stats(spec, state.p)
    if rs.degenerate:
        return 0.0
    v = jacobian_apply(recompose(state), rs.advantages(state.K, state.M))
    return float(eta * v @ v)


# ---------------------------------------------------------------- stability


def classify_equilibrium(block: str, kind: str, J_sign: int) -> str:
    """Linear stability of the uniform and pure-arm shapes of each block."""
    if block not in ("good", "bad") or kind not in ("uniform", "vertex"):
        raise ValueError("block must be good/bad and kind uniform/vertex")
    if J_sign == 0:
        raise NoiseError("J = 0: shapes are frozen, stability is neutral")
    pos = J_sign > 0
    # the good block polarises for J > 0; the bad block follows the reversed flow
    polarising = pos if block == "good" else not pos
    stable_vertex = polarising
    stable = stable_vertex if kind == "vertex" else not stable_vertex
    return "stable" if stable else "unstable"


def shape_field(x, sign: float) -> np.ndarray:
    """Unit-rate shape flow ``sign * x (x - |x|^2)``."""
    x = np.asarray(x, dtype=float)
    return sign * x * (x - x @ x)


def tangent_basis(n: int) -> np.ndarray:
    """Orthonormal basis (columns) of the sum-zero subspace of R^n."""
    A = np.eye(n)[:, : n - 1] - 1.0 / n
    Q, _ = np.linalg.qr(A)
    return Q[:, : n - 1]


def shape_eigenvalues(x0, sign: float, h: float = 1e-6, directions: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of the shape flow linearised at ``x0`` by central differences.

    ``directions`` restricts the perturbations (for a vertex, only
    directions that keep the point inside the simplex are meaningful).
    """
    x0 = np.asarray(x0, dtype=float)
    B = tangent_basis(x0.size) if directions is None else directions
    cols = []
    for b in B.T:
        cols.append((shape_field(x0 + h * b, sign) - shape_field(x0 - h * b, sign)) / (2 * h))
    Jm = B.T @ np.column_stack(cols)
    return np.sort(np.linalg.eigvals(Jm).real)


# ---------------------------------------------------------------- tails


def tail_exponent(traj: Trajectory, window: tuple[float, float], mass: str = "bad") -> float:
    """Least-squares slope of log mass against log time inside ``window``.

    ``mass="good"`` fits ``1 - p`` instead, for the anti-learning branch.
    """
    t0, t1 = window
    sel = (traj.times >= t0) & (traj.times <= t1) & (traj.times > 0)
    vals = traj.p[sel] if mass == "bad" else 1.0 - traj.p[sel]
    if sel.sum() < 3:
        raise ValueError("window holds fewer than three samples")
    if np.any(vals >= 0.05):
        raise ValueError("mass has not decayed below 0.05 across the window")
    slope, _ = np.polyfit(np.log(traj.times[sel]), np.log(vals), 1)
    return float(slope)


def tail_prefactor(spec: NoiseSpec, eta: float) -> tuple[float, int]:
    """Predicted late-time law ``p ~ c t^-k`` as ``(c, k)`` for J > 0."""
    J = youden(spec)
    if J <= 0:
        raise NoiseError("tail law here is for J > 0")
    if spec.delta_fn > 0:
        sigma0 = math.sqrt(spec.delta_fn * (1.0 - spec.delta_fn))
        return sigma0 / (eta * J), 1
    return 4.0 / (eta * eta * J), 2
