"""KL anchoring of the bad mass toward a reference policy.

Two penalties are supported. ``two_class`` penalises only the aggregate
bad mass, so it moves ``p`` and leaves the block shapes alone.
``full_reverse`` is the KL divergence of the whole arm vector from the
reference; it also pulls each block shape toward its reference shape and
feeds the shape mismatch back into the log-odds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .meanfield import BlockVelocity, OdeConfig, Trajectory, coupled_drift, integrate
from .noise import NoiseError, NoiseSpec, reward_std, youden
from .simplex import BlockState, SimplexError, kl_divergence

MODES = ("two_class", "full_reverse")


@dataclass(frozen=True)
class KlConfig:
    beta: float
    p_ref: float
    y_ref: np.ndarray | None = None
    z_ref: np.ndarray | None = None
    mode: str = "two_class"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0.0 < self.p_ref < 1.0:
            raise ValueError("p_ref must be strictly interior")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("y_ref", "z_ref"):
            v = getattr(self, name)
            if v is None:
                if self.mode == "full_reverse":
                    raise ValueError(f"full_reverse mode needs {name}")
                continue
            v = np.array(v, dtype=float)
            if self.mode == "full_reverse" and np.any(v <= 0):
                raise SimplexError(f"{name} must be strictly positive (support condition)")
            if abs(v.sum() - 1.0) > 1e-12:
                raise SimplexError(f"{name} must sum to 1")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def logit_ref(self) -> float:
        return float(logit(self.p_ref))


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _within_pull(x: np.ndarray, ref: np.ndarray, beta: float) -> np.ndarray:
    lr = np.log(x, where=x > 0, out=np.zeros_like(x)) - np.log(ref)
    lr = np.where(x > 0, lr, 0.0)
    return -beta * x * (lr - x @ lr)


def kl_logit_gap(state: BlockState, cfg: KlConfig) -> float:
    """Log-odds offset the penalty acts on."""
    gap = _logit(state.p) - cfg.logit_ref
    if cfg.mode == "full_reverse":
        gap += -kl_divergence(state.y, cfg.y_ref) + kl_divergence(state.z, cfg.z_ref)
    return gap


def kl_drift(state: BlockState, cfg: KlConfig) -> BlockVelocity:
    """Replicator flow of ``-beta * penalty`` in block coordinates."""
    if not 0.0 < state.p < 1.0:
        raise SimplexError("KL drift needs an interior state")
    if cfg.mode == "full_reverse":
        if cfg.y_ref.size != state.K or cfg.z_ref.size != state.M:
            raise SimplexError("reference shapes do not match the state")
    h = state.p * (1.0 - state.p)
    dp = -cfg.beta * h * kl_logit_gap(state, cfg)
    if cfg.mode == "two_class":
        return BlockVelocity(dp, np.zeros(state.K), np.zeros(state.M))
    return BlockVelocity(dp, _within_pull(state.y, cfg.y_ref, cfg.beta), _within_pull(state.z, cfg.z_ref, cfg.beta))


def flat_kl_field(state: BlockState, cfg: KlConfig) -> np.ndarray:
    """Full-mode drift computed directly on the arm vector (for cross-checks)."""
    from .simplex import recompose

    x = recompose(state)
    ref = recompose(BlockState(cfg.p_ref, cfg.y_ref, cfg.z_ref))
    lr = np.log(x) - np.log(ref)
    return -cfg.beta * x * (lr - x @ lr)


def regularized_drift(state: BlockState, spec: NoiseSpec, eta: float, cfg: KlConfig) -> BlockVelocity:
    r = coupled_drift(state, spec, eta)
    k = kl_drift(state, cfg)
    return BlockVelocity(r.p + k.p, r.y + k.y, r.z + k.z)


def integrate_regularized(initial: BlockState, spec: NoiseSpec, cfg: KlConfig, ode: OdeConfig) -> Trajectory:
    """Integrate reward flow plus KL anchoring; no boundary stop is applied."""

    def extra(p, y, z):
        v = kl_drift(BlockState(p, y / y.sum(), z / z.sum()), cfg)
        return v.p, v.y, v.z

    return integrate(initial, spec, replace(ode, stop_at_boundary=False), extra_drift=extra)


# ---------------------------------------------------------------- fixed point


def _reward_term(spec: NoiseSpec, eta: float, C: float, ell: float) -> float:
    """``eta J p (1 - p) C / sigma(p)`` evaluated at log-odds ``ell``."""
    p = float(expit(ell))
    h = float(expit(ell) * expit(-ell))
    sig = float(reward_std(spec, p))
    if sig == 0.0 or h == 0.0:
        return 0.0
    return eta * youden(spec) * h * C / sig


def nullcline_residual(u: float, spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """Residual of the frozen-shape balance at log-odds offset ``u`` from the reference."""
    return cfg.beta * u + _reward_term(spec, eta, s2 + t2, cfg.logit_ref + u)


def fixed_point_offset(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float, bracket: float = 40.0) -> float:
    """Log-odds offset ``ell* - ell_ref`` of the interior fixed point.

    Bisection runs until the bracket cannot be split in double precision,
    so small offsets keep full relative accuracy.
    """
    if cfg.beta <= 0:
        raise NoiseError("no interior fixed point without KL anchoring (beta = 0)")
    if youden(spec) == 0:
        return 0.0
    f = lambda u: nullcline_residual(u, spec, eta, cfg, s2, t2)
    lo, hi = -bracket, bracket
    flo, fhi = f(lo), f(hi)
    if not (flo < 0 < fhi):
        raise NoiseError("nullcline residual does not change sign on the bracket")
    # the root has the sign opposite to J; tighten the bracket at 0 first
    if youden(spec) > 0:
        hi = 0.0
    else:
        lo = 0.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def interior_fixed_point(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """Unique interior zero of the anchored bad-mass drift at frozen collision masses."""
    u = fixed_point_offset(spec, eta, cfg, s2, t2)
    return float(expit(cfg.logit_ref + u))


def fixed_point_displacement(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """``p* - p_ref`` computed without cancellation."""
    u = fixed_point_offset(spec, eta, cfg, s2, t2)
    e = math.expm1(u)
    pr = cfg.p_ref
    return pr * (1.0 - pr) * e / (1.0 + pr * e)


def strong_kl_prediction(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """First-order position of the fixed point for large beta."""
    return cfg.p_ref + strong_kl_shift(spec, eta, cfg, s2, t2)


def strong_kl_shift(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    pr = cfg.p_ref
    sig = float(reward_std(spec, pr))
    return -(eta * youden(spec) / cfg.beta) * (pr * (1.0 - pr)) ** 2 / sig * (s2 + t2)


def weak_kl_rate(spec: NoiseSpec, eta: float, s2: float, t2: float) -> float:
    """Constant ``c`` of the small-beta law for J < 0 (NaN if sigma(1) = 0)."""
    sig1 = float(reward_std(spec, 1.0))
    if youden(spec) >= 0 or sig1 == 0.0:
        return float("nan")
    return -eta * youden(spec) * (s2 + t2) / sig1


def weak_kl_prediction(spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """Leading small-beta fixed point ``1 - (beta / c) log(c / beta)`` for J < 0."""
    c = weak_kl_rate(spec, eta, s2, t2)
    if not np.isfinite(c):
        return float("nan")
    return 1.0 - (cfg.beta / c) * math.log(c / cfg.beta)


def fixed_point_derivative(p: float, spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """Analytic ``d(pdot)/dp`` of the frozen-shape anchored drift."""
    J = youden(spec)
    C = s2 + t2
    h = p * (1.0 - p)
    dh = 1.0 - 2.0 * p
    sig = float(reward_std(spec, p))
    q = 1.0 - spec.delta_fn - J * p
    reward = 0.0
    if J != 0.0:
        dsig = -J * (1.0 - 2.0 * q) / (2.0 * sig)
        reward = -eta * C * J * (2.0 * h * dh / sig - h * h * dsig / sig**2)
    anchor = -cfg.beta * (dh * (_logit(p) - cfg.logit_ref) + 1.0)
    return reward + anchor


def fixed_point_stability(p_star: float, spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> int:
    """Sign of the linearised drift at the fixed point (-1 means stable)."""
    d = fixed_point_derivative(p_star, spec, eta, cfg, s2, t2)
    return int(np.sign(d))


def frozen_drift(p: float, spec: NoiseSpec, eta: float, cfg: KlConfig, s2: float, t2: float) -> float:
    """Scalar anchored drift at frozen shapes (two-class penalty)."""
    h = p * (1.0 - p)
    sig = float(reward_std(spec, p))
    reward = 0.0 if sig == 0.0 else -eta * youden(spec) / sig * h * h * (s2 + t2)
    return reward - cfg.beta * h * (_logit(p) - cfg.logit_ref)
