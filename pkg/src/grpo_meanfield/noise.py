"""Noisy binary verifier: corruption rates, reward moments, learnability.

A verifier labels a correct answer as wrong with probability ``delta_fn``
and a wrong answer as correct with probability ``delta_fp``. Everything
downstream depends on the rates mainly through the Youden index
``J = 1 - delta_fn - delta_fp`` and the reward mean ``q(p)`` at bad mass ``p``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    delta_fn: float
    delta_fp: float

    def __post_init__(self):
        for name in ("delta_fn", "delta_fp"):
            v = float(getattr(self, name))
            if not (0.0 <= v <= 1.0):
                raise NoiseError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_rates(cls, tpr: float, fpr: float) -> "NoiseSpec":
        return cls(1.0 - tpr, fpr)

    @classmethod
    def symmetric(cls, delta: float) -> "NoiseSpec":
        return cls(delta, delta)

    @property
    def tpr(self) -> float:
        return 1.0 - self.delta_fn

    @property
    def fpr(self) -> float:
        return self.delta_fp

    @property
    def J(self) -> float:
        return youden(self)


def youden(spec: NoiseSpec) -> float:
    return 1.0 - spec.delta_fn - spec.delta_fp


def reward_mean(spec: NoiseSpec, p):
    """``q(p) = (1 - delta_fn)(1 - p) + delta_fp p``, written without cancellation."""
    p = np.asarray(p, dtype=float)
    return (1.0 - spec.delta_fn) * (1.0 - p) + spec.delta_fp * p


def reward_std(spec: NoiseSpec, p):
    p = np.asarray(p, dtype=float)
    q = reward_mean(spec, p)
    one_minus_q = spec.delta_fn * (1.0 - p) + (1.0 - spec.delta_fp) * p
    return np.sqrt(np.maximum(q * one_minus_q, 0.0))


def advantage_gap(spec: NoiseSpec, p):
    """``J / sigma(p)``; infinite where sigma vanishes (only possible at p in {0, 1})."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.divide(youden(spec), reward_std(spec, p))


def drift_factor(spec: NoiseSpec, p):
    """Guarded ``J p (1 - p) / sigma(p)``.

    The product vanishes at p in {0, 1} even when sigma does, so those
    points return 0 instead of 0/0.
    """
    p = np.asarray(p, dtype=float)
    J = youden(spec)
    s = reward_std(spec, p)
    pq = p * (1.0 - p)
    ok = (s > 0) & (pq > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ok, J * pq / np.where(ok, s, 1.0), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RewardStats:
    q: float
    sigma: float
    a_good: float
    a_bad: float
    gap: float
    degenerate: bool = False

    def advantages(self, K: int, M: int) -> np.ndarray:
        """Per-arm population advantage vector (good arms first)."""
        return np.concatenate((np.full(K, self.a_good), np.full(M, self.a_bad)))


def reward_stats(spec: NoiseSpec, p: float) -> RewardStats:
    """Reward mean, std and the population-normalised conditional means.

    When sigma is 0 the conditional means are undefined; they are
    reported as NaN with ``degenerate=True``.
    """
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise NoiseError(f"p must lie in [0, 1], got {p}")
    q = float(reward_mean(spec, p))
    sigma = float(reward_std(spec, p))
    J = youden(spec)
    if sigma == 0.0:
        nan = float("nan")
        return RewardStats(q, 0.0, nan, nan, nan, degenerate=True)
    return RewardStats(q, sigma, J * p / sigma, -J * (1.0 - p) / sigma, J / sigma)


def variance_argmax(spec: NoiseSpec) -> float:
    """Bad mass at which the reward variance peaks (q = 1/2), clipped to [0, 1].

    Written as ``a / (a + b)`` with ``a = 1/2 - delta_fn`` and
    ``b = 1/2 - delta_fp`` so symmetric noise gives exactly 1/2.
    """
    J = youden(spec)
    if J == 0:
        raise NoiseError("reward variance is flat in p when J = 0")
    a = 0.5 - spec.delta_fn
    b = 0.5 - spec.delta_fp
    return float(np.clip(a / (a + b), 0.0, 1.0))


def learnability_speed(spec: NoiseSpec, p):
    """``(J / sigma) [p (1 - p)]^2``, the p-dependent speed of the bad-mass flow."""
    if youden(spec) <= 0:
        raise NoiseError("learnability is only defined for an informative verifier (J > 0)")
    p = np.asarray(p, dtype=float)
    out = drift_factor(spec, p) * p * (1.0 - p)
    return out if np.ndim(out) else float(out)


def learnability_argmax(spec: NoiseSpec) -> float:
    """Maximiser of ``learnability_speed`` from the cleared first-order condition.

    Multiplying the stationarity condition by p(1-p) q(1-q) gives a cubic.
    It is solved in the centred variable ``u = p - 1/2``, where symmetric
    noise makes the constant term vanish and ``u = 0`` is an exact root.
    All real roots inside (0, 1) are scored and the best one kept.
    """
    J = youden(spec)
    if J <= 0:
        raise NoiseError("learnability is only defined for an informative verifier (J > 0)")
    c = 0.5 * (spec.delta_fp - spec.delta_fn)
    U = Polynomial([0.0, 1.0])
    q = 0.5 + c - J * U
    h = 0.25 - U * U
    cubic = -4.0 * U * q * (1 - q) + J * (J * U - c) * h
    coef = cubic.coef.copy()
    cand = []
    if c == 0.0:
        coef[0] = 0.0  # exact, not merely rounded
    if coef[0] == 0.0:
        cand.append(0.0)
        coef = coef[1:]
    roots = Polynomial(coef).roots() if coef.size > 1 else np.array([])
    real = roots[np.abs(roots.imag) < 1e-9].real
    cand = np.concatenate((cand, real))
    cand = np.unique(cand[(cand > -0.5) & (cand < 0.5)])
    if cand.size == 0:  # pragma: no cover - the cubic always has a root in (0, 1) for J > 0
        raise NoiseError("no stationary point found inside (0, 1)")
    p = 0.5 + cand
    return float(p[np.argmax(learnability_speed(spec, p))])


def noisy_check(truth: bool, spec: NoiseSpec, rng: np.random.Generator) -> bool:
    """One noisy verification: Bernoulli(TPR) for correct answers, Bernoulli(FPR) otherwise."""
    rate = spec.tpr if truth else spec.fpr
    return bool(rng.random() < rate)


def noisy_rewards(truth, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``noisy_check`` over an array of truth values, returning 0/1 ints."""
    truth = np.asarray(truth, dtype=bool)
    rate = np.where(truth, spec.tpr, spec.fpr)
    return (rng.random(truth.shape) < rate).astype(np.int8)


@dataclass(frozen=True)
class NoiseSchedule:
    """Piecewise-constant noise: ``specs[i]`` applies on ``[times[i-1], times[i])``.

    ``times`` holds the len(specs) - 1 switch points in increasing order.
    """

    times: tuple
    specs: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        specs = tuple(self.specs)
        if len(specs) != len(times) + 1:
            raise NoiseError("a schedule needs exactly one more spec than switch times")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise NoiseError("switch times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "specs", specs)

    @classmethod
    def constant(cls, spec: NoiseSpec) -> "NoiseSchedule":
        return cls((), (spec,))

    def at(self, t: float) -> NoiseSpec:
        return self.specs[bisect.bisect_right(self.times, t)]

    def segments(self, t0: float, t1: float) -> list[tuple[float, float, NoiseSpec]]:
        """Split [t0, t1] at switch points; returns (start, end, spec) triples."""
        cuts = [t0] + [t for t in self.times if t0 < t < t1] + [t1]
        return [(a, b, self.at(a)) for a, b in zip(cuts, cuts[1:])]


def as_schedule(spec) -> NoiseSchedule:
    if isinstance(spec, NoiseSchedule):
        return spec
    if isinstance(spec, NoiseSpec):
        return NoiseSchedule.constant(spec)
    raise NoiseError(f"expected NoiseSpec or NoiseSchedule, got {type(spec).__name__}")


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based (Philox) generator for a seed or seed sequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent sub-streams derived from one base seed."""
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def spec_from_flags(
    tpr: float | None = None,
    fpr: float | None = None,
    delta_fn: float | None = None,
    delta_fp: float | None = None,
) -> NoiseSpec:
    """Build a spec from exactly one of the pairs (tpr, fpr) or (delta_fn, delta_fp)."""
    rates = (tpr is not None, fpr is not None)
    deltas = (delta_fn is not None, delta_fp is not None)
    if all(rates) and not any(deltas):
        return NoiseSpec.from_rates(tpr, fpr)
    if all(deltas) and not any(rates):
        return NoiseSpec(delta_fn, delta_fp)
    raise NoiseError("give exactly one complete pair: --tpr/--fpr or --delta-fn/--delta-fp")


def specs_from_pairs(pairs: Sequence[Sequence[float]], order: str = "fpr_fnr") -> list[NoiseSpec]:
    """Convert (FPR, FNR) pairs, or (delta_fn, delta_fp) pairs, into specs."""
    if order == "fpr_fnr":
        return [NoiseSpec(fnr, fpr) for fpr, fnr in pairs]
    if order == "deltas":
        return [NoiseSpec(a, b) for a, b in pairs]
    raise NoiseError(f"unknown pair order {order!r}")
