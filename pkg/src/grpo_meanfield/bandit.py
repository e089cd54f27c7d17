"""Finite-group policy-gradient simulation on a categorical bandit.

Arms ``0..K-1`` are correct and ``K..K+M-1`` incorrect. Each step draws
``G`` arms from the softmax policy, scores them with a noisy verifier,
z-scores the rewards inside the group and takes a score-function step on
the logits. Replicas are simulated side by side as a batch, but every
replica reads only from its own random stream, so replica ``r`` of a batch
is reproducible on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .meanfield import csv_header, fmt_num, lyapunov_from_p
from .noise import (
    NoiseSpec,
    as_schedule,
    drift_factor,
    make_rng,
    noisy_rewards,
    reward_std,
    youden,
)
from .simplex import SimplexError, jacobian_apply, truth_labels

MODES = ("reinforce", "grpo_clipped", "wright_fisher")


@dataclass(frozen=True)
class SimConfig:
    K: int = 1
    M: int = 1
    G: int = 8
    eta: float = 1e-3
    steps: int = 1000
    clip_low: float = 0.0
    clip_high: float = 0.0
    beta: float = 0.0
    p_ref: float | None = None
    y_ref: tuple | None = None
    z_ref: tuple | None = None
    kl_mode: str = "two_class"
    zscore_epsilon: float = 1e-8
    seed: int = 0
    mode: str = "reinforce"
    record_every: int = 1
    nu: float = 1.0
    is_iterations: int = 1

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise ValueError("need at least one good and one bad arm")
        if self.G < 2:
            raise ValueError("group size must be at least 2")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.steps < 0 or self.record_every < 1:
            raise ValueError("steps >= 0 and record_every >= 1 required")
        if not (0 <= self.clip_low < 1 and 0 <= self.clip_high < 1):
            raise ValueError("clip thresholds must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.beta < 0 or self.zscore_epsilon <= 0 or self.nu < 0:
            raise ValueError("beta >= 0, zscore_epsilon > 0 and nu >= 0 required")
        if self.beta > 0 and self.p_ref is None:
            raise ValueError("a KL penalty needs p_ref")
        if self.kl_mode not in ("two_class", "full_reverse"):
            raise ValueError("kl_mode must be two_class or full_reverse")
        if self.beta > 0 and self.kl_mode == "full_reverse" and (self.y_ref is None or self.z_ref is None):
            raise ValueError("full_reverse penalty needs y_ref and z_ref")

    @property
    def d(self) -> int:
        return self.K + self.M

    def clip_bounds(self) -> tuple[float, float]:
        lo = 1.0 - self.clip_low if self.clip_low > 0 else 0.0
        hi = 1.0 + self.clip_high if self.clip_high > 0 else math.inf
        return lo, hi


@dataclass
class StepRecord:
    step: int
    pre: np.ndarray
    post: np.ndarray
    arm_counts: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray
    clipped_fraction: float
    delta_theta: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------- primitives


def _softmax(theta: np.ndarray) -> np.ndarray:
    # allows -inf logits (zero-probability arms)
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _cdf(p: np.ndarray) -> np.ndarray:
    """Normalised CDF whose tail is exactly 1 from the last supported arm on."""
    c = np.cumsum(p, axis=-1)
    c = c / c[..., -1:]
    d = p.shape[-1]
    last = d - 1 - np.argmax(p[..., ::-1] > 0, axis=-1)
    c[np.arange(d) >= last[..., None]] = 1.0
    return c


def draw_arms(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws: ``u[..., g]`` in [0, 1) picks an arm of ``p[...]``."""
    cdf = _cdf(p)
    return (u[..., :, None] >= cdf[..., None, :]).sum(-1)


def arm_rates(truth: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    return np.where(truth, spec.tpr, spec.fpr)


def sample_group(policy, truth, spec: NoiseSpec, G: int, rng: np.random.Generator):
    """Draw ``G`` arms i.i.d. from ``policy`` and verify each with the noisy checker."""
    p = np.asarray(policy, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    arms = draw_arms(p, rng.random(G))
    rewards = noisy_rewards(truth[arms], spec, rng)
    return arms, rewards


def group_normalize(rewards, epsilon: float = 1e-8) -> np.ndarray:
    """Within-group z-score ``(r - mean) / (std + epsilon)`` along the last axis.

    Population standard deviation; unanimous groups give exact zeros.
    """
    r = np.asarray(rewards, dtype=float)
    if r.shape[-1] < 2:
        raise ValueError("a group needs at least two members")
    mean = r.mean(axis=-1, keepdims=True)
    std = r.std(axis=-1, keepdims=True)
    return (r - mean) / (std + epsilon)


def _score_increment(adv_w, arms, p_at, d, eta, G):
    onehot = arms[..., None] == np.arange(d)
    per_arm = np.einsum("...g,...gd->...d", adv_w, onehot)
    total = adv_w.sum(axis=-1, keepdims=True)
    return (eta / G) * (per_arm - p_at * total)


def _kl_increment(p: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Centred logit increment of the KL penalty (one unit of time per step)."""
    K = cfg.K
    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.kl_mode == "two_class":
            bad = p[..., K:].sum(-1, keepdims=True)
            gap = np.log(bad) - np.log1p(-bad) - math.log(cfg.p_ref / (1 - cfg.p_ref))
            inc = np.where(np.arange(cfg.d) >= K, -(1.0 - bad) * gap, bad * gap)
        else:
            ref = np.concatenate(((1 - cfg.p_ref) * np.asarray(cfg.y_ref), cfg.p_ref * np.asarray(cfg.z_ref)))
            lr = np.where(p > 0, np.log(p) - np.log(ref), 0.0)
            inc = -(lr - (p * lr).sum(-1, keepdims=True))
    return cfg.beta * np.where(p > 0, inc, 0.0)


def _step_batch(theta, u_arm, u_rew, rates, truth, cfg: SimConfig):
    """One policy-gradient step for a batch of replicas.

    Returns the new logits plus arms, rewards, advantages, logit increment
    and the clipped fraction per replica.
    """
    p = _softmax(theta)
    arms = draw_arms(p, u_arm)
    rewards = (u_rew < rates[arms]).astype(np.int8)
    adv = group_normalize(rewards, cfg.zscore_epsilon)
    d, G, eta = cfg.d, cfg.G, cfg.eta
    dtheta = _score_increment(adv, arms, p, d, eta, G)
    clipped = np.zeros(theta.shape[:-1])
    if cfg.mode == "grpo_clipped" and cfg.is_iterations > 0:
        lo, hi = cfg.clip_bounds()
        p_old_at = np.take_along_axis(p, arms, axis=-1)
        for _ in range(cfg.is_iterations):
            p_new = _softmax(theta + dtheta)
            rho = np.take_along_axis(p_new, arms, axis=-1) / p_old_at
            w = np.clip(rho, lo, hi)
            dtheta = _score_increment(adv * w, arms, p_new, d, eta, G)
        clipped = ((rho < lo) | (rho > hi)).mean(axis=-1)
    if cfg.beta > 0:
        dtheta = dtheta + _kl_increment(p, cfg)
    return theta + dtheta, arms, rewards, adv, dtheta, clipped


def _logits(policy: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(policy)


def _one_step(policy, truth, spec: NoiseSpec, cfg: SimConfig, rng, step: int = 0):
    p = np.asarray(policy, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    u = rng.random(2 * cfg.G)
    theta, arms, rewards, adv, dtheta, clipped = _step_batch(
        _logits(p)[None], u[None, : cfg.G], u[None, cfg.G :], arm_rates(truth, spec), truth, cfg
    )
    post = _softmax(theta[0])
    rec = StepRecord(
        step=step,
        pre=p.copy(),
        post=post,
        arm_counts=np.bincount(arms[0], minlength=cfg.d),
        rewards=rewards[0],
        advantages=adv[0],
        clipped_fraction=float(clipped[0]),
        delta_theta=dtheta[0],
    )
    return post, rec


def reinforce_step(policy, truth, spec: NoiseSpec, cfg: SimConfig, rng: np.random.Generator, step: int = 0):
    """Plain score-function step: ``dtheta = (eta/G) sum_g A_g (e_{I_g} - p)``."""
    cfg_r = cfg if cfg.mode == "reinforce" else _with_mode(cfg, "reinforce")
    return _one_step(policy, truth, spec, cfg_r, rng, step)


def grpo_clipped_step(policy, truth, spec: NoiseSpec, cfg: SimConfig, rng: np.random.Generator, step: int = 0):
    """Importance-weighted, clipped step.

    The score is evaluated at the updated policy and each sample is
    weighted by its clipped probability ratio new/old. The updated policy is
    found by ``cfg.is_iterations`` fixed-point passes started from the plain
    step; zero passes reproduce ``reinforce_step`` exactly.
    """
    cfg_c = cfg if cfg.mode == "grpo_clipped" else _with_mode(cfg, "grpo_clipped")
    return _one_step(policy, truth, spec, cfg_c, rng, step)


def _with_mode(cfg: SimConfig, mode: str) -> SimConfig:
    from dataclasses import replace

    return replace(cfg, mode=mode)


# ---------------------------------------------------------------- diffusion surrogate


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    w = np.sqrt(np.maximum(w, 0.0))
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def wf_covariance(x: np.ndarray) -> np.ndarray:
    """``Diag(x) - x x^T`` (batched over leading axes)."""
    return np.einsum("...i,ij->...ij", x, np.eye(x.shape[-1])) - x[..., :, None] * x[..., None, :]


def _wf_drift(x: np.ndarray, spec: NoiseSpec, K: int, eta: float) -> np.ndarray:
    p = x[..., K:].sum(-1, keepdims=True)
    sig = reward_std(spec, p)
    J = youden(spec)
    ok = sig > 0
    s = np.where(ok, sig, 1.0)
    A = np.where(np.arange(x.shape[-1]) < K, J * p / s, -J * (1.0 - p) / s)
    A = np.where(ok, A, 0.0)
    return eta * jacobian_apply(x, jacobian_apply(x, A))


def _wf_batch(x, xi, spec: NoiseSpec, cfg: SimConfig, nu: float):
    support = x > 0
    drift = _wf_drift(x, spec, cfg.K, cfg.eta)
    noise = cfg.eta * math.sqrt(nu / cfg.G) * np.einsum("...ij,...j->...i", _sqrt_psd(wf_covariance(x)), xi)
    y = x + drift + np.where(support, noise, 0.0)
    y = np.where(support, np.maximum(np.abs(y), 1e-12), 0.0)
    return y / y.sum(-1, keepdims=True)


def wright_fisher_step(x, spec: NoiseSpec, cfg: SimConfig, rng: np.random.Generator, nu: float | None = None):
    """Euler-Maruyama step of the drift-plus-sampling-noise surrogate on the arm vector."""
    x = np.asarray(x, dtype=float)
    nu = cfg.nu if nu is None else nu
    return _wf_batch(x, rng.standard_normal(x.shape), spec, cfg, nu)


# ---------------------------------------------------------------- sufficient statistics


def increment_moments_exact(policy, truth, spec: NoiseSpec, G: int, eta: float, epsilon: float = 1e-8) -> np.ndarray:
    """Exact ``E[dtheta]`` of one plain step for finite ``G``.

    By exchangeability the mean increment of arm i is
    ``eta p_i E[A_1 | I_1 = i]``; conditionally on the first draw, the
    other G-1 rewards are i.i.d. Bernoulli(q), so the expectation is a
    finite binomial sum.
    """
    from scipy.stats import binom

    p = np.asarray(policy, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    rates = arm_rates(truth, spec)
    q = float(p @ rates)
    k = np.arange(G)
    wk = binom.pmf(k, G - 1, q)
    out = np.empty_like(p)
    for i, rate in enumerate(rates):
        m = 0.0
        for r1, pr in ((1, rate), (0, 1.0 - rate)):
            S = r1 + k
            mean = S / G
            std = np.sqrt(mean * (1.0 - mean))
            m += pr * np.sum(wk * (r1 - mean) / (std + epsilon))
        out[i] = p[i] * m
    # the -p * sum(A) term vanishes in expectation because advantages sum to 0
    return eta * out


def sample_increments(policy, truth, spec: NoiseSpec, G: int, eta: float, rng, size: int, epsilon: float = 1e-8):
    """``size`` independent plain-step increments drawn through arm counts.

    The update depends on a group only through how many draws of each arm
    were rewarded, so sampling multinomial counts and binomial successes
    gives the same law as drawing G individual rollouts.
    """
    p = np.asarray(policy, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    counts = rng.multinomial(G, p, size=size)
    ones = rng.binomial(counts, arm_rates(truth, spec))
    S = ones.sum(-1, keepdims=True)
    mean = S / G
    std = np.sqrt(mean * (1.0 - mean))
    a1 = (1.0 - mean) / (std + epsilon)
    a0 = -mean / (std + epsilon)
    per_arm = ones * a1 + (counts - ones) * a0
    total = S * a1 + (G - S) * a0
    return (eta / G) * (per_arm - p * total)


# ---------------------------------------------------------------- runner


def replica_seed(seed: int, replica: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(replica,))


@dataclass
class SimTrajectory:
    """Recorded checkpoints of a batch of replicas.

    ``policy`` has shape (checkpoints, replicas, arms).
    """

    steps: np.ndarray
    policy: np.ndarray
    reward_mean: np.ndarray
    clipped_fraction: np.ndarray
    replicas: np.ndarray
    seed: int
    K: int
    M: int
    eta: float
    spec: object = None
    mode: str = "reinforce"

    @property
    def p(self) -> np.ndarray:
        return self.policy[..., self.K :].sum(-1)

    @property
    def y(self) -> np.ndarray:
        g = self.policy[..., : self.K]
        s = g.sum(-1, keepdims=True)
        return np.where(s > 0, g / np.where(s > 0, s, 1.0), 1.0 / self.K)

    @property
    def z(self) -> np.ndarray:
        b = self.policy[..., self.K :]
        s = b.sum(-1, keepdims=True)
        return np.where(s > 0, b / np.where(s > 0, s, 1.0), 1.0 / self.M)

    @property
    def s2(self) -> np.ndarray:
        return (self.y**2).sum(-1)

    @property
    def t2(self) -> np.ndarray:
        return (self.z**2).sum(-1)

    @property
    def logit(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.p) - np.log1p(-self.p)

    @property
    def n_replicas(self) -> int:
        return self.policy.shape[1]

    def mean_p(self) -> np.ndarray:
        return self.p.mean(axis=1)

    def se_p(self) -> np.ndarray:
        n = self.n_replicas
        if n < 2:
            return np.full(self.steps.size, np.nan)
        return self.p.std(axis=1, ddof=1) / math.sqrt(n)

    def columns(self) -> list[str]:
        return ["replica", "seed"] + csv_header(self.K, self.M) + ["clipped_fraction", "empirical_reward_mean"]

    def replica_rows(self, j: int) -> list[list]:
        """CSV rows of the ``j``-th replica in this batch (same layout as ODE output)."""
        sched = as_schedule(self.spec)
        p = self.p[:, j]
        t = self.steps.astype(float)
        rate = np.array([abs(drift_factor(sched.at(ti), pi)) for ti, pi in zip(t, p)]) * self.eta
        tau = np.concatenate(([0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(t))))
        lyap = np.array([lyapunov_from_p(pi, sched.at(ti)) for ti, pi in zip(t, p)])
        with np.errstate(divide="ignore"):
            lg = np.log(p) - np.log1p(-p)
        y, z = self.y[:, j], self.z[:, j]
        s2, t2 = (y**2).sum(-1), (z**2).sum(-1)
        rows = []
        for i in range(t.size):
            rows.append(
                [int(self.replicas[j]), int(self.seed), int(self.steps[i]), tau[i], p[i], lg[i], s2[i], t2[i], s2[i] + t2[i], lyap[i]]
                + list(y[i])
                + list(z[i])
                + [self.clipped_fraction[i, j], self.reward_mean[i, j]]
            )
        return rows

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for j in range(self.n_replicas):
                for r in self.replica_rows(j):
                    w.writerow([fmt_num(v) for v in r])


def _chunk_len(R: int, width: int) -> int:
    return int(max(1, min(1024, (1 << 21) // max(1, R * width))))


def run(cfg: SimConfig, spec, initial, replicas: int = 1, first_replica: int = 0) -> SimTrajectory:
    """Simulate ``replicas`` independent runs from ``initial``.

    Replica ``r`` (global index ``first_replica + r``) reads only from the
    stream ``SeedSequence(cfg.seed, spawn_key=(r,))``; its trajectory does
    not depend on which other replicas share the batch.
    """
    sched = as_schedule(spec)
    x0 = np.asarray(initial, dtype=float)
    if x0.shape != (cfg.d,) or abs(x0.sum() - 1.0) > 1e-12 or np.any(x0 < 0):
        raise SimplexError("initial policy must be a probability vector of length K + M")
    truth = truth_labels(cfg.K, cfg.M)
    ids = np.arange(first_replica, first_replica + replicas)
    gens = [make_rng(replica_seed(cfg.seed, int(r))) for r in ids]
    R, G, d = replicas, cfg.G, cfg.d
    wf = cfg.mode == "wright_fisher"
    width = d if wf else 2 * G
    chunk = _chunk_len(R, width)

    state = np.repeat(x0[None], R, axis=0) if wf else np.repeat(_logits(x0)[None], R, axis=0)
    rec_steps = [0]
    rec_pol = [x0[None].repeat(R, 0)]
    rec_rm = [np.full(R, np.nan)]
    rec_cf = [np.zeros(R)]
    buf = None
    for n in range(cfg.steps):
        k = n % chunk
        if k == 0:
            m = min(chunk, cfg.steps - n)
            if wf:
                buf = np.stack([g.standard_normal((m, d)) for g in gens], axis=1)
            else:
                buf = np.stack([g.random((m, 2 * G)) for g in gens], axis=1)
        sp = sched.at(n)
        if wf:
            state = _wf_batch(state, buf[k], sp, cfg, cfg.nu)
            rm, cf = np.full(R, np.nan), np.zeros(R)
        else:
            u = buf[k]
            state, _, rewards, _, _, cf = _step_batch(state, u[:, :G], u[:, G:], arm_rates(truth, sp), truth, cfg)
            state = state - state.max(axis=-1, keepdims=True)
            rm = rewards.mean(axis=-1)
        if (n + 1) % cfg.record_every == 0 or n + 1 == cfg.steps:
            rec_steps.append(n + 1)
            rec_pol.append(state.copy() if wf else _softmax(state))
            rec_rm.append(rm)
            rec_cf.append(np.asarray(cf, dtype=float))
    return SimTrajectory(
        steps=np.asarray(rec_steps),
        policy=np.stack(rec_pol),
        reward_mean=np.stack(rec_rm),
        clipped_fraction=np.stack(rec_cf),
        replicas=ids,
        seed=int(cfg.seed),
        K=cfg.K,
        M=cfg.M,
        eta=cfg.eta,
        spec=spec,
        mode=cfg.mode,
    )


def hitting_steps(traj: SimTrajectory, threshold: float) -> np.ndarray:
    """First recorded step with bad mass at or below ``threshold`` (NaN if never)."""
    below = traj.p <= threshold
    hit = below.any(axis=0)
    first = np.argmax(below, axis=0)
    return np.where(hit, traj.steps[first].astype(float), np.nan)
