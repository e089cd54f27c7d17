"""Geometry and algebra on the probability simplex.

Vectors are plain float64 numpy arrays. ``as_prob`` and ``as_tangent``
validate and return read-only copies; everything else is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRUCT_TOL = 1e-12


class SimplexError(ValueError):
    """Raised when an input violates a simplex invariant."""


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    x.setflags(write=False)
    return x


def as_prob(entries, tol: float = STRUCT_TOL) -> np.ndarray:
    """Validate ``entries`` as a point of the simplex (d >= 2)."""
    x = np.asarray(entries, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise SimplexError(f"probability vector must be 1-D with d >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise SimplexError("probability vector has non-finite entries")
    if np.any(x < 0):
        raise SimplexError("probability vector has negative entries")
    if abs(x.sum() - 1.0) > tol:
        raise SimplexError(f"entries sum to {x.sum():.17g}, not 1")
    return _frozen(x)


def as_tangent(entries, tol: float = STRUCT_TOL) -> np.ndarray:
    x = np.asarray(entries, dtype=float)
    if x.ndim != 1:
        raise SimplexError("tangent vector must be 1-D")
    if abs(x.sum()) > tol * max(1.0, np.abs(x).sum()):
        raise SimplexError(f"tangent entries sum to {x.sum():.3g}, not 0")
    return _frozen(x)


def renormalize(x: np.ndarray, tol: float = STRUCT_TOL) -> np.ndarray:
    """Clamp negatives to zero and rescale if the sum drifted by more than ``tol``.

    Works along the last axis, so batches of policies are handled too.
    """
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    s = x.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > tol):
        x = x / s
    return x


def _check_dims(p: np.ndarray, v: np.ndarray) -> None:
    if p.shape != v.shape:
        raise SimplexError(f"dimension mismatch: {p.shape} vs {v.shape}")


def softmax(logits) -> np.ndarray:
    """Log-sum-exp stabilised softmax along the last axis."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise SimplexError("softmax input has non-finite entries")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def jacobian_apply(p, v) -> np.ndarray:
    """Apply Diag(p) - p p^T to ``v``, i.e. ``p * (v - <p, v>)``.

    Broadcasts over leading axes.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(p, v)
    mean = np.sum(p * v, axis=-1, keepdims=True)
    return p * (v - mean)


def replicator_field(p, A) -> np.ndarray:
    """Replicator velocity ``p_i (A_i - <p, A>)``."""
    return jacobian_apply(p, A)


def grpo_field(p, A) -> np.ndarray:
    """Unit-rate group-normalized policy-gradient flow: the Jacobian applied twice."""
    return jacobian_apply(p, jacobian_apply(p, A))


def jacobian_matrix(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.diag(p) - np.outer(p, p)


def mirror_ascent_step(p, A, eta: float) -> np.ndarray:
    """Multiplicative-weights update ``p * exp(eta A)``, normalised.

    Zero entries of ``p`` stay zero, so the support is preserved.
    """
    if not eta > 0:
        raise SimplexError("eta must be positive")
    p = np.asarray(p, dtype=float)
    A = np.asarray(A, dtype=float)
    _check_dims(p, A)
    # centre before scaling: an exactly representable shift of A then cancels bit for bit
    w = p * np.exp(eta * (A - A.max()))
    return w / w.sum()


def kl_divergence(a, b) -> float:
    """KL(a || b) with the convention 0 log 0 = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_dims(a, b)
    mask = a > 0
    if np.any(b[mask] <= 0):
        raise SimplexError("KL undefined: support of a is not contained in support of b")
    am, bm = a[mask], b[mask]
    return float(max(np.sum(am * (np.log(am) - np.log(bm))), 0.0))


def bhattacharyya_distance(a, b) -> float:
    """Geodesic distance of the square-root embedding: ``2 arccos sum sqrt(a b)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_dims(a, b)
    bc = np.clip(np.sum(np.sqrt(a * b)), -1.0, 1.0)
    return float(2.0 * np.arccos(bc))


@dataclass(frozen=True)
class BlockState:
    """Bad mass ``p`` plus within-block shapes.

    ``y`` is the distribution over the K good arms and ``z`` the one over
    the M bad arms. The flat policy is ``((1 - p) y, p z)``.
    """

    p: float
    y: np.ndarray = field(repr=True)
    z: np.ndarray = field(repr=True)

    def __post_init__(self):
        p = float(self.p)
        if not (0.0 <= p <= 1.0) or not np.isfinite(p):
            raise SimplexError(f"bad mass must lie in [0, 1], got {p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "y", _block_shape(self.y))
        object.__setattr__(self, "z", _block_shape(self.z))

    @property
    def K(self) -> int:
        return self.y.size

    @property
    def M(self) -> int:
        return self.z.size

    @property
    def s2(self) -> float:
        return float(self.y @ self.y)

    @property
    def t2(self) -> float:
        return float(self.z @ self.z)

    @property
    def logit(self) -> float:
        return float(np.log(self.p) - np.log1p(-self.p))

    def flat(self) -> np.ndarray:
        return recompose(self)

    @classmethod
    def uniform(cls, p: float, K: int, M: int) -> "BlockState":
        return cls(p, np.full(K, 1.0 / K), np.full(M, 1.0 / M))


def _block_shape(x) -> np.ndarray:
    # shapes of length 1 are allowed here (K or M may equal 1)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise SimplexError("block shape must be a non-empty 1-D vector")
    if np.any(x < 0) or abs(x.sum() - 1.0) > STRUCT_TOL or not np.all(np.isfinite(x)):
        raise SimplexError("block shape is not a probability vector")
    return _frozen(x)


def decompose(flat, K: int, M: int) -> BlockState:
    """Split a flat policy (good arms first) into bad mass and block shapes.

    An empty block gets a uniform shape.
    """
    if K < 1 or M < 1:
        raise SimplexError("K and M must both be at least 1")
    x = np.asarray(flat, dtype=float)
    if x.size != K + M:
        raise SimplexError(f"flat vector has length {x.size}, expected K + M = {K + M}")
    good, bad = x[:K], x[K:]
    gm, bm = good.sum(), bad.sum()
    y = good / gm if gm > 0 else np.full(K, 1.0 / K)
    z = bad / bm if bm > 0 else np.full(M, 1.0 / M)
    # gm + bm == 1 up to rounding; take p from the bad block directly
    p = float(np.clip(bm / (gm + bm), 0.0, 1.0))
    return BlockState(p, y / y.sum(), z / z.sum())


def recompose(state: BlockState) -> np.ndarray:
    return np.concatenate(((1.0 - state.p) * state.y, state.p * state.z))


def truth_labels(K: int, M: int) -> np.ndarray:
    """Boolean correctness mask: first K arms good, last M bad."""
    return np.concatenate((np.ones(K, dtype=bool), np.zeros(M, dtype=bool)))
