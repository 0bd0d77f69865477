"""Probability vectors over the vocabulary and the sampling primitives."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateDistributionError

SUM_TOLERANCE = 1e-9
KL_EPSILON = 1e-12


class Distribution:
    """Immutable probability vector: entries are non-negative and sum to one.

    The backing array is locked read-only so distributions can be shared
    between caches, batches, and sessions without defensive copies.
    """

    __slots__ = ("probs",)

    def __init__(self, probs: np.ndarray | list[float], *, validate: bool = True):
        arr = np.asarray(probs, dtype=np.float64)
        if validate:
            if arr.ndim != 1:
                raise ValueError("distribution must be a 1-d vector")
            if np.any(arr < 0):
                raise ValueError("distribution has negative entries")
            if abs(float(arr.sum()) - 1.0) > SUM_TOLERANCE:
                raise ValueError(f"distribution sums to {arr.sum()}, not 1")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self.probs = arr

    @classmethod
    def one_hot(cls, token: int, size: int) -> "Distribution":
        arr = np.zeros(size)
        arr[token] = 1.0
        return cls(arr, validate=False)

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size), validate=False)

    @classmethod
    def from_weights(cls, weights: np.ndarray | list[float]) -> "Distribution":
        """Normalize non-negative weights into a distribution."""
        arr = np.asarray(weights, dtype=np.float64)
        total = float(arr.sum())
        if total <= 0:
            raise DegenerateDistributionError("weights sum to zero")
        return cls(arr / total, validate=False)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Distribution) and np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        return f"Distribution({self.probs.tolist()})"


def argmax_token(dist: Distribution) -> int:
    """Most probable token; ties break toward the lowest token id."""
    return int(np.argmax(dist.probs))


def _nucleus(dist: Distribution, top_p: float, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and renormalized probabilities of the top-p nucleus.

    Temperature rescales before truncation. The nucleus is the smallest
    probability-sorted prefix with cumulative mass >= top_p; ties in the
    sort resolve toward lower token ids.
    """
    if not 0 < top_p <= 1:
        raise ValueError("top_p must be in (0, 1]")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    probs = dist.probs
    if temperature != 1.0:
        # Rescale in log space so sharp temperatures cannot underflow the mode.
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        logp = logp / temperature
        probs = np.exp(logp - logp.max())
    total = float(probs.sum())
    if total <= 0:
        raise DegenerateDistributionError("no mass after temperature scaling")
    probs = probs / total
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    cut = int(np.searchsorted(cumulative, top_p, side="left"))
    keep = order[: cut + 1]
    kept = probs[keep]
    return keep, kept / kept.sum()


def transform(dist: Distribution, top_p: float, temperature: float) -> Distribution:
    """Full-vocabulary view of the temperature-scaled, top-p-truncated distribution."""
    if top_p == 1.0 and temperature == 1.0:
        return dist
    keep, kept = _nucleus(dist, top_p, temperature)
    arr = np.zeros(len(dist))
    arr[keep] = kept
    return Distribution(arr, validate=False)


def sample_token(
    dist: Distribution,
    top_p: float,
    temperature: float,
    rng: np.random.Generator,
) -> int:
    """Draw one token from the temperature-scaled, top-p-truncated distribution."""
    keep, kept = _nucleus(dist, top_p, temperature)
    if len(keep) == 1:
        return int(keep[0])
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(kept), u, side="right"))
    return int(keep[min(idx, len(keep) - 1)])


def accept_prob(p_val: float, q_val: float) -> float:
    """min(1, p/q): chance a drafted token survives verification."""
    if q_val <= 0:
        raise ValueError("draft probability must be positive for a drafted token")
    if p_val < 0:
        raise ValueError("target probability must be non-negative")
    return min(1.0, p_val / q_val)


def residual_distribution(p: Distribution, q: Distribution) -> Distribution:
    """norm(max(0, p - q)); returns p itself when the two coincide."""
    diff = np.maximum(p.probs - q.probs, 0.0)
    total = float(diff.sum())
    if total <= 0.0:
        return p
    return Distribution(diff / total, validate=False)


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """Sum of p * ln(p/q), in nats.

    Where q lacks support under p, q is smoothed with uniform additive mass
    (KL_EPSILON) and renormalized, which keeps the result non-negative.
    """
    ps = p.probs
    qs = q.probs
    mask = ps > 0
    if np.any(qs[mask] <= 0):
        qs = (qs + KL_EPSILON) / (1.0 + KL_EPSILON * len(qs))
    return float(np.sum(ps[mask] * np.log(ps[mask] / qs[mask])))


def total_variation(p: Distribution, q: Distribution) -> float:
    return 0.5 * float(np.abs(p.probs - q.probs).sum())
