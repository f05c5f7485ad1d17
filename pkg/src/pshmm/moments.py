"""First three cross-moments of a vector sequence: batch, online and forgetful.

Tensor convention: ``K[i, j, k] = E[Y3_i * Y1_j * Y2_k]`` so that
``K(a) = sum_k a_k K[:, :, k] = E[y3 y1^T (y2^T a)]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError, NotWarmError


@dataclass
class SpectralMoments:
    mu: np.ndarray
    sigma: np.ndarray
    K: np.ndarray
    n_points: int = 0
    effective_n: float | None = None

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    def K_of(self, a) -> np.ndarray:
        """The matrix ``K(a)``."""
        return self.K @ np.asarray(a, dtype=float)

    def copy(self) -> "SpectralMoments":
        return SpectralMoments(self.mu.copy(), self.sigma.copy(), self.K.copy(),
                               self.n_points, self.effective_n)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n_points": int(self.n_points),
            "effective_n": float(self.n_points if self.effective_n is None else self.effective_n),
            "mu": self.mu.tolist(),
            "sigma_rowmajor": flatten(self.sigma).tolist(),
            "k_flat": flatten(self.K).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SpectralMoments":
        d = int(doc["d"])
        return cls(
            mu=np.asarray(doc["mu"], dtype=float),
            sigma=unflatten(doc["sigma_rowmajor"], d, 2),
            K=unflatten(doc["k_flat"], d, 3),
            n_points=int(doc["n_points"]),
            effective_n=float(doc["effective_n"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SpectralMoments":
        return cls.from_dict(json.loads(text))


def flatten(a) -> np.ndarray:
    """Row-major flattening of a square matrix or cubic tensor (last index fastest)."""
    a = np.asarray(a)
    if a.ndim not in (2, 3) or len(set(a.shape)) != 1:
        raise InvalidArgumentError(f"flatten needs a square matrix or cubic tensor, got shape {a.shape}")
    return a.reshape(-1).copy()


def unflatten(v, d: int, order: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size != d ** order:
        raise InvalidArgumentError(f"cannot reshape {v.size} values into order-{order} d={d} array")
    return v.reshape((d,) * order)


def estimate_batch(Y) -> SpectralMoments:
    """Sample moments of consecutive singles, pairs and triples of rows of ``Y``."""
    Y = np.asarray(Y, dtype=float)
    L = Y.shape[0]
    if L < 3:
        raise InsufficientDataError(f"need at least 3 observations, got {L}")
    mu = Y.mean(axis=0)
    sigma = Y[1:].T @ Y[:-1] / (L - 1)
    K = np.einsum("ti,tj,tk->ijk", Y[2:], Y[:-2], Y[1:-1], optimize=True) / (L - 2)
    return SpectralMoments(mu=mu, sigma=sigma, K=K, n_points=L, effective_n=float(L))


class MomentAccumulator:
    """Streaming estimate of (mu, Sigma, K) with optional exponential forgetting.

    Each moment keeps its own (effective) count: singles, pairs and triples.
    With ``decay = 0`` the counts are ``T, T-1, T-2`` and the update is the
    plain running mean; with ``decay = gamma`` every count follows
    ``n <- (1 - gamma) n + 1`` and the estimates are exponentially weighted
    averages of the observed singles, pairs and triples.
    """

    def __init__(self, d: int, decay: float = 0.0):
        if not 0.0 <= decay < 1.0:
            raise InvalidArgumentError("decay must lie in [0, 1)")
        self.decay = float(decay)
        self.moments = SpectralMoments(np.zeros(d), np.zeros((d, d)), np.zeros((d, d, d)), 0, 0.0)
        self.counts = np.zeros(3)
        self.last = None
        self.second_last = None

    @classmethod
    def from_batch(cls, Y, decay: float = 0.0) -> "MomentAccumulator":
        Y = np.asarray(Y, dtype=float)
        m = estimate_batch(Y)
        acc = cls(Y.shape[1], decay)
        L = Y.shape[0]
        acc.moments = m
        acc.counts = np.array([L, L - 1, L - 2], dtype=float)
        acc.moments.effective_n = float(L)
        acc.last = Y[-1].copy()
        acc.second_last = Y[-2].copy()
        return acc

    @property
    def warm(self) -> bool:
        return self.second_last is not None

    @property
    def effective_n(self) -> float:
        return float(self.counts[0])

    @property
    def n_points(self) -> int:
        return self.moments.n_points

    def push(self, y) -> "MomentAccumulator":
        """Consume one observation, priming the lag history if necessary."""
        y = np.asarray(y, dtype=float)
        if self.warm:
            if self.decay == 0.0:
                return update_online(self, y)
            return update_forgetful(self, y, self.decay)
        keep = 1.0 - self.decay
        m = self.moments
        m.mu = (keep * self.counts[0] * m.mu + y) / (keep * self.counts[0] + 1.0)
        self.counts[0] = keep * self.counts[0] + 1.0
        if self.last is not None:
            m.sigma = np.outer(y, self.last)
            self.counts[1] = 1.0
            self.second_last = self.last
        self.last = y.copy()
        m.n_points += 1
        m.effective_n = self.effective_n
        return self


def _require_warm(acc: MomentAccumulator):
    if not acc.warm:
        raise NotWarmError("accumulator needs two priming observations before updates")


def update_online(acc: MomentAccumulator, y_new) -> MomentAccumulator:
    """Equal-weight running update; divisors ``T+1``, ``T`` and ``T-1``."""
    _require_warm(acc)
    y = np.asarray(y_new, dtype=float)
    m = acc.moments
    n1, n2, n3 = acc.counts
    m.mu = (n1 * m.mu + y) / (n1 + 1.0)
    m.sigma = (n2 * m.sigma + np.outer(y, acc.last)) / (n2 + 1.0)
    m.K = (n3 * m.K + np.einsum("i,j,k->ijk", y, acc.second_last, acc.last)) / (n3 + 1.0)
    acc.counts += 1.0
    acc.second_last, acc.last = acc.last, y.copy()
    m.n_points += 1
    m.effective_n = acc.effective_n
    return acc


def update_forgetful(acc: MomentAccumulator, y_new, gamma: float) -> MomentAccumulator:
    """Exponentially forgetting update: ``m <- ((1-g) n m + new) / ((1-g) n + 1)``."""
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError("gamma must lie in (0, 1)")
    _require_warm(acc)
    y = np.asarray(y_new, dtype=float)
    m = acc.moments
    w = (1.0 - gamma) * acc.counts
    m.mu = (w[0] * m.mu + y) / (w[0] + 1.0)
    m.sigma = (w[1] * m.sigma + np.outer(y, acc.last)) / (w[1] + 1.0)
    m.K = (w[2] * m.K + np.einsum("i,j,k->ijk", y, acc.second_last, acc.last)) / (w[2] + 1.0)
    acc.counts = w + 1.0
    acc.second_last, acc.last = acc.last, y.copy()
    m.n_points += 1
    m.effective_n = acc.effective_n
    return acc


def weighted_moments(Y, gamma: float) -> SpectralMoments:
    """Direct exponentially weighted sums over the whole sequence (no recursion)."""
    Y = np.asarray(Y, dtype=float)
    L = Y.shape[0]
    if L < 3:
        raise InsufficientDataError("need at least 3 observations")
    w = (1.0 - gamma) ** np.arange(L - 1, -1, -1, dtype=float)
    w1, w2, w3 = w, w[1:], w[2:]
    mu = (w1[:, None] * Y).sum(axis=0) / w1.sum()
    sigma = (Y[1:] * w2[:, None]).T @ Y[:-1] / w2.sum()
    K = np.einsum("t,ti,tj,tk->ijk", w3, Y[2:], Y[:-2], Y[1:-1], optimize=True) / w3.sum()
    return SpectralMoments(mu=mu, sigma=sigma, K=K, n_points=L, effective_n=float(w1.sum()))
