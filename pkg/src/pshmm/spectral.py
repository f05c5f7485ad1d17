"""Spectral HMM core: subspace estimation, observable operators, scoring and prediction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (DegenerateBeliefError, DegenerateScoreError, InvalidArgumentError,
                     RankDeficientError, SingularSigmaError)
from .moments import MomentAccumulator, SpectralMoments, estimate_batch

SIGMA_COND_LIMIT = 1e12
BELIEF_EPS = 1e-12


@dataclass
class ProjectionBasis:
    U: np.ndarray
    source: str = "bigram"
    method: str = "dense"
    d_tilde: int | None = None
    oversample: int = 5
    power_iters: int = 2

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def reduce(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.U

    def to_dict(self) -> dict:
        return {"U": self.U.tolist(), "source": self.source, "method": self.method,
                "d_tilde": self.d_tilde, "oversample": self.oversample,
                "power_iters": self.power_iters}

    @classmethod
    def from_dict(cls, doc) -> "ProjectionBasis":
        doc = dict(doc)
        doc["U"] = np.asarray(doc["U"], dtype=float)
        return cls(**doc)


def _fix_signs(U: np.ndarray, *others: np.ndarray):
    """Flip columns so that each column's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return (U * s,) + tuple(o * s for o in others)


def randomized_range(A: np.ndarray, rank: int, oversample: int, power_iters: int, rng) -> np.ndarray:
    """Orthonormal basis for the approximate range of ``A`` (Halko et al. scheme)."""
    n = A.shape[1]
    k = min(rank + oversample, min(A.shape))
    Q = A @ rng.standard_normal((n, k))
    Q, _ = np.linalg.qr(Q)
    for _ in range(power_iters):
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
    return Q


def randomized_svd(A, rank: int, oversample: int = 5, power_iters: int = 2, seed=0):
    """Rank-``rank`` truncated SVD ``A ~ U diag(s) V^T`` via a randomized range finder."""
    A = np.asarray(A, dtype=float)
    if rank > min(A.shape):
        raise InvalidArgumentError(f"rank {rank} exceeds min dimension {min(A.shape)}")
    rng = np.random.default_rng(seed)
    Q = randomized_range(A, rank, oversample, power_iters, rng)
    Ub, s, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    return (Q @ Ub)[:, :rank], s[:rank], Vt[:rank].T


def randomized_bigram_svd(X1, X2, d_tilde: int, oversample: int = 5, power_iters: int = 2, seed=0):
    """Rank-``d_tilde`` SVD of ``X2^T X1 / (n - 1)`` without forming the ``p x p`` product.

    ``X1`` holds rows ``x_1 .. x_{L-1}`` and ``X2`` rows ``x_2 .. x_L``
    (``n = L - 1`` rows each).  Returns ``(left, singular_values, right)``.
    """
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.shape != X2.shape:
        raise InvalidArgumentError("X1 and X2 must have the same shape")
    if d_tilde > min(X1.shape):
        raise InvalidArgumentError(f"d_tilde={d_tilde} exceeds min dimension {min(X1.shape)}")
    n = X1.shape[0]
    U1, s1, V1 = randomized_svd(X1, d_tilde, oversample, power_iters, seed)
    U2, s2, V2 = randomized_svd(X2, d_tilde, oversample, power_iters, seed + 1)
    # X2^T X1 = V2 (S2 U2^T U1 S1) V1^T
    core = (s2[:, None] * (U2.T @ U1)) * s1[None, :]
    Uc, sc, Vct = np.linalg.svd(core)
    return V2 @ Uc, sc / (n - 1), V1 @ Vct.T


def second_moment_matrix(X, source: str = "bigram") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    L = X.shape[0]
    if source == "bigram":
        return X[1:].T @ X[:-1] / (L - 2)
    if source == "unigram":
        return X.T @ X / L
    raise InvalidArgumentError(f"unknown basis source {source!r}")


def estimate_basis(X, d: int, source: str = "bigram", method: str = "dense",
                   d_tilde: int | None = None, oversample: int = 5, power_iters: int = 2,
                   seed: int = 0) -> ProjectionBasis:
    """Top-``d`` left singular vectors of the bigram (or unigram) second-moment matrix."""
    X = np.asarray(X, dtype=float)
    L, p = X.shape
    if L < 3:
        raise InvalidArgumentError("need at least 3 observations")
    if d > min(p, L - 2):
        raise InvalidArgumentError(f"d={d} exceeds min(p, L-2)={min(p, L - 2)}")
    if method == "dense":
        U, s, _ = np.linalg.svd(second_moment_matrix(X, source))
    elif method == "randomized":
        d_tilde = d + 5 if d_tilde is None else d_tilde
        d_tilde = min(d_tilde, p, L - 1)
        if source == "bigram":
            U, s, _ = randomized_bigram_svd(X[:-1], X[1:], d_tilde, oversample, power_iters, seed)
        elif source == "unigram":
            _, s, U = randomized_svd(X, d_tilde, oversample, power_iters, seed)
            s = s ** 2 / L
        else:
            raise InvalidArgumentError(f"unknown basis source {source!r}")
    else:
        raise InvalidArgumentError(f"unknown svd method {method!r}")
    tol = s[0] * max(p, L) * np.finfo(float).eps if s.size else 0.0
    if s.size < d or s[d - 1] <= tol:
        raise RankDeficientError(f"d={d} exceeds the numerical rank of the {source} matrix")
    (U,) = _fix_signs(U[:, :d])
    return ProjectionBasis(U=U, source=source, method=method, d_tilde=d_tilde,
                           oversample=oversample, power_iters=power_iters)


@dataclass(frozen=True)
class SpectralOperators:
    """``c1``, ``c_inf`` and the operator tensor with ``C(y) = K(y) Sigma^{-1}``."""

    c1: np.ndarray
    c_inf: np.ndarray
    K: np.ndarray
    Sigma_inv: np.ndarray
    C_tensor: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.c1.shape[0]

    def C(self, y) -> np.ndarray:
        return self.C_tensor @ np.asarray(y, dtype=float)


def build_operators(m: SpectralMoments, cond_limit: float = SIGMA_COND_LIMIT) -> SpectralOperators:
    cond = np.linalg.cond(m.sigma)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularSigmaError(f"Sigma condition number {cond:.3g} exceeds {cond_limit:.0e}", cond)
    lu = linalg.lu_factor(m.sigma)
    sigma_inv = linalg.lu_solve(lu, np.eye(m.d))
    c_inf = linalg.lu_solve(lu, m.mu, trans=1)
    # C_tensor[:, :, k] = K[:, :, k] @ Sigma^{-1}
    C_tensor = np.einsum("ijk,jl->ilk", m.K, sigma_inv)
    return SpectralOperators(c1=m.mu.copy(), c_inf=c_inf, K=m.K.copy(), Sigma_inv=sigma_inv,
                             C_tensor=C_tensor)


def sequence_score(ops: SpectralOperators, Y):
    """``(log|Pr|, sign)`` of ``c_inf^T C(y_T) ... C(y_1) c1`` with per-step rescaling."""
    Y = np.asarray(Y, dtype=float).reshape(-1, ops.d)
    v = ops.c1.copy()
    log_scale = 0.0
    for y in Y:
        v = ops.C(y) @ v
        s = np.max(np.abs(v))
        if s == 0.0 or not np.isfinite(s):
            raise DegenerateScoreError("running product vanished or overflowed")
        v /= s
        log_scale += np.log(s)
    final = ops.c_inf @ v
    if final == 0.0:
        raise DegenerateScoreError("score is exactly zero")
    return log_scale + np.log(abs(final)), float(np.sign(final))


def naive_score(ops: SpectralOperators, Y) -> float:
    v = ops.c1.copy()
    for y in np.asarray(Y, dtype=float).reshape(-1, ops.d):
        v = ops.C(y) @ v
    return float(ops.c_inf @ v)


def predict_next(ops: SpectralOperators, belief, y_prev) -> np.ndarray:
    """One step of the normalized belief recursion ``C(y) b / (c_inf^T C(y) b)``."""
    num = ops.C(y_prev) @ np.asarray(belief, dtype=float)
    den = ops.c_inf @ num
    if not np.isfinite(den) or abs(den) <= BELIEF_EPS * np.abs(num).sum():
        raise DegenerateBeliefError(f"normalizer {den:.3g} is degenerate")
    return num / den


def reconstruct(basis, y) -> np.ndarray:
    U = basis.U if isinstance(basis, ProjectionBasis) else np.asarray(basis, dtype=float)
    return U @ np.asarray(y, dtype=float)


def operators_to_dict(ops: SpectralOperators, moments: SpectralMoments, basis: ProjectionBasis) -> dict:
    doc = moments.to_dict()
    doc["c_inf"] = ops.c_inf.tolist()
    doc["U"] = basis.U.tolist()
    return doc


@dataclass
class ShmmModel:
    """Plain spectral HMM on the reduced process ``y_t = U^T x_t``."""

    basis: ProjectionBasis
    moments: SpectralMoments
    ops: SpectralOperators

    @property
    def d(self) -> int:
        return self.basis.d

    def initial_belief(self) -> np.ndarray:
        return self.ops.c1.copy()

    def step(self, belief, x_obs):
        """Advance the belief past observation ``x_obs``; returns ``(belief, flagged)``."""
        try:
            return predict_next(self.ops, belief, self.basis.U.T @ x_obs), False
        except DegenerateBeliefError:
            return belief, True

    def predict_path(self, X):
        """One-step predictions ``x_hat_1 .. x_hat_{n+1}`` for the rows of ``X``.

        Row ``t`` of the result is the prediction of ``x_t`` from ``x_1..x_{t-1}``
        (0-based); the last row forecasts the step after ``X``.
        """
        X = np.asarray(X, dtype=float)
        U = self.basis.U
        out = np.empty((X.shape[0] + 1, U.shape[0]))
        flags = np.zeros(X.shape[0] + 1, dtype=bool)
        b = self.initial_belief()
        out[0] = U @ b
        for t, x in enumerate(X):
            b, flags[t + 1] = self.step(b, x)
            out[t + 1] = U @ b
        return out, flags

    def to_dict(self) -> dict:
        return {"kind": "shmm", "basis": self.basis.to_dict(), "moments": self.moments.to_dict(),
                "c_inf": self.ops.c_inf.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "ShmmModel":
        basis = ProjectionBasis.from_dict(doc["basis"])
        m = SpectralMoments.from_dict(doc["moments"])
        return cls(basis, m, build_operators(m))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fit_shmm(X, d: int, source: str = "bigram", method: str = "dense", seed: int = 0) -> ShmmModel:
    basis = estimate_basis(X, d, source=source, method=method, seed=seed)
    m = estimate_batch(basis.reduce(X))
    return ShmmModel(basis, m, build_operators(m))


@dataclass
class OnlineStep:
    t: int
    x_hat: np.ndarray
    belief: np.ndarray
    flag: bool


def iter_online_shmm(X, warmup_len: int, d: int, gamma: float = 0.0, source: str = "bigram",
                     method: str = "dense", seed: int = 0):
    """Online SHMM: fit on the warm-up block, then update moments per arrival.

    Yields an :class:`OnlineStep` whose ``x_hat`` forecasts row ``t`` of ``X``
    (``t = warmup_len .. len(X)``; the final step forecasts past the end).
    """
    X = np.asarray(X, dtype=float)
    if warmup_len < 3:
        raise InvalidArgumentError("warm-up needs at least 3 observations")
    warm = X[:warmup_len]
    basis = estimate_basis(warm, d, source=source, method=method, seed=seed)
    Y = basis.reduce(X)
    acc = MomentAccumulator.from_batch(Y[:warmup_len], decay=gamma)
    ops = build_operators(acc.moments)
    model = ShmmModel(basis, acc.moments, ops)
    b = model.initial_belief()
    for x in warm:
        b, _ = model.step(b, x)
    yield OnlineStep(warmup_len, basis.U @ b, b, False)
    for t in range(warmup_len, X.shape[0]):
        acc.push(Y[t])
        flag = False
        try:
            ops = build_operators(acc.moments)
        except SingularSigmaError:
            flag = True
        try:
            b = predict_next(ops, b, Y[t])
        except DegenerateBeliefError:
            flag = True
        yield OnlineStep(t + 1, basis.U @ b, b, flag)
