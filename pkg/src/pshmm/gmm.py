"""Gaussian mixture fitting in the reduced space and the PSHMM weight maps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DegenerateMixtureError, IllConditionedMeansError, InvalidArgumentError

EIG_FLOOR = 1e-10
MEANS_COND_LIMIT = 1e10


@dataclass
class GaussianMixture:
    """Fitted mixture; ``means`` is ``d x k`` (columns are component means)."""

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    loglik_trace: list = field(default_factory=list)
    n_iter: int = 0
    seed: int = 0

    @property
    def k(self) -> int:
        return self.means.shape[1]

    def log_joint(self, Y) -> np.ndarray:
        """``log w_i + log N(y | m_i, C_i)`` for every row of ``Y`` (``L x k``)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return _log_gauss(Y, self.means, self.covariances) + np.log(self.weights)[None, :]

    def responsibilities(self, Y) -> np.ndarray:
        lj = self.log_joint(Y)
        norm = logsumexp(lj, axis=1, keepdims=True)
        bad = ~np.isfinite(norm[:, 0])
        if bad.any():
            warnings.warn(f"{bad.sum()} rows had vanishing mixture density; using uniform weights")
            lj[bad] = 0.0
            norm[bad] = np.log(self.k)
        return np.exp(lj - norm)

    def score(self, Y) -> float:
        return float(logsumexp(self.log_joint(Y), axis=1).sum())

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(),
                "covariances": [c.reshape(-1).tolist() for c in self.covariances],
                "weights": self.weights.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, doc) -> "GaussianMixture":
        means = np.asarray(doc["means"], dtype=float)
        d = means.shape[0]
        covs = np.array([np.asarray(c, dtype=float).reshape(d, d) for c in doc["covariances"]])
        return cls(means, covs, np.asarray(doc["weights"], dtype=float), seed=doc.get("seed", 0))


def _log_gauss(Y, means, covs) -> np.ndarray:
    L, d = Y.shape
    out = np.empty((L, means.shape[1]))
    for i in range(means.shape[1]):
        chol = np.linalg.cholesky(covs[i])
        z = solve_triangular(chol, (Y - means[:, i]).T, lower=True, check_finite=False)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        with np.errstate(over="ignore"):
            out[:, i] = -0.5 * ((z * z).sum(axis=0) + logdet + d * np.log(2 * np.pi))
    return out


def _floor_cov(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.T)
    vals, vecs = np.linalg.eigh(c)
    if vals.min() >= EIG_FLOOR:
        return c
    vals = np.maximum(vals, EIG_FLOOR)
    return (vecs * vals) @ vecs.T


def kmeans_pp_init(Y, k, rng) -> np.ndarray:
    L = Y.shape[0]
    centers = [Y[rng.integers(L)]]
    d2 = ((Y - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(L) if total <= 0 else rng.choice(L, p=d2 / total)
        centers.append(Y[idx])
        d2 = np.minimum(d2, ((Y - Y[idx]) ** 2).sum(axis=1))
    return np.array(centers).T


def _canonical_order(means: np.ndarray) -> np.ndarray:
    """Sort columns by descending first coordinate, ties broken lexicographically."""
    keys = [(-m[0],) + tuple(m[1:]) for m in np.round(means.T, 12)]
    return np.array(sorted(range(len(keys)), key=lambda i: keys[i]))


def _em(Y, k, rng, max_iter, tol):
    L, d = Y.shape
    means = kmeans_pp_init(Y, k, rng)
    base = _floor_cov(np.cov(Y.T, bias=True).reshape(d, d))
    covs = np.array([base.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)
    trace = []
    for it in range(max_iter):
        lj = _log_gauss(Y, means, covs) + np.log(weights)
        norm = logsumexp(lj, axis=1, keepdims=True)
        trace.append(float(norm.sum()))
        resp = np.exp(lj - norm)
        nk = resp.sum(axis=0)
        if nk.min() < 1e-8 * L or nk.min() < 1e-12:
            raise DegenerateMixtureError("empty mixture component")
        weights = nk / L
        means = (Y.T @ resp) / nk
        for i in range(k):
            diff = Y - means[:, i]
            covs[i] = _floor_cov((resp[:, i, None] * diff).T @ diff / nk[i])
        if it > 0 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    lj = _log_gauss(Y, means, covs) + np.log(weights)
    trace.append(float(logsumexp(lj, axis=1).sum()))
    return means, covs, weights, trace, it + 1


def fit_gmm(Y, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
            restarts: int = 3, attempts: int = 5) -> GaussianMixture:
    """EM fit of a full-covariance ``k``-component mixture with k-means++ starts.

    The best of ``restarts`` successful fits (by final log-likelihood) is
    kept.  Collapsed fits are retried with fresh sub-seeds; after ``attempts``
    collapses a :class:`DegenerateMixtureError` is raised.  Components come
    back in canonical order so repeated fits are comparable.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise InvalidArgumentError("Y must be 2-D")
    if Y.shape[0] < 10 * k:
        raise InvalidArgumentError(f"need at least {10 * k} rows for k={k}")
    best, failures = None, 0
    for ss in np.random.SeedSequence(seed).spawn(restarts + attempts):
        try:
            fit = _em(Y, k, np.random.default_rng(ss), max_iter, tol)
        except DegenerateMixtureError:
            failures += 1
            if failures >= attempts:
                break
            continue
        if best is None or fit[3][-1] > best[3][-1]:
            best = fit
        restarts -= 1
        if restarts == 0:
            break
    if best is None:
        raise DegenerateMixtureError(f"mixture collapsed in all {attempts} attempts")
    means, covs, weights, trace, n_iter = best
    order = _canonical_order(means)
    return GaussianMixture(means[:, order], covs[order], weights[order], trace, n_iter, seed)


def weights_moment(y, M_hat) -> np.ndarray:
    """Solve ``M_hat w = y`` (rows of a 2-D ``y`` are solved independently)."""
    M_hat = np.asarray(M_hat, dtype=float)
    if M_hat.shape[0] != M_hat.shape[1]:
        raise InvalidArgumentError("moment weights need a square mean matrix (k = d)")
    cond = np.linalg.cond(M_hat)
    if not np.isfinite(cond) or cond > MEANS_COND_LIMIT:
        raise IllConditionedMeansError(f"cluster-mean matrix condition number {cond:.3g}")
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.linalg.solve(M_hat, y)
    return np.linalg.solve(M_hat, y.T).T


def weights_probability(y, gmm: GaussianMixture) -> np.ndarray:
    """Posterior component probabilities; a 1-D input gives a single vector."""
    y = np.asarray(y, dtype=float)
    r = gmm.responsibilities(np.atleast_2d(y))
    return r[0] if y.ndim == 1 else r
