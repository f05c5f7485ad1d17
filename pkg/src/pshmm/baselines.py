"""Baselines: Baum-Welch Gaussian HMM, forward filtering, oracles and lag-1 AR."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import InvalidArgumentError
from .gmm import kmeans_pp_init
from .model_sim import HmmSpec

VAR_FLOOR = 1e-10


@dataclass
class GhmmModel:
    """Gaussian HMM with spherical per-state variances; ``means`` is ``p x S``."""

    pi0: np.ndarray
    T: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_trace: list = field(default_factory=list)

    @property
    def S(self) -> int:
        return self.T.shape[0]

    def log_emission(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = X.shape[1]
        sq = ((X[:, :, None] - self.means[None, :, :]) ** 2).sum(axis=1)
        return -0.5 * (sq / self.variances + p * np.log(2 * np.pi * self.variances))

    @classmethod
    def from_spec(cls, spec: HmmSpec) -> "GhmmModel":
        var = max(spec.sigma ** 2, VAR_FLOOR)
        return cls(spec.pi0.copy(), spec.T.copy(), spec.M.copy(), np.full(spec.S, var))


def spec_log_emission(spec: HmmSpec, X) -> np.ndarray:
    """Exact emission log-densities under ``spec`` (Gaussian or i.i.d. Student-t coordinates)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if spec.emission_family == "gaussian":
        return GhmmModel.from_spec(spec).log_emission(X)
    nu, s = float(spec.df), max(spec.sigma, 1e-300)
    z = (X[:, :, None] - spec.M[None, :, :]) / s
    per = (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(s)
           - (nu + 1) / 2 * np.log1p(z ** 2 / nu))
    return per.sum(axis=1)


def _forward_backward(logB, pi0, T):
    """Scaled forward-backward; returns ``(loglik, gamma, xi_sum)``."""
    L, S = logB.shape
    shift = logB.max(axis=1, keepdims=True)
    B = np.exp(logB - shift)
    alpha = np.empty((L, S))
    c = np.empty(L)
    a = pi0 * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, L):
        a = (alpha[t - 1] @ T) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.empty((L, S))
    beta[-1] = 1.0
    for t in range(L - 2, -1, -1):
        beta[t] = T @ (B[t + 1] * beta[t + 1]) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi_sum = T * (alpha[:-1].T @ (B[1:] * beta[1:] / c[1:, None]))
    loglik = float(np.log(c).sum() + shift.sum())
    return loglik, gamma, xi_sum


def _baum_welch_once(X, S, max_iters, tol, rng):
    L, p = X.shape
    means = kmeans_pp_init(X, S, rng)
    variances = np.full(S, max(X.var(axis=0).mean(), VAR_FLOOR))
    T = np.full((S, S), 0.5 / max(S - 1, 1))
    np.fill_diagonal(T, 0.5 if S > 1 else 1.0)
    pi0 = np.full(S, 1.0 / S)
    model = GhmmModel(pi0, T, means, variances)
    trace = []
    for _ in range(max_iters):
        ll, gamma, xi_sum = _forward_backward(model.log_emission(X), model.pi0, model.T)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
        mass = gamma.sum(axis=0)
        pi0 = gamma[0] + 1e-300
        T = xi_sum / xi_sum.sum(axis=1, keepdims=True)
        means = model.means.copy()
        variances = model.variances.copy()
        for s in range(S):
            if mass[s] < 1e-8:
                warnings.warn(f"state {s} carries no responsibility; flooring its variance")
                variances[s] = VAR_FLOOR
                continue
            means[:, s] = gamma[:, s] @ X / mass[s]
            sq = ((X - means[:, s]) ** 2).sum(axis=1)
            variances[s] = max(gamma[:, s] @ sq / (p * mass[s]), VAR_FLOOR)
        model = GhmmModel(pi0 / pi0.sum(), T, means, variances)
    model.loglik_trace = trace
    return model


def fit_baum_welch(X, S: int, max_iters: int = 200, tol: float = 1e-6, seed: int = 0,
                   restarts: int = 3) -> GhmmModel:
    """EM for a spherical Gaussian HMM; best of ``restarts`` k-means++ initialisations."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 10 * S:
        raise InvalidArgumentError(f"need at least {10 * S} observations for S={S}")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(restarts):
        model = _baum_welch_once(X, S, max_iters, tol, np.random.default_rng(ss))
        if best is None or model.loglik_trace[-1] > best.loglik_trace[-1]:
            best = model
    return best


def filter_path(logB, pi0, T):
    """Filtered state probabilities ``P(h_t | x_1..x_t)`` for every row; also returns reset flags."""
    L, S = logB.shape
    out = np.empty((L, S))
    flags = np.zeros(L, dtype=bool)
    prior = pi0
    for t in range(L):
        lb = logB[t]
        m = lb.max()
        if not np.isfinite(m):
            out[t] = np.full(S, 1.0 / S)
            flags[t] = True
        else:
            a = prior * np.exp(lb - m)
            tot = a.sum()
            if tot <= 0 or not np.isfinite(tot):
                out[t] = np.full(S, 1.0 / S)
                flags[t] = True
            else:
                out[t] = a / tot
        prior = out[t] @ T
    return out, flags


def forward_filter(model: GhmmModel, X) -> np.ndarray:
    """``P(h_t | x_1..x_t)`` after the last row of ``X`` (``pi0`` when ``X`` is empty)."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return model.pi0.copy()
    filt, _ = filter_path(model.log_emission(X.reshape(-1, model.means.shape[0])), model.pi0, model.T)
    return filt[-1]


def filter_predictions(means, T, pi0, logB) -> np.ndarray:
    """One-step forecasts ``x_hat_1 .. x_hat_{n+1}`` from a log-emission matrix."""
    filt, _ = filter_path(logB, pi0, T)
    nxt = np.vstack([pi0, filt @ T])
    return nxt @ means.T


def ghmm_predict_path(model: GhmmModel, X) -> np.ndarray:
    return filter_predictions(model.means, model.T, model.pi0, model.log_emission(X))


def strong_oracle_predict(spec: HmmSpec, h_t: int) -> np.ndarray:
    """Expected next observation given the true current state."""
    return spec.M @ spec.T[h_t]


def strong_oracle_path(spec: HmmSpec, states) -> np.ndarray:
    return (spec.M @ spec.T[np.asarray(states)].T).T


def limited_oracle_predict(spec: HmmSpec, X) -> np.ndarray:
    """Expected next observation given true parameters but unknown states."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return spec.M @ (spec.pi0 @ spec.T)
    filt, _ = filter_path(spec_log_emission(spec, X), spec.pi0, spec.T)
    return spec.M @ (filt[-1] @ spec.T)


def limited_oracle_path(spec: HmmSpec, X, prior=None) -> np.ndarray:
    """Forecasts ``x_hat_1 .. x_hat_{n+1}``; ``prior`` is the state law of ``x_1``."""
    prior = spec.pi0 if prior is None else prior
    return filter_predictions(spec.M, spec.T, prior, spec_log_emission(spec, X))


@dataclass
class Ar1Model:
    intercept: np.ndarray
    slope: np.ndarray

    def predict(self, x_t) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x_t, dtype=float)


def fit_ar1(X) -> Ar1Model:
    """Per-coordinate least squares ``x_{t+1} = a + b x_t``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 observations")
    prev, nxt = X[:-1], X[1:]
    pm, nm = prev.mean(axis=0), nxt.mean(axis=0)
    var = ((prev - pm) ** 2).sum(axis=0)
    cov = ((prev - pm) * (nxt - nm)).sum(axis=0)
    slope = np.divide(cov, var, out=np.zeros_like(cov), where=var > 0)
    return Ar1Model(nm - slope * pm, slope)


def predict_ar1(model: Ar1Model, x_t) -> np.ndarray:
    return model.predict(x_t)
