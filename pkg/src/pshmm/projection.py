"""Simplex / polyhedron projections and the projected spectral HMM (PSHMM)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (DegenerateBeliefError, InvalidArgumentError, OptimizationFailureError,
                     SingularSigmaError)
from .gmm import GaussianMixture, fit_gmm, weights_moment, weights_probability
from .moments import MomentAccumulator, SpectralMoments, estimate_batch
from .spectral import (OnlineStep, ProjectionBasis, SpectralOperators, build_operators,
                       estimate_basis, predict_next)

VARIANTS = ("simplex", "polyhedron")
WEIGHT_MODES = ("moment", "probability")


def project_simplex(u) -> np.ndarray:
    """Euclidean projection of ``u`` onto the probability simplex (sort-based, O(d log d))."""
    u = np.asarray(u, dtype=float)
    z = -np.sort(-u, kind="stable")
    css = np.cumsum(z)
    i = np.arange(1, u.size + 1)
    rho = np.nonzero(z + (1.0 - css) / i > 0)[0][-1] + 1
    lam = (1.0 - css[rho - 1]) / rho
    return np.maximum(u + lam, 0.0)


def polyhedron_weights(y, M_hat, t0: float = 1.0, mu: float = 10.0, gap_tol: float = 1e-8,
                       newton_tol: float = 1e-10, alpha: float = 0.25, beta: float = 0.5,
                       max_newton: int = 100) -> np.ndarray:
    """Simplex weights ``w`` minimising ``||M_hat w - y||`` by a log-barrier Newton method.

    The equality ``sum(w) = 1`` is eliminated with ``w = w0 + Z z`` where the
    columns of ``Z`` span the null space of ``1^T``; positivity is handled by
    the barrier ``-sum(log w)`` whose weight is relaxed by ``mu`` per outer
    round until the duality gap bound ``k / t`` drops below ``gap_tol``.
    """
    M = np.asarray(M_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    k = M.shape[1]
    if k == 1:
        return np.ones(1)
    w, ok = _barrier_newton(np.ascontiguousarray(M), np.ascontiguousarray(y), _null_basis(k), t0,
                            mu, gap_tol, newton_tol, alpha, beta, max_newton)
    if not ok:
        raise OptimizationFailureError("Newton centering did not converge", last_iterate=M @ w)
    return w


@njit(cache=True)
def _barrier_newton(M, y, Z, t0, mu, gap_tol, newton_tol, alpha, beta, max_newton):
    k = M.shape[1]
    G = M.T @ M
    h = M.T @ y
    Zt = np.ascontiguousarray(Z.T)
    w = np.full(k, 1.0 / k)
    t = t0
    while True:
        converged = False
        for _ in range(max_newton):
            grad = t * (G @ w - h) - 1.0 / w
            H = t * G + np.diag(1.0 / (w * w))
            g = Zt @ grad
            dz = -np.linalg.solve(Zt @ H @ Z, g)
            lam2 = -(g @ dz)
            if lam2 / 2.0 <= newton_tol:
                converged = True
                break
            dw = Z @ dz
            s = 1.0
            for i in range(k):
                if dw[i] < 0.0:
                    s = min(s, -0.99 * w[i] / dw[i])
            r = M @ w - y
            f0 = 0.5 * t * (r @ r) - np.sum(np.log(w))
            accepted = False
            while s > 1e-12:
                wn = w + s * dw
                r = M @ wn - y
                if 0.5 * t * (r @ r) - np.sum(np.log(wn)) <= f0 - alpha * s * lam2:
                    accepted = True
                    break
                s *= beta
            if not accepted or s * np.max(np.abs(dw)) < 1e-15:
                # no representable progress left: centred to machine precision
                converged = True
                break
            w = wn
        if not converged:
            return w, False
        if k / t < gap_tol:
            return w, True
        t *= mu


def _null_basis(k: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.eye(k) - 1.0 / k)
    return np.ascontiguousarray(q[:, : k - 1])


def project_polyhedron(y, M_hat, **kw) -> np.ndarray:
    """Nearest point to ``y`` in the convex hull of the columns of ``M_hat``."""
    M = np.asarray(M_hat, dtype=float)
    if M.ndim != 2 or M.shape[1] < 1:
        raise InvalidArgumentError("M_hat needs at least one column")
    return M @ polyhedron_weights(y, M, **kw)


@dataclass
class PshmmModel:
    """Spectral model on the weight process ``w_t`` with projected belief updates."""

    basis: ProjectionBasis
    mixture: GaussianMixture
    moments: SpectralMoments
    ops: SpectralOperators
    variant: str = "simplex"
    weight_mode: str = "moment"

    @property
    def M_hat(self) -> np.ndarray:
        return self.mixture.means

    @property
    def d(self) -> int:
        return self.basis.d

    def weights(self, X) -> np.ndarray:
        """Weight vectors for observations (rows of ``X``) in the original space."""
        return self.weights_reduced(self.basis.reduce(X))

    def weights_reduced(self, Y) -> np.ndarray:
        if self.weight_mode == "moment":
            return weights_moment(Y, self.M_hat)
        return weights_probability(Y, self.mixture)

    def project(self, w) -> np.ndarray:
        if self.variant == "simplex":
            return project_simplex(w)
        return polyhedron_weights(self.M_hat @ w, self.M_hat)

    def x_hat(self, w) -> np.ndarray:
        return self.basis.U @ (self.M_hat @ w)

    def initial_belief(self) -> np.ndarray:
        return self.project(self.ops.c1)

    def step(self, w_prev, w_obs, ops=None):
        """Projected recursion; on a degenerate normalizer the previous belief is held."""
        ops = self.ops if ops is None else ops
        try:
            return self.project(predict_next(ops, w_prev, w_obs)), False
        except DegenerateBeliefError:
            return self.project(w_prev), True

    def predict_path(self, X):
        """One-step forecasts for every row of ``X`` plus one past the end.

        Returns ``(x_hat, beliefs, flags)`` with ``len(X) + 1`` rows each.
        """
        W = self.weights(X)
        n = W.shape[0]
        out = np.empty((n + 1, self.basis.p))
        beliefs = np.empty((n + 1, self.M_hat.shape[1]))
        flags = np.zeros(n + 1, dtype=bool)
        w = self.initial_belief()
        beliefs[0], out[0] = w, self.x_hat(w)
        for t in range(n):
            w, flags[t + 1] = self.step(w, W[t])
            beliefs[t + 1], out[t + 1] = w, self.x_hat(w)
        return out, beliefs, flags

    def to_dict(self) -> dict:
        return {"kind": "pshmm", "variant": self.variant, "weight_mode": self.weight_mode,
                "basis": self.basis.to_dict(), "mixture": self.mixture.to_dict(),
                "moments": self.moments.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc) -> "PshmmModel":
        m = SpectralMoments.from_dict(doc["moments"])
        return cls(ProjectionBasis.from_dict(doc["basis"]), GaussianMixture.from_dict(doc["mixture"]),
                   m, build_operators(m), doc["variant"], doc["weight_mode"])


def _check_cfg(variant, weight_mode):
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"variant must be one of {VARIANTS}")
    if weight_mode not in WEIGHT_MODES:
        raise InvalidArgumentError(f"weight_mode must be one of {WEIGHT_MODES}")


def fit_components(X, d, weight_mode="moment", seed=0, source="bigram", method="dense"):
    """Basis, mixture and weight sequence for a training block."""
    basis = estimate_basis(X, d, source=source, method=method, seed=seed)
    Y = basis.reduce(X)
    mixture = fit_gmm(Y, d, seed=seed)
    if weight_mode == "moment":
        W = weights_moment(Y, mixture.means)
    else:
        W = weights_probability(Y, mixture)
    return basis, mixture, W


def fit_pshmm(X, d: int, variant: str = "simplex", weight_mode: str = "moment", seed: int = 0,
              source: str = "bigram", method: str = "dense") -> PshmmModel:
    """Batch PSHMM: basis, mixture means, weight-process moments and operators."""
    _check_cfg(variant, weight_mode)
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 3:
        raise InvalidArgumentError("need at least 3 observations")
    if d > X.shape[1]:
        raise InvalidArgumentError("d must not exceed the observation dimension")
    basis, mixture, W = fit_components(X, d, weight_mode, seed, source, method)
    m = estimate_batch(W)
    return PshmmModel(basis, mixture, m, build_operators(m), variant, weight_mode)


def predict_pshmm(model: PshmmModel, w_prev, w_obs):
    """``(w_next, x_hat, flagged)`` for one projected recursion step."""
    w_next, flag = model.step(w_prev, w_obs)
    return w_next, model.x_hat(w_next), flag


class OnlinePshmm:
    """Single-stream online PSHMM session.

    The basis and mixture are fitted on the warm-up block and then frozen;
    each :meth:`update` folds one observation into the weight-process
    moments (equal weights when ``gamma == 0``, exponential forgetting
    otherwise), rebuilds the operators and advances the projected belief.
    """

    def __init__(self, X_warm, d: int, gamma: float = 0.0, variant: str = "simplex",
                 weight_mode: str = "moment", seed: int = 0, source: str = "bigram",
                 method: str = "dense", min_warmup: int = 3):
        _check_cfg(variant, weight_mode)
        X_warm = np.asarray(X_warm, dtype=float)
        if X_warm.shape[0] < max(3, min_warmup):
            raise InvalidArgumentError(f"warm-up must be at least {max(3, min_warmup)}")
        if not 0.0 <= gamma < 1.0:
            raise InvalidArgumentError("gamma must lie in [0, 1)")
        basis, mixture, W = fit_components(X_warm, d, weight_mode, seed, source, method)
        self.acc = MomentAccumulator.from_batch(W, decay=gamma)
        self.model = PshmmModel(basis, mixture, self.acc.moments.copy(),
                                build_operators(self.acc.moments), variant, weight_mode)
        self.ops = self.model.ops
        self.t = X_warm.shape[0]
        w = self.model.initial_belief()
        for w_obs in W:
            w, _ = self.model.step(w, w_obs)
        self.belief = w

    def current(self) -> OnlineStep:
        return OnlineStep(self.t, self.model.x_hat(self.belief), self.belief, False)

    def update(self, x) -> OnlineStep:
        """Consume observation ``x`` (row ``t``) and forecast row ``t + 1``."""
        w_obs = self.model.weights(np.atleast_2d(x))[0]
        self.acc.push(w_obs)
        flag = False
        try:
            self.ops = build_operators(self.acc.moments)
        except SingularSigmaError:
            flag = True
        self.belief, degenerate = self.model.step(self.belief, w_obs, self.ops)
        self.t += 1
        return OnlineStep(self.t, self.model.x_hat(self.belief), self.belief, flag or degenerate)


def iter_online_pshmm(X, warmup_len: int, d: int, gamma: float = 0.0, variant: str = "simplex",
                      weight_mode: str = "moment", seed: int = 0, source: str = "bigram",
                      method: str = "dense", min_warmup: int = 3):
    """Online PSHMM over the rows of ``X``.

    Yields :class:`~pshmm.spectral.OnlineStep` objects; ``step.t`` is the
    index of the row being forecast (``warmup_len .. len(X)``).
    """
    X = np.asarray(X, dtype=float)
    session = OnlinePshmm(X[:warmup_len], d, gamma, variant, weight_mode, seed, source, method,
                          min_warmup)
    yield session.current()
    for t in range(warmup_len, X.shape[0]):
        yield session.update(X[t])


def run_online_pshmm(X, warmup_len: int, d: int, gamma: float = 0.0, **kw):
    """Collect :func:`iter_online_pshmm` into arrays ``(t, x_hat, flags)``."""
    steps = list(iter_online_pshmm(X, warmup_len, d, gamma, **kw))
    return (np.array([s.t for s in steps]), np.array([s.x_hat for s in steps]),
            np.array([s.flag for s in steps]))
