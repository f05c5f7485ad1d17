"""Generative HMM definition, trajectory sampling and population moments.

States are 0-based throughout (``0 .. S-1``).  Transition matrices are
row-stochastic: ``T[i, j] = P(h_{t+1} = j | h_t = i)``.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError, SingularModelError
from .moments import SpectralMoments

EMISSION_FAMILIES = ("gaussian", "student_t")


@dataclass(frozen=True)
class HmmSpec:
    """Parameters of an HMM with spherical location-scale emissions.

    ``M`` is ``p x S``; column ``s`` is the emission mean of state ``s``.
    Emission noise is ``sigma * Z`` where ``Z`` has i.i.d. standard normal
    coordinates (``gaussian``) or i.i.d. Student-t coordinates with ``df``
    degrees of freedom (``student_t``).
    """

    pi0: np.ndarray
    T: np.ndarray
    M: np.ndarray
    sigma: float
    emission_family: str = "gaussian"
    df: int | None = None

    def __post_init__(self):
        pi0 = np.asarray(self.pi0, dtype=float)
        T = np.asarray(self.T, dtype=float)
        M = np.asarray(self.M, dtype=float)
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "M", M)
        S = T.shape[0]
        if S < 2 or T.shape != (S, S):
            raise InvalidArgumentError(f"transition matrix must be S x S with S >= 2, got {T.shape}")
        if np.any(T < 0) or np.max(np.abs(T.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidArgumentError("transition matrix rows must be non-negative and sum to 1")
        if pi0.shape != (S,) or np.any(pi0 < 0) or abs(pi0.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("pi0 must be a length-S probability vector")
        if M.ndim != 2 or M.shape[1] != S:
            raise InvalidArgumentError(f"M must be p x S, got {M.shape}")
        if M.shape[0] >= S and np.linalg.matrix_rank(M) < S:
            raise InvalidArgumentError("emission means must have full column rank when p >= S")
        if not self.sigma >= 0:
            raise InvalidArgumentError("sigma must be non-negative")
        if self.emission_family not in EMISSION_FAMILIES:
            raise InvalidArgumentError(f"unknown emission family {self.emission_family!r}")
        if self.emission_family == "student_t" and (self.df is None or self.df <= 0):
            raise InvalidArgumentError("student_t emissions need a positive integer df")

    @property
    def S(self) -> int:
        return self.T.shape[0]

    @property
    def p(self) -> int:
        return self.M.shape[0]


@dataclass
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)


def build_transition(S: int, p_stay: float) -> np.ndarray:
    """Transition matrix with ``p_stay`` on the diagonal and the rest spread evenly."""
    if S < 2:
        raise InvalidArgumentError("need at least two states")
    if not 0.0 < p_stay < 1.0:
        raise InvalidArgumentError("p_stay must lie in (0, 1)")
    T = np.full((S, S), (1.0 - p_stay) / (S - 1))
    np.fill_diagonal(T, p_stay)
    return T


def one_hot_means(S: int, p: int) -> np.ndarray:
    if p < S:
        raise InvalidArgumentError(f"need p >= S, got p={p}, S={S}")
    return np.eye(p, S)


def make_spec(S, p, sigma, p_stay=0.6, emission_family="gaussian", df=None, pi0=None) -> HmmSpec:
    """Convenience constructor for the one-hot-means simulation family."""
    T = build_transition(S, p_stay)
    if pi0 is None:
        pi0 = np.full(S, 1.0 / S)
    return HmmSpec(pi0=pi0, T=T, M=one_hot_means(S, p), sigma=sigma,
                   emission_family=emission_family, df=df)


def sample_states(pi0, T, L, rng) -> np.ndarray:
    cum = np.cumsum(T, axis=1)
    cum[:, -1] = 1.0
    cum_rows = cum.tolist()
    u = rng.random(L).tolist()
    S = len(pi0)
    states = [0] * L
    h = min(bisect.bisect_right(np.cumsum(pi0).tolist(), u[0]), S - 1)
    states[0] = h
    for t in range(1, L):
        h = min(bisect.bisect_right(cum_rows[h], u[t]), S - 1)
        states[t] = h
    return np.asarray(states, dtype=np.int64)


def emission_noise(spec: HmmSpec, shape, rng) -> np.ndarray:
    if spec.emission_family == "gaussian":
        return spec.sigma * rng.standard_normal(shape)
    return spec.sigma * rng.standard_t(spec.df, size=shape)


def sample_trajectory(spec: HmmSpec, L: int, seed: int) -> Trajectory:
    """Draw ``L`` steps of the chain and its emissions; deterministic in ``seed``."""
    if L < 1:
        raise InvalidArgumentError("L must be >= 1")
    rng = np.random.default_rng(seed)
    states = sample_states(spec.pi0, spec.T, L, rng)
    X = spec.M[:, states].T + emission_noise(spec, (L, spec.p), rng)
    return Trajectory(states=states, observations=X, meta={"seed": seed})


def stationary_distribution(T, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Left Perron vector of ``T`` by power iteration from the uniform vector."""
    T = np.asarray(T, dtype=float)
    S = T.shape[0]
    pi = np.full(S, 1.0 / S)
    for _ in range(max_iter):
        nxt = pi @ T
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NumericalFailureError(f"power iteration did not converge in {max_iter} iterations")


def population_moments(spec: HmmSpec, U) -> SpectralMoments:
    """Exact (mu, Sigma, K) of the reduced process ``y_t = U^T x_t`` at stationarity.

    With ``A = U^T M`` and ``P = T^T`` (column-stochastic form)::

        mu       = A pi
        Sigma    = A P diag(pi) A^T
        K[:,:,k] = A P diag(A[k]) P diag(pi) A^T
    """
    U = np.asarray(U, dtype=float)
    A = U.T @ spec.M
    d = A.shape[0]
    if d > spec.S:
        raise InvalidArgumentError(f"reduced dimension {d} exceeds state count {spec.S}")
    if np.linalg.matrix_rank(A) < d:
        raise SingularModelError("U^T M is rank deficient")
    pi = stationary_distribution(spec.T)
    P = spec.T.T
    mu = A @ pi
    right = P @ (pi[:, None] * A.T)          # P diag(pi) A^T, S x d
    sigma = A @ right
    K = np.einsum("is,ks,sj->ijk", A @ P, A, right)
    return SpectralMoments(mu=mu, sigma=sigma, K=K, n_points=0)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    X = traj.observations
    p = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h"] + [f"x{i + 1}" for i in range(p)])
        for t, (h, row) in enumerate(zip(traj.states, X)):
            w.writerow([t, int(h)] + [format(v, ".17g") for v in row])


def read_trajectory_csv(path) -> Trajectory:
    """Read a ``t,h,x1..xp`` CSV.  An empty ``h`` column is read as -1 (unknown)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["t", "h"] or not all(c.startswith("x") for c in header[2:]):
        raise InvalidArgumentError(f"unexpected trajectory header {header[:3]}...")
    states = np.array([int(r[1]) if r[1] != "" else -1 for r in rows[1:]], dtype=np.int64)
    X = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=float)
    return Trajectory(states=states, observations=X.reshape(len(states), len(header) - 2))
