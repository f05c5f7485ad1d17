"""First-order error expansion of the spectral likelihood and Monte-Carlo CLT checks.

The likelihood functional is ``P = mu^T S K(y_T) S ... K(y_1) S mu`` with
``S = Sigma^{-1}``.  Its gradient with respect to the stacked moment vector
``[mu; flatten(Sigma); flatten(K)]`` is the coefficient vector ``beta``; the
estimation error of the moments propagates to the likelihood through
``beta^T (theta_hat - theta)`` up to second-order terms.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ExperimentInvalidError, InvalidArgumentError, NumericalFailureError
from .model_sim import HmmSpec, emission_noise, population_moments, stationary_distribution
from .moments import SpectralMoments, flatten


@dataclass
class ErrorExpansionCoefficients:
    v: np.ndarray
    v_tilde: np.ndarray
    a: list
    a_tilde: list
    b: list
    b_tilde: list
    beta: np.ndarray
    likelihood: float


def chain_likelihood(m: SpectralMoments, Y) -> float:
    """``mu^T S K(y_T) S ... K(y_1) S mu`` evaluated directly (no rescaling)."""
    S = np.linalg.inv(m.sigma)
    r = S @ m.mu
    for y in np.asarray(Y, dtype=float).reshape(-1, m.d):
        r = S @ (m.K_of(y) @ r)
    return float(m.mu @ r)


def expansion_coefficients(pop: SpectralMoments, Y) -> ErrorExpansionCoefficients:
    """Prefix/suffix products of the likelihood chain and the stacked gradient ``beta``.

    With ``r_0 = S mu``, ``r_t = S K(y_t) r_{t-1}`` and ``l_T = S^T mu``,
    ``l_{t-1} = S^T K(y_t)^T l_t``::

        a_t = b_t = l_t,   a~_t = r_{t-1},   b~_t = r_t,   v = l_0,   v~ = r_T
    """
    Y = np.asarray(Y, dtype=float).reshape(-1, pop.d)
    T = Y.shape[0]
    S = np.linalg.inv(pop.sigma)
    Ks = [pop.K_of(y) for y in Y]
    r = [S @ pop.mu]
    for t in range(T):
        r.append(S @ (Ks[t] @ r[-1]))
    l = [None] * (T + 1)
    l[T] = S.T @ pop.mu
    for t in range(T, 0, -1):
        l[t - 1] = S.T @ (Ks[t - 1].T @ l[t])
    a = [l[t] for t in range(1, T + 1)]
    a_tilde = [r[t - 1] for t in range(1, T + 1)]
    b = list(l)
    b_tilde = list(r)
    v, v_tilde = l[0], r[T]
    d = pop.d
    sig_part = -sum((np.outer(b[t], b_tilde[t]).ravel() for t in range(T + 1)), np.zeros(d * d))
    k_part = sum((np.einsum("i,j,k->ijk", a[t], a_tilde[t], Y[t]).ravel() for t in range(T)),
                 np.zeros(d ** 3))
    beta = np.concatenate([v + v_tilde, sig_part, k_part])
    return ErrorExpansionCoefficients(v, v_tilde, a, a_tilde, b, b_tilde, beta, float(pop.mu @ r[T]))


def stack_moments(m: SpectralMoments) -> np.ndarray:
    return np.concatenate([m.mu, flatten(m.sigma), flatten(m.K)])


def linear_term(coef: ErrorExpansionCoefficients, d_mu, d_sigma, d_K, Y) -> float:
    """First-order change written term by term (without the stacked ``beta``)."""
    Y = np.asarray(Y, dtype=float).reshape(-1, len(d_mu))
    out = (coef.v + coef.v_tilde) @ d_mu
    for t in range(Y.shape[0]):
        out += coef.a[t] @ (d_K @ Y[t]) @ coef.a_tilde[t]
    for t in range(len(coef.b)):
        out -= coef.b[t] @ d_sigma @ coef.b_tilde[t]
    return float(out)


def sample_stationary_triples(spec: HmmSpec, U, N: int, rng):
    """``N`` i.i.d. stationary triples ``(Y1, Y2, Y3)`` of the reduced process."""
    U = np.asarray(U, dtype=float)
    pi = stationary_distribution(spec.T)
    cum = np.cumsum(spec.T, axis=1)
    cum[:, -1] = 1.0
    h1 = np.minimum(np.searchsorted(np.cumsum(pi), rng.random(N), side="right"), spec.S - 1)
    h2 = (rng.random(N)[:, None] > cum[h1]).sum(axis=1)
    h3 = (rng.random(N)[:, None] > cum[h2]).sum(axis=1)
    out = []
    for h in (h1, h2, h3):
        X = spec.M[:, h].T + emission_noise(spec, (N, spec.p), rng)
        out.append(X @ U)
    return tuple(out)


def triple_moments(Y1, Y2, Y3) -> SpectralMoments:
    N = Y1.shape[0]
    return SpectralMoments(
        mu=Y1.mean(axis=0),
        sigma=Y2.T @ Y1 / N,
        K=np.einsum("ni,nj,nk->ijk", Y3, Y1, Y2, optimize=True) / N,
        n_points=N,
    )


def triple_features(Y1, Y2, Y3) -> np.ndarray:
    """Rows ``[Y1; flatten(Y2 x Y1); flatten(Y3 x Y1 x Y2)]``."""
    N, d = Y1.shape
    f2 = (Y2[:, :, None] * Y1[:, None, :]).reshape(N, d * d)
    f3 = (Y3[:, :, None, None] * Y1[:, None, :, None] * Y2[:, None, None, :]).reshape(N, d ** 3)
    return np.hstack([Y1, f2, f3])


def asymptotic_variance(spec: HmmSpec, U, Y, n_triples: int = 10 ** 5, seed: int = 0,
                        n_blocks: int = 20, chunk: int = 200_000):
    """Monte-Carlo ``beta^T Cov beta`` and its delete-one-block jackknife standard error.

    Since ``beta^T Cov(Z) beta = Var(beta^T Z)``, only the scalar projections
    of the triple features are stored.
    """
    if n_triples < 10 ** 4:
        raise InvalidArgumentError("n_triples must be at least 1e4")
    beta = expansion_coefficients(population_moments(spec, U), Y).beta
    rng = np.random.default_rng(seed)
    proj = np.empty(n_triples)
    done = 0
    while done < n_triples:
        n = min(chunk, n_triples - done)
        proj[done:done + n] = triple_features(*sample_stationary_triples(spec, U, n, rng)) @ beta
        done += n
    if not np.all(np.isfinite(proj)):
        raise NumericalFailureError("non-finite triple features")
    value = float(proj.var(ddof=1))
    blocks = np.array_split(proj, n_blocks)
    loo = np.array([np.concatenate(blocks[:i] + blocks[i + 1:]).var(ddof=1) for i in range(n_blocks)])
    se = float(np.sqrt((n_blocks - 1) / n_blocks * ((loo - loo.mean()) ** 2).sum()))
    return value, se


@dataclass
class TheoryCheckReport:
    N_values: list
    reps: int
    seed: int
    test_sequence: list
    likelihood: float
    sigma2_theory: float
    sigma2_theory_se: float
    empirical_means: list = field(default_factory=list)
    mean_standard_errors: list = field(default_factory=list)
    empirical_vars: list = field(default_factory=list)
    variance_ratios: list = field(default_factory=list)
    skewness: list = field(default_factory=list)
    excess_kurtosis: list = field(default_factory=list)
    ks_statistic: list = field(default_factory=list)
    ks_pvalue: list = field(default_factory=list)
    ks_pvalue_theory: list = field(default_factory=list)
    median_abs_error: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    samples: dict = field(default_factory=dict, repr=False)

    def to_json(self, include_samples: bool = False) -> str:
        doc = asdict(self)
        if not include_samples:
            doc.pop("samples")
        return json.dumps(doc, indent=2)

    def error_decay_slope(self) -> float:
        """Log-log slope of the median absolute error against ``N``."""
        return float(np.polyfit(np.log(self.N_values), np.log(self.median_abs_error), 1)[0])


def reference_spec(sigma: float = 0.3) -> HmmSpec:
    """Two-state, two-dimensional model used for the desk-scale CLT checks."""
    T = np.array([[0.8, 0.2], [0.3, 0.7]])
    M = np.array([[1.0, 0.2], [0.1, 1.0]])
    return HmmSpec(pi0=stationary_distribution(T), T=T, M=M, sigma=sigma)


def clt_experiment(spec: HmmSpec, T_seq: int, N_values, reps: int, seed: int = 0, U=None,
                   n_cov_triples: int = 10 ** 6, min_reps: int = 100) -> TheoryCheckReport:
    """Replicate ``sqrt(N) (P_hat - P)`` with moments estimated from i.i.d. triples."""
    if reps < min_reps:
        raise InvalidArgumentError(f"reps must be at least {min_reps}")
    U = np.eye(spec.p, spec.S) if U is None else np.asarray(U, dtype=float)
    ss = np.random.SeedSequence(seed)
    seq_seed, cov_seed, rep_seed = ss.spawn(3)
    seq_rng = np.random.default_rng(seq_seed)
    Y = sample_stationary_triples(spec, U, T_seq, seq_rng)[0] if T_seq > 0 else np.zeros((0, U.shape[1]))
    pop = population_moments(spec, U)
    P = chain_likelihood(pop, Y)
    cov_int = int(np.random.default_rng(cov_seed).integers(2 ** 31))
    s2, s2_se = asymptotic_variance(spec, U, Y, n_cov_triples, seed=cov_int)
    report = TheoryCheckReport(list(map(int, N_values)), reps, seed, Y.tolist(), P, s2, s2_se)
    rng = np.random.default_rng(rep_seed)
    for N in N_values:
        errs = []
        excluded = 0
        for _ in range(reps):
            m = triple_moments(*sample_stationary_triples(spec, U, int(N), rng))
            if np.linalg.cond(m.sigma) > 1e12:
                excluded += 1
                continue
            errs.append(chain_likelihood(m, Y) - P)
        if excluded > 0.05 * reps:
            raise ExperimentInvalidError(f"{excluded} of {reps} replicates failed at N={N}")
        e = np.asarray(errs)
        z = np.sqrt(N) * e
        report.samples[int(N)] = z.tolist()
        report.empirical_means.append(float(z.mean()))
        report.mean_standard_errors.append(float(z.std(ddof=1) / np.sqrt(len(z))))
        report.empirical_vars.append(float(z.var(ddof=1)))
        report.variance_ratios.append(float(z.var(ddof=1) / s2))
        report.skewness.append(float(stats.skew(z)))
        report.excess_kurtosis.append(float(stats.kurtosis(z)))
        ks = stats.kstest(z, "norm", args=(z.mean(), z.std(ddof=1)))
        report.ks_statistic.append(float(ks.statistic))
        report.ks_pvalue.append(float(ks.pvalue))
        report.ks_pvalue_theory.append(float(stats.kstest(z, "norm", args=(0.0, np.sqrt(s2))).pvalue))
        report.median_abs_error.append(float(np.median(np.abs(e))))
        report.excluded.append(excluded)
    return report
