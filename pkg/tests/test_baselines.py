import numpy as np
import pytest

from pshmm.baselines import (GhmmModel, fit_ar1, fit_baum_welch, forward_filter,
                             ghmm_predict_path, limited_oracle_path, limited_oracle_predict,
                             predict_ar1, strong_oracle_path, strong_oracle_predict)
from pshmm.errors import InvalidArgumentError
from pshmm.evalkit import r_squared, simulation_r2
from pshmm.model_sim import HmmSpec, build_transition, make_spec, sample_trajectory

from oracles import hungarian_match


def test_loglik_trace_non_decreasing():
    X = sample_trajectory(make_spec(3, 5, 0.3), 400, seed=4).observations
    m = fit_baum_welch(X, 3, max_iters=60, tol=0, seed=2, restarts=1)
    assert np.all(np.diff(m.loglik_trace) >= -1e-8 * np.abs(m.loglik_trace[:-1]))
    assert np.allclose(m.T.sum(axis=1), 1.0)


def test_noiseless_recovery_of_transitions():
    T = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.25, 0.25, 0.5]])
    M = 5.0 * np.eye(4, 3)
    spec = HmmSpec(pi0=np.full(3, 1 / 3), T=T, M=M, sigma=0.0)
    X = sample_trajectory(spec, 5000, seed=11).observations
    m = fit_baum_welch(X, 3, seed=0)
    perm = hungarian_match(m.means, M)
    T_hat = m.T[np.ix_(perm, perm)]
    assert np.max(np.abs(T_hat - T)) < 0.05
    assert np.allclose(m.means[:, perm], M, atol=1e-8)


def test_single_state_matches_sample_statistics(rng):
    X = rng.normal(size=(200, 3)) + [1.0, -2.0, 0.5]
    m = fit_baum_welch(X, 1, max_iters=2, restarts=1)
    assert np.allclose(m.means[:, 0], X.mean(axis=0))
    assert m.variances[0] == pytest.approx(((X - X.mean(axis=0)) ** 2).mean())


def test_too_few_observations():
    with pytest.raises(InvalidArgumentError):
        fit_baum_welch(np.zeros((20, 2)), 3)


def test_forward_filter_empty_and_concentration():
    model = GhmmModel(np.array([0.3, 0.7]), np.eye(2), np.eye(2), np.full(2, 0.01))
    assert np.array_equal(forward_filter(model, np.zeros((0, 2))), [0.3, 0.7])
    f = forward_filter(model, np.array([[1.0, 0.0]]))
    assert f[0] > 1 - 1e-12


def test_filter_flags_underflow():
    model = GhmmModel(np.array([0.5, 0.5]), np.eye(2), np.eye(2), np.full(2, 1e-10))
    f = forward_filter(model, np.array([[1e6, -1e6]]))
    assert np.all(np.isfinite(f)) and f.sum() == pytest.approx(1.0)


def test_strong_oracle_examples():
    M = np.array([[1.0, 3.0], [2.0, -1.0]])
    spec = HmmSpec(pi0=[0.5, 0.5], T=build_transition(2, 0.6), M=M, sigma=0.1)
    assert np.allclose(strong_oracle_predict(spec, 0), 0.6 * M[:, 0] + 0.4 * M[:, 1])
    ident = HmmSpec(pi0=[0.5, 0.5], T=np.eye(2), M=M, sigma=0.1)
    assert np.allclose(strong_oracle_predict(ident, 1), M[:, 1])
    unif = HmmSpec(pi0=[0.5, 0.5], T=np.full((2, 2), 0.5), M=M, sigma=0.1)
    assert np.allclose(strong_oracle_predict(unif, 0), M.mean(axis=1))
    assert np.allclose(strong_oracle_path(spec, [0, 1]), [strong_oracle_predict(spec, 0),
                                                          strong_oracle_predict(spec, 1)])


def test_limited_oracle_path_agrees_with_pointwise():
    spec = make_spec(3, 4, 0.3)
    X = sample_trajectory(spec, 30, seed=2).observations
    path = limited_oracle_path(spec, X)
    for t in (0, 1, 17, 30):
        assert np.allclose(path[t], limited_oracle_predict(spec, X[:t]))


def test_limited_oracle_student_t_runs():
    spec = make_spec(3, 4, 0.2, emission_family="student_t", df=4)
    X = sample_trajectory(spec, 50, seed=2).observations
    assert np.all(np.isfinite(limited_oracle_path(spec, X)))


def test_oracle_hierarchy_on_average():
    spec = make_spec(3, 10, 0.5)
    strong, limited = [], []
    for seed in range(20):
        traj = sample_trajectory(spec, 300, seed=seed)
        X, h = traj.observations, traj.states
        lim = limited_oracle_path(spec, X)[1:-1]
        st = strong_oracle_path(spec, h[:-1])
        limited.append(r_squared(lim, X[1:]))
        strong.append(r_squared(st, X[1:]))
    assert np.mean(strong) >= np.mean(limited)


def test_em_prediction_matches_filter():
    spec = make_spec(2, 3, 0.2)
    X = sample_trajectory(spec, 200, seed=1).observations
    m = fit_baum_welch(X, 2, seed=0, restarts=1)
    path = ghmm_predict_path(m, X)
    assert path.shape == (201, 3)
    assert np.allclose(path[50], m.means @ (forward_filter(m, X[:50]) @ m.T))


def test_limited_oracle_beats_shmm_median():
    spec = make_spec(3, 20, 0.05, 0.6)
    r = [simulation_r2(spec, 2000, 100, seed, methods=("shmm", "limited_oracle"))
         for seed in range(20)]
    assert np.median([x["limited_oracle"] for x in r]) >= np.median([x["shmm"] for x in r])


def test_ar1_exact_linear():
    x = 2.0 ** np.arange(10)
    m = fit_ar1(x)
    assert m.slope[0] == pytest.approx(2.0) and m.intercept[0] == pytest.approx(0.0, abs=1e-9)
    assert predict_ar1(m, x[-1])[0] == pytest.approx(2 * x[-1])


def test_ar1_white_noise():
    x = np.random.default_rng(5).normal(size=5000)
    m = fit_ar1(x)
    assert abs(m.slope[0]) < 0.05
    assert m.predict(0.3)[0] == pytest.approx(x.mean(), abs=0.05)


def test_ar1_constant_series():
    m = fit_ar1(np.full((10, 2), 3.5))
    assert np.allclose(m.predict([3.5, 3.5]), 3.5)
    with pytest.raises(InvalidArgumentError):
        fit_ar1(np.zeros((1, 2)))
