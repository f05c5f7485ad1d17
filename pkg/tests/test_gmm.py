import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from pshmm.errors import IllConditionedMeansError, InvalidArgumentError
from pshmm.gmm import GaussianMixture, fit_gmm, weights_moment, weights_probability


def _clusters(rng, centers, sigma, n):
    labels = np.repeat(np.arange(centers.shape[0]), n)
    return centers[labels] + sigma * rng.standard_normal((labels.size, centers.shape[1])), labels


def test_separated_clusters_recovered(rng):
    sigma = 0.1
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])   # separation 10 sigma
    Y, _ = _clusters(rng, centers, sigma, 4000)
    g = fit_gmm(Y, 3, seed=0)
    cost = ((g.means.T[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    r, c = linear_sum_assignment(cost)
    err = np.abs(g.means.T[r] - centers[c]).max()
    assert err < 0.05 * sigma
    assert g.weights.sum() == pytest.approx(1.0)
    for cov in g.covariances:
        assert np.allclose(cov, cov.T) and np.linalg.eigvalsh(cov).min() >= 1e-10


def test_single_component_is_sample_statistics(rng):
    Y = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 3))
    g = fit_gmm(Y, 1)
    assert np.allclose(g.means[:, 0], Y.mean(axis=0))
    assert np.allclose(g.covariances[0], np.cov(Y.T, bias=True))


def test_em_loglik_non_decreasing(rng):
    Y, _ = _clusters(rng, rng.standard_normal((4, 3)), 0.5, 100)
    g = fit_gmm(Y, 4, seed=3)
    assert np.all(np.diff(g.loglik_trace) >= -1e-8 * np.abs(g.loglik_trace[:-1]))


def test_seed_determinism_and_canonical_order(rng):
    Y, _ = _clusters(rng, np.array([[2.0, 0.0], [0.0, 0.0], [-2.0, 1.0]]), 0.3, 100)
    a, b = fit_gmm(Y, 3, seed=9), fit_gmm(Y, 3, seed=9)
    assert np.array_equal(a.means, b.means)
    assert np.all(np.diff(a.means[0]) <= 0)
    # a permuted data set yields the same component order
    c = fit_gmm(Y[::-1], 3, seed=9)
    assert np.allclose(c.means, a.means, atol=1e-4)


def test_fit_gmm_needs_enough_rows(rng):
    with pytest.raises(InvalidArgumentError):
        fit_gmm(rng.standard_normal((29, 2)), 3)


def test_json_roundtrip(rng):
    g = fit_gmm(rng.standard_normal((100, 2)), 2)
    back = GaussianMixture.from_dict(g.to_dict())
    Y = rng.standard_normal((5, 2))
    assert np.allclose(back.responsibilities(Y), g.responsibilities(Y))


def test_weights_moment_examples(rng):
    M = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    for i in range(3):
        assert np.allclose(weights_moment(M[:, i], M), np.eye(3)[i])
    assert np.allclose(weights_moment((M[:, 0] + M[:, 2]) / 2, M), [0.5, 0, 0.5])
    y = rng.standard_normal(3)
    assert np.allclose(M @ weights_moment(y, M), y, atol=1e-10)
    Y = rng.standard_normal((4, 3))
    assert np.allclose(weights_moment(Y, M) @ M.T, Y)


def test_weights_moment_ill_conditioned():
    with pytest.raises(IllConditionedMeansError):
        weights_moment(np.ones(2), np.array([[1.0, 1.0], [1.0, 1.0 + 1e-12]]))
    with pytest.raises(InvalidArgumentError):
        weights_moment(np.ones(2), np.ones((2, 3)))


def _two_component(sep=10.0):
    return GaussianMixture(means=np.array([[0.0, sep], [0.0, 0.0]]),
                           covariances=np.array([np.eye(2), np.eye(2)]), weights=np.array([0.5, 0.5]))


def test_weights_probability_examples():
    g = _two_component()
    assert weights_probability(np.array([0.0, 0.0]), g)[0] > 0.999
    assert np.allclose(weights_probability(np.array([5.0, 3.0]), g), [0.5, 0.5])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_weights_probability_on_simplex(y):
    w = weights_probability(np.array(y), _two_component())
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12


def test_weights_probability_underflow_fallback():
    g = _two_component()
    with pytest.warns(UserWarning):
        w = weights_probability(np.array([1e200, 0.0]), g)
    assert np.allclose(w, 0.5)
