import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal

from deception_qcd.sensing import (
    ObservationModel,
    measurement_likelihood,
    measurement_log_likelihood,
    observe,
    observe_sequence,
    position_observation,
)


def case_obs():
    return position_observation(3, [0.1, 0.06], 0.98, 0.08)


def test_validation():
    with pytest.raises(ValueError):
        ObservationModel([0.1, 0.0], 0.9, 0.5, matrix=np.eye(2))
    with pytest.raises(ValueError):
        ObservationModel(np.array([[1.0, 0.1], [0.1, 1.0]]), 0.9, 0.5, matrix=np.eye(2))
    with pytest.raises(ValueError):
        ObservationModel([1.0], 1.2, 0.5, matrix=np.eye(1))
    with pytest.raises(ValueError):
        ObservationModel([1.0], 0.9, 0.0, matrix=np.eye(1))
    with pytest.raises(ValueError):
        ObservationModel([1.0], 0.9, 0.5)
    m = ObservationModel(np.diag([0.1, 0.06]), 0.98, 0.08, matrix=np.eye(2, 3))
    assert np.array_equal(m.noise_var, [0.1, 0.06])


def test_outlier_variance_inflated():
    m = case_obs()
    assert m.noise_var[0] / m.indicator_value == pytest.approx(1.25)
    assert np.all(m.noise_var / m.indicator_value > m.noise_var)


def test_indicator_density_normalized():
    dens = ObservationModel([1.0, 2.0, 3.0], [0.9, 0.5, 0.2], 0.3, matrix=np.eye(3)).indicator_density()
    cfg, logw = dens.configurations()
    assert cfg.shape == (8, 3)
    assert np.exp(logw).sum() == pytest.approx(1.0, abs=1e-14)
    assert dens.log_pmf([1.0, 0.3, 1.0]) == pytest.approx(math.log(0.9 * 0.5 * 0.2))
    assert dens.log_pmf([0.5, 1.0, 1.0]) == -math.inf


def test_no_outlier_limit(rng):
    m = ObservationModel([0.5, 0.5], 1.0, 0.1, matrix=np.eye(2))
    Y, ind = observe_sequence(np.zeros((20000, 2)), m, rng)
    assert np.all(ind == 1.0)
    assert np.allclose(Y.var(axis=0), 0.5, rtol=0.05)


def test_outlier_frequency(rng):
    m = case_obs()
    _, ind = observe_sequence(np.zeros((50000, 3)), m, rng)
    freq = np.mean(ind != 1.0)
    assert abs(freq - 0.02) < 0.003
    assert set(np.unique(ind)) == {0.08, 1.0}


def test_observe_single(rng):
    y, ind = observe(np.array([1.0, 2.0, 0.3]), case_obs(), rng)
    assert y.shape == (2,) and ind.shape == (2,)


def test_peak_values():
    m = ObservationModel([1.0, 1.0], 0.9, 0.25, matrix=np.eye(2))
    x = np.array([0.4, -0.7])
    assert measurement_likelihood(x, x, [1.0, 1.0], m) == pytest.approx(1 / (2 * math.pi))
    assert measurement_likelihood(x, x, [0.25, 1.0], m) == pytest.approx(1 / (4 * math.pi))


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.tuples(st.booleans(), st.booleans()))
def test_dense_gaussian_oracle(v, flags):
    m = ObservationModel([0.3, 1.7], 0.9, 0.2, matrix=np.eye(2))
    ind = np.where(flags, 1.0, 0.2)
    y, x = np.array(v[:2]), np.array(v[2:])
    want = multivariate_normal(x, np.diag(m.noise_var / ind)).logpdf(y)
    assert measurement_log_likelihood(y, x, ind, m) == pytest.approx(want, abs=1e-10)


def test_integrates_to_one():
    m = ObservationModel([0.4], 0.9, 0.3, matrix=np.eye(1))
    for ind in (1.0, 0.3):
        val, _ = integrate.quad(lambda y: measurement_likelihood([y], [0.2], [ind], m), -30, 30)
        assert val == pytest.approx(1.0, abs=1e-8)


@given(st.floats(-5, 5), st.floats(0.01, 2))
def test_concave_in_y(x, h):
    m = ObservationModel([0.7], 0.9, 0.3, matrix=np.eye(1))
    f = lambda y: measurement_log_likelihood([y], [x], [0.3], m)
    y0 = 0.3
    assert f(y0 + h) + f(y0 - h) - 2 * f(y0) <= 1e-12


def test_varsigma_one_indicators_irrelevant():
    m = ObservationModel([0.7, 0.2], 0.9, 1.0, matrix=np.eye(2))
    y, x = np.array([0.3, -0.1]), np.array([1.0, 0.5])
    a = measurement_log_likelihood(y, x, [1.0, 1.0], m)
    assert m.indicator_density().sample(np.random.default_rng(0), 5).min() == 1.0
    assert a == pytest.approx(measurement_log_likelihood(y, x, np.array([m.indicator_value, 1.0]), m), abs=1e-12)


def test_nonpositive_variance_rejected():
    m = ObservationModel([0.7], 0.9, 0.5, matrix=np.eye(1))
    with pytest.raises(ValueError):
        measurement_log_likelihood([0.0], [0.0], [0.0], m)


def test_nonlinear_channel():
    m = ObservationModel([0.1], 0.9, 0.5, channel=lambda x: np.sin(x[..., :1]))
    assert not m.is_linear
    assert m.h(np.array([[0.5], [1.0]])).shape == (2, 1)
