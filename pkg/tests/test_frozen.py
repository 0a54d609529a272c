"""Regression values frozen from the first verified build.

Any change here means the numerical pipeline changed; update only with a
reason recorded alongside the change.
"""

import numpy as np
import pytest

from deception_qcd.dynamics import simulate_truth
from deception_qcd.harness.config import default_config
from deception_qcd.harness.experiments import child_seeds, detect, simulate

TOL = dict(rtol=1e-8, atol=1e-10)


@pytest.fixture(scope="module")
def scenario():
    return default_config().build()


def test_switching_trajectory(scenario):
    _, X = simulate_truth(scenario.model, scenario.initial_state, 100, np.random.default_rng(0), nu=10)
    np.testing.assert_allclose(X[10], [-1.4940838999201715, -0.01952159299097806, 0.26767838863147775], **TOL)
    np.testing.assert_allclose(X[100], [-0.31663888612717556, 0.3619622754995071, 0.31524031233107674], **TOL)


def test_change_free_trajectory(scenario):
    _, X = simulate_truth(scenario.model, scenario.initial_state, 100, np.random.default_rng(0), nu=101)
    np.testing.assert_allclose(X[100], [-0.12974903509416708, -0.00169529157915622, 0.01306518476435814], **TOL)


def test_first_realization_statistics(scenario):
    real = simulate(scenario, child_seeds(0, 0, 1)[0], 10)
    np.testing.assert_allclose(real.observations[0], [-1.775000606203046, 0.4717912078377505], **TOL)
    rec = detect(scenario, real)
    steps = np.array([1, 10, 30, 60, 100]) - 1
    np.testing.assert_allclose(
        rec.log_L[steps],
        [-2.887237820417413, -0.3629223660021267, 0.7710268967065592, 15.858234703176642, 62.24779702783029],
        **TOL,
    )
    np.testing.assert_allclose(
        rec.T[steps],
        [0.057201158749027314, 0.10460630824532569, 0.22270535073386455, 13.88708622751223, 58.172549016895466],
        **TOL,
    )
    assert rec.tau_s == 46 and rec.tau_c is None
