import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from deception_qcd import change_stats
from deception_qcd.change_stats import (
    HypothesisBank,
    cusum_statistic,
    posterior_from_log_L,
    posterior_probability,
    run_bank,
    shiryaev_statistic,
)
from deception_qcd.dynamics import ChangePrior, linear_model, simulate_truth
from deception_qcd.oracle import exact_linear_change_posterior
from deception_qcd.robust_filter import FilterError, FilterSettings
from deception_qcd.sensing import ObservationModel, observe_sequence
from deception_qcd.toys import mean_shift, mean_shift_kl

PRIOR = ChangePrior(0.05)


def toy(mu=1.0, q=0.5, R=0.5, theta=1.0):
    model = mean_shift(mu, q)
    obs = ObservationModel([R], theta, 0.08, matrix=np.eye(1))
    return model, obs, FilterSettings(q_jitter=0.0, initial_var=q)


def data(model, obs, n, nu, seed):
    rng = np.random.default_rng(seed)
    _, X = simulate_truth(model, np.zeros(model.dim_state), n, rng, nu=nu)
    return observe_sequence(X[1:], obs, rng)[0]


def test_empty_bank():
    model, obs, s = toy()
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s)
    assert bank.log_shiryaev() == -math.inf
    assert shiryaev_statistic(bank) == 0.0 and posterior_probability(bank) == 0.0
    with pytest.raises(ValueError):
        cusum_statistic(bank)
    with pytest.raises(ValueError):
        HypothesisBank(model, obs, PRIOR, [0.0], s, window=0)


def test_posterior_sigmoid():
    assert posterior_from_log_L(math.log(999.0)) == pytest.approx(0.999)
    assert posterior_from_log_L(0.0) == 0.5
    assert posterior_from_log_L(-math.inf) == 0.0


def test_identical_modes_leave_the_prior(rng):
    m = linear_model([[-1.0]], [[-1.0]], 0.1, epsilon=0.5)
    obs = ObservationModel([0.3], 0.98, 0.08, matrix=np.eye(1))
    bank = HypothesisBank(m, obs, PRIOR, [0.0], FilterSettings())
    for n in range(1, 61):
        st_ = bank.advance(rng.normal(size=1))
        assert st_.p == pytest.approx(1 - 0.95**n, abs=1e-12)
        assert abs(st_.T) < 1e-12


def test_chain_layout():
    model, obs, s = toy()
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s)
    Y = data(model, obs, 5, 3, 0)
    for y in Y:
        bank.advance(y)
    assert list(bank.change_indices) == [1, 2, 3, 4, 5]
    assert bank.infinity_chain.cum_log_ratio == 0.0
    assert bank.infinity_chain.change_index == math.inf
    assert [c.change_index for c in bank.change_chains] == [1, 2, 3, 4, 5]
    clone = bank.copy()
    clone.advance(Y[0])
    assert bank.step == 5 and clone.step == 6


@pytest.mark.parametrize("seed", range(3))
def test_exact_bayes_mean_shift(seed):
    model, obs, s = toy(mu=0.8)
    Y = data(model, obs, 60, 20, seed)
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s, window=None, initial_cov=[[0.5]])
    rec = run_bank(bank, Y, 20)
    _, p = exact_linear_change_posterior(Y, model, obs, PRIOR, [0.0], [[0.5]])
    assert np.max(np.abs(rec.p - p)) < 1e-6


def test_history_recompute_matches_incremental():
    model, obs, s = toy(mu=0.6, theta=0.95)
    Y = data(model, obs, 80, 30, 5)
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s, window=None, keep_history=True)
    rec = run_bank(bank, Y)
    for n in (1, 10, 45, 80):
        terms = [PRIOR.log_pmf(k) + sum(bank.history[k][: n - k + 1]) for k in range(1, n + 1)]
        want = logsumexp(terms) - PRIOR.log_survival(n)
        assert rec.log_L[n - 1] == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_window_pruning_sound(seed):
    model, obs, s = toy(mu=1.0, theta=0.98)
    Y = data(model, obs, 300, 150, seed)
    full = run_bank(HypothesisBank(model, obs, PRIOR, [0.0], s, window=None), Y)
    pruned_bank = HypothesisBank(model, obs, PRIOR, [0.0], s, window=100)
    pruned = run_bank(pruned_bank, Y)
    assert pruned.n_chains.max() == 100 and pruned_bank.change_indices.size == 100
    assert np.max(np.abs(full.p[149:] - pruned.p[149:])) < 1e-3


def test_window_pruning_sound_case_study():
    from deception_qcd.harness.config import default_config
    from deception_qcd.harness.experiments import child_seeds, simulate

    sc = default_config().replace(run={"horizon": 300}).build()
    for seq in child_seeds(0, 0, 2):
        real = simulate(sc, seq, 150)
        runs = [
            run_bank(HypothesisBank(sc.model, sc.obs, sc.prior, sc.initial_state, sc.settings, window=w),
                     real.observations, real.nu)
            for w in (None, 100)
        ]
        assert np.max(np.abs(runs[0].p[149:] - runs[1].p[149:])) < 1e-3


class _Stub:
    """Replaces the predictive likelihood with a constant per-chain ratio."""

    def __init__(self, z):
        self.z = z

    def __call__(self, M, P, y, obs, backend=None):
        out = np.full(M.shape[0], self.z)
        out[0] = 0.0
        return out


def test_cusum_constant_ratio(monkeypatch):
    model, obs, s = toy()
    monkeypatch.setattr(change_stats, "predictive_loglik_batch", _Stub(0.3))
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s, window=None)
    for n in range(1, 21):
        st_ = bank.advance([0.0])
        assert st_.T == pytest.approx(0.3 * n) and st_.argmax_k == 1


def test_cusum_all_negative(monkeypatch):
    model, obs, s = toy()
    monkeypatch.setattr(change_stats, "predictive_loglik_batch", _Stub(-0.2))
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s)
    for n in range(1, 11):
        st_ = bank.advance([0.0])
    assert st_.T == pytest.approx(-0.2) and st_.argmax_k == 10


def test_cusum_slope_matches_kl():
    mu, q, R = 1.0, 0.5, 0.5
    model, obs, s = toy(mu, q, R)
    slopes = []
    for seed in range(10):
        Y = data(model, obs, 500, 1, seed)
        rec = run_bank(HypothesisBank(model, obs, PRIOR, [0.0], s), Y, 1)
        slopes.append(np.polyfit(np.arange(1, 501), rec.T, 1)[0])
    slope = np.mean(slopes)
    phi = mean_shift_kl(mu, q, R)
    assert abs(slope - phi) < 0.2 * phi


def test_failed_change_chain_is_dropped(monkeypatch, caplog):
    model, obs, s = toy()
    real = change_stats.vb_update_batch

    def flaky(M, P, y, obs_, tol, iters, backend):
        out = real(M, P, y, obs_, tol, iters, backend)
        if M.shape[0] == 3 and bank.step == 1:
            out[4][2] = 2
        return out

    monkeypatch.setattr(change_stats, "vb_update_batch", flaky)
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s)
    with caplog.at_level("WARNING"):
        for y in ([0.1], [0.2], [0.3]):
            bank.advance(y)
    assert bank.dropped == [2]
    assert list(bank.change_indices) == [1, 3]
    assert "dropping" in caplog.text


def test_failed_no_change_chain_raises(monkeypatch):
    model, obs, s = toy()
    real = change_stats.vb_update_batch

    def broken(*a):
        out = real(*a)
        out[4][0] = 2
        return out

    monkeypatch.setattr(change_stats, "vb_update_batch", broken)
    with pytest.raises(FilterError):
        HypothesisBank(model, obs, PRIOR, [0.0], s).advance([0.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(0.0, 1.0))
def test_statistics_well_formed(ys, theta):
    model, obs, s = toy(mu=0.7, theta=theta)
    rec = run_bank(HypothesisBank(model, obs, PRIOR, [0.0], s, window=15), np.array(ys)[:, None])
    assert np.all((rec.p >= 0) & (rec.p <= 1))
    assert np.all(np.isfinite(rec.T))
    assert np.all(rec.n_chains <= 15)


@given(st.integers(0, 10_000))
def test_monotone_evidence(seed):
    model, obs, s = toy(mu=0.9, theta=0.97)
    Y = data(model, obs, 30, 5, seed)
    bank = HypothesisBank(model, obs, PRIOR, [0.0], s, window=None, keep_history=True)
    raw = []
    for y in Y:
        bank.advance(y)
        raw.append(logsumexp(bank._log_weights()))
    for n in range(2, 31):
        incr = [bank.history[k][n - k] for k in range(1, n)]
        if min(incr) > 0:
            assert raw[n - 1] > raw[n - 2]
