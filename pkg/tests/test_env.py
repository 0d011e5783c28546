"""Tests for the environment module: sampling, shifting, mixing profiles."""

import numpy as np
import numpy.testing as npt
import pytest

from rpflab.env import EnvModel, EnvPath, MixingProfile, phi_mixing_profile, sample_path, shift
from rpflab.errors import ConfigError, OutOfWindowError


# --------------------------------------------------------------------------
# model construction and validation
# --------------------------------------------------------------------------

def test_iid_defaults_to_uniform_marginal():
    model = EnvModel(4)
    npt.assert_allclose(model.probs, np.full(4, 0.25))
    npt.assert_allclose(model.stationary, np.full(4, 0.25))


def test_markov_stationary_two_state():
    # pi P = pi with P = [[.9,.1],[.2,.8]] gives pi = (2/3, 1/3):
    # 0.9 a + 0.2 b = a  =>  0.2 b = 0.1 a  =>  a = 2 b.
    model = EnvModel(2, law="markov", transition=[[0.9, 0.1], [0.2, 0.8]])
    npt.assert_allclose(model.stationary, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(alphabet_size=0),
    dict(alphabet_size=2, law="uniform"),
    dict(alphabet_size=2, probs=[0.3, 0.3]),
    dict(alphabet_size=2, probs=[1.2, -0.2]),
    dict(alphabet_size=2, law="markov"),
    dict(alphabet_size=2, law="markov", transition=[[1.0, 0.0]]),
    dict(alphabet_size=2, law="markov", transition=[[0.9, 0.1], [0.2, 0.8]],
         probs=[0.5, 0.5]),
    dict(alphabet_size=2, law="iid", transition=[[0.9, 0.1], [0.2, 0.8]]),
])
def test_invalid_models_raise_config_error(kwargs):
    with pytest.raises(ConfigError):
        EnvModel(**kwargs)


# --------------------------------------------------------------------------
# path sampling
# --------------------------------------------------------------------------

def test_sampling_is_deterministic():
    model = EnvModel(3, probs=[0.5, 0.3, 0.2])
    a = sample_path(model, seed=42, n_past=7, n_future=11)
    b = sample_path(model, seed=42, n_past=7, n_future=11)
    npt.assert_array_equal(a.symbols_slice(-7, 12), b.symbols_slice(-7, 12))
    c = sample_path(model, seed=43, n_past=7, n_future=11)
    assert not np.array_equal(a.symbols_slice(-7, 12), c.symbols_slice(-7, 12))


@pytest.mark.parametrize("law_kwargs", [
    dict(law="iid", probs=[0.5, 0.3, 0.2]),
    dict(law="markov", transition=[[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]]),
])
def test_window_extension_preserves_symbols(law_kwargs):
    model = EnvModel(3, **law_kwargs)
    small = sample_path(model, seed=7, n_past=5, n_future=10)
    large = sample_path(model, seed=7, n_past=50, n_future=200)
    npt.assert_array_equal(small.symbols_slice(-5, 11), large.symbols_slice(-5, 11))


def test_iid_marginal_frequencies():
    model = EnvModel(3, probs=[0.5, 0.3, 0.2])
    path = sample_path(model, seed=0, n_past=0, n_future=200000)
    counts = np.bincount(path.symbols_slice(0, 200001), minlength=3)
    freq = counts / counts.sum()
    npt.assert_allclose(freq, [0.5, 0.3, 0.2], atol=5e-3)


def test_markov_pair_frequencies_match_stationary_chain():
    # Frequencies of adjacent pairs (including the backward half of the
    # window) must match pi_i P_{ij}: the two-sided chain is stationary.
    trans = np.array([[0.9, 0.1], [0.2, 0.8]])
    model = EnvModel(2, law="markov", transition=trans)
    path = sample_path(model, seed=3, n_past=100000, n_future=100000)
    sym = path.symbols_slice(-100000, 100001)
    pair_counts = np.zeros((2, 2))
    np.add.at(pair_counts, (sym[:-1], sym[1:]), 1.0)
    pair_freq = pair_counts / pair_counts.sum()
    pi = np.array([2.0 / 3.0, 1.0 / 3.0])
    # Chain autocorrelation (rate 0.7) inflates pair-count variance by
    # roughly (1 + 0.7) / (1 - 0.7); 1e-2 is ~4 effective standard errors.
    npt.assert_allclose(pair_freq, pi[:, None] * trans, atol=1e-2)


def test_symbol_and_slice_agree():
    model = EnvModel(2)
    path = sample_path(model, seed=5, n_past=4, n_future=9)
    sliced = path.symbols_slice(-4, 10)
    for j in range(-4, 10):
        assert path.symbol(j) == sliced[j + 4]


def test_out_of_window_reads_raise():
    model = EnvModel(2)
    path = sample_path(model, seed=1, n_past=3, n_future=5)
    assert path.window == (-3, 5)
    with pytest.raises(OutOfWindowError):
        path.symbol(6)
    with pytest.raises(OutOfWindowError):
        path.symbol(-4)
    with pytest.raises(OutOfWindowError):
        path.symbols_slice(-3, 7)
    # OutOfWindowError is also an IndexError for generic callers.
    with pytest.raises(IndexError):
        path.symbol(100)


# --------------------------------------------------------------------------
# shifting
# --------------------------------------------------------------------------

def test_shift_reindexes_same_realization():
    model = EnvModel(3, probs=[0.5, 0.3, 0.2])
    path = sample_path(model, seed=11, n_past=6, n_future=12)
    moved = path.shift(4)
    assert moved.window == (-10, 8)
    for j in range(-10, 9):
        assert moved.symbol(j) == path.symbol(j + 4)


def test_shift_round_trip_restores_window():
    model = EnvModel(2)
    path = sample_path(model, seed=9, n_past=5, n_future=5)
    back = shift(shift(path, 3), -3)
    assert back.window == path.window
    npt.assert_array_equal(back.symbols_slice(-5, 6), path.symbols_slice(-5, 6))


def test_shift_outside_window_raises():
    model = EnvModel(2)
    path = sample_path(model, seed=9, n_past=2, n_future=2)
    with pytest.raises(OutOfWindowError):
        path.shift(3)
    with pytest.raises(OutOfWindowError):
        path.shift(-3)


# --------------------------------------------------------------------------
# mixing profile
# --------------------------------------------------------------------------

def test_iid_mixing_profile_vanishes():
    profile = phi_mixing_profile(EnvModel(3), n_max=10)
    assert profile.values[0] == 1.0
    npt.assert_array_equal(profile.values[1:], np.zeros(10))
    assert profile.summable
    assert profile.rate == 0.0


def test_markov_mixing_profile_exact_two_state():
    # For P = [[.9,.1],[.2,.8]]: eigenvalues 1 and 0.7, pi = (2/3, 1/3), and
    # P^n rows are pi + 0.7^n * (row-dependent signed vector), giving
    #   TV(P^n(0,.), pi) = (1/3) 0.7^n,   TV(P^n(1,.), pi) = (2/3) 0.7^n.
    # The profile takes the max over rows: exactly (2/3) * 0.7^n.
    model = EnvModel(2, law="markov", transition=[[0.9, 0.1], [0.2, 0.8]])
    profile = phi_mixing_profile(model, n_max=30)
    n = np.arange(1, 31)
    npt.assert_allclose(profile.values[1:], (2.0 / 3.0) * 0.7 ** n, rtol=1e-9)
    assert profile.summable
    assert profile.rate == pytest.approx(0.7, abs=1e-9)


def test_identity_chain_is_not_summable():
    model = EnvModel(2, law="markov", transition=[[1.0, 0.0], [0.0, 1.0]])
    profile = phi_mixing_profile(model, n_max=20)
    npt.assert_allclose(profile.values[1:], 0.5)  # TV(delta_i, uniform) = 1/2
    assert not profile.summable
    assert profile.rate == pytest.approx(1.0)


def test_mixing_profile_requires_positive_lag():
    with pytest.raises(ConfigError):
        phi_mixing_profile(EnvModel(2), n_max=0)
