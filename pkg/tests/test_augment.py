import numpy as np
import pytest
from hypothesis import given, strategies as st

from myow.augment import (Dropout, Jitter, Noise, Pepper, TransformSpec, apply_transform_set, gaussian_noise,
                          jitter_offsets, neuron_dropout, pepper, temporal_jitter)
from myow.data import BinnedDataset
from myow.tensor import Rng


def trial_dataset(n_trials=4, bins=10, d=6):
    T = n_trials * bins
    # row r holds the value r in every column, so a view reveals which row it came from
    rates = np.repeat(np.arange(T, dtype=float)[:, None], d, axis=1)
    trials = np.repeat(np.arange(n_trials), bins)
    ts = np.arange(T) * 0.1 + trials * 5.0
    return BinnedDataset(rates, ts, np.zeros(T, int), 0.1, trials)


def rates(seed=0, n=50, d=8):
    return np.random.default_rng(seed).poisson(4.0, size=(n, d)).astype(float)


# -- jitter ------------------------------------------------------------------------------------

def test_jitter_window_zero_is_anchor():
    ds = trial_dataset()
    idx = np.arange(len(ds))
    assert np.array_equal(temporal_jitter(ds, idx, 0, Rng(0)), ds.rates)


def test_jitter_at_trial_start_only_moves_forward():
    ds = trial_dataset()
    idx = np.full(2000, 10)  # first bin of trial 1
    picked = temporal_jitter(ds, idx, 2, Rng(1))[:, 0] - 10
    assert set(picked.astype(int).tolist()) == {1, 2}


def test_jitter_never_leaves_trial_or_returns_self():
    ds = trial_dataset()
    idx = np.tile(np.arange(len(ds)), 50)
    src = temporal_jitter(ds, idx, 3, Rng(2))[:, 0].astype(int)
    assert np.all(ds.trials[src] == ds.trials[idx])
    assert np.all(src != idx) and np.all(np.abs(src - idx) <= 3)


def test_jitter_interior_offsets_uniform():
    N, w = 10**5, 2
    off = jitter_offsets(np.full(N, 50), np.zeros(N, int), np.full(N, 100), w, Rng(3))
    vals, counts = np.unique(off, return_counts=True)
    assert vals.tolist() == [-2, -1, 1, 2]
    p = 0.25
    assert np.all(np.abs(counts - N * p) <= 3 * np.sqrt(N * p * (1 - p))), counts


def test_jitter_single_bin_segment_stays_put():
    off = jitter_offsets(np.array([4]), np.array([4]), np.array([5]), 3, Rng(0))
    assert off.tolist() == [0]


# -- value transforms ----------------------------------------------------------------------------

def test_off_parameters_are_bitwise_identity():
    x = rates()
    assert np.array_equal(neuron_dropout(x, 0.0, 0.0, Rng(0)), x)
    assert np.array_equal(gaussian_noise(x, 1.5, 0.0, Rng(0)), x)
    assert np.array_equal(gaussian_noise(x, 0.0, 1.0, Rng(0)), x)
    assert np.array_equal(pepper(x, 1.5, 0.3, 0.0, Rng(0)), x)
    assert np.array_equal(pepper(x, 1.5, 0.0, 1.0, Rng(0)), x)


def test_full_dropout_zeros_everything():
    assert np.all(neuron_dropout(rates(), 1.0, 1.0, Rng(0)) == 0)


def test_dropout_has_no_rescaling():
    x = rates()
    y = neuron_dropout(x, 0.0, 0.5, Rng(1))
    kept = y != 0
    assert np.array_equal(y[kept], x[kept])


def test_dropout_expected_fraction():
    n, d = 10**5, 10
    y = neuron_dropout(np.ones((n, d)), 0.0, 0.2, Rng(2))
    frac = (y == 0).mean(axis=1)
    # per-row masked fractions are i.i.d.; the standard error of their mean bounds the check
    se = frac.std(ddof=1) / np.sqrt(n)
    assert abs(frac.mean() - 0.1) <= 3 * se


def test_noise_variance_matches_sigma():
    sigma, n, d = 1.5, 20000, 5
    x = rates(n=n, d=d)
    y = gaussian_noise(x, sigma, 0.5, Rng(4))
    diff = y - x
    applied = np.any(diff != 0, axis=1)
    m = applied.sum() * d
    var = diff[applied].var()
    # the sample variance of m normal draws has standard deviation sigma^2 * sqrt(2 / (m - 1))
    assert abs(var - sigma**2) <= 3 * sigma**2 * np.sqrt(2 / (m - 1))
    p = 0.5
    assert abs(applied.mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_pepper_activate_everything():
    x = rates()
    assert np.array_equal(pepper(x, 1.5, 1.0, 1.0, Rng(0)), x + 1.5)


def test_pepper_bump_fraction():
    n, d = 20000, 10
    x = np.zeros((n, d))
    y = pepper(x, 1.5, 0.3, 0.5, Rng(5))
    assert set(np.unique(y).tolist()) <= {0.0, 1.5}
    frac = (y > 0).mean()
    p = 0.15
    row_frac = (y > 0).mean(axis=1)
    assert abs(frac - p) <= 3 * row_frac.std(ddof=1) / np.sqrt(n)


@given(st.integers(0, 10**6), st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 1))
def test_non_noise_transforms_keep_rates_non_negative(seed, p_drop, p_act, c, p):
    x = rates(seed, n=20)
    lo, hi = sorted((p_drop, p))
    assert np.all(neuron_dropout(x, lo, hi, Rng(seed)) >= 0)
    assert np.all(pepper(x, c, p_act, p, Rng(seed)) >= 0)


def test_noise_can_go_negative():
    # documented: additive noise is the one transform allowed to produce negative rates
    assert (gaussian_noise(np.zeros((100, 5)), 1.5, 1.0, Rng(0)) < 0).any()


# -- transform sets -------------------------------------------------------------------------------

def test_empty_spec_returns_raw_rows():
    ds = trial_dataset()
    idx = np.array([3, 17, 25])
    assert np.array_equal(apply_transform_set(TransformSpec(()), ds, idx, Rng(0)), ds.rates[idx])


def test_jitter_only_returns_neighbouring_raw_row():
    ds = trial_dataset()
    idx = np.arange(len(ds))
    out = apply_transform_set(TransformSpec((Jitter(2),)), ds, idx, Rng(0))
    src = out[:, 0].astype(int)
    assert np.array_equal(out, ds.rates[src]) and np.all((np.abs(src - idx) >= 1) & (np.abs(src - idx) <= 2))


def test_value_transform_before_jitter_rejected():
    with pytest.raises(ValueError, match="precede"):
        TransformSpec((Dropout(), Jitter(2)))
    with pytest.raises(ValueError, match="precede"):
        TransformSpec.from_text("dropout(p_min=0.0, p_max=0.2) + jitter(window=2)")


def test_distinct_streams_give_distinct_views():
    ds = BinnedDataset(rates(n=30), np.arange(30.0), np.zeros(30, int))
    spec = TransformSpec.from_text("jitter(window=2) + dropout(p_min=0.0, p_max=0.2) + noise(sigma=1.5, p=0.5)")
    idx = np.arange(30)
    assert not np.array_equal(apply_transform_set(spec, ds, idx, Rng(1)), apply_transform_set(spec, ds, idx, Rng(2)))
    assert np.array_equal(apply_transform_set(spec, ds, idx, Rng(1)), apply_transform_set(spec, ds, idx, Rng(1)))


@pytest.mark.parametrize("bad", [lambda: Jitter(-1), lambda: Dropout(0.3, 0.2), lambda: Dropout(0.0, 1.2),
                                 lambda: Noise(-1.0), lambda: Noise(1.0, 1.5), lambda: Pepper(-1.0),
                                 lambda: Pepper(1.5, 2.0)])
def test_descriptor_validation(bad):
    with pytest.raises(ValueError):
        bad()


@given(st.lists(st.sampled_from(["dropout", "noise", "pepper"]), max_size=3), st.booleans(),
       st.integers(0, 5), st.floats(0, 1), st.floats(0, 3))
def test_text_round_trip(names, with_jitter, w, p, v):
    make = {"dropout": lambda: Dropout(0.0, p), "noise": lambda: Noise(v, p), "pepper": lambda: Pepper(v, p, p)}
    spec = TransformSpec(((Jitter(w),) if with_jitter else ()) + tuple(make[n]() for n in names))
    assert TransformSpec.from_text(spec.to_text()) == spec


def test_unknown_transform_text():
    with pytest.raises(ValueError):
        TransformSpec.from_text("blur(radius=2)")
    with pytest.raises(ValueError):
        TransformSpec.from_text("noise(width=2)")
