import warnings

import numpy as np
import pytest
import scipy.fft
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from freqrestore.freqlab import (
    BinSpec,
    ClassDistMap,
    ClassMap,
    CoeffMap,
    class_to_coeff,
    coeff_to_class,
    dct2,
    dct_matrix,
    fit_bins,
    freq_histogram,
    frequency_samples,
    idct2,
    patch_dct,
    patch_idct,
)
from freqrestore.imgio import ImageBuffer


# --- DCT ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [4, 8])
def test_dct_matches_scipy(n):
    x = np.random.default_rng(n).normal(size=(n, n)) * 100
    np.testing.assert_allclose(dct2(x), scipy.fft.dctn(x, type=2, norm="ortho"), atol=1e-10)
    np.testing.assert_allclose(idct2(x), scipy.fft.idctn(x, type=2, norm="ortho"), atol=1e-10)


def test_constant_block_dc():
    c = dct2(np.full((4, 4), 8.0))
    assert c[0, 0] == pytest.approx(32.0, abs=1e-12)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-12


def test_basis_image_recovers_single_coefficient():
    cm = dct_matrix(8)
    basis = np.outer(cm[2], cm[3])
    c = dct2(basis)
    assert c[2, 3] == pytest.approx(1.0, abs=1e-10)
    c[2, 3] = 0
    assert np.abs(c).max() <= 1e-10


def test_idct_examples():
    np.testing.assert_array_equal(idct2(np.zeros((4, 4))), 0)
    c = np.zeros((4, 4))
    c[0, 0] = 32
    np.testing.assert_allclose(idct2(c), 8.0, atol=1e-12)


@pytest.mark.parametrize("shape", [(4, 8), (3, 3), (16, 16), (4,)])
def test_dct_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        dct2(np.zeros(shape))


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([4, 8]).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-1024, 1024))))
def test_dct_inverse_and_parseval(x):
    np.testing.assert_allclose(idct2(dct2(x)), x, atol=1e-10, rtol=0)
    np.testing.assert_allclose(dct2(idct2(x)), x, atol=1e-10, rtol=0)
    e = np.sum(x**2)
    assert abs(np.sum(dct2(x) ** 2) - e) <= 1e-9 * max(e, 1e-300)


# --- patch DCT ----------------------------------------------------------------

def test_patch_dct_grid_shape():
    cm = patch_dct(np.random.default_rng(0).random((96, 96)), 4, 4)
    assert cm.values.shape == (24, 24, 16)


def test_patch_dct_constant():
    cm = patch_dct(np.full((8, 12), 8.0), 4, 4)
    np.testing.assert_allclose(cm.values[..., 0], 32.0, atol=1e-12)
    np.testing.assert_allclose(cm.values[..., 1:], 0, atol=1e-12)


def test_patch_dct_layout_against_per_block_loop():
    x = np.random.default_rng(3).normal(size=(8, 12))
    cm = patch_dct(x, 4, 4)
    for i in range(2):
        for j in range(3):
            block = dct2(x[4 * i : 4 * i + 4, 4 * j : 4 * j + 4])
            for u in range(4):
                for v in range(4):
                    assert cm.values[i, j, u * 4 + v] == pytest.approx(block[u, v], abs=1e-12)


@pytest.mark.parametrize("shape", [(96, 96), (8, 4), (12, 20)])
def test_patch_roundtrip(shape):
    x = np.random.default_rng(1).uniform(0, 255, shape)
    np.testing.assert_allclose(patch_idct(patch_dct(ImageBuffer(x))).data, x, atol=1e-9)


def test_patch_dct_divisibility():
    with pytest.raises(ValueError):
        patch_dct(np.zeros((10, 8)))


def test_patch_idct_channel_mismatch():
    with pytest.raises(ValueError):
        patch_idct(CoeffMap(np.zeros((2, 2, 64)), 8, 8), 4, 4)


# --- bins ---------------------------------------------------------------------

def sort_oracle_bins(samples, n_cl):
    """Independent equal-frequency split: chop the sorted list into near-equal runs."""
    s = sorted(samples)
    n = len(s)
    cuts = [-(-k * n // n_cl) for k in range(n_cl + 1)]
    groups = [s[cuts[k] : cuts[k + 1]] for k in range(n_cl)]
    return groups


def test_fit_bins_one_to_fourteen():
    samples = np.arange(1.0, 15.0)
    bins = fit_bins([samples], 7)
    groups = sort_oracle_bins(samples.tolist(), 7)
    assert [len(g) for g in groups] == [2] * 7
    labels = coeff_to_class(CoeffMap(samples.reshape(14, 1, 1), 1, 1), bins)
    counts = np.bincount(labels.labels.ravel(), minlength=7)
    assert counts.tolist() == [2] * 7
    assert bins.representatives[0, 0] == 1.5
    np.testing.assert_allclose(bins.representatives[0], [np.median(g) for g in groups])


def test_fit_bins_single_class():
    x = np.array([5.0, 1.0, 3.0, 10.0])
    bins = fit_bins([x], 1)
    assert bins.boundaries.shape == (1, 0)
    assert bins.representatives[0, 0] == 4.0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=7, max_size=300, unique=True),
    st.integers(2, 9),
)
def test_fit_bins_balance_unique_samples(samples, n_cl):
    if len(samples) < n_cl:
        return
    x = np.array(samples)
    bins = fit_bins([x], n_cl)
    labels = coeff_to_class(CoeffMap(x.reshape(-1, 1, 1), 1, 1), bins).labels.ravel()
    counts = np.bincount(labels, minlength=n_cl)
    oracle = [len(g) for g in sort_oracle_bins(samples, n_cl)]
    assert counts.tolist() == oracle
    assert counts.max() - counts.min() <= 1


def test_fit_bins_uniform_random_counts():
    rng = np.random.default_rng(0)
    n, n_cl = 2000, 7
    x = rng.uniform(size=(n * n_cl, 3))
    bins = fit_bins(x, n_cl)
    labels = coeff_to_class(CoeffMap(x.reshape(-1, 1, 3), 3, 1), bins).labels
    for c in range(3):
        counts = np.bincount(labels[..., c].ravel(), minlength=n_cl)
        assert np.all(np.abs(counts - n) <= 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=7, max_size=80))
def test_fit_bins_invariants_with_ties(samples):
    x = np.array(samples, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bins = fit_bins([x], 7)
    b = bins.boundaries[0]
    assert np.all(np.diff(b) > 0)
    r = bins.representatives[0]
    edges = np.concatenate([[-np.inf], b, [np.inf]])
    for k in range(7):
        assert edges[k] <= r[k] < edges[k + 1] or (k == 6 and r[k] >= edges[k])
    assert bins.channel_std[0] > 0


def test_fit_bins_errors_and_warnings():
    with pytest.raises(ValueError):
        fit_bins([np.arange(3.0)], 7)
    with pytest.warns(RuntimeWarning):
        bins = fit_bins([np.zeros(20)], 2)
    assert bins.channel_std[0] == 1e-6
    assert bins.warnings


def small_bins():
    rng = np.random.default_rng(7)
    return fit_bins(rng.normal(size=(500, 16)) * np.arange(1, 17), 7)


def test_coeff_to_class_tie_rule():
    bins = small_bins()
    vals = np.zeros((1, 1, 16))
    vals[0, 0, :] = bins.boundaries[:, 2]
    assert np.all(coeff_to_class(CoeffMap(vals), bins).labels == 3)
    vals[0, 0, :] = bins.boundaries[:, 0] - 1e3
    assert np.all(coeff_to_class(CoeffMap(vals), bins).labels == 0)


def test_class_coeff_roundtrip_exhaustive():
    bins = small_bins()
    labels = np.tile(np.arange(7)[:, None], (1, 16)).reshape(7, 1, 16)
    y = ClassMap(labels, 7)
    back = coeff_to_class(class_to_coeff(y, bins), bins)
    np.testing.assert_array_equal(back.labels, labels)


def test_representatives_monotone():
    bins = small_bins()
    assert np.all(np.diff(bins.representatives, axis=1) > 0)


def test_class_to_coeff_lookup_and_errors():
    bins = fit_bins([np.arange(1.0, 15.0)], 7)
    cm = class_to_coeff(ClassMap(np.zeros((1, 1, 1), int), 7), bins, 1, 1)
    assert cm.values[0, 0, 0] == 1.5
    with pytest.raises(ValueError):
        class_to_coeff(ClassMap(np.zeros((1, 1, 2), int), 7), bins, 1, 1)
    with pytest.raises(ValueError):
        ClassMap(np.full((1, 1, 1), 7), 7)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 50, elements=st.floats(-100, 100)))
def test_coeff_to_class_monotone(vals):
    bins = small_bins()
    x = np.sort(vals)
    labels = coeff_to_class(CoeffMap(np.repeat(x[:, None, None], 16, 2)), bins).labels
    assert np.all(np.diff(labels[:, 0, :], axis=0) >= 0)


def test_binspec_bytes_roundtrip(tmp_path):
    bins = small_bins()
    bins.save(tmp_path / "b.bin")
    back = BinSpec.load(tmp_path / "b.bin")
    assert back.to_bytes() == bins.to_bytes()
    np.testing.assert_array_equal(back.boundaries, bins.boundaries)
    with pytest.raises(ValueError):
        BinSpec.from_bytes(b"garbage!" + bytes(20))


def test_class_dist_map_argmax_ties_lowest():
    p = np.full((2, 2, 16, 7), 1 / 7)
    assert np.all(ClassDistMap(p).argmax().labels == 0)
    with pytest.raises(ValueError):
        ClassDistMap(np.full((1, 1, 1, 7), 0.2))


# --- histograms ---------------------------------------------------------------

def test_histogram_constant_images():
    imgs = [np.full((16, 24), 90.0), np.full((8, 8), 3.0)]
    edges = np.linspace(-10, 10, 6)
    counts = freq_histogram(imgs, 8, (7, 7), edges)
    assert counts.sum() == 6 + 1
    assert counts[2] == 7  # bin [-2, 2) holds zero


def test_histogram_conservation_with_outliers():
    rng = np.random.default_rng(0)
    imgs = [ImageBuffer(rng.integers(0, 256, (20, 17, 3)).astype(float), "u8") for _ in range(3)]
    counts = freq_histogram(imgs, 8, (7, 7), np.array([-1.0, 0.0, 1.0]))
    assert counts.sum() == 3 * (2 * 2)
    assert frequency_samples(imgs, 8, (7, 7)).size == 12


def test_histogram_errors():
    with pytest.raises(ValueError):
        freq_histogram([], 8, (7, 7), [0, 1])
    with pytest.raises(ValueError):
        freq_histogram([np.zeros((8, 8))], 8, (7, 7), [1, 0])
