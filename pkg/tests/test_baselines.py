import math
import warnings

import numpy as np
import pytest

from attrishield.baselines import (
    RrConfig,
    correlation_defend,
    qpm_defend,
    qpm_game_inputs,
    quantize_kmeans,
    rr_defend,
)
from attrishield.classify import LinearSoftmaxModel
from attrishield.core import Dataset, RatingGrid, SeedSpec, is_grid_valid, l0_norm, synth_generate

GRID = RatingGrid()


def test_keep_probability_closed_form():
    assert RrConfig(math.log(5)).keep_probability == pytest.approx(0.5, abs=1e-15)
    assert RrConfig(0.0).keep_probability == pytest.approx(1 / 6)
    assert RrConfig(1e9).keep_probability == 1.0
    with pytest.raises(ValueError):
        RrConfig(-0.1)


def test_rr_huge_epsilon_is_identity():
    x = np.array([0.0, 0.2, 1.0, 0.6, 0.0])
    np.testing.assert_array_equal(rr_defend(x, RrConfig(1e9), 3), x)


def test_rr_zero_epsilon_uniform_marginal():
    x = np.full(10_000, 0.4)
    out = rr_defend(x, RrConfig(0.0), SeedSpec(1).rng("u", "rr"))
    assert is_grid_valid(out)
    sigma = math.sqrt((1 / 6) * (5 / 6) / x.size)
    for v in GRID.values:
        assert abs(np.mean(np.isclose(out, v)) - 1 / 6) <= 3 * sigma


@pytest.mark.parametrize("eps", [0.5, math.log(5), 2.0])
def test_rr_keep_frequency(eps):
    cfg = RrConfig(eps)
    rng = np.random.default_rng(4)
    x = rng.choice(GRID.values, 20_000)
    out = rr_defend(x, cfg, 11)
    q = cfg.keep_probability
    sigma = math.sqrt(q * (1 - q) / x.size)
    assert abs(np.mean(out == x) - q) <= 3 * sigma
    # replacements never equal the true value and cover every other level
    changed = out != x
    assert set(np.round(out[changed & (x == 0.4)], 6)) == {0.0, 0.2, 0.6, 0.8, 1.0}


def test_rr_deterministic():
    x = np.array([0.2, 0.0, 0.8])
    assert rr_defend(x, RrConfig(1.0), 5).tobytes() == rr_defend(x, RrConfig(1.0), 5).tobytes()


def _lr(W):
    W = np.asarray(W, float)
    return LinearSoftmaxModel(W, np.zeros(W.shape[0]))


def test_correlation_k_zero_unchanged():
    x = np.array([0.2, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(correlation_defend(x, 0, 0, _lr(np.ones((2, 4)))), x)


def test_correlation_dominant_coefficient():
    W = np.zeros((2, 5))
    W[1, 3] = 5.0
    W[0, 1] = 9.0  # belongs to the true label, must be ignored
    x = np.array([0.4, 0.0, 0.0, 0.0, 0.0])
    out = correlation_defend(x, 0, 1, _lr(W))
    np.testing.assert_array_equal(out, [0.4, 0.0, 0.0, 1.0, 0.0])


def test_correlation_properties_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d, m = int(rng.integers(3, 20)), int(rng.integers(2, 5))
        model = _lr(rng.normal(size=(m, d)))
        x = rng.choice(GRID.values, d) * (rng.random(d) < 0.5)
        k = int(rng.integers(0, (x == 0).sum() + 1))
        out = correlation_defend(x, int(rng.integers(m)), k, model)
        nz = x != 0
        np.testing.assert_array_equal(out[nz], x[nz])
        assert l0_norm(out - x) <= k


def test_correlation_k_too_large_warns():
    x = np.array([0.2, 0.0, 0.4])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = correlation_defend(x, 0, 5, _lr(np.ones((2, 3))))
    assert caught
    np.testing.assert_array_equal(out, [0.2, 1.0, 0.4])


def test_kmeans_k_equals_n_and_k_one():
    X = np.random.default_rng(1).uniform(size=(12, 4))
    ds = Dataset(X, np.zeros(12, int), 1)
    book = quantize_kmeans(ds, 12, seed=0)
    assert book.distortion_history[-1] == 0.0
    assert {tuple(r) for r in book.centroids} == {tuple(r) for r in X}
    one = quantize_kmeans(ds, 1, seed=0)
    np.testing.assert_allclose(one.centroids[0], X.mean(axis=0), atol=1e-12)
    with pytest.raises(ValueError):
        quantize_kmeans(ds, 13)
    with pytest.raises(ValueError):
        quantize_kmeans(Dataset(np.zeros((0, 4)), [], 1), 1)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(0.1, 0.02, (100, 3))
    b = rng.normal(0.9, 0.02, (100, 3))
    book = quantize_kmeans(np.vstack([a, b]), 2, seed=3)
    got = sorted(book.centroids.tolist())
    np.testing.assert_allclose(got[0], a.mean(axis=0), atol=0.1)
    np.testing.assert_allclose(got[1], b.mean(axis=0), atol=0.1)


def test_kmeans_distortion_non_increasing_and_deterministic():
    ds = synth_generate(40, 4, 300, 6, 0.7, SeedSpec(0))
    book = quantize_kmeans(ds, 8, iters=30, seed=1)
    h = book.distortion_history
    assert len(h) == 31
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    again = quantize_kmeans(ds, 8, iters=30, seed=1)
    assert again.centroids.tobytes() == book.centroids.tobytes()


def test_qpm_identity_and_single_centroid():
    ds = synth_generate(20, 2, 100, 4, 0.8, SeedSpec(1))
    book = quantize_kmeans(ds, 5, seed=0)
    x = ds.X[7]
    out = qpm_defend(x, book, np.eye(5), 0)
    expected = GRID.snap(np.clip(book.centroids[book.assign(x)[0]], 0, 1))
    np.testing.assert_array_equal(out, expected)
    assert is_grid_valid(out)
    one = quantize_kmeans(ds, 1, seed=0)
    for row in ds.X[:5]:
        np.testing.assert_array_equal(qpm_defend(row, one, np.eye(1), 0), GRID.snap(one.centroids[0]))
    with pytest.raises(ValueError):
        qpm_defend(x, book, np.eye(4), 0)


def test_qpm_output_frequencies_match_row():
    C = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    from attrishield.baselines import Codebook

    book = Codebook(C)
    f = np.array([[0.5, 0.3, 0.2], [0, 1, 0], [0, 0, 1]])
    rng = np.random.default_rng(0)
    n = 10_000
    outs = np.array([book.assign(qpm_defend([0.1, 0.0], book, f, rng))[0] for _ in range(n)])
    for j, pj in enumerate(f[0]):
        sigma = math.sqrt(pj * (1 - pj) / n)
        assert abs(np.mean(outs == j) - pj) <= 3 * sigma


def test_qpm_game_inputs():
    ds = synth_generate(20, 2, 100, 4, 0.8, SeedSpec(1))
    book = quantize_kmeans(ds, 4, seed=0)
    joint, d_q = qpm_game_inputs(ds, book)
    assert joint.shape == (2, 4) and joint.sum() == pytest.approx(1.0)
    assert np.all(np.diag(d_q) == 0) and np.all(d_q == d_q.T)
