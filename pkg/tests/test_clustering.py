import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctseg.clustering import (
    VARIANCE_FLOOR, EmptyClusterError, Gaussian, build_cluster_model, fit_gaussians, kmeans,
    kmeans_objective, load_cluster_model, log_likelihood, log_likelihood_matrix, mark_background,
    order_clusters, save_cluster_model,
)
from ctseg.dataset import Dataset, FeatureSequence


def same_partition(a, b):
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def test_kmeans_single_cluster_is_mean(rng):
    X = rng.normal(size=(40, 3))
    centers, a = kmeans(X, 1, 0)
    np.testing.assert_allclose(centers[0], X.mean(axis=0), atol=1e-12)
    assert np.all(a == 0)


def test_kmeans_k_equals_n(rng):
    X = rng.normal(size=(7, 2))
    centers, a = kmeans(X, 7, 3)
    assert sorted(a.tolist()) == list(range(7))
    assert kmeans_objective(X, centers, a) == 0.0


def test_kmeans_recovers_blobs(rng):
    means = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    truth = np.repeat(np.arange(3), 20)
    X = means[truth] + 0.1 * rng.standard_normal((60, 2))
    for seed in range(5):
        _, a = kmeans(X, 3, seed)
        assert same_partition(a, truth)


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 3, 0)
    with pytest.raises(ValueError):
        kmeans(np.array([[np.nan, 0.0]]), 1, 0)


def test_kmeans_deterministic(rng):
    X = rng.normal(size=(100, 4))
    a, b = kmeans(X, 5, 9), kmeans(X, 5, 9)
    assert a[0].tobytes() == b[0].tobytes() and np.array_equal(a[1], b[1])


def test_kmeans_duplicates_keep_clusters_nonempty():
    X = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]] * 2)
    _, a = kmeans(X, 4, 0)
    assert np.bincount(a, minlength=4).min() >= 1


@pytest.mark.parametrize("seed", range(20))
def test_kmeans_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(int(rng.integers(20, 200)), int(rng.integers(1, 6))))
    hist = []
    kmeans(X, int(rng.integers(2, 8)), seed, history=hist)
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_fit_gaussians_hand_cases():
    X = np.array([[3.0, 4.0], [3.0, 4.0], [0.0, 0.0], [2.0, 0.0]])
    g = fit_gaussians(X, np.array([0, 0, 1, 1]), 2)
    np.testing.assert_array_equal(g[0].mean, [3.0, 4.0])
    np.testing.assert_array_equal(g[0].var, [VARIANCE_FLOOR, VARIANCE_FLOOR])
    np.testing.assert_array_equal(g[1].mean, [1.0, 0.0])
    np.testing.assert_array_equal(g[1].var, [1.0, VARIANCE_FLOOR])


def test_fit_gaussians_matches_two_pass(rng):
    X = rng.normal(size=(30, 3))
    a = np.repeat([0, 1, 2], 10)
    for k, g in enumerate(fit_gaussians(X, a, 3)):
        rows = [X[i] for i in range(30) if a[i] == k]
        for d in range(3):
            vals = [r[d] for r in rows]
            mu = sum(vals) / len(vals)
            var = sum((v - mu) ** 2 for v in vals) / len(vals)
            assert abs(g.mean[d] - mu) < 1e-12
            assert abs(g.var[d] - max(var, VARIANCE_FLOOR)) < 1e-12


def test_fit_gaussians_empty_cluster():
    with pytest.raises(EmptyClusterError):
        fit_gaussians(np.zeros((2, 1)), np.array([0, 0]), 2)


def test_log_likelihood_values():
    g = Gaussian(np.zeros(2), np.ones(2))
    assert log_likelihood(g, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)
    g1 = Gaussian(np.zeros(1), np.ones(1))
    assert log_likelihood(g1, [2.0]) == pytest.approx(-0.5 * (4 + math.log(2 * math.pi)), abs=1e-14)


@pytest.mark.parametrize("mu,var", [(0.0, 1.0), (0.3, 0.01), (-2.0, 4.0)])
def test_density_integrates_to_one(mu, var):
    g = Gaussian(np.array([mu]), np.array([var]))
    sd = math.sqrt(var)
    grid = np.linspace(mu - 12 * sd, mu + 12 * sd, 20001)
    dens = np.array([math.exp(log_likelihood(g, [x])) for x in grid])
    step = grid[1] - grid[0]
    assert abs(np.sum(dens) * step - 1.0) < 0.02


def test_log_likelihood_maximized_at_mean(rng):
    g = Gaussian(rng.normal(size=4), rng.uniform(0.1, 2, size=4))
    peak = log_likelihood(g, g.mean)
    for d in range(4):
        for eps in (-1e-3, 1e-3):
            x = g.mean.copy()
            x[d] += eps
            assert log_likelihood(g, x) < peak


def test_likelihood_matrix_matches_scalar(rng):
    X = rng.normal(size=(9, 3))
    means, var = rng.normal(size=(4, 3)), rng.uniform(1e-3, 2, size=(4, 3))
    M = log_likelihood_matrix(X, means, var)
    for n, k in itertools.product(range(9), range(4)):
        assert M[n, k] == pytest.approx(log_likelihood(Gaussian(means[k], var[k]), X[n]), rel=1e-9)


def test_order_clusters_hand_case():
    tm, order = order_clusters(np.array([0, 0, 1]), np.array([0.1, 0.2, 0.8]), 2)
    np.testing.assert_allclose(tm, [0.15, 0.8])
    assert order.tolist() == [0, 1]
    tm, order = order_clusters(np.array([1, 1, 0]), np.array([0.1, 0.2, 0.8]), 2)
    assert order.tolist() == [1, 0]
    assert order_clusters(np.zeros(3, int), np.array([0.2, 0.5, 1.0]), 1)[1].tolist() == [0]


def test_order_clusters_ties_by_index():
    _, order = order_clusters(np.array([0, 1, 2]), np.array([0.5, 0.5, 0.1]), 3)
    assert order.tolist() == [2, 0, 1]


def test_order_clusters_random_against_sort(rng):
    for _ in range(20):
        K = int(rng.integers(1, 6))
        a = np.concatenate([np.arange(K), rng.integers(0, K, size=30)])
        ts = rng.uniform(size=len(a))
        tm, order = order_clusters(a, ts, K)
        means = []
        for k in range(K):
            vals = [t for t, x in zip(ts, a) if x == k]
            means.append(sum(vals) / len(vals))
        np.testing.assert_allclose(tm, means, rtol=1e-12)
        assert order.tolist() == sorted(range(K), key=lambda k: (means[k], k))
        assert np.all(np.diff(tm[order]) >= 0)


def test_order_clusters_empty():
    with pytest.raises(EmptyClusterError, match="smaller K"):
        order_clusters(np.array([0, 0]), np.array([0.5, 1.0]), 2)


def test_mark_background_hand_cases():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    c = np.array([[0.0]])
    a = np.zeros(4, int)
    assert not mark_background(X, c, a, 0.0).any()
    assert mark_background(X, c, a, 0.5).tolist() == [False, False, True, True]


def test_mark_background_ties_follow_frame_order():
    X = np.array([[1.0], [-1.0], [1.0], [0.0]])
    mask = mark_background(X, np.array([[0.0]]), np.zeros(4, int), 0.5)
    # three frames tie at distance 1: the earliest is kept
    assert mask.tolist() == [False, True, True, False]


def test_mark_background_counts(rng):
    X = rng.normal(size=(157, 3))
    centers, a = kmeans(X, 4, 0)
    mask = mark_background(X, centers, a, 0.75)
    for k in range(4):
        size = int(np.sum(a == k))
        assert int(np.sum(mask[a == k])) == math.ceil(0.75 * size)


def test_background_count_exact_products():
    X = np.arange(10.0)[:, None]
    assert mark_background(X, np.array([[0.0]]), np.zeros(10, int), 0.3).sum() == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.99), st.floats(0, 0.99))
def test_mark_background_nested(seed, t1, t2):
    t1, t2 = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 2))
    a = rng.integers(0, 3, size=50)
    centers = rng.normal(size=(3, 2))
    m1, m2 = mark_background(X, centers, a, t1), mark_background(X, centers, a, t2)
    assert not np.any(m1 & ~m2)


def _blob_dataset(rng, n_videos=6):
    means = np.array([[0.0, 0.0], [5.0, 5.0], [10.0, 0.0]])
    seqs = []
    for v in range(n_videos):
        lab = np.repeat([0, 1, 2], rng.integers(4, 8, size=3))
        seqs.append(FeatureSequence(f"v{v}", means[lab] + 0.2 * rng.standard_normal((len(lab), 2))))
    return Dataset(seqs)


def test_build_cluster_model(rng):
    ds = _blob_dataset(rng)
    cm = build_cluster_model(ds, 3, 0.0, 1)
    assert cm.bg_radius is None
    assert sorted(cm.order.tolist()) == [0, 1, 2]
    assert np.all(np.diff(cm.time_means[cm.order]) >= 0)
    assert np.all(cm.variances >= VARIANCE_FLOOR)
    ordered_means = cm.means[cm.order]
    np.testing.assert_allclose(ordered_means, [[0, 0], [5, 5], [10, 0]], atol=0.2)
    cm_bg = build_cluster_model(ds, 3, 0.4, 1)
    assert cm_bg.bg_radius is not None and np.all(cm_bg.bg_radius > 0)
    X = ds.all_frames()
    frac = cm_bg.background_mask(X).mean()
    assert 0.3 < frac < 0.5


def test_cluster_checkpoint_round_trip(tmp_path, rng):
    ds = _blob_dataset(rng)
    for tau in (0.0, 0.3):
        cm = build_cluster_model(ds, 3, tau, 2)
        save_cluster_model(cm, tmp_path / "c.tclm")
        assert (tmp_path / "c.tclm").read_bytes()[:5] == b"TCLM1"
        back = load_cluster_model(tmp_path / "c.tclm")
        for name in ("centers", "means", "variances", "time_means", "order"):
            assert np.array_equal(getattr(cm, name), getattr(back, name))
        assert (cm.bg_radius is None) == (back.bg_radius is None)
        if tau:
            assert np.array_equal(cm.bg_radius, back.bg_radius)
