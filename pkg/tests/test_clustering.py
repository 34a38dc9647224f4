import itertools

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from api.models import ClustererConfig
from core.clustering import (cluster, density_cluster, kmeans, kmeans_constrained, wcss)
from core.errors import ClusteringInfeasible, TooFewPoints


def blobs(centers, per_blob, spread, seed=0):
    rng = np.random.default_rng(seed)
    return np.vstack([np.asarray(c) + spread * rng.standard_normal((n, 2))
                      for c, n in zip(centers, per_blob)])


def partition(assignment):
    return {frozenset(s) for s in assignment.index_sets}


def test_kmeans_recovers_separated_blobs():
    pts = blobs([(0, 0), (20, 0), (0, 20)], [5, 6, 7], 0.1)
    result = kmeans(pts, 3, seed=0)
    assert partition(result) == {frozenset(range(5)), frozenset(range(5, 11)),
                                 frozenset(range(11, 18))}
    assert result.labels(18).min() == 0


@hsettings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_kmeans_objective_never_increases(seed, k):
    pts = np.random.default_rng(seed).uniform(-5, 5, size=(20, 2))
    result = kmeans(pts, k, seed=seed)
    history = np.array(result.history)
    assert np.all(np.diff(history) <= 1e-9 * max(1.0, history[0]))
    assert all(size > 0 for size in result.sizes)
    assert wcss(pts, result) == pytest.approx(history[-1], rel=1e-9, abs=1e-12)


def test_kmeans_input_errors():
    with pytest.raises(TooFewPoints):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError):
        kmeans(np.zeros((4, 2)), 0)


def test_constrained_respects_size_floor_on_imbalanced_data():
    pts = blobs([(0, 0), (50, 50)], [10, 2], 0.1)
    result = kmeans_constrained(pts, 2, min_cluster_size=3, seed=0)
    assert sorted(result.sizes) == [3, 9]


def test_constrained_matches_brute_force_on_separated_blobs():
    pts = blobs([(0, 0), (10, 0)], [4, 5], 0.1, seed=3)
    result = kmeans_constrained(pts, 2, min_cluster_size=3, seed=0)
    best = np.inf
    for labels in itertools.product(range(2), repeat=len(pts)):
        labels = np.array(labels)
        if min(np.bincount(labels, minlength=2)) < 3:
            continue
        cost = sum(((pts[labels == j] - pts[labels == j].mean(axis=0)) ** 2).sum() for j in range(2))
        best = min(best, cost)
    assert wcss(pts, result) == pytest.approx(best, rel=1e-6)


def _fixed_centroid_cost(pts, labels, centroids):
    return float(((pts - centroids[labels]) ** 2).sum())


def _assert_locally_optimal(pts, result, k, min_size):
    labels = result.labels(len(pts))
    base = _fixed_centroid_cost(pts, labels, result.centroids)
    tol = 1e-7 * max(1.0, base)
    counts = np.bincount(labels, minlength=k)
    # No size-feasible single move or pairwise swap improves the fixed-centroid cost
    for i in range(len(pts)):
        for j in range(k):
            if j == labels[i] or counts[labels[i]] <= min_size:
                continue
            moved = labels.copy()
            moved[i] = j
            assert _fixed_centroid_cost(pts, moved, result.centroids) >= base - tol
    for a, b in itertools.combinations(range(len(pts)), 2):
        if labels[a] == labels[b]:
            continue
        swapped = labels.copy()
        swapped[a], swapped[b] = labels[b], labels[a]
        assert _fixed_centroid_cost(pts, swapped, result.centroids) >= base - tol


@hsettings(max_examples=60)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(9, 12))
def test_constrained_assignment_is_optimal_for_its_centroids(seed, k, n):
    pts = np.random.default_rng(seed).uniform(-5, 5, size=(n, 2))
    result = kmeans_constrained(pts, k, min_cluster_size=3, seed=seed)
    assert min(result.sizes) >= 3
    _assert_locally_optimal(pts, result, k, 3)


def brute_force_wcss(pts, k, min_size):
    """Lowest within-cluster sum of squares over every size-feasible labelling."""
    labels = np.array(list(itertools.product(range(k), repeat=len(pts))))
    sq = (pts ** 2).sum(axis=1)
    cost = np.zeros(len(labels))
    feasible = np.ones(len(labels), dtype=bool)
    for j in range(k):
        member = (labels == j).astype(float)
        count = member.sum(axis=1)
        feasible &= count >= min_size
        sums = member @ pts
        with np.errstate(divide="ignore", invalid="ignore"):
            cost += member @ sq - (sums ** 2).sum(axis=1) / count
    return float(cost[feasible].min())


def test_constrained_restarts_usually_reach_the_global_optimum():
    hits, trials = 0, 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        k = 2 + seed % 2
        n = int(rng.integers(3 * k, 11))
        pts = rng.uniform(-5, 5, size=(n, 2))
        result = kmeans_constrained(pts, k, min_cluster_size=3, seed=seed)
        best = brute_force_wcss(pts, k, 3)
        trials += 1
        if wcss(pts, result) <= best + 1e-7 * max(1.0, best):
            hits += 1
        else:
            _assert_locally_optimal(pts, result, k, 3)
    assert hits >= 0.8 * trials


@hsettings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(2, 3))
def test_restarts_never_do_worse_than_a_single_start(seed, k):
    pts = np.random.default_rng(seed).uniform(-5, 5, size=(12, 2))
    single = kmeans_constrained(pts, k, min_cluster_size=3, seed=seed, n_init=1)
    several = kmeans_constrained(pts, k, min_cluster_size=3, seed=seed, n_init=5)
    assert wcss(pts, several) <= wcss(pts, single) + 1e-9
    assert kmeans(pts, k, seed=seed, n_init=4).history[-1] <= \
        kmeans(pts, k, seed=seed, n_init=1).history[-1] + 1e-9


def test_restart_count_must_be_positive():
    with pytest.raises(ValueError):
        kmeans(np.zeros((4, 2)), 2, n_init=0)


def test_constrained_infeasible():
    with pytest.raises(ClusteringInfeasible):
        kmeans_constrained(np.zeros((8, 2)), 3, min_cluster_size=3)


def union_find_components(pts, eps):
    parent = list(range(len(pts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(pts)), 2):
        if np.linalg.norm(pts[i] - pts[j]) <= eps:
            parent[find(i)] = find(j)
    groups = {}
    for i in range(len(pts)):
        groups.setdefault(find(i), set()).add(i)
    return [frozenset(g) for g in groups.values()]


@hsettings(max_examples=60)
@given(st.integers(0, 10_000), st.integers(3, 40), st.floats(0.3, 3.0))
def test_density_matches_union_find(seed, n, eps):
    pts = np.random.default_rng(seed).uniform(0, 10, size=(n, 2))
    result = density_cluster(pts, min_cluster_size=3, epsilon=eps)
    components = union_find_components(pts, eps)
    expected_clusters = {c for c in components if len(c) >= 3}
    assert partition(result) == expected_clusters
    assert set(result.noise_indices) == set().union(*[c for c in components if len(c) < 3])
    sizes = result.sizes
    assert sizes == sorted(sizes, reverse=True)


def test_density_rejects_isolated_points_as_noise():
    pts = np.vstack([blobs([(0, 0), (10, 10)], [6, 4], 0.05), [[50.0, 50.0], [-50.0, 0.0]]])
    result = density_cluster(pts, min_cluster_size=3, epsilon=1.0)
    assert result.k == 2
    assert result.sizes == [6, 4]
    assert result.noise_indices == (10, 11)
    assert list(result.labels(12)[10:]) == [-1, -1]


def test_density_empty_input():
    result = density_cluster(np.zeros((0, 2)), min_cluster_size=3, epsilon=1.0)
    assert result.k == 0 and result.index_sets == ()


def test_dispatcher():
    pts = blobs([(0, 0), (20, 0)], [5, 5], 0.1)
    for algorithm in ("kmeans", "kmeans_constrained", "density"):
        config = ClustererConfig(algorithm=algorithm, k=2, min_cluster_size=3, epsilon=1.0)
        assert partition(cluster(pts, config)) == {frozenset(range(5)), frozenset(range(5, 10))}
