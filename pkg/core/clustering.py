"""Per-timestep clustering of hull states.

Three clusterers share one output contract (ClusterAssignment): plain k-means
(Lloyd with k-means++ seeding, best of several restarts), k-means whose assignment step is a min-cost flow
with a per-cluster size floor, and an epsilon-graph density clusterer that
sends small components to noise.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from api.models import ClustererConfig
from .errors import ClusteringInfeasible, TooFewPoints
from .geometry import as_points

logger = logging.getLogger(__name__)

# Integer scaling of squared distances for the min-cost flow solver
FLOW_COST_SCALE = 1e9


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    k: int
    index_sets: Tuple[Tuple[int, ...], ...]
    noise_indices: Tuple[int, ...] = ()
    centroids: Optional[np.ndarray] = None
    iterations: int = 0
    # Objective after every Lloyd iteration (k-means variants only)
    history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def sizes(self) -> List[int]:
        return [len(s) for s in self.index_sets]

    def labels(self, n_points: int) -> np.ndarray:
        """Cluster index per point, -1 for noise."""
        out = np.full(n_points, -1, dtype=int)
        for j, members in enumerate(self.index_sets):
            out[list(members)] = j
        return out


def wcss(points, assignment: ClusterAssignment) -> float:
    """Within-cluster sum of squared distances to the cluster means."""
    pts = as_points(points)
    total = 0.0
    for members in assignment.index_sets:
        block = pts[list(members)]
        total += float(((block - block.mean(axis=0)) ** 2).sum())
    return total


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # Every point coincides with a chosen centre; take the next unused index
            remaining = [i for i in range(n) if i not in chosen]
            nxt = remaining[0]
        else:
            nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _objective(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _centroids(points: np.ndarray, labels: np.ndarray, previous: np.ndarray) -> np.ndarray:
    out = previous.copy()
    for j in range(len(previous)):
        members = labels == j
        if np.any(members):
            out[j] = points[members].mean(axis=0)
    return out


def _repair_empty(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Give each empty cluster the point farthest from its own centroid."""
    labels = labels.copy()
    k = len(centroids)
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = counts[labels] > 1
        dist = ((points - centroids[labels]) ** 2).sum(axis=1)
        dist[~movable] = -1.0
        far = int(np.argmax(dist))
        labels[far] = j
        centroids[j] = points[far]
    return labels


def _to_assignment(labels: np.ndarray, centroids: np.ndarray, iterations: int,
                   history: Sequence[float]) -> ClusterAssignment:
    k = len(centroids)
    index_sets = tuple(tuple(int(i) for i in np.flatnonzero(labels == j)) for j in range(k))
    return ClusterAssignment(
        k=k,
        index_sets=index_sets,
        noise_indices=(),
        centroids=centroids,
        iterations=iterations,
        history=tuple(history),
    )


def _lloyd(points: np.ndarray, k: int, seed: int, max_iterations: int, assign) -> ClusterAssignment:
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(points, k, rng)
    labels: Optional[np.ndarray] = None
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        new_labels = assign(points, centroids)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = _centroids(points, labels, centroids)
        history.append(_objective(points, labels, centroids))
    if labels is None:
        labels = assign(points, centroids)
        centroids = _centroids(points, labels, centroids)
        history.append(_objective(points, labels, centroids))
    return _to_assignment(labels, centroids, iterations, history)


def _restart_seeds(seed: int, n_init: int) -> List[int]:
    """The caller's seed first, then n_init - 1 seeds drawn from it."""
    if n_init < 1:
        raise ValueError(f"n_init must be at least 1, got {n_init}")
    drawn = np.random.default_rng(seed).integers(np.iinfo(np.int32).max, size=n_init - 1)
    return [seed] + [int(s) for s in drawn]


def _best_of_restarts(points: np.ndarray, k: int, seed: int, max_iterations: int,
                      n_init: int, assign) -> ClusterAssignment:
    best: Optional[ClusterAssignment] = None
    best_cost = np.inf
    for restart_seed in _restart_seeds(seed, n_init):
        candidate = _lloyd(points, k, restart_seed, max_iterations, assign)
        cost = candidate.history[-1]
        # strict comparison keeps the earliest restart on ties
        if cost < best_cost:
            best, best_cost = candidate, cost
    logger.debug("k-means: best of %d restarts has objective %.6g", n_init, best_cost)
    return best


def _nearest_assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin keeps the lowest cluster index on exact ties
    labels = np.argmin(_sq_distances(points, centroids), axis=1)
    return _repair_empty(points, labels, centroids)


def kmeans(points, k: int, seed: int = 0, max_iterations: int = 100,
           n_init: int = 10) -> ClusterAssignment:
    pts = as_points(points)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if len(pts) < k:
        raise TooFewPoints(len(pts), k)
    return _best_of_restarts(pts, k, seed, max_iterations, n_init, _nearest_assign)


def _flow_assign(points: np.ndarray, centroids: np.ndarray, min_cluster_size: int) -> np.ndarray:
    """Cheapest assignment in which every cluster receives min_cluster_size points."""
    n, k = len(points), len(centroids)
    cost = _sq_distances(points, centroids)
    scale = cost.max()
    if scale > 0:
        cost = cost / scale
    int_cost = np.rint(cost * FLOW_COST_SCALE).astype(np.int64)

    g = nx.DiGraph()
    for i in range(n):
        g.add_node(("p", i), demand=-1)
    for j in range(k):
        g.add_node(("c", j), demand=min_cluster_size)
    g.add_node("sink", demand=n - k * min_cluster_size)
    for i in range(n):
        for j in range(k):
            g.add_edge(("p", i), ("c", j), weight=int(int_cost[i, j]), capacity=1)
    for j in range(k):
        g.add_edge(("c", j), "sink", weight=0)

    flow = nx.min_cost_flow(g)
    labels = np.empty(n, dtype=int)
    for i in range(n):
        out = flow[("p", i)]
        labels[i] = next(j for j in range(k) if out[("c", j)] > 0)
    return labels


def kmeans_constrained(points, k: int, min_cluster_size: int, seed: int = 0,
                       max_iterations: int = 100, n_init: int = 10) -> ClusterAssignment:
    pts = as_points(points)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if min_cluster_size < 1:
        raise ValueError(f"min_cluster_size must be at least 1, got {min_cluster_size}")
    if len(pts) < k * min_cluster_size:
        raise ClusteringInfeasible(
            f"{len(pts)} points cannot fill {k} clusters of at least {min_cluster_size}")

    def assign(p, c):
        return _flow_assign(p, c, min_cluster_size)

    return _best_of_restarts(pts, k, seed, max_iterations, n_init, assign)


def density_cluster(points, min_cluster_size: int, epsilon: float,
                    seed: int = 0) -> ClusterAssignment:
    """Connected components of the epsilon-neighbourhood graph.

    Components smaller than min_cluster_size become noise. Clusters are ordered
    by size, largest first, then by their smallest member index. The result
    does not depend on `seed`; it is accepted so every clusterer shares a signature.
    """
    pts = as_points(points)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n = len(pts)
    if n == 0:
        return ClusterAssignment(k=0, index_sets=(), noise_indices=())

    pairs = np.asarray(
        cKDTree(pts).query_pairs(r=epsilon, output_type="ndarray"), dtype=int).reshape(-1, 2)
    adjacency = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, component = connected_components(adjacency, directed=False)

    groups = {}
    for i, c in enumerate(component):
        groups.setdefault(int(c), []).append(i)
    ordered = sorted(groups.values(), key=lambda members: (-len(members), members[0]))

    clusters = [tuple(m) for m in ordered if len(m) >= min_cluster_size]
    noise = sorted(i for m in ordered if len(m) < min_cluster_size for i in m)
    centroids = np.array([pts[list(m)].mean(axis=0) for m in clusters]).reshape(-1, pts.shape[1])
    logger.debug("density clustering: %d clusters, %d noise points", len(clusters), len(noise))
    return ClusterAssignment(
        k=len(clusters),
        index_sets=tuple(clusters),
        noise_indices=tuple(noise),
        centroids=centroids,
    )


def cluster(points, config: ClustererConfig) -> ClusterAssignment:
    if config.algorithm == "kmeans":
        return kmeans(points, config.k, config.seed, config.max_iterations, config.n_init)
    if config.algorithm == "kmeans_constrained":
        return kmeans_constrained(
            points, config.k, config.min_cluster_size, config.seed, config.max_iterations,
            config.n_init)
    return density_cluster(points, config.min_cluster_size, config.epsilon, config.seed)
