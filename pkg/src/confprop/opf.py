"""Semi-supervised optimum-path forest label propagation with confidence.

Samples are nodes of a complete graph over 2D points; the cost of a path
is its maximum edge weight (minimax / bottleneck criterion) with Euclidean
edge weights. Each class's seeds compete to conquer every node along
minimum-bottleneck paths; the winning class labels the node, and the gap
between the winning cost and the best competing class's cost yields a
per-sample confidence in [0.5, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRUTE_FORCE_MAX_N = 64


def _distance_row(points: np.ndarray, u: int) -> np.ndarray:
    """Euclidean distances from node u to every node.

    The best-first search and the brute-force oracle both build their edge
    weights through this function, so their min/max arithmetic operates on
    bit-identical values.
    """
    delta = points - points[u]
    return np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)


@dataclass
class PropagationGraph:
    """Complete graph over 2D points with labeled seed nodes."""

    points: np.ndarray
    seed_indices: np.ndarray
    seed_labels: np.ndarray
    c: int

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        self.seed_indices = np.asarray(self.seed_indices, dtype=np.int64)
        self.seed_labels = np.asarray(self.seed_labels, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be an n x 2 matrix")
        n = self.points.shape[0]
        if n < 2:
            raise ValueError("need at least 2 points")
        if not np.isfinite(self.points).all():
            raise ValueError("points contain non-finite coordinates")
        if self.seed_indices.size == 0:
            raise ValueError("seed set is empty")
        if self.seed_indices.shape != self.seed_labels.shape:
            raise ValueError("seed_indices and seed_labels differ in length")
        if self.seed_indices.min() < 0 or self.seed_indices.max() >= n:
            raise ValueError("seed index out of range")
        if len(np.unique(self.seed_indices)) != self.seed_indices.size:
            raise ValueError("duplicate seed indices")
        if self.seed_labels.min() < 0 or self.seed_labels.max() >= self.c:
            raise ValueError("seed label out of range")
        if len(np.unique(self.seed_labels)) < 2:
            raise ValueError(
                "need seeds from at least 2 distinct classes; "
                "confidence is undefined with a single class"
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class ForestResult:
    """Per-sample output of the label propagation.

    ``cost`` is the optimum (minimax) path cost from the winning class,
    ``rival_cost`` the best cost from any other class, ``confidence`` the
    ratio rival / (cost + rival). ``per_class_cost`` holds the full n x c
    cost maps the assembly was reduced from.
    """

    label: np.ndarray
    cost: np.ndarray
    rival_cost: np.ndarray
    confidence: np.ndarray
    per_class_cost: np.ndarray


def per_class_cost_map(graph: PropagationGraph, class_id: int) -> np.ndarray:
    """Minimum-bottleneck path cost from any seed of one class to every node.

    Best-first (Dijkstra-style) expansion with fmax relaxation: the cost
    offered to v through u is max(cost[u], dist(u, v)). Seeds of the class
    start at cost 0; paths may pass through any node. Ties in the frontier
    are broken toward the lowest node index, which makes the expansion
    order, and therefore the result, deterministic.
    """
    sources = graph.seed_indices[graph.seed_labels == class_id]
    if sources.size == 0:
        raise ValueError(f"class {class_id} has no seeds")
    points = graph.points
    n = graph.n
    cost = np.full(n, np.inf)
    cost[sources] = 0.0
    settled = np.zeros(n, dtype=bool)
    frontier = cost.copy()
    for _ in range(n):
        u = int(np.argmin(frontier))
        if frontier[u] == np.inf:
            break
        settled[u] = True
        frontier[u] = np.inf
        offered = np.maximum(cost[u], _distance_row(points, u))
        better = ~settled & (offered < cost)
        cost[better] = offered[better]
        frontier[better] = offered[better]
    return cost


def brute_force_minimax(points: np.ndarray, seeds_of_class: np.ndarray) -> np.ndarray:
    """All-pairs minimax costs by min/max Floyd-Warshall, reduced over seeds.

    Test oracle only: guards n <= 64. Independent of the best-first search:
    it relaxes the full n x n cost matrix through every intermediate node
    until closure instead of expanding a frontier.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force oracle limited to n <= {BRUTE_FORCE_MAX_N}")
    seeds = np.asarray(seeds_of_class, dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("no seeds given")
    m = np.stack([_distance_row(points, u) for u in range(n)])
    np.fill_diagonal(m, 0.0)
    for k in range(n):
        m = np.minimum(m, np.maximum(m[:, k : k + 1], m[k : k + 1, :]))
    return m[seeds].min(axis=0)


def confidence(c_best: float, c_rival: float) -> float:
    """Confidence ratio c_rival / (c_best + c_rival).

    Degenerate cases: both costs 0 (coincident seeds of competing classes)
    give 0.5; a zero best cost against a positive rival gives exactly 1.0.
    """
    if c_rival < c_best:
        raise ValueError(f"rival cost {c_rival} below best cost {c_best}")
    if c_best < 0:
        raise ValueError("costs must be nonnegative")
    if c_rival == 0.0:
        return 0.5
    if c_best == 0.0:
        return 1.0
    return c_rival / (c_best + c_rival)


def fit_propagate(graph: PropagationGraph) -> ForestResult:
    """Run one cost map per class and assemble labels and confidences.

    The label of each node is the argmin class of its per-class costs
    (ties broken toward the lowest class id); the rival cost is the
    best cost among the other classes. Seeds keep their given label with
    confidence 1 regardless of competing maps.
    """
    n = graph.n
    per_class = np.empty((n, graph.c))
    for k in range(graph.c):
        per_class[:, k] = per_class_cost_map(graph, k)
    label = np.argmin(per_class, axis=1)
    label[graph.seed_indices] = graph.seed_labels
    cost = per_class[np.arange(n), label]
    masked = per_class.copy()
    masked[np.arange(n), label] = np.inf
    rival_cost = masked.min(axis=1)

    conf = np.empty(n)
    for i in range(n):
        conf[i] = confidence(cost[i], rival_cost[i])
    conf[graph.seed_indices] = 1.0
    return ForestResult(
        label=label,
        cost=cost,
        rival_cost=rival_cost,
        confidence=conf,
        per_class_cost=per_class,
    )
