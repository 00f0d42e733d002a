"""Closest-angle graph and indegree-ordered proxy clustering.

Each neuron points at the peer its weight vector makes the smallest angle
with. Proxies are picked by descending indegree; a proxy's current
in-neighbors become its cluster members and leave the graph. Ties (equal
angles, equal indegrees) always break toward the lower original index so
plans are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import pairwise_angles


@dataclass(frozen=True)
class AngleGraph:
    """Directed closest-neighbor graph over a layer's neurons.

    target[i] is the minimum-angle peer of neuron i (-1 for excluded
    zero-norm neurons), angle[i] the angle to it in degrees, indegree[i]
    the number of neurons pointing at i.
    """

    target: np.ndarray
    angle: np.ndarray
    indegree: np.ndarray
    excluded: tuple = ()

    @property
    def num_nodes(self) -> int:
        return int(self.target.shape[0])


@dataclass(frozen=True)
class ClusterPlan:
    """Per-layer partition into proxies, their members, and singletons.

    proxies: original neuron indices, in selection order.
    members: one tuple of original indices per proxy (may be empty).
    Singletons are exactly the proxies with no members; every neuron of
    the layer appears exactly once across the plan.
    """

    proxies: tuple
    members: tuple

    def __post_init__(self):
        if len(self.proxies) != len(self.members):
            raise ValueError("one member tuple required per proxy")

    @property
    def singletons(self) -> tuple:
        return tuple(p for p, m in zip(self.proxies, self.members) if not m)

    @property
    def cluster_sizes(self) -> tuple:
        return tuple(len(m) for m in self.members)

    def member_count(self) -> int:
        return sum(len(m) for m in self.members)

    def covered(self) -> set:
        out = set(self.proxies)
        for m in self.members:
            out.update(m)
        return out

    @staticmethod
    def all_singletons(n: int) -> "ClusterPlan":
        return ClusterPlan(tuple(range(n)), tuple(() for _ in range(n)))


def build_angle_graph(weights) -> AngleGraph:
    """Link every neuron to its minimum-angle peer (ties to the lower index).

    Zero-norm weight rows are excluded from the graph and later become
    singleton proxies. With fewer than 2 valid neurons the graph is empty
    (all targets -1).
    """
    w = np.asarray(weights)
    n = w.shape[0]
    ang = pairwise_angles(w)
    norms = np.linalg.norm(w.astype(np.float64), axis=1)
    valid = norms > 0.0

    target = np.full(n, -1, dtype=np.int64)
    angle = np.full(n, np.nan)
    if int(valid.sum()) >= 2:
        work = ang.copy()
        np.fill_diagonal(work, np.inf)
        work[:, ~valid] = np.inf
        for i in range(n):
            if not valid[i]:
                continue
            j = int(np.argmin(work[i]))  # argmin returns the first (lowest) index on ties
            target[i] = j
            angle[i] = work[i, j]
    indegree = np.bincount(target[target >= 0], minlength=n).astype(np.int64)
    excluded = tuple(int(i) for i in np.flatnonzero(~valid))
    return AngleGraph(target, angle, indegree, excluded)


def build_clusters(graph: AngleGraph, max_angle: float | None = None) -> ClusterPlan:
    """Iteratively pick the remaining highest-indegree node as proxy.

    The proxy's current in-neighbors become its members and leave the
    graph with it; indegrees update as edges disappear. Nodes whose
    closest angle exceeds max_angle (when set) are never taken as members.
    Excluded (zero-norm) nodes come out as singleton proxies.
    """
    n = graph.num_nodes
    alive = np.ones(n, dtype=bool)
    alive[list(graph.excluded)] = False
    indeg = np.zeros(n, dtype=np.int64)
    in_neighbors = [[] for _ in range(n)]
    for i in range(n):
        t = int(graph.target[i])
        if t >= 0:
            in_neighbors[t].append(i)
            indeg[t] += 1

    proxies = []
    members = []
    while alive.any():
        live = np.flatnonzero(alive)
        pick = int(live[np.argmax(indeg[live])])  # argmax returns the first max: lower index wins ties
        alive[pick] = False
        mem = []
        for i in in_neighbors[pick]:
            if not alive[i]:
                continue
            if max_angle is not None and graph.angle[i] > max_angle:
                continue
            mem.append(i)
            alive[i] = False
        # Edges out of removed nodes vanish; discount the indegree of their targets.
        for gone in [pick] + mem:
            t = int(graph.target[gone])
            if t >= 0 and alive[t]:
                indeg[t] -= 1
        proxies.append(pick)
        members.append(tuple(mem))
    for i in graph.excluded:
        proxies.append(int(i))
        members.append(())
    return ClusterPlan(tuple(proxies), tuple(members))


def cluster_layer(weights, max_angle: float | None = None) -> ClusterPlan:
    """Convenience: angle graph + clustering for one layer's weight rows."""
    w = np.asarray(weights)
    if w.shape[0] < 2:
        return ClusterPlan.all_singletons(w.shape[0])
    return build_clusters(build_angle_graph(w), max_angle)


def closest_angle_histogram(graph: AngleGraph, bin_width: float = 10.0):
    """Histogram of closest-neighbor angles, one layer at a time."""
    angles = graph.angle[~np.isnan(graph.angle)]
    edges = np.arange(0.0, 180.0 + bin_width, bin_width)
    counts, _ = np.histogram(angles, bins=edges)
    return edges, counts
