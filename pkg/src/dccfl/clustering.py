"""Client clustering from label distributions.

Inter-client distance is the total variation distance between empirical
label distributions; clients are grouped by agglomerative clustering
with complete linkage, cut at a threshold so every cluster's diameter
(largest internal pairwise distance) stays below that threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LabelDistribution",
    "DistanceMatrix",
    "ClusterPartition",
    "label_distribution",
    "tv_distance",
    "build_distance_matrix",
    "complete_linkage_clusters",
]


@dataclass(frozen=True)
class LabelDistribution:
    """Empirical class frequencies of one client's labels."""

    probs: np.ndarray
    support_count: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1:
            raise ValueError("probs must be a vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise TV distances with zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", d)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(d, d.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0.0):
            raise ValueError("distance matrix diagonal must be zero")
        if np.any(d < 0.0) or np.any(d > 1.0):
            raise ValueError("TV distances must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint client groups plus the merge history that produced them.

    ``merge_log`` holds ``(left_members, right_members, distance)`` for
    every accepted merge, in order; accepted distances never exceed the
    threshold.
    """

    clusters: tuple[tuple[int, ...], ...]
    threshold: float
    merge_log: tuple[tuple[tuple[int, ...], tuple[int, ...], float], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for cluster in self.clusters:
            members = set(cluster)
            if len(members) != len(cluster) or members & seen:
                raise ValueError("clusters must be disjoint")
            seen |= members
        for _, _, dist in self.merge_log:
            if dist > self.threshold:
                raise ValueError("accepted merge distance exceeds threshold")

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "clusters": [list(c) for c in self.clusters],
            "merge_log": [
                {"left": list(l), "right": list(r), "distance": d} for l, r, d in self.merge_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: dict) -> "ClusterPartition":
        return cls(
            clusters=tuple(tuple(c) for c in payload["clusters"]),
            threshold=payload["threshold"],
            merge_log=tuple(
                (tuple(m["left"]), tuple(m["right"]), m["distance"]) for m in payload["merge_log"]
            ),
        )


def label_distribution(labels, num_classes: int) -> LabelDistribution:
    """Empirical distribution of integer labels over ``num_classes`` bins."""
    labs = np.asarray(labels, dtype=np.int64).ravel()
    if labs.size == 0:
        raise ValueError("labels must be nonempty")
    if labs.min() < 0 or labs.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labs, minlength=num_classes)
    return LabelDistribution(probs=counts / labs.size, support_count=int(labs.size))


def tv_distance(p: LabelDistribution, q: LabelDistribution) -> float:
    """Total variation distance: half the L1 distance between the pmfs."""
    if p.num_classes != q.num_classes:
        raise ValueError("distributions must share the class count")
    return min(1.0, 0.5 * float(np.abs(p.probs - q.probs).sum()))


def build_distance_matrix(dists: list[LabelDistribution]) -> DistanceMatrix:
    """Pairwise TV distances between client label distributions."""
    if len(dists) == 0:
        raise ValueError("need at least one distribution")
    k = dists[0].num_classes
    if any(d.num_classes != k for d in dists):
        raise ValueError("all distributions must share the class count")
    pmf = np.stack([d.probs for d in dists])
    values = 0.5 * np.abs(pmf[:, None, :] - pmf[None, :, :]).sum(axis=2)
    values = np.minimum(values, 1.0)
    np.fill_diagonal(values, 0.0)
    values = np.maximum(values, values.T)  # exact symmetry
    return DistanceMatrix(values=values)


def complete_linkage_clusters(d: DistanceMatrix, t: float) -> ClusterPartition:
    """Agglomerate with complete (farthest-point) linkage, merging while the
    closest cluster pair is within ``t`` (inclusive).

    Under complete linkage the inter-cluster distance after a merge obeys
    ``d(a+b, x) = max(d(a,x), d(b,x))``, so every output cluster has
    diameter <= t.  Ties are broken toward the pair whose combined member
    set has the lexicographically smallest (min id, max id).
    """
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    n = d.n
    members: list[tuple[int, ...] | None] = [(i,) for i in range(n)]
    link = d.values.copy()
    np.fill_diagonal(link, np.inf)
    merge_log: list[tuple[tuple[int, ...], tuple[int, ...], float]] = []

    for _ in range(n - 1):
        dist = link.min()
        if not np.isfinite(dist) or dist > t:
            break
        # candidates at the exact minimum; break ties toward the pair whose
        # combined member set has the smallest (min id, max id)
        rows, cols = np.nonzero(link == dist)
        a = b = -1
        best_key = None
        for i, j in zip(rows, cols):
            if i >= j:
                continue
            key = (min(members[i][0], members[j][0]), max(members[i][-1], members[j][-1]))
            if best_key is None or key < best_key:
                best_key, a, b = key, int(i), int(j)
        left, right = members[a], members[b]
        if left[0] > right[0]:
            left, right = right, left
        merge_log.append((left, right, float(dist)))
        members[a] = tuple(sorted(left + right))
        members[b] = None
        merged_row = np.maximum(link[a], link[b])
        link[a], link[:, a] = merged_row, merged_row
        link[a, a] = np.inf
        link[b], link[:, b] = np.inf, np.inf

    clusters = tuple(sorted((c for c in members if c is not None), key=lambda c: c[0]))
    return ClusterPartition(clusters=clusters, threshold=float(t), merge_log=tuple(merge_log))
