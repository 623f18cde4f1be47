"""Multi-cluster memory (MCM) and the single-cluster pool baseline (SCM).

The MCM keeps up to ``k_max`` clusters of up to ``capacity`` samples each.
Arriving samples join the nearest centroid when it is within ``tau`` and
otherwise open a new cluster; a full cluster evicts the member with the
highest replacement score; when a spawn would exceed ``k_max`` two clusters
are consolidated first. Retrieval draws the same number of samples from
every cluster.

Neither memory ever reads ``diag_mode`` / ``diag_class``; they ride along so
that snapshots can be scored against ground truth.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .descriptors import Descriptor, Kind, Metric, distances_to

STRATEGIES = ("acc", "gcc", "smallest", "lru")


def compute_kmax(num_classes: int) -> int:
    """Cluster budget as a function of the label-space size."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    return min(5, max(1, num_classes // 20))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class MemorySample:
    id: int
    descriptor: np.ndarray
    payload_ref: Any = None
    uncertainty: float = 0.0
    age: int = 0
    diag_mode: int = -1
    diag_class: int = -1
    kind: Kind | None = None

    def __post_init__(self):
        if isinstance(self.descriptor, Descriptor):
            self.kind = self.descriptor.kind
            self.descriptor = np.array(self.descriptor.values)
        self.descriptor = np.asarray(self.descriptor, dtype=float)
        if self.age < 0:
            raise ValueError("age must be nonnegative")
        if self.uncertainty < 0:
            raise ValueError("uncertainty must be nonnegative")


@dataclass
class Cluster:
    creation_index: int
    members: list[MemorySample]
    centroid: np.ndarray
    capacity: int

    def refresh(self):
        self.centroid = np.mean([m.descriptor for m in self.members], axis=0)

    @property
    def descriptors(self) -> np.ndarray:
        return np.array([m.descriptor for m in self.members])

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class MemoryParams:
    capacity: int = 64
    k_max: int = 5
    tau: float = 0.3
    metric: Metric = Metric()
    strategy: str = "acc"
    lambda_t: float = 1.0
    lambda_u: float = 1.0
    lambda_d: float = 1.0
    num_classes: int = 100
    kind: Kind = Kind.CHANNEL_STATS

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.capacity < 1 or self.k_max < 1:
            raise ValueError("capacity and k_max must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if min(self.lambda_t, self.lambda_u, self.lambda_d) < 0:
            raise ValueError("score weights must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.num_classes <= 1:
            raise ValueError("num_classes must exceed 1 (uncertainty is normalised by its log)")

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "k_max": self.k_max,
            "tau": self.tau,
            "metric": self.metric.name,
            "metric_eps": self.metric.eps,
            "strategy": self.strategy,
            "lambda_t": self.lambda_t,
            "lambda_u": self.lambda_u,
            "lambda_d": self.lambda_d,
            "num_classes": self.num_classes,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryParams":
        d = dict(d)
        metric = Metric(d.pop("metric", "euclidean"), eps=d.pop("metric_eps", 1e-6))
        return cls(metric=metric, **d)


@dataclass(frozen=True)
class MergeRecord:
    merged_pair: tuple[int, int]  # creation indices, earlier first
    survivors_kept: tuple[int, ...]
    dropped_ids: tuple[int, ...]
    comparisons: int


@dataclass(frozen=True)
class InsertOutcome:
    action: str  # "assigned" | "replaced" | "spawned"
    cluster: int  # position in the cluster list after the operation
    evicted_id: int | None = None
    merge: MergeRecord | None = None


def replacement_scores(ages, uncertainties, dists, capacity, params: MemoryParams) -> np.ndarray:
    """Vectorised replacement score; higher means evicted sooner."""
    ages = np.asarray(ages, dtype=float)
    return (
        params.lambda_t * _sigmoid(ages / capacity)
        + params.lambda_u * np.asarray(uncertainties, dtype=float) / math.log(params.num_classes)
        + params.lambda_d * np.asarray(dists, dtype=float)
    )


def score(sample: MemorySample, cluster: Cluster, params: MemoryParams, metric: Metric | None = None) -> float:
    metric = params.metric if metric is None else metric
    d = distances_to(cluster.centroid, sample.descriptor[None], metric)[0]
    return float(replacement_scores([sample.age], [sample.uncertainty], [d], params.capacity, params)[0])


def _merge_members(a: Cluster, b: Cluster, capacity: int) -> tuple[list[MemorySample], list[int]]:
    # origin cluster's creation index breaks uncertainty ties, then sample id
    pool = [(m.uncertainty, a.creation_index, m.id, m) for m in a.members]
    pool += [(m.uncertainty, b.creation_index, m.id, m) for m in b.members]
    pool.sort(key=lambda r: r[:3])
    kept = [r[3] for r in pool[:capacity]]
    dropped = [r[3].id for r in pool[capacity:]]
    return kept, dropped


class MultiClusterMemory:
    def __init__(self, params: MemoryParams = MemoryParams()):
        self.params = params
        self.clusters: list[Cluster] = []
        self.next_creation_index = 0
        self.last_access: dict[int, int] = {}
        self.clock = 0
        self.counters = {
            "assign_comparisons": 0,
            "consolidate_comparisons": 0,
            "merges": 0,
            "evictions": 0,
            "spawns": 0,
            "inserts": 0,
        }
        self.merge_log: list[MergeRecord] = []

    # -- views --------------------------------------------------------------

    def __len__(self):
        return sum(len(c) for c in self.clusters)

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def samples(self) -> list[MemorySample]:
        return [m for c in self.clusters for m in c.members]

    def centroids(self) -> np.ndarray:
        return np.array([c.centroid for c in self.clusters])

    def effective_metric(self) -> Metric:
        """The configured metric; Mahalanobis gets its diagonal covariance
        from the descriptors currently stored."""
        metric = self.params.metric
        if metric.name != "mahalanobis":
            return metric
        descs = [m.descriptor for m in self.samples()]
        if len(descs) == 0:
            return metric.with_cov(np.zeros(1))
        return metric.with_cov(np.var(np.array(descs), axis=0))

    # -- mutation -----------------------------------------------------------

    def insert(self, sample: MemorySample, t: int | None = None) -> InsertOutcome:
        p = self.params
        t = self.clock if t is None else t
        self.counters["inserts"] += 1
        if sample.kind is not None and Kind(sample.kind) is not p.kind:
            raise ValueError(f"sample descriptor is {Kind(sample.kind).value}, memory expects {p.kind.value}")
        if self.clusters and sample.descriptor.shape != self.clusters[0].centroid.shape:
            raise ValueError(
                f"descriptor of length {sample.descriptor.shape[0]} does not match memory "
                f"descriptors of length {self.clusters[0].centroid.shape[0]} ({p.kind.value})"
            )
        if not self.clusters:
            return self._spawn(sample, t, None)

        metric = self.effective_metric()
        if metric.name == "mahalanobis" and metric.cov.shape != sample.descriptor.shape:
            metric = metric.with_cov(np.zeros_like(sample.descriptor))
        dists = distances_to(sample.descriptor, self.centroids(), metric)
        self.counters["assign_comparisons"] += len(self.clusters)
        k = int(np.argmin(dists))

        if dists[k] > p.tau:
            if len(self.clusters) < p.k_max:
                return self._spawn(sample, t, None)
            if len(self.clusters) >= 2:
                record = self.consolidate(p.strategy)
                return self._spawn(sample, t, record)
            # k_max == 1: nothing to consolidate, the lone cluster absorbs it

        cluster = self.clusters[k]
        if len(cluster) < p.capacity:
            cluster.members.append(sample)
            cluster.refresh()
            return InsertOutcome("assigned", k)

        member_d = distances_to(cluster.centroid, cluster.descriptors, metric)
        h = replacement_scores(
            [m.age for m in cluster.members],
            [m.uncertainty for m in cluster.members],
            member_d,
            p.capacity,
            p,
        )
        j = int(np.argmax(h))  # first maximum -> lowest position
        ties = np.flatnonzero(h == h[j])
        if len(ties) > 1:
            j = min(ties, key=lambda i: cluster.members[i].id)
        evicted = cluster.members.pop(j)
        cluster.members.append(sample)
        cluster.refresh()
        self.counters["evictions"] += 1
        return InsertOutcome("replaced", k, evicted_id=evicted.id)

    def _spawn(self, sample: MemorySample, t: int, record: MergeRecord | None) -> InsertOutcome:
        c = Cluster(self.next_creation_index, [sample], sample.descriptor.copy(), self.params.capacity)
        self.last_access[c.creation_index] = t
        self.next_creation_index += 1
        self.clusters.append(c)
        self.counters["spawns"] += 1
        return InsertOutcome("spawned", len(self.clusters) - 1, merge=record)

    def select_pair(self, strategy: str) -> tuple[int, int, int]:
        """Positions ``(i, j)`` with ``i < j`` to merge, plus the number of
        centroid-distance evaluations spent choosing them."""
        n = len(self.clusters)
        if n < 2:
            raise ValueError("consolidation needs at least two clusters")
        metric = self.effective_metric()
        cents = self.centroids()
        calls = 0

        def d(i, j):
            nonlocal calls
            calls += 1
            return float(distances_to(cents[i], cents[j][None], metric)[0])

        if strategy == "acc":
            gaps = [d(i, i + 1) for i in range(n - 1)]
            i = int(np.argmin(gaps))
            return i, i + 1, calls
        if strategy == "gcc":
            best, pair = math.inf, (0, 1)
            for i in range(n):
                for j in range(i + 1, n):
                    dij = d(i, j)
                    if dij < best:
                        best, pair = dij, (i, j)
            return pair[0], pair[1], calls
        if strategy == "smallest":
            src = min(range(n), key=lambda i: (len(self.clusters[i]), i))
        elif strategy == "lru":
            src = min(range(n), key=lambda i: (self.last_access[self.clusters[i].creation_index], i))
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        others = [j for j in range(n) if j != src]
        dists = [d(src, j) for j in others]
        nb = others[int(np.argmin(dists))]
        return min(src, nb), max(src, nb), calls

    def consolidate(self, strategy: str | None = None) -> MergeRecord:
        strategy = self.params.strategy if strategy is None else strategy
        i, j, comparisons = self.select_pair(strategy)
        a, b = self.clusters[i], self.clusters[j]
        kept, dropped = _merge_members(a, b, self.params.capacity)
        merged = Cluster(a.creation_index, kept, a.centroid, self.params.capacity)
        merged.refresh()
        self.last_access[a.creation_index] = max(self.last_access[a.creation_index], self.last_access[b.creation_index])
        del self.last_access[b.creation_index]
        self.clusters[i] = merged
        del self.clusters[j]
        self.counters["consolidate_comparisons"] += comparisons
        self.counters["merges"] += 1
        record = MergeRecord(
            (a.creation_index, b.creation_index),
            tuple(m.id for m in kept),
            tuple(dropped),
            comparisons,
        )
        self.merge_log.append(record)
        return record

    def age_tick(self):
        self.clock += 1
        for c in self.clusters:
            for m in c.members:
                m.age += 1

    def retrieve(self, n_adapt: int, rng: np.random.Generator, t: int | None = None) -> list[MemorySample]:
        """Uniform cluster retrieval: ``n_adapt // K`` draws from every cluster."""
        if not self.clusters:
            raise ValueError("cannot retrieve from an empty memory")
        k = len(self.clusters)
        if n_adapt < k:
            raise ValueError(f"n_adapt={n_adapt} is smaller than the number of clusters ({k})")
        t = self.clock if t is None else t
        q = n_adapt // k
        out = []
        for c in self.clusters:
            idx = rng.choice(len(c), size=q, replace=len(c) < q)
            out.extend(c.members[i] for i in idx)
            self.last_access[c.creation_index] = t
        return out

    # -- inspection ---------------------------------------------------------

    def check_invariants(self, tol: float = 1e-9):
        p = self.params
        assert len(self.clusters) <= p.k_max, "too many clusters"
        prev = -1
        for c in self.clusters:
            assert 1 <= len(c) <= p.capacity, "cluster size out of range"
            assert c.creation_index > prev, "creation order broken"
            prev = c.creation_index
            assert np.allclose(c.centroid, c.descriptors.mean(axis=0), atol=tol, rtol=0), "stale centroid"

    def snapshot(self) -> "MemorySnapshot":
        return MemorySnapshot.from_clusters(self.params.to_dict(), self.clusters)


class SingleClusterMemory:
    """One unstructured pool; evicts by age and uncertainty only."""

    def __init__(self, capacity: int = 64, lambda_t: float = 1.0, lambda_u: float = 1.0, num_classes: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if num_classes <= 1:
            raise ValueError("num_classes must exceed 1")
        self.capacity = capacity
        self.lambda_t = lambda_t
        self.lambda_u = lambda_u
        self.num_classes = num_classes
        self.pool: list[MemorySample] = []
        self.clock = 0
        self.counters = {"evictions": 0, "inserts": 0}

    def __len__(self):
        return len(self.pool)

    def scores(self) -> np.ndarray:
        ages = np.array([m.age for m in self.pool], dtype=float)
        unc = np.array([m.uncertainty for m in self.pool], dtype=float)
        return self.lambda_t * _sigmoid(ages / self.capacity) + self.lambda_u * unc / math.log(self.num_classes)

    def insert(self, sample: MemorySample, t: int | None = None) -> InsertOutcome:
        self.counters["inserts"] += 1
        if len(self.pool) < self.capacity:
            self.pool.append(sample)
            return InsertOutcome("assigned", 0)
        h = self.scores()
        ties = np.flatnonzero(h == h.max())
        j = min(ties, key=lambda i: self.pool[i].id)
        evicted = self.pool.pop(j)
        self.pool.append(sample)
        self.counters["evictions"] += 1
        return InsertOutcome("replaced", 0, evicted_id=evicted.id)

    def age_tick(self):
        self.clock += 1
        for m in self.pool:
            m.age += 1

    def retrieve(self, n_adapt: int, rng: np.random.Generator, t: int | None = None) -> list[MemorySample]:
        if not self.pool:
            raise ValueError("cannot retrieve from an empty memory")
        idx = rng.choice(len(self.pool), size=n_adapt, replace=len(self.pool) < n_adapt)
        return [self.pool[i] for i in idx]

    def params_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "lambda_t": self.lambda_t,
            "lambda_u": self.lambda_u,
            "num_classes": self.num_classes,
        }

    def snapshot(self) -> "MemorySnapshot":
        clusters = []
        if self.pool:
            cents = np.mean([m.descriptor for m in self.pool], axis=0)
            clusters = [Cluster(0, list(self.pool), cents, self.capacity)]
        return MemorySnapshot.from_clusters(self.params_dict(), clusters)


@dataclass(frozen=True)
class MemorySnapshot:
    """Immutable, array-backed copy of a memory's contents.

    Rows are ordered by cluster creation index, then sample id.
    """

    params: dict
    cluster_ids: np.ndarray
    ids: np.ndarray
    descriptors: np.ndarray
    uncertainties: np.ndarray
    ages: np.ndarray
    diag_modes: np.ndarray
    diag_classes: np.ndarray
    centroids: dict = field(default_factory=dict)

    @classmethod
    def from_clusters(cls, params: dict, clusters: list[Cluster]) -> "MemorySnapshot":
        rows = []
        for c in sorted(clusters, key=lambda c: c.creation_index):
            for m in sorted(c.members, key=lambda m: m.id):
                rows.append((c.creation_index, m))
        dim = clusters[0].centroid.shape[0] if clusters else 0
        arrays = dict(
            cluster_ids=np.array([r[0] for r in rows], dtype=int),
            ids=np.array([r[1].id for r in rows], dtype=int),
            descriptors=np.array([r[1].descriptor for r in rows], dtype=float).reshape(len(rows), dim),
            uncertainties=np.array([r[1].uncertainty for r in rows], dtype=float),
            ages=np.array([r[1].age for r in rows], dtype=int),
            diag_modes=np.array([r[1].diag_mode for r in rows], dtype=int),
            diag_classes=np.array([r[1].diag_class for r in rows], dtype=int),
        )
        for a in arrays.values():
            a.setflags(write=False)
        cents = {c.creation_index: tuple(float(v) for v in c.centroid) for c in clusters}
        return cls(copy.deepcopy(params), centroids=cents, **arrays)

    def __len__(self):
        return len(self.ids)

    def to_dict(self) -> dict:
        clusters = []
        for ci in sorted(self.centroids):
            rows = np.flatnonzero(self.cluster_ids == ci)
            clusters.append(
                {
                    "creation_index": int(ci),
                    "centroid": list(self.centroids[ci]),
                    "members": [
                        {
                            "id": int(self.ids[r]),
                            "descriptor": [float(v) for v in self.descriptors[r]],
                            "uncertainty": float(self.uncertainties[r]),
                            "age": int(self.ages[r]),
                            "diag_mode": int(self.diag_modes[r]),
                            "diag_class": int(self.diag_classes[r]),
                        }
                        for r in rows
                    ],
                }
            )
        return {"params": self.params, "clusters": clusters}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "MemorySnapshot":
        clusters = []
        for c in d["clusters"]:
            members = [
                MemorySample(
                    m["id"], np.array(m["descriptor"]), None, m["uncertainty"], m["age"], m["diag_mode"], m["diag_class"]
                )
                for m in c["members"]
            ]
            clusters.append(Cluster(c["creation_index"], members, np.array(c["centroid"]), len(members)))
        return cls.from_clusters(d["params"], clusters)

    @classmethod
    def from_json(cls, text: str) -> "MemorySnapshot":
        return cls.from_dict(json.loads(text))
