import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcm.descriptors import Kind, Metric
from mcm.memory import (
    MemoryParams,
    MemorySample,
    MemorySnapshot,
    MultiClusterMemory,
    SingleClusterMemory,
    compute_kmax,
    replacement_scores,
)
from oracles import brute_evictee, brute_merge_kept, brute_pair, centroid


def sample(i, desc, u=0.0, age=0):
    return MemorySample(i, np.asarray(desc, dtype=float), None, u, age)


def test_kmax_rule():
    assert [compute_kmax(n) for n in (1, 10, 20, 45, 100, 1000)] == [1, 1, 1, 2, 5, 5]
    with pytest.raises(ValueError):
        compute_kmax(0)


def test_score_frozen_value():
    # sigmoid(32/64) + 2.3/ln(100) + 0.5, evaluated at 30 digits with mpmath
    h = replacement_scores([32], [2.3], [0.5], 64, MemoryParams())[0]
    assert h == pytest.approx(1.6218979853905941664, abs=1e-12)


def test_assign_spawn_and_replace():
    mem = MultiClusterMemory(MemoryParams(capacity=2, k_max=3, tau=0.3))
    assert mem.insert(sample(0, [0.0, 0.0])).action == "spawned"
    assert mem.insert(sample(1, [0.1, 0.0])).action == "assigned"
    assert mem.insert(sample(2, [1.0, 1.0])).action == "spawned"
    out = mem.insert(sample(3, [0.0, 0.1], u=0.0))
    assert out.action == "replaced" and out.cluster == 0
    assert len(mem.clusters[0]) == 2 and mem.num_clusters == 2
    mem.check_invariants()


def test_spawn_beyond_kmax_consolidates_first():
    mem = MultiClusterMemory(MemoryParams(capacity=4, k_max=2, tau=0.1))
    mem.insert(sample(0, [0.0]))
    mem.insert(sample(1, [0.5]))
    out = mem.insert(sample(2, [5.0]))
    assert out.action == "spawned" and out.merge is not None
    assert out.merge.merged_pair == (0, 1)
    assert [c.creation_index for c in mem.clusters] == [0, 2]
    assert mem.clusters[0].centroid == pytest.approx([0.25])


def test_single_cluster_budget_absorbs_outliers():
    mem = MultiClusterMemory(MemoryParams(capacity=3, k_max=1, tau=0.1))
    for i, x in enumerate([0.0, 9.0, -9.0, 4.0]):
        mem.insert(sample(i, [x]))
    assert mem.num_clusters == 1 and len(mem) == 3
    assert mem.counters["merges"] == 0


def test_newcomer_always_enters_full_cluster():
    mem = MultiClusterMemory(MemoryParams(capacity=3, k_max=1, tau=10.0))
    for i in range(3):
        mem.insert(sample(i, [0.0], u=0.0))
    mem.insert(sample(99, [0.0], u=4.6))  # worst possible score, still admitted
    assert 99 in [m.id for m in mem.samples()]


def test_eviction_tie_goes_to_smallest_id():
    mem = MultiClusterMemory(MemoryParams(capacity=3, k_max=1, tau=10.0))
    for i in (5, 2, 7):
        mem.insert(sample(i, [0.0]))
    assert mem.insert(sample(8, [0.0])).evicted_id == 2


@pytest.mark.parametrize("strategy", ["acc", "gcc"])
def test_consolidation_pair_matches_oracle(strategy):
    rng = np.random.default_rng(3)
    for trial in range(50):
        k = int(rng.integers(2, 8))
        mem = MultiClusterMemory(MemoryParams(capacity=4, k_max=k, tau=1e-9, strategy=strategy))
        for i in range(k):
            mem.insert(sample(i, rng.random(3)))
        (i, j), cost = brute_pair([c.centroid for c in mem.clusters], strategy)
        assert mem.select_pair(strategy) == (i, j, cost)


@pytest.mark.parametrize("strategy", ["smallest", "lru"])
def test_other_strategies_cost_linear(strategy):
    mem = MultiClusterMemory(MemoryParams(capacity=4, k_max=5, tau=1e-9, strategy=strategy))
    for i in range(5):
        mem.insert(sample(i, [float(i)]), t=i)
    mem.insert(sample(10, [4.0]), t=10)  # cluster 4 grows and is touched last
    i, j, cost = mem.select_pair(strategy)
    assert cost == 4 and (i, j) == (0, 1)


def test_uniform_retrieval_counts():
    mem = MultiClusterMemory(MemoryParams(capacity=8, k_max=3, tau=0.5))
    for i, x in enumerate([0, 0.1, 5, 10, 10.1, 10.2]):
        mem.insert(sample(i, [x]))
    got = mem.retrieve(64, np.random.default_rng(0))
    by_cluster = [sum(1 for s in got if s in c.members) for c in mem.clusters]
    assert by_cluster == [21, 21, 21]
    with pytest.raises(ValueError):
        mem.retrieve(2, np.random.default_rng(0))


def test_descriptor_mismatch_rejected():
    mem = MultiClusterMemory()
    mem.insert(sample(0, np.zeros(6)))
    with pytest.raises(ValueError):
        mem.insert(sample(1, np.zeros(16)))
    with pytest.raises(ValueError):
        mem.insert(MemorySample(2, np.zeros(6), kind=Kind.SPATIAL_MEAN))


def test_params_validation_and_round_trip():
    with pytest.raises(ValueError):
        MemoryParams(tau=0)
    with pytest.raises(ValueError):
        MemoryParams(strategy="random")
    p = MemoryParams(k_max=3, metric=Metric("manhattan"), kind="spatial_mean")
    assert MemoryParams.from_dict(p.to_dict()) == p


def test_scm_evicts_by_age_and_uncertainty_only():
    scm = SingleClusterMemory(capacity=3, num_classes=100)
    scm.insert(sample(0, [0.0], u=1.0))
    scm.insert(sample(1, [100.0], u=0.0))  # far away but certain
    scm.insert(sample(2, [0.0], u=2.0))
    assert scm.insert(sample(3, [0.0])).evicted_id == 2


def test_mahalanobis_memory_runs():
    rng = np.random.default_rng(0)
    mem = MultiClusterMemory(MemoryParams(capacity=8, k_max=3, tau=2.0, metric=Metric("mahalanobis")))
    for i in range(100):
        mem.insert(sample(i, rng.random(4) * (1 + 3 * (i % 2))))
    mem.check_invariants()


# -- property tests ---------------------------------------------------------

events = st.lists(
    st.tuples(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=2),
        st.floats(0, math.log(100), allow_nan=False),
        st.booleans(),
    ),
    min_size=1,
    max_size=120,
)


@settings(max_examples=60, deadline=None)
@given(events, st.integers(1, 5), st.integers(1, 6), st.floats(0.05, 0.8), st.sampled_from(["acc", "gcc", "smallest", "lru"]))
def test_invariants_hold_under_any_stream(evs, k_max, capacity, tau, strategy):
    mem = MultiClusterMemory(MemoryParams(capacity=capacity, k_max=k_max, tau=tau, strategy=strategy))
    for i, (d, u, tick) in enumerate(evs):
        mem.insert(sample(i, d, u))
        if tick:
            mem.age_tick()
        mem.check_invariants()
        assert len(mem) <= k_max * capacity
    assert mem.counters["inserts"] == len(evs)
    assert mem.counters["spawns"] - mem.counters["merges"] == mem.num_clusters


@settings(max_examples=60, deadline=None)
@given(events, st.integers(1, 6))
def test_eviction_matches_oracle(evs, capacity):
    mem = MultiClusterMemory(MemoryParams(capacity=capacity, k_max=1, tau=10.0))
    for i, (d, u, tick) in enumerate(evs):
        members = list(mem.clusters[0].members) if mem.clusters else []
        out = mem.insert(sample(i, d, u))
        if out.action == "replaced":
            assert out.evicted_id == brute_evictee(members, capacity, 100)
        if tick:
            mem.age_tick()


@settings(max_examples=60, deadline=None)
@given(events, events, st.integers(1, 5))
def test_merge_keeps_lowest_uncertainty(ev_a, ev_b, capacity):
    mem = MultiClusterMemory(MemoryParams(capacity=capacity, k_max=2, tau=1e-9))
    a = [sample(i, [0.0, 0.0], u) for i, (_, u, _) in enumerate(ev_a[:capacity])]
    b = [sample(100 + i, [1.0, 1.0], u) for i, (_, u, _) in enumerate(ev_b[:capacity])]
    for s in a + b:
        mem.insert(s)
    # both clusters are live with exactly these members
    assert [len(c) for c in mem.clusters] == [len(a), len(b)]
    want = brute_merge_kept(a, 0, b, 1, capacity)
    rec = mem.consolidate()
    assert set(rec.survivors_kept) == want
    assert np.allclose(mem.clusters[0].centroid, centroid(mem.clusters[0].members))


def test_snapshot_round_trip_and_read_only():
    rng = np.random.default_rng(1)
    mem = MultiClusterMemory(MemoryParams(capacity=5, k_max=3, tau=0.3))
    for i in range(40):
        mem.insert(MemorySample(i, rng.random(2), None, float(rng.random()), int(i % 3), i % 4, i % 7))
    snap = mem.snapshot()
    back = MemorySnapshot.from_json(snap.to_json())
    assert np.array_equal(back.ids, snap.ids)
    assert np.allclose(back.descriptors, snap.descriptors)
    assert back.centroids == snap.centroids
    with pytest.raises(ValueError):
        snap.descriptors[0, 0] = 1.0


def test_score_at_full_age():
    # age = N, half-maximal uncertainty, distance 0.2: 1/(1+e^-1) + 0.5 + 0.2 (mpmath, 30 digits)
    h = replacement_scores([64], [math.log(100) / 2], [0.2], 64, MemoryParams())[0]
    assert h == pytest.approx(1.4310585786300048793, abs=1e-12)
    assert round(h, 4) == 1.4311


def test_acc_and_gcc_pick_different_pairs():
    # on a line: gaps 0-1 = 0.35 and 1-2 = 0.25, but 0-2 = 0.1 is the closest pair
    for strategy, want in (("acc", (1, 2)), ("gcc", (0, 2))):
        mem = MultiClusterMemory(MemoryParams(capacity=2, k_max=3, tau=0.05, strategy=strategy))
        for i, x in enumerate([0.0, 0.35, 0.1]):
            mem.insert(sample(i, [x]))
        i, j, _ = mem.select_pair(strategy)
        assert (i, j) == want
        rec = mem.consolidate()
        assert rec.merged_pair == want  # merged cluster keeps the earlier creation index
        assert [c.creation_index for c in mem.clusters] == [k for k in range(3) if k != want[1]]


@settings(max_examples=60, deadline=None)
@given(events, st.floats(0.05, 0.8))
def test_assignment_goes_to_nearest_centroid(evs, tau):
    mem = MultiClusterMemory(MemoryParams(capacity=4, k_max=4, tau=tau))
    for i, (d, u, _) in enumerate(evs):
        before = [list(c.centroid) for c in mem.clusters]
        out = mem.insert(sample(i, d, u))
        if out.action in ("assigned", "replaced"):
            dists = [math.dist(d, c) for c in before]
            assert dists[out.cluster] <= min(dists) + 1e-12


@settings(max_examples=60, deadline=None)
@given(events, st.integers(1, 8))
def test_scm_eviction_matches_oracle(evs, capacity):
    scm = SingleClusterMemory(capacity=capacity)
    for i, (d, u, tick) in enumerate(evs):
        pool = list(scm.pool)
        out = scm.insert(sample(i, d, u))
        if out.action == "replaced":
            best = max(pool, key=lambda m: (1 / (1 + math.exp(-m.age / capacity)) + m.uncertainty / math.log(100), -m.id))
            assert out.evicted_id == best.id
        assert len(scm) <= capacity
        if tick:
            scm.age_tick()


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_uniform_retrieval_any_k(k):
    mem = MultiClusterMemory(MemoryParams(capacity=3, k_max=5, tau=0.5))
    for i in range(k):
        mem.insert(sample(i, [float(i)]))
    got = mem.retrieve(64, np.random.default_rng(k))
    counts = [sum(1 for s in got if s in c.members) for c in mem.clusters]
    assert counts == [64 // k] * k  # single-member clusters are drawn with replacement
