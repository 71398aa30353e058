from __future__ import annotations

import pytest

from ccmlb.assignment import Assignment
from ccmlb.clustering import build_clusters, summarize_cluster
from ccmlb.errors import PreconditionError
from ccmlb.synth import random_phase

from conftest import make_phase


def _components_oracle(spec, assignment, rank, threshold):
    """Independent partition: BFS over shares-block-or-heavy-edge."""
    resident = sorted(assignment.tasks_of_rank[rank])
    adj = {t: set() for t in resident}
    by_block = {}
    for t in resident:
        b = spec.tasks[t].block
        if b is not None:
            by_block.setdefault(b, []).append(t)
    for members in by_block.values():
        for a, b in zip(members, members[1:]):
            adj[a].add(b)
            adj[b].add(a)
    resident_set = set(resident)
    for c in spec.comms:
        if (c.volume > 0 and c.volume >= threshold and c.src != c.dst
                and c.src in resident_set and c.dst in resident_set):
            adj[c.src].add(c.dst)
            adj[c.dst].add(c.src)
    seen = set()
    comps = []
    for start in resident:
        if start in seen:
            continue
        comp = set()
        frontier = [start]
        while frontier:
            t = frontier.pop()
            if t in comp:
                continue
            comp.add(t)
            frontier.extend(adj[t] - comp)
        seen |= comp
        comps.append(frozenset(comp))
    return sorted(comps, key=min)


def test_worked_example_partitions(tiny_comcp):
    a = Assignment(tiny_comcp)
    r0 = build_clusters(tiny_comcp, a, 0)
    r1 = build_clusters(tiny_comcp, a, 1)
    assert [c.tasks for c in r0] == [frozenset({0, 1})]
    assert [c.tasks for c in r1] == [frozenset({2})]
    assert r0[0].load == 3.0
    assert r0[0].shared_sizes == ((0, 100),)
    assert r0[0].base_footprint == 30


def test_no_blocks_no_heavy_edges_gives_singletons():
    spec = make_phase(loads=[1, 1, 1], comms=[(0, 1, 5)], initial=[0, 0, 0])
    a = Assignment(spec)
    clusters = build_clusters(spec, a, 0, comm_threshold=10.0)
    assert [c.tasks for c in clusters] == [frozenset({0}), frozenset({1}),
                                           frozenset({2})]


def test_heavy_edge_merges():
    spec = make_phase(loads=[1, 1, 1], comms=[(0, 1, 50)], initial=[0, 0, 0])
    a = Assignment(spec)
    clusters = build_clusters(spec, a, 0, comm_threshold=10.0)
    assert [c.tasks for c in clusters] == [frozenset({0, 1}), frozenset({2})]


def test_zero_volume_edge_never_merges():
    spec = make_phase(loads=[1, 1], comms=[(0, 1, 0.0)], initial=[0, 0])
    a = Assignment(spec)
    clusters = build_clusters(spec, a, 0, comm_threshold=0.0)
    assert len(clusters) == 2


def test_matches_union_find_oracle():
    for seed in range(15):
        spec = random_phase(seed, rank_count=3, task_count=18, block_count=3,
                            comm_count=20)
        a = Assignment(spec)
        for r in range(3):
            got = [c.tasks for c in build_clusters(spec, a, r, comm_threshold=1e5)]
            assert got == _components_oracle(spec, a, r, 1e5)


def test_partition_covers_rank_disjointly():
    for seed in range(10):
        spec = random_phase(seed + 50, rank_count=4, task_count=20, block_count=4,
                            comm_count=15)
        a = Assignment(spec)
        for r in range(4):
            clusters = build_clusters(spec, a, r)
            union = set()
            for c in clusters:
                assert c.tasks, "no empty clusters"
                assert not (union & c.tasks), "clusters overlap"
                union |= c.tasks
            assert union == a.tasks_of_rank[r]


def test_deterministic_ids_and_order():
    spec = random_phase(77, rank_count=3, task_count=15, block_count=3,
                        comm_count=12)
    a = Assignment(spec)
    first = build_clusters(spec, a, 0)
    second = build_clusters(spec, a, 0)
    assert first == second
    assert [c.id for c in first] == sorted(c.id for c in first)
    for c in first:
        assert c.id == min(c.tasks)


def test_split_cost_exceeds_joint_shared_memory():
    # two users of one positive-size block: replicating it on two ranks
    # always costs more shared memory than keeping them together
    spec = make_phase(loads=[1, 1], blocks=[(64, 0)], task_blocks=[0, 0],
                      initial=[0, 0])
    together = Assignment(spec)
    split = Assignment(spec, [0, 1])
    joint = sum(together.memory(r)[1] for r in range(2))
    apart = sum(split.memory(r)[1] for r in range(2))
    assert apart > joint


class TestSummarize:
    def test_singleton_self_edge(self):
        spec = make_phase(loads=[1.0], comms=[(0, 0, 5)], initial=[0])
        a = Assignment(spec)
        (cluster,) = build_clusters(spec, a, 0)
        assert cluster.intra_volume == 5.0
        assert cluster.inter_volume == 0.0

    def test_whole_rank_cluster_inter_equals_cross_rank_bytes(self):
        for seed in range(8):
            spec = random_phase(seed, rank_count=3, task_count=12, block_count=1,
                                comm_count=16, blocked_fraction=1.0)
            a = Assignment(spec)
            for r in range(3):
                clusters = build_clusters(spec, a, r, comm_threshold=0.0)
                if len(clusters) != 1:
                    continue
                resident = a.tasks_of_rank[r]
                cross = sum(
                    c.volume for c in spec.comms
                    if (c.src in resident) != (c.dst in resident)
                )
                assert clusters[0].inter_volume == pytest.approx(cross)

    def test_stale_cluster_rejected(self, tiny_comcp):
        a = Assignment(tiny_comcp)
        (cluster,) = build_clusters(tiny_comcp, a, 1)
        a.apply_transfer([2], 1, 0)
        with pytest.raises(PreconditionError, match="stale"):
            summarize_cluster(tiny_comcp, a, cluster)

    def test_refresh_recomputes_summary(self, tiny_fwmp):
        a = Assignment(tiny_fwmp)
        (cluster,) = build_clusters(tiny_fwmp, a, 1)
        again = summarize_cluster(tiny_fwmp, a, cluster)
        assert again == cluster
