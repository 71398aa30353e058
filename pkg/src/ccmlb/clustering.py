"""Migration clusters: groups of co-resident tasks that move as a unit.

Tasks that read the same shared block, or that exchange heavy
communication, are expensive to split across ranks (the block gets
replicated; the edges go off-rank). Each rank therefore partitions its
resident tasks into clusters and ships per-cluster summaries during the
inform stage, and transfers always move whole clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

from .assignment import Assignment
from .errors import PreconditionError
from .phase import PhaseSpec


@dataclass(frozen=True)
class Cluster:
    """One migration unit plus the summary fields shipped to peers.

    `id` is the smallest member task id, which makes ids stable across
    rebuilds of an unchanged partition. `intra_volume` counts edges with
    both endpoints inside the cluster; `inter_volume` those with exactly
    one endpoint inside (whether the far endpoint is on the same rank or
    not).
    """

    id: int
    rank: int
    tasks: frozenset[int]
    load: float
    shared_sizes: tuple[tuple[int, int], ...]  # (block id, bytes), sorted
    intra_volume: float
    inter_volume: float
    base_footprint: int

    def block_ids(self) -> frozenset[int]:
        return frozenset(b for b, _ in self.shared_sizes)


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def summarize_cluster(spec: PhaseSpec, assignment: Assignment, cluster: Cluster) -> Cluster:
    """Recompute a cluster's summary fields from the current assignment.

    Raises if the cluster is stale (a member task no longer resides on the
    cluster's rank) or empty.
    """
    if not cluster.tasks:
        raise PreconditionError("cannot summarize an empty cluster")
    for t in cluster.tasks:
        if assignment.rank_of_task[t] != cluster.rank:
            raise PreconditionError(
                f"stale cluster: task {t} moved off rank {cluster.rank}"
            )
    return _summarize(spec, cluster.rank, cluster.tasks)


def _summarize(spec: PhaseSpec, rank: int, tasks: frozenset[int]) -> Cluster:
    load = 0.0
    base = 0
    blocks: set[int] = set()
    for t_id in tasks:
        t = spec.tasks[t_id]
        load += t.load
        base += t.base_mem
        if t.block is not None:
            blocks.add(t.block)
    intra = 0.0
    inter = 0.0
    seen: set[int] = set()
    for t_id in tasks:
        for c_id in spec.task_comms[t_id]:
            if c_id in seen:
                continue
            seen.add(c_id)
            c = spec.comms[c_id]
            if c.src in tasks and c.dst in tasks:
                intra += c.volume
            else:
                inter += c.volume
    return Cluster(
        id=min(tasks),
        rank=rank,
        tasks=tasks,
        load=load,
        shared_sizes=tuple(sorted((b, spec.blocks[b].size) for b in blocks)),
        intra_volume=intra,
        inter_volume=inter,
        base_footprint=base,
    )


def build_clusters(
    spec: PhaseSpec,
    assignment: Assignment,
    rank: int,
    comm_threshold: float = 0.0,
) -> list[Cluster]:
    """Partition a rank's resident tasks into migration clusters.

    Tasks sharing a block always land in one cluster; clusters are then
    merged transitively along co-resident communication edges whose volume
    is positive and at least `comm_threshold`. Remaining tasks become
    singletons. Output is ordered by smallest contained task id.
    """
    resident = sorted(assignment.tasks_of_rank[rank])
    if not resident:
        return []
    uf = _UnionFind(resident)
    by_block: dict[int, int] = {}
    for t_id in resident:
        b = spec.tasks[t_id].block
        if b is None:
            continue
        if b in by_block:
            uf.union(by_block[b], t_id)
        else:
            by_block[b] = t_id
    resident_set = set(resident)
    for c in spec.comms:
        if c.volume <= 0 or c.volume < comm_threshold:
            continue
        if c.src in resident_set and c.dst in resident_set and c.src != c.dst:
            uf.union(c.src, c.dst)
    groups: dict[int, set[int]] = {}
    for t_id in resident:
        groups.setdefault(uf.find(t_id), set()).add(t_id)
    return [
        _summarize(spec, rank, frozenset(groups[root]))
        for root in sorted(groups)
    ]
