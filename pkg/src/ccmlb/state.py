"""Live balancer state: assignment, clusters, and per-rank info versions."""

from __future__ import annotations

from .assignment import Assignment
from .clustering import build_clusters
from .gossip import RankInfo
from .phase import PhaseSpec, WorkCoefficients


class BalancerState:
    """Single-writer state shared by the inform and transfer stages.

    Keeps the mutable assignment, the current per-rank cluster partitions,
    and a version counter per rank that advances whenever that rank's task
    set changes (or when an authoritative refresh is requested).
    """

    def __init__(self, spec: PhaseSpec, coeffs: WorkCoefficients,
                 comm_threshold: float = 0.0,
                 assignment: Assignment | None = None):
        self.spec = spec
        self.coeffs = coeffs
        self.comm_threshold = comm_threshold
        self.assignment = assignment if assignment is not None else Assignment(spec)
        self.versions = [0] * spec.rank_count
        self.clusters = [
            tuple(build_clusters(spec, self.assignment, r, comm_threshold))
            for r in range(spec.rank_count)
        ]

    @property
    def rank_count(self) -> int:
        return self.spec.rank_count

    def rebuild_clusters(self, *ranks: int) -> None:
        targets = ranks if ranks else range(self.spec.rank_count)
        for r in targets:
            self.clusters[r] = tuple(
                build_clusters(self.spec, self.assignment, r, self.comm_threshold)
            )

    def bump_version(self, rank: int) -> int:
        self.versions[rank] += 1
        return self.versions[rank]

    def current_info(self, rank: int) -> RankInfo:
        on, off = self.assignment.volumes(rank)
        return RankInfo(
            rank=rank,
            load=self.assignment.load(rank),
            on_volume=on,
            off_volume=off,
            homing=self.assignment.homing(rank),
            base_mem=self.spec.rank_base_mem[rank],
            clusters=self.clusters[rank],
            version=self.versions[rank],
        )

    def transfer(self, task_ids, from_rank: int, to_rank: int) -> None:
        """Move tasks and keep clusters/versions coherent on both ranks."""
        self.assignment.apply_transfer(task_ids, from_rank, to_rank)
        self.bump_version(from_rank)
        self.bump_version(to_rank)
        self.rebuild_clusters(from_rank, to_rank)
