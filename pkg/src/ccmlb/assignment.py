"""Task-to-rank assignment with incrementally maintained per-rank aggregates.

An `Assignment` caches, per rank: compute load, on-rank / off-rank
communication volumes, task memory (base sum + max overhead), the resident
shared-block multiset, and homing bytes. `apply_transfer` updates all of
them in time proportional to the moved tasks and their incident edges
rather than rescanning the phase; `recompute_aggregates` is the separate
from-scratch audit path used to test that equivalence.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DomainError, PreconditionError
from .phase import PhaseSpec, WorkCoefficients


@dataclass
class RankAggregates:
    """From-scratch per-rank aggregate bundle (audit/oracle path)."""

    load: float = 0.0
    on_volume: float = 0.0
    out_volume: float = 0.0
    in_volume: float = 0.0
    base_mem_sum: float = 0.0
    overhead_max: float = 0.0
    shared_mem: float = 0.0
    homing: float = 0.0
    blocks: frozenset[int] = field(default_factory=frozenset)

    @property
    def off_volume(self) -> float:
        # in/out transfers overlap, so the slower direction dominates
        return max(self.out_volume, self.in_volume)

    @property
    def task_mem(self) -> float:
        return self.base_mem_sum + self.overhead_max


def recompute_aggregates(spec: PhaseSpec, rank_of_task: Iterable[int]) -> list[RankAggregates]:
    """Rebuild every rank's aggregates by scanning the whole phase."""
    rot = list(rank_of_task)
    aggs = [RankAggregates() for _ in range(spec.rank_count)]
    blocks: list[set[int]] = [set() for _ in range(spec.rank_count)]
    for t in spec.tasks:
        a = aggs[rot[t.id]]
        a.load += t.load
        a.base_mem_sum += t.base_mem
        a.overhead_max = max(a.overhead_max, t.overhead_mem)
        if t.block is not None:
            blocks[rot[t.id]].add(t.block)
    for r in range(spec.rank_count):
        aggs[r].blocks = frozenset(blocks[r])
        aggs[r].shared_mem = sum(spec.blocks[b].size for b in blocks[r])
        aggs[r].homing = sum(
            spec.blocks[b].size for b in blocks[r] if spec.blocks[b].home != r
        )
    for c in spec.comms:
        rs, rd = rot[c.src], rot[c.dst]
        if rs == rd:
            aggs[rs].on_volume += c.volume
        else:
            aggs[rs].out_volume += c.volume
            aggs[rd].in_volume += c.volume
    return aggs


class Assignment:
    """Mutable task->rank mapping plus cached per-rank aggregates."""

    def __init__(self, spec: PhaseSpec, rank_of_task: Iterable[int] | None = None):
        self.spec = spec
        rot = list(spec.initial_assignment if rank_of_task is None else rank_of_task)
        if len(rot) != spec.task_count:
            raise DomainError("assignment must map every task")
        for t, r in enumerate(rot):
            if not 0 <= r < spec.rank_count:
                raise DomainError(f"task {t} assigned to unknown rank {r}")
        self.rank_of_task = rot
        self.tasks_of_rank: list[set[int]] = [set() for _ in range(spec.rank_count)]
        for t, r in enumerate(rot):
            self.tasks_of_rank[r].add(t)

        R = spec.rank_count
        self._load = [0.0] * R
        self._on = [0.0] * R
        self._out = [0.0] * R
        self._in = [0.0] * R
        self._base_sum = [0.0] * R
        self._overheads: list[Counter[int]] = [Counter() for _ in range(R)]
        self._block_refs: list[Counter[int]] = [Counter() for _ in range(R)]
        self._shared = [0.0] * R
        self._homing = [0.0] * R
        for t in spec.tasks:
            r = rot[t.id]
            self._load[r] += t.load
            self._base_sum[r] += t.base_mem
            self._overheads[r][t.overhead_mem] += 1
            if t.block is not None:
                if self._block_refs[r][t.block] == 0:
                    b = spec.blocks[t.block]
                    self._shared[r] += b.size
                    if b.home != r:
                        self._homing[r] += b.size
                self._block_refs[r][t.block] += 1
        for c in spec.comms:
            rs, rd = rot[c.src], rot[c.dst]
            if rs == rd:
                self._on[rs] += c.volume
            else:
                self._out[rs] += c.volume
                self._in[rd] += c.volume

    def copy(self) -> "Assignment":
        return Assignment(self.spec, self.rank_of_task)

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.spec.rank_count:
            raise DomainError(f"unknown rank {rank}")

    # -- aggregate readers ------------------------------------------------

    def load(self, rank: int) -> float:
        """Total compute seconds of the tasks resident on `rank`."""
        self._check_rank(rank)
        return self._load[rank]

    def volumes(self, rank: int) -> tuple[float, float]:
        """(on-rank bytes, off-rank bytes); off-rank is max(sent, received)."""
        self._check_rank(rank)
        return self._on[rank], max(self._out[rank], self._in[rank])

    def memory(self, rank: int) -> tuple[float, float, float]:
        """(task_mem, shared_mem, max_mem) for `rank`.

        task_mem sums base footprints and adds the worst-case execution
        overhead; shared_mem counts each distinct resident block once;
        max_mem adds the rank's own baseline on top of both.
        """
        self._check_rank(rank)
        over = self._overheads[rank]
        task_mem = self._base_sum[rank] + (max(over) if over else 0.0)
        shared = self._shared[rank]
        return task_mem, shared, self.spec.rank_base_mem[rank] + task_mem + shared

    def homing(self, rank: int) -> float:
        """Bytes of resident shared blocks whose home is some other rank."""
        self._check_rank(rank)
        return self._homing[rank]

    def resident_blocks(self, rank: int) -> set[int]:
        self._check_rank(rank)
        return {b for b, n in self._block_refs[rank].items() if n > 0}

    def max_mem(self, rank: int) -> float:
        return self.memory(rank)[2]

    def memory_overage(self, rank: int) -> float:
        """Bytes by which `rank` exceeds its budget (0 when feasible)."""
        return max(0.0, self.max_mem(rank) - self.spec.rank_available_mem[rank])

    def work(self, rank: int, coeffs: WorkCoefficients) -> float:
        """Combined work seconds; +inf if memory is enforced and exceeded."""
        self._check_rank(rank)
        on, off = self.volumes(rank)
        value = (coeffs.alpha * self._load[rank] + coeffs.beta * off
                 + coeffs.gamma * on + coeffs.delta * self._homing[rank])
        if coeffs.enforce_memory and self.memory_overage(rank) > 0:
            return math.inf
        return value

    def work_key(self, rank: int, coeffs: WorkCoefficients) -> tuple[float, float]:
        """(memory overage, finite work): the order used to compare ranks.

        All memory-violating states have infinite work, so comparisons
        among them fall back to how far over budget they are; for feasible
        states the first component is 0 and the finite work decides.
        """
        on, off = self.volumes(rank)
        value = (coeffs.alpha * self._load[rank] + coeffs.beta * off
                 + coeffs.gamma * on + coeffs.delta * self._homing[rank])
        overage = self.memory_overage(rank) if coeffs.enforce_memory else 0.0
        return overage, value

    def works(self, coeffs: WorkCoefficients) -> list[float]:
        return [self.work(r, coeffs) for r in range(self.spec.rank_count)]

    # -- mutation ----------------------------------------------------------

    def apply_transfer(self, task_ids: Iterable[int], from_rank: int, to_rank: int) -> None:
        """Move `task_ids` from `from_rank` to `to_rank`, updating caches.

        Every task must currently be on `from_rank`. Aggregates of all
        other ranks are untouched: edges between moved tasks and third
        ranks stay off-rank for the third party, and its sent/received
        totals do not depend on which of the two ranks holds the peer task.
        """
        self._check_rank(from_rank)
        self._check_rank(to_rank)
        if from_rank == to_rank:
            raise PreconditionError("from_rank and to_rank must differ")
        moved = sorted(set(task_ids))
        if not moved:
            return
        for t in moved:
            if not 0 <= t < self.spec.task_count:
                raise DomainError(f"unknown task {t}")
            if self.rank_of_task[t] != from_rank:
                raise PreconditionError(
                    f"task {t} is on rank {self.rank_of_task[t]}, not {from_rank}"
                )
        spec = self.spec
        moved_set = set(moved)

        for t_id in moved:
            t = spec.tasks[t_id]
            self._load[from_rank] -= t.load
            self._load[to_rank] += t.load
            self._base_sum[from_rank] -= t.base_mem
            self._base_sum[to_rank] += t.base_mem
            self._overheads[from_rank][t.overhead_mem] -= 1
            if self._overheads[from_rank][t.overhead_mem] == 0:
                del self._overheads[from_rank][t.overhead_mem]
            self._overheads[to_rank][t.overhead_mem] += 1
            if t.block is not None:
                b = spec.blocks[t.block]
                self._block_refs[from_rank][t.block] -= 1
                if self._block_refs[from_rank][t.block] == 0:
                    del self._block_refs[from_rank][t.block]
                    self._shared[from_rank] -= b.size
                    if b.home != from_rank:
                        self._homing[from_rank] -= b.size
                if self._block_refs[to_rank][t.block] == 0:
                    self._shared[to_rank] += b.size
                    if b.home != to_rank:
                        self._homing[to_rank] += b.size
                self._block_refs[to_rank][t.block] += 1

        # Volumes: re-classify each edge touching a moved task. Only the
        # two participating ranks can see a contribution change.
        seen: set[int] = set()
        for t_id in moved:
            for c_id in spec.task_comms[t_id]:
                if c_id in seen:
                    continue
                seen.add(c_id)
                c = spec.comms[c_id]
                old_rs = self.rank_of_task[c.src]
                old_rd = self.rank_of_task[c.dst]
                new_rs = to_rank if c.src in moved_set else old_rs
                new_rd = to_rank if c.dst in moved_set else old_rd
                if old_rs == old_rd:
                    self._on[old_rs] -= c.volume
                else:
                    self._out[old_rs] -= c.volume
                    self._in[old_rd] -= c.volume
                if new_rs == new_rd:
                    self._on[new_rs] += c.volume
                else:
                    self._out[new_rs] += c.volume
                    self._in[new_rd] += c.volume

        for t_id in moved:
            self.rank_of_task[t_id] = to_rank
            self.tasks_of_rank[from_rank].discard(t_id)
            self.tasks_of_rank[to_rank].add(t_id)

    # -- audit ---------------------------------------------------------------

    def audit(self, rel_tol: float = 1e-9) -> None:
        """Check every cached aggregate against a from-scratch rebuild.

        Tolerances are relative to the aggregate's global magnitude:
        incremental add/subtract chains leave cancellation residue sized by
        the summands, so a rank whose true volume is 0 may legitimately
        cache a value around eps * total_volume.
        """
        fresh = recompute_aggregates(self.spec, self.rank_of_task)
        scale: dict[str, float] = {}
        for a in fresh:
            for name, truth in (("load", a.load), ("on_volume", a.on_volume),
                                ("out_volume", a.out_volume),
                                ("in_volume", a.in_volume),
                                ("base_mem", a.base_mem_sum),
                                ("shared_mem", a.shared_mem),
                                ("homing", a.homing)):
                scale[name] = scale.get(name, 1.0) + abs(truth)
        for r, a in enumerate(fresh):
            pairs = [
                ("load", self._load[r], a.load),
                ("on_volume", self._on[r], a.on_volume),
                ("out_volume", self._out[r], a.out_volume),
                ("in_volume", self._in[r], a.in_volume),
                ("base_mem", self._base_sum[r], a.base_mem_sum),
                ("shared_mem", self._shared[r], a.shared_mem),
                ("homing", self._homing[r], a.homing),
            ]
            for name, cached, truth in pairs:
                if not math.isclose(cached, truth, rel_tol=rel_tol,
                                    abs_tol=rel_tol * scale[name]):
                    raise AssertionError(f"rank {r} {name}: cached {cached} != {truth}")
            over = self._overheads[r]
            cached_over = max(over) if over else 0.0
            if cached_over != a.overhead_max:
                raise AssertionError(f"rank {r} overhead max {cached_over} != {a.overhead_max}")
            if self.resident_blocks(r) != set(a.blocks):
                raise AssertionError(f"rank {r} resident blocks diverged")
            if {t for t in self.tasks_of_rank[r]} != {
                t for t, rr in enumerate(self.rank_of_task) if rr == r
            }:
                raise AssertionError(f"rank {r} task set maps inconsistent")


@dataclass(frozen=True)
class MemoryReport:
    """Feasibility verdict plus per-rank and per-node slack."""

    feasible: bool
    rank_slack: tuple[float, ...]
    node_slack: tuple[float, ...]
    node_feasible: bool


def memory_feasible(spec: PhaseSpec, assignment: Assignment) -> MemoryReport:
    """Check max memory against the per-rank budget on every rank.

    The per-rank bound (node budget split evenly) implies the node-level
    bound; the node check is reported as supplementary information.
    """
    rank_slack = tuple(
        spec.rank_available_mem[r] - assignment.max_mem(r) for r in range(spec.rank_count)
    )
    node_used = [0.0] * spec.node_count
    for r in range(spec.rank_count):
        node_used[spec.node_of_rank[r]] += assignment.max_mem(r)
    node_slack = tuple(spec.node_mem[n] - node_used[n] for n in range(spec.node_count))
    return MemoryReport(
        feasible=all(s >= 0 for s in rank_slack),
        rank_slack=rank_slack,
        node_slack=node_slack,
        node_feasible=all(s >= 0 for s in node_slack),
    )


def imbalance(loads: Iterable[float]) -> float:
    """max/mean - 1 over per-rank loads; zero only when all loads equal."""
    values = list(loads)
    if not values:
        raise DomainError("imbalance needs at least one rank")
    mean = sum(values) / len(values)
    if mean <= 0:
        raise DomainError("imbalance undefined for non-positive mean load")
    return max(values) / mean - 1.0
