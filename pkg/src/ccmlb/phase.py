"""Immutable phase description: tasks, communications, shared blocks, ranks.

A phase is the balancing scope: the set of tasks executed between two
synchronization points, together with their communication edges, the shared
memory blocks they access, and the rank/node topology they run on. All
entity identifiers are dense non-negative integers.

Work on a rank combines four ingredients, scaled by `WorkCoefficients`:

    work(r) = alpha * load(r) + beta * off_rank_volume(r)
            + gamma * on_rank_volume(r) + delta * homing_bytes(r)

plus an infinite penalty when memory enforcement is on and the rank's
maximum memory usage exceeds its share of the node budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .errors import DomainError, SpecFormatError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Task:
    """One migratable unit of computation.

    `load` is predicted compute seconds. `base_mem` is bytes held for the
    whole phase; `overhead_mem` is extra working bytes held only while the
    task executes (tasks are non-preemptable, so a rank pays the max, not
    the sum, of overheads). A task accesses at most one shared block.
    """

    id: int
    load: float
    base_mem: int
    overhead_mem: int
    block: int | None = None


@dataclass(frozen=True)
class SharedBlock:
    """A memory chunk accessed by several tasks, replicable across ranks.

    `home` is the rank where the block must ultimately reside; holding it
    elsewhere incurs homing cost.
    """

    id: int
    size: int
    home: int


@dataclass(frozen=True)
class Communication:
    """A directed transfer of `volume` bytes from task `src` to task `dst`."""

    id: int
    src: int
    dst: int
    volume: float


@dataclass(frozen=True)
class WorkCoefficients:
    """Scalars of the combined work value.

    alpha is 0/1 (include compute load or not); beta, gamma, delta are
    seconds-per-byte scalings for off-rank volume, on-rank volume, and
    homing bytes. `enforce_memory` turns the per-rank memory bound into an
    infinite work penalty.
    """

    alpha: int = 1
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0
    enforce_memory: bool = False

    def __post_init__(self) -> None:
        if self.alpha not in (0, 1):
            raise DomainError(f"alpha must be 0 or 1, got {self.alpha}")
        for name in ("beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    @property
    def compute_only(self) -> bool:
        return self.alpha == 1 and self.beta == self.gamma == self.delta == 0.0


@dataclass(frozen=True)
class PhaseSpec:
    """Complete immutable description of one phase.

    `node_of_rank[r]` maps each rank to its node; `node_mem[n]` is the
    node's memory budget, split evenly across its ranks to give the
    per-rank available memory used by the feasibility bound.
    """

    tasks: tuple[Task, ...]
    blocks: tuple[SharedBlock, ...]
    comms: tuple[Communication, ...]
    rank_count: int
    rank_base_mem: tuple[int, ...]
    node_of_rank: tuple[int, ...]
    node_mem: tuple[int, ...]
    initial_assignment: tuple[int, ...]

    @property
    def task_count(self) -> int:
        return len(self.tasks)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def comm_count(self) -> int:
        return len(self.comms)

    @property
    def node_count(self) -> int:
        return len(self.node_mem)

    @cached_property
    def ranks_on_node(self) -> tuple[tuple[int, ...], ...]:
        per_node: list[list[int]] = [[] for _ in range(self.node_count)]
        for r, n in enumerate(self.node_of_rank):
            per_node[n].append(r)
        return tuple(tuple(rs) for rs in per_node)

    @cached_property
    def rank_available_mem(self) -> tuple[float, ...]:
        """Per-rank memory budget: the node budget split evenly over its ranks."""
        return tuple(
            self.node_mem[n] / len(self.ranks_on_node[n]) for n in self.node_of_rank
        )

    @cached_property
    def task_comms(self) -> tuple[tuple[int, ...], ...]:
        """Comm ids incident to each task (self-edges listed once)."""
        incident: list[list[int]] = [[] for _ in self.tasks]
        for c in self.comms:
            incident[c.src].append(c.id)
            if c.dst != c.src:
                incident[c.dst].append(c.id)
        return tuple(tuple(ids) for ids in incident)

    @cached_property
    def block_tasks(self) -> tuple[tuple[int, ...], ...]:
        users: list[list[int]] = [[] for _ in self.blocks]
        for t in self.tasks:
            if t.block is not None:
                users[t.block].append(t.id)
        return tuple(tuple(ts) for ts in users)

    def validate(self) -> None:
        if self.rank_count < 1:
            raise SpecFormatError("rank_count must be >= 1")
        if self.node_count < 1:
            raise SpecFormatError("at least one node required")
        for seq, label in ((self.tasks, "task"), (self.blocks, "block"), (self.comms, "comm")):
            for i, item in enumerate(seq):
                if item.id != i:
                    raise SpecFormatError(f"{label} ids must be dense 0..{len(seq) - 1}")
        if len(self.rank_base_mem) != self.rank_count:
            raise SpecFormatError("rank_base_mem must list one entry per rank")
        if len(self.node_of_rank) != self.rank_count:
            raise SpecFormatError("node_of_rank must list one entry per rank")
        for n in self.node_of_rank:
            if not 0 <= n < self.node_count:
                raise SpecFormatError(f"rank mapped to unknown node {n}")
        for n, ranks in enumerate(self.ranks_on_node):
            if not ranks:
                raise SpecFormatError(f"node {n} has no ranks")
        for t in self.tasks:
            if t.load < 0 or t.base_mem < 0 or t.overhead_mem < 0:
                raise SpecFormatError(f"task {t.id} has negative load or memory")
            if t.block is not None and not 0 <= t.block < self.block_count:
                raise SpecFormatError(f"task {t.id} references unknown block {t.block}")
        for b in self.blocks:
            if b.size < 0:
                raise SpecFormatError(f"block {b.id} has negative size")
            if not 0 <= b.home < self.rank_count:
                raise SpecFormatError(f"block {b.id} homed at unknown rank {b.home}")
        for c in self.comms:
            if not 0 <= c.src < self.task_count or not 0 <= c.dst < self.task_count:
                raise SpecFormatError(f"comm {c.id} references unknown task")
            if c.volume < 0:
                raise SpecFormatError(f"comm {c.id} has negative volume")
        if len(self.initial_assignment) != self.task_count:
            raise SpecFormatError("initial_assignment must list one rank per task")
        for t, r in enumerate(self.initial_assignment):
            if not 0 <= r < self.rank_count:
                raise SpecFormatError(f"task {t} initially assigned to unknown rank {r}")
        for m in self.rank_base_mem:
            if m < 0:
                raise SpecFormatError("rank_base_mem entries must be >= 0")
        for m in self.node_mem:
            if m < 0:
                raise SpecFormatError("node_mem entries must be >= 0")


def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise SpecFormatError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise SpecFormatError(f"missing keys in {where}: {sorted(missing)}")


def phase_from_json(doc: dict) -> PhaseSpec:
    """Build and validate a PhaseSpec from its JSON document form."""
    if not isinstance(doc, dict):
        raise SpecFormatError("phase document must be a JSON object")
    top = {
        "ranks", "nodes", "rank_base_mem", "tasks", "blocks", "comms",
        "initial_assignment",
    }
    _require_keys(doc, top, top, "phase document")

    try:
        rank_count = int(doc["ranks"])
        node_mem: list[int] = []
        node_of_rank: dict[int, int] = {}
        for n, node in enumerate(doc["nodes"]):
            _require_keys(node, {"id", "mem_bytes", "ranks"}, {"id", "mem_bytes", "ranks"},
                          f"nodes[{n}]")
            if int(node["id"]) != n:
                raise SpecFormatError("node ids must be dense and in order")
            node_mem.append(int(node["mem_bytes"]))
            for r in node["ranks"]:
                if int(r) in node_of_rank:
                    raise SpecFormatError(f"rank {r} listed on two nodes")
                node_of_rank[int(r)] = n
        if sorted(node_of_rank) != list(range(rank_count)):
            raise SpecFormatError("nodes must partition ranks 0..ranks-1")

        tasks = []
        for k, t in enumerate(doc["tasks"]):
            _require_keys(t, {"id", "load_s", "base_mem", "overhead_mem", "block"},
                          {"id", "load_s", "base_mem", "overhead_mem"}, f"tasks[{k}]")
            tasks.append(Task(
                id=int(t["id"]),
                load=float(t["load_s"]),
                base_mem=int(t["base_mem"]),
                overhead_mem=int(t["overhead_mem"]),
                block=None if t.get("block") is None else int(t["block"]),
            ))
        blocks = []
        for n, b in enumerate(doc["blocks"]):
            _require_keys(b, {"id", "size_bytes", "home"}, {"id", "size_bytes", "home"},
                          f"blocks[{n}]")
            blocks.append(SharedBlock(id=int(b["id"]), size=int(b["size_bytes"]),
                                      home=int(b["home"])))
        comms = []
        for m, c in enumerate(doc["comms"]):
            _require_keys(c, {"id", "from", "to", "bytes"}, {"id", "from", "to", "bytes"},
                          f"comms[{m}]")
            comms.append(Communication(id=int(c["id"]), src=int(c["from"]),
                                       dst=int(c["to"]), volume=float(c["bytes"])))

        spec = PhaseSpec(
            tasks=tuple(tasks),
            blocks=tuple(blocks),
            comms=tuple(comms),
            rank_count=rank_count,
            rank_base_mem=tuple(int(x) for x in doc["rank_base_mem"]),
            node_of_rank=tuple(node_of_rank[r] for r in range(rank_count)),
            node_mem=tuple(node_mem),
            initial_assignment=tuple(int(r) for r in doc["initial_assignment"]),
        )
    except SpecFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecFormatError(f"malformed phase document: {exc}") from exc
    spec.validate()
    return spec


def phase_to_json(spec: PhaseSpec) -> dict:
    """Serialize a PhaseSpec to its JSON document form."""
    return {
        "ranks": spec.rank_count,
        "nodes": [
            {"id": n, "mem_bytes": spec.node_mem[n], "ranks": list(spec.ranks_on_node[n])}
            for n in range(spec.node_count)
        ],
        "rank_base_mem": list(spec.rank_base_mem),
        "tasks": [
            {"id": t.id, "load_s": t.load, "base_mem": t.base_mem,
             "overhead_mem": t.overhead_mem, "block": t.block}
            for t in spec.tasks
        ],
        "blocks": [
            {"id": b.id, "size_bytes": b.size, "home": b.home} for b in spec.blocks
        ],
        "comms": [
            {"id": c.id, "from": c.src, "to": c.dst, "bytes": c.volume} for c in spec.comms
        ],
        "initial_assignment": list(spec.initial_assignment),
    }


def load_phase(path: str | Path) -> PhaseSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"{path}: not valid JSON: {exc}") from exc
    return phase_from_json(doc)


def save_phase(spec: PhaseSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(phase_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
