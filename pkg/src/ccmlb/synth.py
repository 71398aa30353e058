"""Random phase generation for experiments, demos, and oracle tests."""

from __future__ import annotations

import numpy as np

from .phase import Communication, PhaseSpec, SharedBlock, Task


def random_phase(
    seed: int,
    rank_count: int = 3,
    task_count: int = 12,
    block_count: int = 2,
    comm_count: int = 8,
    node_count: int = 1,
    load_range: tuple[float, float] = (0.1, 10.0),
    base_mem_range: tuple[int, int] = (1_000, 100_000),
    overhead_range: tuple[int, int] = (0, 20_000),
    block_size_range: tuple[int, int] = (100_000, 2_000_000),
    volume_range: tuple[float, float] = (1.0, 1e6),
    blocked_fraction: float = 0.5,
    mem_slack: float = 2.0,
    colocate: bool = True,
) -> PhaseSpec:
    """Build a valid random phase.

    With `colocate` the initial assignment puts block users on their
    block's home rank (how an application would naturally start); others
    land on random ranks. `mem_slack` scales node memory relative to the
    tightest rank under the initial assignment, so slack >= 1 guarantees a
    feasible start.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    node_count = min(node_count, rank_count)

    blocks = [
        SharedBlock(id=n, size=int(rng.integers(*block_size_range, endpoint=True)),
                    home=int(rng.integers(rank_count)))
        for n in range(block_count)
    ]
    tasks = []
    for k in range(task_count):
        has_block = block_count > 0 and rng.random() < blocked_fraction
        tasks.append(Task(
            id=k,
            load=float(rng.uniform(*load_range)),
            base_mem=int(rng.integers(*base_mem_range, endpoint=True)),
            overhead_mem=int(rng.integers(*overhead_range, endpoint=True)),
            block=int(rng.integers(block_count)) if has_block else None,
        ))
    comms = []
    for m in range(comm_count):
        src = int(rng.integers(task_count))
        dst = int(rng.integers(task_count))
        comms.append(Communication(
            id=m, src=src, dst=dst, volume=float(rng.uniform(*volume_range))
        ))

    assignment = []
    for t in tasks:
        if colocate and t.block is not None:
            assignment.append(blocks[t.block].home)
        else:
            assignment.append(int(rng.integers(rank_count)))

    node_of_rank = tuple(r % node_count for r in range(rank_count))
    rank_base_mem = tuple(int(rng.integers(0, 10_000)) for _ in range(rank_count))

    # size nodes so the start is feasible with the requested slack
    need = [0.0] * rank_count
    over = [0.0] * rank_count
    blocks_on: list[set[int]] = [set() for _ in range(rank_count)]
    for t, r in zip(tasks, assignment):
        need[r] += t.base_mem
        over[r] = max(over[r], t.overhead_mem)
        if t.block is not None:
            blocks_on[r].add(t.block)
    for r in range(rank_count):
        need[r] += over[r] + sum(blocks[b].size for b in blocks_on[r]) \
            + rank_base_mem[r]
    node_mem = []
    for n in range(node_count):
        ranks = [r for r in range(rank_count) if node_of_rank[r] == n]
        peak = max(need[r] for r in ranks)
        node_mem.append(int(mem_slack * peak * len(ranks)) + 1)

    spec = PhaseSpec(
        tasks=tuple(tasks),
        blocks=tuple(blocks),
        comms=tuple(comms),
        rank_count=rank_count,
        rank_base_mem=rank_base_mem,
        node_of_rank=node_of_rank,
        node_mem=tuple(node_mem),
        initial_assignment=tuple(assignment),
    )
    spec.validate()
    return spec
