from __future__ import annotations

import pytest

from ccmlb.phase import Communication, PhaseSpec, SharedBlock, Task


def make_phase(
    *,
    loads,
    base_mems=None,
    overheads=None,
    blocks=(),          # (size, home) per block
    task_blocks=None,   # block id or None per task
    comms=(),           # (src, dst, volume) per edge
    rank_count=2,
    initial=None,
    rank_base_mem=None,
    node_mem=None,
    nodes_one_rank_each=True,
) -> PhaseSpec:
    """Small hand-built phases for targeted tests."""
    K = len(loads)
    base_mems = base_mems or [0] * K
    overheads = overheads or [0] * K
    task_blocks = task_blocks if task_blocks is not None else [None] * K
    initial = initial if initial is not None else [0] * K
    if nodes_one_rank_each:
        node_of_rank = tuple(range(rank_count))
        node_mem = tuple(node_mem or [10 ** 9] * rank_count)
    else:
        node_of_rank = tuple([0] * rank_count)
        node_mem = tuple(node_mem or [10 ** 9])
    spec = PhaseSpec(
        tasks=tuple(
            Task(id=k, load=float(loads[k]), base_mem=int(base_mems[k]),
                 overhead_mem=int(overheads[k]), block=task_blocks[k])
            for k in range(K)
        ),
        blocks=tuple(
            SharedBlock(id=n, size=int(size), home=int(home))
            for n, (size, home) in enumerate(blocks)
        ),
        comms=tuple(
            Communication(id=m, src=int(s), dst=int(d), volume=float(v))
            for m, (s, d, v) in enumerate(comms)
        ),
        rank_count=rank_count,
        rank_base_mem=tuple(rank_base_mem or [0] * rank_count),
        node_of_rank=node_of_rank,
        node_mem=node_mem,
        initial_assignment=tuple(initial),
    )
    spec.validate()
    return spec


@pytest.fixture
def tiny_comcp() -> PhaseSpec:
    """Two ranks, three tasks, two blocks: the compute-only worked example.

    Tasks 0 and 1 start on rank 0 and share block 0 (homed there); task 2
    starts on rank 1 with block 1 (homed there).
    """
    return make_phase(
        loads=[1.0, 2.0, 3.0],
        base_mems=[10, 20, 30],
        overheads=[2, 4, 6],
        blocks=[(100, 0), (200, 1)],
        task_blocks=[0, 0, 1],
        rank_count=2,
        initial=[0, 0, 1],
        rank_base_mem=[5, 5],
        node_mem=[500, 500],
    )


@pytest.fixture
def tiny_fwmp(tiny_comcp) -> PhaseSpec:
    """The same phase with four unit-volume edges added."""
    comms = (
        Communication(id=0, src=0, dst=2, volume=1.0),
        Communication(id=1, src=1, dst=2, volume=1.0),
        Communication(id=2, src=2, dst=1, volume=1.0),
        Communication(id=3, src=0, dst=1, volume=1.0),
    )
    spec = PhaseSpec(
        tasks=tiny_comcp.tasks,
        blocks=tiny_comcp.blocks,
        comms=comms,
        rank_count=tiny_comcp.rank_count,
        rank_base_mem=tiny_comcp.rank_base_mem,
        node_of_rank=tiny_comcp.node_of_rank,
        node_mem=tiny_comcp.node_mem,
        initial_assignment=tiny_comcp.initial_assignment,
    )
    spec.validate()
    return spec
