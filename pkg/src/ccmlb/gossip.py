"""Epidemic inform stage, simulated deterministically.

Each rank starts one message carrying its own summary to `fanout` random
peers; a recipient merges the carried summaries into its local knowledge
(newest version per rank wins) and, while the message's round is below
`k_rounds`, forwards its merged knowledge to `fanout` ranks the message
has not visited yet. Delivery follows a FIFO queue keyed by
(round, sender, sequence), and every rank draws peers from its own RNG
stream, so a (seed, iteration) pair fully determines the outcome.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .clustering import Cluster
from .errors import ConfigError


@dataclass(frozen=True)
class RankInfo:
    """Augmented inform payload: one rank's summary as seen by peers.

    Beyond the compute load, peers need communication volumes, homing
    bytes, the baseline footprint and the cluster summaries to judge
    whether a transfer is worthwhile; `version` orders snapshots of the
    same rank so stale gossip never overwrites fresher knowledge.
    """

    rank: int
    load: float
    on_volume: float
    off_volume: float
    homing: float
    base_mem: int
    clusters: tuple[Cluster, ...]
    version: int

    def task_ids(self) -> frozenset[int]:
        out: set[int] = set()
        for c in self.clusters:
            out |= c.tasks
        return frozenset(out)


# Per receiving rank: everything it knows, keyed by rank id.
PeerKnowledge = dict[int, RankInfo]


class InfoSource(Protocol):
    rank_count: int

    def current_info(self, rank: int) -> RankInfo: ...

    def bump_version(self, rank: int) -> int: ...


@dataclass(frozen=True)
class GossipResult:
    knowledge: tuple[PeerKnowledge, ...]
    message_count: int
    log: tuple[str, ...]


def rank_rng(seed: int, rank: int, iteration: int) -> np.random.Generator:
    """Independent per-rank stream so results don't depend on delivery order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, rank, iteration])))


def _pick_targets(rng: np.random.Generator, exclude: set[int], rank_count: int,
                  fanout: int) -> list[int]:
    fresh = [r for r in range(rank_count) if r not in exclude]
    if len(fresh) <= fanout:
        return fresh
    chosen = rng.choice(len(fresh), size=fanout, replace=False)
    return [fresh[i] for i in sorted(int(i) for i in chosen)]


def build_peer_network(state: InfoSource, k_rounds: int, fanout: int, seed: int,
                       iteration: int = 0) -> GossipResult:
    """Run the inform stage to quiescence and return per-rank knowledge."""
    R = state.rank_count
    if k_rounds < 1:
        raise ConfigError(f"k_rounds must be >= 1, got {k_rounds}")
    if fanout < 1:
        raise ConfigError(f"fanout must be >= 1, got {fanout}")
    if fanout >= R and R > 1:
        raise ConfigError(f"fanout {fanout} must be below the rank count {R}")
    if seed < 0:
        raise ConfigError("seed must be non-negative")

    knowledge: list[PeerKnowledge] = [{r: state.current_info(r)} for r in range(R)]
    rngs = [rank_rng(seed, r, iteration) for r in range(R)]
    heap: list[tuple[int, int, int, int, PeerKnowledge]] = []
    seq = 0
    log: list[str] = []
    messages = 0

    def send(round_no: int, sender: int, payload: PeerKnowledge) -> None:
        nonlocal seq
        targets = _pick_targets(rngs[sender], set(payload), R, fanout)
        for t in targets:
            heapq.heappush(heap, (round_no, sender, seq, t, payload))
            seq += 1

    for r in range(R):
        send(1, r, dict(knowledge[r]))

    while heap:
        round_no, sender, _, receiver, carried = heapq.heappop(heap)
        messages += 1
        local = knowledge[receiver]
        for rk, info in carried.items():
            held = local.get(rk)
            if held is None or info.version > held.version:
                local[rk] = info
        log.append(f"{round_no} {sender}→{receiver} {sorted(carried)}")
        if round_no < k_rounds:
            send(round_no + 1, receiver, dict(local))

    return GossipResult(
        knowledge=tuple(knowledge),
        message_count=messages,
        log=tuple(log),
    )


def refresh_info(state: InfoSource, rank: int) -> RankInfo:
    """Authoritative, freshly versioned snapshot of one rank."""
    state.bump_version(rank)
    return state.current_info(rank)
