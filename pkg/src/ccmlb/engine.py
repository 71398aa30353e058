"""Iterative balancing: criterion evaluation, locking, cluster transfers.

Each iteration goes through three stages. First the inform stage spreads
rank summaries epidemically (`gossip`). Then every rank scores each known
peer: over all cluster pairs (either side may be empty, so pure gives in
both directions and swaps are considered) it predicts how much the larger
of the two ranks' work values would drop. Positive candidates enter a
work list, best first. Finally ranks walk their work lists, lock one peer
at a time, re-evaluate on authoritative data, and execute the best
transfer if it still helps.

The distributed protocol is simulated on a deterministic round-robin
scheduler, so a (spec, coefficients, parameters, seed) tuple always yields
the same trace.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .assignment import Assignment, imbalance, memory_feasible
from .clustering import Cluster
from .errors import ConfigError, DomainError, ProtocolError
from .gossip import RankInfo, build_peer_network, refresh_info
from .phase import PhaseSpec, WorkCoefficients
from .state import BalancerState

log = logging.getLogger(__name__)

WorkKey = tuple[float, float]  # (memory overage bytes, finite work seconds)


def work_key_for_tasks(spec: PhaseSpec, coeffs: WorkCoefficients, rank: int,
                       tasks: frozenset[int]) -> WorkKey:
    """Work key a rank would have if it held exactly `tasks`.

    Computed from the phase's static data alone, so it can score
    hypothetical placements; an edge leaving `tasks` is off-rank no matter
    which other rank holds the far endpoint.
    """
    load = 0.0
    base = 0.0
    over = 0.0
    blocks: set[int] = set()
    for t_id in tasks:
        t = spec.tasks[t_id]
        load += t.load
        base += t.base_mem
        over = max(over, t.overhead_mem)
        if t.block is not None:
            blocks.add(t.block)
    shared = 0.0
    homing = 0.0
    for b_id in blocks:
        b = spec.blocks[b_id]
        shared += b.size
        if b.home != rank:
            homing += b.size
    on = out = inc = 0.0
    seen: set[int] = set()
    for t_id in tasks:
        for c_id in spec.task_comms[t_id]:
            if c_id in seen:
                continue
            seen.add(c_id)
            c = spec.comms[c_id]
            s_in = c.src in tasks
            d_in = c.dst in tasks
            if s_in and d_in:
                on += c.volume
            elif s_in:
                out += c.volume
            else:
                inc += c.volume
    value = (coeffs.alpha * load + coeffs.beta * max(out, inc)
             + coeffs.gamma * on + coeffs.delta * homing)
    overage = 0.0
    if coeffs.enforce_memory:
        if not tasks:
            over = 0.0
        max_mem = spec.rank_base_mem[rank] + base + over + shared
        overage = max(0.0, max_mem - spec.rank_available_mem[rank])
    return overage, value


@dataclass(frozen=True)
class TransferCandidate:
    """Best cluster pair found for one (rank, peer) evaluation.

    `self_cluster` moves rank -> peer, `peer_cluster` moves peer -> rank;
    either may be absent (pure give). `predicted_work_diff` is the drop in
    the pairwise max finite work; `overage_diff` the drop in pairwise max
    memory overage (nonzero only when escaping an infeasible state).
    """

    peer: int
    self_cluster: Cluster | None
    peer_cluster: Cluster | None
    predicted_work_diff: float
    overage_diff: float = 0.0

    def sort_rank(self) -> tuple[float, float]:
        return (self.overage_diff, self.predicted_work_diff)


def find_best_ccm(spec: PhaseSpec, state: BalancerState, rank: int,
                  peer_info: RankInfo) -> TransferCandidate | None:
    """Score all cluster give/take/swap pairs against one peer.

    The evaluator's own side is authoritative; the peer side is whatever
    the supplied info says (stale gossip or a fresh snapshot). Returns the
    pair with the lowest resulting pairwise max work key, or None if no
    pair strictly improves on the current one. Memory-violating outcomes
    carry a positive overage component, so they always compare worse than
    any feasible outcome and are never selected from a feasible pair.
    """
    peer = peer_info.rank
    if peer == rank:
        raise DomainError("peer info must describe a different rank")
    coeffs = state.coeffs
    own_tasks = frozenset(state.assignment.tasks_of_rank[rank])
    peer_tasks = peer_info.task_ids()
    before = max(
        work_key_for_tasks(spec, coeffs, rank, own_tasks),
        work_key_for_tasks(spec, coeffs, peer, peer_tasks),
    )
    best: TransferCandidate | None = None
    best_after: WorkKey | None = None
    for c_r in (None, *state.clusters[rank]):
        give = c_r.tasks if c_r is not None else frozenset()
        for c_p in (None, *peer_info.clusters):
            if c_r is None and c_p is None:
                continue
            take = c_p.tasks if c_p is not None else frozenset()
            new_r = (own_tasks - give) | take
            new_p = (peer_tasks - take) | give
            after = max(
                work_key_for_tasks(spec, coeffs, rank, new_r),
                work_key_for_tasks(spec, coeffs, peer, new_p),
            )
            if after < before and (best_after is None or after < best_after):
                best_after = after
                best = TransferCandidate(
                    peer=peer,
                    self_cluster=c_r,
                    peer_cluster=c_p,
                    predicted_work_diff=before[1] - after[1],
                    overage_diff=before[0] - after[0],
                )
    return best


# ---------------------------------------------------------------------------
# Lock protocol
# ---------------------------------------------------------------------------


class LockTable:
    """One lock per rank with an ascending-id pending queue."""

    def __init__(self, rank_count: int):
        self.owner: list[int | None] = [None] * rank_count
        self.queue: list[list[int]] = [[] for _ in range(rank_count)]

    def owner_of(self, rank: int) -> int | None:
        return self.owner[rank]

    def try_lock(self, requester: int, target: int) -> str:
        """Grant if `target` is unowned, else queue. Returns the outcome."""
        if requester == target:
            raise ProtocolError("a rank cannot lock itself")
        if self.owner[target] == requester:
            raise ProtocolError(f"rank {requester} already owns lock {target}")
        if requester in self.queue[target]:
            raise ProtocolError(f"rank {requester} already queued on lock {target}")
        if self.owner[target] is None:
            self.owner[target] = requester
            return "granted"
        self.queue[target].append(requester)
        self.queue[target].sort()
        return "queued"

    def release(self, target: int, expected_owner: int) -> int | None:
        """Release and hand the lock to the lowest queued requester, if any."""
        if self.owner[target] != expected_owner:
            raise ProtocolError(
                f"rank {expected_owner} does not own lock {target}"
            )
        if self.queue[target]:
            nxt = self.queue[target].pop(0)
            self.owner[target] = nxt
            return nxt
        self.owner[target] = None
        return None


def try_lock(lock_table: LockTable, requester: int, target: int) -> str:
    return lock_table.try_lock(requester, target)


def cycle_avoid(lock_table: LockTable, rank: int, holder: int, acquired: int) -> str:
    """Deadlock-avoidance rule for a rank that is locked while holding.

    `rank` holds the lock on `acquired` and is itself locked by `holder`;
    it must back off (release and retry later) whenever holder <= acquired
    in rank order. Applying this on every lock-state change makes a
    wait-for cycle impossible: around any would-be cycle the keep
    condition demands a strictly decreasing id sequence that wraps onto
    itself.
    """
    if lock_table.owner_of(acquired) != rank:
        raise ProtocolError(f"rank {rank} does not hold lock {acquired}")
    if lock_table.owner_of(rank) != holder:
        raise ProtocolError(f"rank {rank} is not locked by {holder}")
    return "release_and_requeue" if holder <= acquired else "keep"


class LockProtocol:
    """Lock table plus the back-off rule, with grant/release callbacks.

    Tracks which rank holds which lock, applies the cycle-avoidance rule
    after every grant (including grants cascading out of releases), and
    reports forced releases through `on_backoff` so the caller can requeue
    the work item.
    """

    def __init__(self, rank_count: int,
                 on_grant: Callable[[int, int], None] | None = None,
                 on_release: Callable[[int, int, str], None] | None = None,
                 on_backoff: Callable[[int, int], None] | None = None):
        self.locks = LockTable(rank_count)
        self.holding: dict[int, int] = {}
        self.on_grant = on_grant
        self.on_release = on_release
        self.on_backoff = on_backoff

    def request(self, rank: int, target: int) -> str:
        if rank in self.holding:
            raise ProtocolError(f"rank {rank} already holds a lock")
        outcome = self.locks.try_lock(rank, target)
        if outcome == "granted":
            self.holding[rank] = target
            if self.on_grant:
                self.on_grant(rank, target)
            self._stabilize([rank, target])
        return outcome

    def can_proceed(self, rank: int) -> bool:
        """A holder may transfer only while it is not itself locked."""
        return rank in self.holding and self.locks.owner_of(rank) is None

    def finish(self, rank: int) -> None:
        """Session over: release the held lock, cascading queued grants."""
        target = self.holding.pop(rank, None)
        if target is None:
            raise ProtocolError(f"rank {rank} holds no lock to finish")
        if self.on_release:
            self.on_release(rank, target, "done")
        self._release_and_cascade(target, rank)

    def wait_for_edges(self) -> list[tuple[int, int]]:
        """Edges x -> y where blocked holder x waits on its locker y."""
        return [
            (x, self.locks.owner_of(x))
            for x in sorted(self.holding)
            if self.locks.owner_of(x) is not None
        ]

    def assert_acyclic(self) -> None:
        edges = dict(self.wait_for_edges())
        for start in edges:
            node, hops = start, 0
            while node in edges:
                node = edges[node]
                hops += 1
                if node == start:
                    raise ProtocolError(f"wait-for cycle through rank {start}")
                if hops > len(edges):
                    break

    def _release_and_cascade(self, target: int, expected_owner: int) -> None:
        nxt = self.locks.release(target, expected_owner)
        if nxt is not None:
            self.holding[nxt] = target
            if self.on_grant:
                self.on_grant(nxt, target)
            self._stabilize([nxt, target])

    def _stabilize(self, seeds: Iterable[int]) -> None:
        # Re-check the back-off rule until no rank is both locked and
        # holding with holder <= held; each release may grant a queued
        # request, which reopens checks for the new holder and its target.
        pending = deque(seeds)
        while pending:
            x = pending.popleft()
            held = self.holding.get(x)
            if held is None:
                continue
            holder = self.locks.owner_of(x)
            if holder is None:
                continue
            if cycle_avoid(self.locks, x, holder, held) == "release_and_requeue":
                del self.holding[x]
                if self.on_release:
                    self.on_release(x, held, "cycle-avoid")
                if self.on_backoff:
                    self.on_backoff(x, held)
                nxt = self.locks.release(held, x)
                if nxt is not None:
                    self.holding[nxt] = held
                    if self.on_grant:
                        self.on_grant(nxt, held)
                    pending.extend([nxt, held])


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    iteration: int
    event: str  # inform | lock | unlock | evaluate | transfer | skip
    payload: dict


@dataclass
class TransferTrace:
    """Ordered event log; replaying its transfers reproduces the run."""

    events: list[TraceEvent] = field(default_factory=list)

    def add(self, iteration: int, event: str, **payload) -> None:
        self.events.append(TraceEvent(iteration, event, payload))

    def transfers(self) -> list[TraceEvent]:
        return [e for e in self.events if e.event == "transfer"]

    def lines(self) -> list[str]:
        return [
            f"i={e.iteration} {e.event} "
            + json.dumps(e.payload, sort_keys=True, separators=(",", ":"))
            for e in self.events
        ]

    def write(self, path: str | Path, header: dict | None = None) -> None:
        with open(path, "w") as fh:
            if header is not None:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            for line in self.lines():
                fh.write(line + "\n")

    def replay(self, spec: PhaseSpec) -> Assignment:
        """Re-apply the executed transfers to the initial assignment."""
        assignment = Assignment(spec)
        for e in self.transfers():
            if e.payload["give"]:
                assignment.apply_transfer(e.payload["give"], e.payload["rank"],
                                          e.payload["peer"])
            if e.payload["take"]:
                assignment.apply_transfer(e.payload["take"], e.payload["peer"],
                                          e.payload["rank"])
        return assignment


# ---------------------------------------------------------------------------
# Transfer sessions and the full loop
# ---------------------------------------------------------------------------


def try_transfer(spec: PhaseSpec, state: BalancerState, rank: int, peer: int,
                 protocol: LockProtocol, trace: TransferTrace | None = None,
                 iteration: int = 0) -> TransferCandidate | None:
    """Re-evaluate against fresh peer info and execute if still improving.

    Requires `rank` to hold `peer`'s lock. The transfer is committed only
    if the pairwise max work key strictly drops on the authoritative
    state; otherwise everything is rolled back and the session counts as a
    skip. Releases the lock either way.
    """
    if protocol.holding.get(rank) != peer:
        raise ProtocolError(f"rank {rank} does not hold the lock on {peer}")
    coeffs = state.coeffs
    fresh = refresh_info(state, peer)
    cand = find_best_ccm(spec, state, rank, fresh)
    if trace is not None and cand is not None:
        trace.add(iteration, "evaluate", rank=rank, peer=peer, fresh=True,
                  diff=cand.predicted_work_diff, overage_diff=cand.overage_diff)
    executed: TransferCandidate | None = None
    if cand is not None:
        give = sorted(cand.self_cluster.tasks) if cand.self_cluster else []
        take = sorted(cand.peer_cluster.tasks) if cand.peer_cluster else []
        before = [
            state.assignment.work_key(rank, coeffs),
            state.assignment.work_key(peer, coeffs),
        ]
        if give:
            state.transfer(give, rank, peer)
        if take:
            state.transfer(take, peer, rank)
        after = [
            state.assignment.work_key(rank, coeffs),
            state.assignment.work_key(peer, coeffs),
        ]
        if max(after) < max(before):
            executed = cand
            if trace is not None:
                trace.add(iteration, "transfer", rank=rank, peer=peer,
                          give=give, take=take,
                          work_before=[list(k) for k in before],
                          work_after=[list(k) for k in after])
        else:
            # prediction was a rounding-level tie: undo, count as a skip
            if take:
                state.transfer(take, rank, peer)
            if give:
                state.transfer(give, peer, rank)
    if executed is None and trace is not None:
        trace.add(iteration, "skip", rank=rank, peer=peer, reason="no-gain")
    protocol.finish(rank)
    return executed


@dataclass
class BalanceStats:
    per_iteration: list[dict]
    final: dict

    def document(self) -> dict:
        def clean(entry: dict) -> dict:
            out = {}
            for k, v in entry.items():
                if isinstance(v, float) and not math.isfinite(v):
                    out[k] = None
                else:
                    out[k] = v
            return out

        return {
            "per_iteration": [clean(e) for e in self.per_iteration],
            "final": clean(self.final),
        }


@dataclass
class BalanceResult:
    assignment: Assignment
    trace: TransferTrace
    stats: BalanceStats


def _iteration_stats(state: BalancerState, transfers: int) -> dict:
    coeffs = state.coeffs
    works = state.assignment.works(coeffs)
    loads = [state.assignment.load(r) for r in range(state.rank_count)]
    try:
        imb = imbalance(loads)
    except DomainError:
        imb = math.nan
    return {
        "max_work_s": max(works),
        "total_work_s": sum(works),
        "imbalance": imb,
        "transfers": transfers,
    }


def ccm_lb(spec: PhaseSpec, coeffs: WorkCoefficients, n_iter: int = 8,
           k_rounds: int = 2, fanout: int = 4, seed: int = 0,
           comm_threshold: float = 0.0, verbose_gossip: bool = False,
           assignment: Assignment | None = None) -> BalanceResult:
    """Run the full balancing loop and return the final placement.

    Deterministic for fixed arguments. A single-rank phase is legal and
    degenerates to n_iter empty iterations.
    """
    if n_iter < 0:
        raise ConfigError("n_iter must be >= 0")
    if k_rounds < 1:
        raise ConfigError("k_rounds must be >= 1")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    R = spec.rank_count
    if R > 1 and not 1 <= fanout < R:
        raise ConfigError(f"fanout must be in [1, {R - 1}] for {R} ranks")

    state = BalancerState(spec, coeffs, comm_threshold, assignment=assignment)
    if coeffs.enforce_memory and not memory_feasible(spec, state.assignment).feasible:
        log.warning("initial assignment violates the memory bound; transfers "
                    "will only ever shrink the pairwise max overage")
    trace = TransferTrace()
    stats: list[dict] = []

    for it in range(n_iter):
        state.rebuild_clusters()
        transfers = 0
        if R > 1:
            gossip = build_peer_network(state, k_rounds, fanout, seed, iteration=it)
            if verbose_gossip:
                for line in gossip.log:
                    trace.add(it, "inform", message=line)
            trace.add(it, "inform", messages=gossip.message_count,
                      coverage=[len(k) for k in gossip.knowledge])
            transfers = _run_transfer_stage(spec, state, gossip.knowledge, trace, it)
        stats.append(_iteration_stats(state, transfers))

    if not stats:
        final = _iteration_stats(state, 0)
    else:
        final = dict(stats[-1])
    return BalanceResult(
        assignment=state.assignment,
        trace=trace,
        stats=BalanceStats(per_iteration=stats, final=final),
    )


def _run_transfer_stage(spec: PhaseSpec, state: BalancerState,
                        knowledge, trace: TransferTrace, iteration: int) -> int:
    R = spec.rank_count
    work_lists: list[deque[TransferCandidate]] = []
    for r in range(R):
        entries = []
        for p in sorted(knowledge[r]):
            if p == r:
                continue
            cand = find_best_ccm(spec, state, r, knowledge[r][p])
            if cand is not None:
                trace.add(iteration, "evaluate", rank=r, peer=p, fresh=False,
                          diff=cand.predicted_work_diff,
                          overage_diff=cand.overage_diff)
                entries.append(cand)
        entries.sort(key=lambda c: (-c.overage_diff, -c.predicted_work_diff, c.peer))
        work_lists.append(deque(entries))

    current: list[TransferCandidate | None] = [None] * R

    def on_grant(rank: int, target: int) -> None:
        trace.add(iteration, "lock", requester=rank, target=target,
                  outcome="granted")

    def on_release(rank: int, target: int, reason: str) -> None:
        trace.add(iteration, "unlock", owner=rank, target=target, reason=reason)

    def on_backoff(rank: int, target: int) -> None:
        entry = current[rank]
        current[rank] = None
        if entry is not None:
            work_lists[rank].append(entry)

    protocol = LockProtocol(R, on_grant=on_grant, on_release=on_release,
                            on_backoff=on_backoff)
    transfers = 0
    budget = 40 * R * (R + sum(len(w) for w in work_lists)) + 200
    steps = 0
    active = True
    while active:
        active = False
        for r in range(R):
            steps += 1
            if steps > budget:
                raise ProtocolError("transfer stage failed to settle")
            if protocol.can_proceed(r):
                peer = protocol.holding[r]
                if try_transfer(spec, state, r, peer, protocol, trace, iteration):
                    transfers += 1
                current[r] = None
                active = True
            elif (r not in protocol.holding and current[r] is None
                  and work_lists[r]):
                entry = work_lists[r].popleft()
                current[r] = entry
                outcome = protocol.request(r, entry.peer)
                if outcome == "queued":
                    trace.add(iteration, "lock", requester=r, target=entry.peer,
                              outcome="queued")
                elif r not in protocol.holding:
                    # granted but immediately backed off by the cycle rule
                    pass
                active = True
            protocol.assert_acyclic()
    return transfers
