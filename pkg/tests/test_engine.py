from __future__ import annotations

import math

import pytest

from ccmlb.assignment import Assignment, memory_feasible
from ccmlb.engine import (
    LockProtocol,
    LockTable,
    ccm_lb,
    cycle_avoid,
    find_best_ccm,
    try_lock,
    try_transfer,
)
from ccmlb.errors import ConfigError, ProtocolError
from ccmlb.phase import WorkCoefficients
from ccmlb.state import BalancerState
from ccmlb.synth import random_phase

from conftest import make_phase


def _apply_candidate(state, rank, cand):
    """Recompute the pairwise max key a candidate would actually achieve."""
    trial = state.assignment.copy()
    if cand.self_cluster:
        trial.apply_transfer(sorted(cand.self_cluster.tasks), rank, cand.peer)
    if cand.peer_cluster:
        trial.apply_transfer(sorted(cand.peer_cluster.tasks), cand.peer, rank)
    return max(trial.work_key(rank, state.coeffs),
               trial.work_key(cand.peer, state.coeffs))


class TestFindBest:
    def test_identical_ranks_have_no_move(self):
        spec = make_phase(loads=[3.0, 3.0], initial=[0, 1])
        state = BalancerState(spec, WorkCoefficients(alpha=1))
        assert find_best_ccm(spec, state, 0, state.current_info(1)) is None

    def test_pure_give_on_imbalanced_pair(self):
        # loads 10 vs 0 split as {6, 4}: either give leaves max 6, diff 4
        spec = make_phase(loads=[6.0, 4.0], initial=[0, 0])
        state = BalancerState(spec, WorkCoefficients(alpha=1))
        cand = find_best_ccm(spec, state, 0, state.current_info(1))
        assert cand is not None
        assert cand.peer_cluster is None
        assert cand.predicted_work_diff == pytest.approx(10.0 - 6.0)
        assert _apply_candidate(state, 0, cand)[1] == pytest.approx(6.0)

    def test_matches_exhaustive_pair_enumeration(self):
        coeffs = WorkCoefficients(alpha=1, beta=1e-6, gamma=1e-7, delta=1e-6,
                                  enforce_memory=True)
        for seed in range(12):
            spec = random_phase(seed, rank_count=3, task_count=10, block_count=2,
                                comm_count=8)
            state = BalancerState(spec, coeffs)
            for rank, peer in ((0, 1), (1, 2), (2, 0)):
                base = max(state.assignment.work_key(rank, coeffs),
                           state.assignment.work_key(peer, coeffs))
                best_after = None
                for c_r in (None, *state.clusters[rank]):
                    for c_p in (None, *state.clusters[peer]):
                        if c_r is None and c_p is None:
                            continue
                        trial = state.assignment.copy()
                        if c_r:
                            trial.apply_transfer(sorted(c_r.tasks), rank, peer)
                        if c_p:
                            trial.apply_transfer(sorted(c_p.tasks), peer, rank)
                        after = max(trial.work_key(rank, coeffs),
                                    trial.work_key(peer, coeffs))
                        if best_after is None or after < best_after:
                            best_after = after
                cand = find_best_ccm(spec, state, rank, state.current_info(peer))
                if best_after is not None and best_after < base:
                    assert cand is not None
                    achieved = _apply_candidate(state, rank, cand)
                    assert achieved == pytest.approx(best_after)
                else:
                    assert cand is None

    def test_never_selects_memory_violation(self):
        # rank 1 lacks room for either task's footprint; every load-improving
        # give would blow its budget, so no candidate may be returned
        spec = make_phase(loads=[3.0, 2.0], base_mems=[80, 80], initial=[0, 0],
                          node_mem=[400, 20])
        state = BalancerState(spec, WorkCoefficients(alpha=1, enforce_memory=True))
        assert memory_feasible(spec, state.assignment).feasible
        assert find_best_ccm(spec, state, 0, state.current_info(1)) is None
        relaxed = BalancerState(spec, WorkCoefficients(alpha=1))
        assert find_best_ccm(spec, relaxed, 0, relaxed.current_info(1)) is not None


class TestLocks:
    def test_grant_then_queue(self):
        table = LockTable(3)
        assert try_lock(table, 0, 2) == "granted"
        assert try_lock(table, 1, 2) == "queued"
        assert table.owner_of(2) == 0
        assert table.queue[2] == [1]

    def test_double_acquire_rejected(self):
        table = LockTable(3)
        try_lock(table, 0, 2)
        with pytest.raises(ProtocolError):
            try_lock(table, 0, 2)

    def test_release_hands_to_lowest_requester(self):
        table = LockTable(4)
        try_lock(table, 3, 0)
        try_lock(table, 2, 0)
        try_lock(table, 1, 0)
        assert table.release(0, 3) == 1
        assert table.queue[0] == [2]

    def test_cycle_avoid_rule(self):
        # holder 3 <= acquired 5: back off; holder 7 > acquired 5: keep
        table = LockTable(8)
        try_lock(table, 4, 5)
        try_lock(table, 3, 4)
        assert cycle_avoid(table, 4, 3, 5) == "release_and_requeue"
        table = LockTable(8)
        try_lock(table, 4, 5)
        try_lock(table, 7, 4)
        assert cycle_avoid(table, 4, 7, 5) == "keep"

    def test_mutual_requests_break_symmetrically(self):
        requeued = []
        protocol = LockProtocol(2, on_backoff=lambda r, t: requeued.append((r, t)))
        assert protocol.request(0, 1) == "granted"
        assert protocol.request(1, 0) == "granted"
        # the second grant trips the rule: rank 1 is locked by 0 and 0 <= 0
        assert requeued == [(1, 0)]
        assert protocol.holding == {0: 1}
        protocol.assert_acyclic()

    def test_three_rank_chain_never_cycles(self):
        # the adversarial grant order that defeats an acquisition-time-only
        # check: 1 locks 2, 0 locks 1, then 2 locks 0
        protocol = LockProtocol(3)
        assert protocol.request(1, 2) == "granted"
        assert protocol.request(0, 1) == "granted"
        assert protocol.request(2, 0) == "granted"
        protocol.assert_acyclic()
        # someone must have backed off, leaving a rank free to proceed
        assert any(protocol.can_proceed(r) for r in list(protocol.holding))


class TestTryTransfer:
    def _state(self, seed=0):
        spec = random_phase(seed, rank_count=3, task_count=9, block_count=2,
                            comm_count=6)
        return spec, BalancerState(spec, WorkCoefficients(alpha=1))

    def test_requires_lock(self):
        spec, state = self._state()
        protocol = LockProtocol(3)
        with pytest.raises(ProtocolError):
            try_transfer(spec, state, 0, 1, protocol)

    def test_stale_promise_fresh_denial(self):
        # make ranks equal, then hand the engine stale info claiming peer
        # still holds everything: fresh re-evaluation must decline
        spec = make_phase(loads=[2.0, 2.0, 2.0], initial=[0, 1, 2],
                          rank_count=3)
        state = BalancerState(spec, WorkCoefficients(alpha=1))
        protocol = LockProtocol(3)
        assert protocol.request(0, 1) == "granted"
        executed = try_transfer(spec, state, 0, 1, protocol)
        assert executed is None
        assert protocol.holding == {}
        assert state.assignment.rank_of_task == list(spec.initial_assignment)

    def test_executed_transfer_strictly_reduces_pair_max(self):
        spec = make_phase(loads=[8.0, 4.0, 0.0], initial=[0, 0, 1], rank_count=2)
        state = BalancerState(spec, WorkCoefficients(alpha=1))
        protocol = LockProtocol(2)
        protocol.request(0, 1)
        before = max(state.assignment.work_key(0, state.coeffs),
                     state.assignment.work_key(1, state.coeffs))
        executed = try_transfer(spec, state, 0, 1, protocol)
        assert executed is not None
        after = max(state.assignment.work_key(0, state.coeffs),
                    state.assignment.work_key(1, state.coeffs))
        assert after < before
        state.assignment.audit()


class TestCcmLb:
    def test_zero_iterations_is_identity(self):
        spec = random_phase(3, rank_count=3, task_count=9)
        result = ccm_lb(spec, WorkCoefficients(alpha=1), n_iter=0, fanout=2)
        assert result.assignment.rank_of_task == list(spec.initial_assignment)
        assert result.trace.transfers() == []

    def test_single_obvious_move(self):
        spec = make_phase(loads=[8.0, 4.0], initial=[0, 0], rank_count=2)
        result = ccm_lb(spec, WorkCoefficients(alpha=1), n_iter=2, k_rounds=1,
                        fanout=1, seed=0)
        final = result.stats.final
        assert final["max_work_s"] <= 8.0
        assert final["imbalance"] < 1.0
        assert len(result.trace.transfers()) >= 1

    def test_bad_fanout_rejected(self):
        spec = random_phase(3, rank_count=3, task_count=6)
        with pytest.raises(ConfigError):
            ccm_lb(spec, WorkCoefficients(alpha=1), fanout=3)

    def test_single_rank_phase_is_legal(self):
        spec = random_phase(4, rank_count=1, task_count=5)
        result = ccm_lb(spec, WorkCoefficients(alpha=1), n_iter=3, fanout=1)
        assert result.trace.transfers() == []
        assert result.stats.final["transfers"] == 0

    def test_trace_replay_reproduces_final_assignment(self):
        for seed in range(6):
            spec = random_phase(seed, rank_count=4, task_count=14, block_count=3,
                                comm_count=10)
            coeffs = WorkCoefficients(alpha=1, beta=1e-7, delta=1e-7)
            result = ccm_lb(spec, coeffs, n_iter=4, k_rounds=2, fanout=2,
                            seed=seed)
            replayed = result.trace.replay(spec)
            assert replayed.rank_of_task == result.assignment.rank_of_task

    def test_deterministic_trace(self):
        spec = random_phase(12, rank_count=4, task_count=12, comm_count=8)
        coeffs = WorkCoefficients(alpha=1, beta=1e-7)
        a = ccm_lb(spec, coeffs, n_iter=3, fanout=2, seed=5)
        b = ccm_lb(spec, coeffs, n_iter=3, fanout=2, seed=5)
        assert a.trace.lines() == b.trace.lines()
        assert a.stats.document() == b.stats.document()

    def test_global_max_work_never_increases_across_iterations(self):
        spec = random_phase(21, rank_count=4, task_count=16, block_count=2,
                            comm_count=10)
        coeffs = WorkCoefficients(alpha=1, beta=1e-7, gamma=1e-8, delta=1e-7)
        result = ccm_lb(spec, coeffs, n_iter=5, fanout=2, seed=3)
        maxima = [s["max_work_s"] for s in result.stats.per_iteration]
        start = max(Assignment(spec).works(coeffs))
        series = [start] + maxima
        assert all(b <= a + 1e-9 for a, b in zip(series, series[1:]))

    def test_memory_feasibility_preserved(self):
        for seed in range(10):
            spec = random_phase(seed, rank_count=3, task_count=12, block_count=3,
                                comm_count=8, mem_slack=1.3)
            coeffs = WorkCoefficients(alpha=1, delta=1e-7, enforce_memory=True)
            assert memory_feasible(spec, Assignment(spec)).feasible
            result = ccm_lb(spec, coeffs, n_iter=3, fanout=2, seed=seed)
            assert memory_feasible(spec, result.assignment).feasible
            # and every intermediate state along the replay is feasible too
            partial = Assignment(spec)
            for e in result.trace.transfers():
                if e.payload["give"]:
                    partial.apply_transfer(e.payload["give"], e.payload["rank"],
                                           e.payload["peer"])
                if e.payload["take"]:
                    partial.apply_transfer(e.payload["take"], e.payload["peer"],
                                           e.payload["rank"])
                assert memory_feasible(spec, partial).feasible

    def test_stats_schema(self):
        spec = random_phase(2, rank_count=3, task_count=9)
        result = ccm_lb(spec, WorkCoefficients(alpha=1), n_iter=2, fanout=2)
        doc = result.stats.document()
        assert set(doc) == {"per_iteration", "final"}
        assert len(doc["per_iteration"]) == 2
        for entry in doc["per_iteration"] + [doc["final"]]:
            assert set(entry) == {"max_work_s", "total_work_s", "imbalance",
                                  "transfers"}

    def test_transfer_monotone_and_third_ranks_untouched(self):
        coeffs = WorkCoefficients(alpha=1, beta=1e-7, gamma=1e-8, delta=1e-7)
        for seed in range(6):
            spec = random_phase(seed + 30, rank_count=4, task_count=14,
                                block_count=3, comm_count=12)
            result = ccm_lb(spec, coeffs, n_iter=4, fanout=3, seed=seed)
            rolling = Assignment(spec)
            for e in result.trace.transfers():
                rank, peer = e.payload["rank"], e.payload["peer"]
                before = {r: rolling.work(r, coeffs) for r in range(4)}
                before_pair = max(rolling.work_key(rank, coeffs),
                                  rolling.work_key(peer, coeffs))
                if e.payload["give"]:
                    rolling.apply_transfer(e.payload["give"], rank, peer)
                if e.payload["take"]:
                    rolling.apply_transfer(e.payload["take"], peer, rank)
                after_pair = max(rolling.work_key(rank, coeffs),
                                 rolling.work_key(peer, coeffs))
                assert after_pair < before_pair
                for r in range(4):
                    if r not in (rank, peer):
                        assert rolling.work(r, coeffs) == before[r]
