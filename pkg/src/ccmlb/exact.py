"""Brute-force optimal placement for tiny phases.

Enumerates all I^K rank-per-task vectors in lexicographic order and keeps
the one minimizing the max per-rank work. Evaluation goes through matrix
and tensor arithmetic (one-hot assignment, boolean products for block
presence and edge endpoints), deliberately sharing no code with the
incremental aggregates, so agreement between the two is a meaningful
cross-check and the result is a genuine optimality oracle for the
heuristic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .milp import block_homes, block_membership, positive_comms
from .phase import PhaseSpec, WorkCoefficients


@dataclass(frozen=True)
class ExactResult:
    best_assignment: tuple[int, ...]
    w_max: float
    evaluated: int
    feasible_count: int

    def to_json(self) -> dict:
        return {
            "w_max_s": None if not math.isfinite(self.w_max) else self.w_max,
            "assignment": list(self.best_assignment),
            "evaluated": self.evaluated,
            "feasible": self.feasible_count,
        }


def _static_arrays(spec: PhaseSpec):
    loads = np.array([t.load for t in spec.tasks])
    base = np.array([float(t.base_mem) for t in spec.tasks])
    over = np.array([float(t.overhead_mem) for t in spec.tasks])
    sizes = np.array([float(b.size) for b in spec.blocks])
    u = block_membership(spec).astype(np.float64)
    v = block_homes(spec).astype(np.float64)
    comms = positive_comms(spec)
    src = np.array([c.src for c in comms], dtype=int)
    dst = np.array([c.dst for c in comms], dtype=int)
    vol = np.array([c.volume for c in comms])
    rank_base = np.array([float(m) for m in spec.rank_base_mem])
    avail = np.array(spec.rank_available_mem)
    return loads, base, over, sizes, u, v, src, dst, vol, rank_base, avail


def evaluate_batch(spec: PhaseSpec, coeffs: WorkCoefficients,
                   assignments: np.ndarray):
    """Work vectors, max work, and memory feasibility for each assignment.

    `assignments` is B x K of rank ids. Returns (works B x I, w_max B,
    feasible B). Works are +inf on memory-violating ranks when enforcement
    is on.
    """
    loads, base, over, sizes, u, v, src, dst, vol, rank_base, avail = \
        _static_arrays(spec)
    A = np.asarray(assignments, dtype=int)
    B, K = A.shape
    I = spec.rank_count
    X = (A[:, None, :] == np.arange(I)[None, :, None]).astype(np.float64)

    load_r = X @ loads
    base_r = X @ base
    over_r = (X * over[None, None, :]).max(axis=2) if K else np.zeros((B, I))
    phi = ((X @ u) > 0).astype(np.float64)
    shared_r = phi @ sizes if len(sizes) else np.zeros((B, I))
    homing_r = (phi * (1.0 - v)[None, :, :]) @ sizes if len(sizes) else np.zeros((B, I))

    on_r = np.zeros((B, I))
    out_r = np.zeros((B, I))
    in_r = np.zeros((B, I))
    if len(vol):
        rs = A[:, src]  # B x M sender ranks
        rd = A[:, dst]  # B x M receiver ranks
        same = rs == rd
        ranks = np.arange(I)[None, :, None]
        on_r = ((rs[:, None, :] == ranks) & same[:, None, :]) @ vol
        out_r = ((rs[:, None, :] == ranks) & ~same[:, None, :]) @ vol
        in_r = ((rd[:, None, :] == ranks) & ~same[:, None, :]) @ vol

    max_mem = rank_base[None, :] + base_r + over_r + shared_r
    feasible_rank = max_mem <= avail[None, :]
    works = (coeffs.alpha * load_r + coeffs.beta * np.maximum(out_r, in_r)
             + coeffs.gamma * on_r + coeffs.delta * homing_r)
    if coeffs.enforce_memory:
        works = np.where(feasible_rank, works, np.inf)
    return works, works.max(axis=1), feasible_rank.all(axis=1)


def evaluate_assignment(spec: PhaseSpec, coeffs: WorkCoefficients, assignment):
    """Per-rank work vector and max work of one complete assignment."""
    works, w_max, _ = evaluate_batch(spec, coeffs, np.asarray([assignment]))
    return works[0], float(w_max[0])


def solve_exact(spec: PhaseSpec, coeffs: WorkCoefficients,
                max_enumeration: int = 10 ** 7,
                chunk_size: int = 8192) -> ExactResult:
    """Enumerate every assignment and return the minimum-max-work one.

    Ties keep the lexicographically smallest assignment vector (the first
    one found, since enumeration is lexicographic). Refuses phases whose
    I^K exceeds `max_enumeration`.
    """
    I, K = spec.rank_count, spec.task_count
    total = I ** K
    if total > max_enumeration:
        raise InfeasibleError(
            f"exact solve needs {total} evaluations, above the limit "
            f"{max_enumeration}"
        )
    place = I ** (K - 1 - np.arange(K, dtype=np.int64))
    best_w = math.inf
    best_idx = 0
    feasible = 0
    for start in range(0, total, chunk_size):
        idx = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        A = (idx[:, None] // place[None, :]) % I
        _, w_max, ok = evaluate_batch(spec, coeffs, A)
        feasible += int(ok.sum())
        pos = int(np.argmin(w_max))
        if w_max[pos] < best_w:
            best_w = float(w_max[pos])
            best_idx = start + pos
    best_vec = tuple(int(x) for x in (best_idx // place) % I)
    return ExactResult(
        best_assignment=best_vec,
        w_max=best_w,
        evaluated=total,
        feasible_count=feasible,
    )
