"""Mixed-integer program construction for provably optimal placements.

Two program kinds are built from a phase. `comcp` covers compute-only
balancing under the memory bound; `fwmp` adds communication and homing
terms. Both use the makespan device: a continuous variable `w_max` bounds
every rank's work from above and is the only objective term, and the
max() hiding in the off-rank volume is linearized by emitting one row per
index permutation (sent and received bounded separately).

Binary layout of the decision vector x (row-major throughout):

    chi[i][k]   task k on rank i                (variable)
    phi[i][n]   block n present on rank i       (variable)
    psi[i][j][m] edge m received on i, sent on j (variable, fwmp only)
    w_max       continuous makespan             (last coordinate)

Block-task membership u[k][n] and block homes v[i][n] are parameters.
The presence matrix phi is pinned to the boolean product chi (x) u by
pairs of linear rows, and likewise each psi slice to chi (x) w_m (x)
chi^T; `verify_theorems` checks numerically that those rows admit exactly
one binary solution.

Constraints are stored as `eq_matrix @ x == eq_rhs` and
`ineq_matrix @ x + ineq_offset >= 0`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .phase import PhaseSpec, WorkCoefficients


def block_membership(spec: PhaseSpec) -> np.ndarray:
    """u: K x N binary, task k uses block n."""
    u = np.zeros((spec.task_count, spec.block_count), dtype=np.int8)
    for t in spec.tasks:
        if t.block is not None:
            u[t.id, t.block] = 1
    return u


def block_homes(spec: PhaseSpec) -> np.ndarray:
    """v: I x N binary, block n homed on rank i."""
    v = np.zeros((spec.rank_count, spec.block_count), dtype=np.int8)
    for b in spec.blocks:
        v[b.home, b.id] = 1
    return v


def positive_comms(spec: PhaseSpec):
    """Communications retained for tensor construction (zero volume dropped)."""
    return [c for c in spec.comms if c.volume > 0]


def comm_tensor(spec: PhaseSpec) -> np.ndarray:
    """w: K x K x M binary with one nonzero per edge slice.

    Slices are receiver-major: w[k, l, m] = 1 when edge m is received by
    task k and sent by task l. Rank-level slices inherit the convention:
    psi[i, j, m] = 1 when edge m is received on rank i and sent on rank j,
    so diagonals carry the on-rank volume.
    """
    comms = positive_comms(spec)
    w = np.zeros((spec.task_count, spec.task_count, len(comms)), dtype=np.int8)
    for m, c in enumerate(comms):
        w[c.dst, c.src, m] = 1
    return w


def chi_matrix(assignment, rank_count: int) -> np.ndarray:
    """One-hot I x K matrix from a rank-per-task vector."""
    vec = np.asarray(assignment, dtype=int)
    chi = np.zeros((rank_count, len(vec)), dtype=np.int8)
    chi[vec, np.arange(len(vec))] = 1
    return chi


def _as_chi(spec: PhaseSpec, chi) -> np.ndarray:
    arr = np.asarray(chi)
    if arr.ndim == 1:
        arr = chi_matrix(arr, spec.rank_count)
    if arr.shape != (spec.rank_count, spec.task_count):
        raise DomainError(f"chi must be {spec.rank_count}x{spec.task_count}")
    if not np.all((arr == 0) | (arr == 1)):
        raise DomainError("chi must be binary")
    if not np.all(arr.sum(axis=0) == 1):
        raise DomainError("chi is inconsistent: every task needs exactly one rank")
    return arr.astype(np.int8)


def boolean_phi(spec: PhaseSpec, chi) -> np.ndarray:
    """Presence matrix as the boolean product of chi and u."""
    chi = _as_chi(spec, chi)
    return ((chi @ block_membership(spec)) > 0).astype(np.int8)


def boolean_psi(spec: PhaseSpec, chi) -> np.ndarray:
    """Rank-level comm tensor: per slice, chi (x) w_m (x) chi^T."""
    chi = _as_chi(spec, chi)
    w = comm_tensor(spec)
    psi = np.einsum("ik,klm,jl->ijm", chi, w, chi)
    return (psi > 0).astype(np.int8)


@dataclass
class AssignmentMatrices:
    u: np.ndarray
    v: np.ndarray
    chi: np.ndarray
    phi: np.ndarray


@dataclass
class MilpInstance:
    """Dense program: objective, equality and inequality rows, names."""

    kind: str  # "comcp" | "fwmp"
    rank_count: int
    task_count: int
    comm_count: int
    block_count: int
    var_names: list[str]
    c: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    eq_names: list[str]
    ineq_matrix: np.ndarray
    ineq_offset: np.ndarray
    ineq_names: list[str]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def binaries(self) -> list[str]:
        return self.var_names[:-1]

    def metadata(self) -> dict:
        return {
            "I": self.rank_count,
            "K": self.task_count,
            "M": self.comm_count,
            "N": self.block_count,
            "kind": self.kind,
            "rows_eq": int(self.eq_matrix.shape[0]),
            "rows_ineq": int(self.ineq_matrix.shape[0]),
            "binaries": len(self.binaries),
        }


def _var_names(I: int, K: int, N: int, M: int, with_psi: bool) -> list[str]:
    names = [f"chi_{i}_{k}" for i in range(I) for k in range(K)]
    names += [f"phi_{i}_{n}" for i in range(I) for n in range(N)]
    if with_psi:
        names += [f"psi_{i}_{j}_{m}" for i in range(I) for j in range(I)
                  for m in range(M)]
    names.append("w_max")
    return names


class _Rows:
    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.rows: list[np.ndarray] = []
        self.offsets: list[float] = []
        self.names: list[str] = []

    def add(self, name: str, coeffs: dict[int, float], offset: float = 0.0) -> None:
        row = np.zeros(self.n_vars)
        for idx, val in coeffs.items():
            row[idx] += val
        self.rows.append(row)
        self.offsets.append(offset)
        self.names.append(name)


def _common_core(spec: PhaseSpec, with_psi: bool):
    I, K, N = spec.rank_count, spec.task_count, spec.block_count
    if K == 0:
        raise DomainError("phase has no tasks; nothing to assign")
    comms = positive_comms(spec)
    M = len(comms) if with_psi else 0
    names = _var_names(I, K, N, M, with_psi)
    nv = len(names)
    chi_at = lambda i, k: i * K + k
    phi_at = lambda i, n: I * K + i * N + n
    psi_at = lambda i, j, m: I * (K + N) + (i * I + j) * M + m
    w_at = nv - 1

    c = np.zeros(nv)
    c[w_at] = 1.0

    eq = _Rows(nv)
    for k in range(K):
        eq.add(f"eqK_{k}", {chi_at(i, k): 1.0 for i in range(I)})

    u = block_membership(spec)
    rows = _Rows(nv)
    # presence lower bounds: phi_{i,n} >= u_{k,n} chi_{i,k}
    for i in range(I):
        for n in range(N):
            for k in range(K):
                rows.add(f"thm3lb_{i}_{n}_{k}",
                         {phi_at(i, n): 1.0, chi_at(i, k): -float(u[k, n])})
    # presence upper bounds: phi_{i,n} <= sum_k u_{k,n} chi_{i,k}
    for i in range(I):
        for n in range(N):
            coeffs = {chi_at(i, k): float(u[k, n]) for k in range(K)}
            coeffs[phi_at(i, n)] = -1.0
            rows.add(f"thm3ub_{i}_{n}", coeffs)
    # memory bound, max overhead unrolled into one row per resident task
    for i in range(I):
        budget = spec.rank_available_mem[i] - spec.rank_base_mem[i]
        for k in range(K):
            coeffs = {chi_at(i, l): -float(spec.tasks[l].base_mem) for l in range(K)}
            coeffs[chi_at(i, k)] = coeffs.get(chi_at(i, k), 0.0) - float(
                spec.tasks[k].overhead_mem)
            for n in range(N):
                coeffs[phi_at(i, n)] = -float(spec.blocks[n].size)
            rows.add(f"mem_{i}_{k}", coeffs, offset=budget)
    return names, c, eq, rows, comms, (chi_at, phi_at, psi_at, w_at)


def _finish(spec: PhaseSpec, kind: str, names, c, eq, rows, comm_count: int) -> MilpInstance:
    return MilpInstance(
        kind=kind,
        rank_count=spec.rank_count,
        task_count=spec.task_count,
        comm_count=comm_count,
        block_count=spec.block_count,
        var_names=names,
        c=c,
        eq_matrix=np.array(eq.rows) if eq.rows else np.zeros((0, len(names))),
        eq_rhs=np.ones(len(eq.rows)),
        eq_names=eq.names,
        ineq_matrix=np.array(rows.rows),
        ineq_offset=np.array(rows.offsets),
        ineq_names=rows.names,
    )


def build_comcp(spec: PhaseSpec, coeffs: WorkCoefficients) -> MilpInstance:
    """Compute-only program: alpha=1, beta=gamma=delta=0 required.

    Inequality count is I*(K+1)*(N+1): presence lower/upper bounds, the
    memory rows, and one makespan row per rank.
    """
    if not coeffs.compute_only:
        raise ConfigError("comcp requires alpha=1 and beta=gamma=delta=0")
    I, K = spec.rank_count, spec.task_count
    names, c, eq, rows, _, (chi_at, _, _, w_at) = _common_core(spec, with_psi=False)
    for i in range(I):
        coeffs_row = {chi_at(i, k): -spec.tasks[k].load for k in range(K)}
        coeffs_row[w_at] = 1.0
        rows.add(f"span_{i}", coeffs_row)
    inst = _finish(spec, "comcp", names, c, eq, rows, comm_count=0)
    expected = I * (K + 1) * (spec.block_count + 1)
    assert inst.ineq_matrix.shape[0] == expected
    return inst


def build_fwmp(spec: PhaseSpec, coeffs: WorkCoefficients) -> MilpInstance:
    """Full work model program over chi, phi, psi and w_max.

    Adds three rows per (i, j, m) pinning psi to the boolean tensor
    product, and two work rows per rank (one per permutation of the
    off-rank direction, so w_max bounds both the sent and received sums).
    Inequality count is I*[(K+1)*(N+1) + 3*I*M + 1].
    """
    I, K, N = spec.rank_count, spec.task_count, spec.block_count
    names, c, eq, rows, comms, (chi_at, phi_at, psi_at, w_at) = _common_core(
        spec, with_psi=True)
    M = len(comms)
    # receiver-major endpoints of each retained edge
    recv = [c_.dst for c_ in comms]
    sent = [c_.src for c_ in comms]

    for i in range(I):
        for j in range(I):
            for m in range(M):
                rows.add(f"thm5a_{i}_{j}_{m}",
                         {chi_at(i, recv[m]): 1.0, psi_at(i, j, m): -1.0})
    for i in range(I):
        for j in range(I):
            for m in range(M):
                rows.add(f"thm5b_{i}_{j}_{m}",
                         {chi_at(j, sent[m]): 1.0, psi_at(i, j, m): -1.0})
    for i in range(I):
        for j in range(I):
            for m in range(M):
                rows.add(f"thm5c_{i}_{j}_{m}",
                         {psi_at(i, j, m): 1.0,
                          chi_at(i, recv[m]): -1.0,
                          chi_at(j, sent[m]): -1.0},
                         offset=1.0)

    v = block_homes(spec)
    for i in range(I):
        for sigma in range(2):
            coeffs_row: dict[int, float] = {w_at: 1.0}
            for k in range(K):
                coeffs_row[chi_at(i, k)] = -coeffs.alpha * spec.tasks[k].load
            for m, c_ in enumerate(comms):
                for j in range(I):
                    if j == i:
                        continue
                    at = psi_at(i, j, m) if sigma == 0 else psi_at(j, i, m)
                    coeffs_row[at] = coeffs_row.get(at, 0.0) - coeffs.beta * c_.volume
                at = psi_at(i, i, m)
                coeffs_row[at] = coeffs_row.get(at, 0.0) - coeffs.gamma * c_.volume
            for n in range(N):
                at = phi_at(i, n)
                coeffs_row[at] = (coeffs_row.get(at, 0.0)
                                  - coeffs.delta * spec.blocks[n].size * (1 - int(v[i, n])))
            rows.add(f"work_{i}_{sigma}", coeffs_row)

    inst = _finish(spec, "fwmp", names, c, eq, rows, comm_count=M)
    expected = I * ((K + 1) * (N + 1) + 3 * I * M + 1)
    assert inst.ineq_matrix.shape[0] == expected
    return inst


def build_instance(spec: PhaseSpec, coeffs: WorkCoefficients, kind: str) -> MilpInstance:
    if kind == "comcp":
        return build_comcp(spec, coeffs)
    if kind == "fwmp":
        return build_fwmp(spec, coeffs)
    raise ConfigError(f"unknown program kind {kind!r}")


# ---------------------------------------------------------------------------
# Theorem verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplianceRow:
    """One presence-bound row: how tight each side is for a (i, n, k)."""

    i: int
    n: int
    k: int
    u: int
    chi: int
    lower: int
    lower_tight: bool
    phi: int
    upper: int
    upper_tight: bool


@dataclass
class TheoremReport:
    phi: np.ndarray
    psi: np.ndarray
    phi_unique: bool
    psi_unique: bool
    compliance: list[ComplianceRow]

    @property
    def ok(self) -> bool:
        return self.phi_unique and self.psi_unique


def verify_theorems(spec: PhaseSpec, chi) -> TheoremReport:
    """Check that the boolean-product phi/psi are forced by the linear rows.

    For each entry the pair of bounds must pin the binary value: a 1 needs
    a lower-bound witness, a 0 needs its upper bound to vanish. Returns
    the per-entry compliance table for the presence bounds.
    """
    chi = _as_chi(spec, chi)
    u = block_membership(spec)
    phi = boolean_phi(spec, chi)
    psi = boolean_psi(spec, chi)
    I, K, N = spec.rank_count, spec.task_count, spec.block_count

    phi_unique = True
    compliance: list[ComplianceRow] = []
    for i in range(I):
        for n in range(N):
            products = [int(u[k, n]) * int(chi[i, k]) for k in range(K)]
            upper = sum(products)
            p = int(phi[i, n])
            if p == 1 and max(products, default=0) != 1:
                phi_unique = False  # flipping to 0 would not violate anything
            if p == 0 and upper != 0:
                phi_unique = False  # flipping to 1 would still satisfy the upper bound
            for k in range(K):
                compliance.append(ComplianceRow(
                    i=i, n=n, k=k, u=int(u[k, n]), chi=int(chi[i, k]),
                    lower=products[k], lower_tight=products[k] == p,
                    phi=p, upper=upper, upper_tight=upper == p,
                ))

    comms = positive_comms(spec)
    psi_unique = True
    for m, c in enumerate(comms):
        for i in range(I):
            for j in range(I):
                ub = min(int(chi[i, c.dst]), int(chi[j, c.src]))
                lb = int(chi[i, c.dst]) + int(chi[j, c.src]) - 1
                p = int(psi[i, j, m])
                if p == 1 and lb != 1:
                    psi_unique = False
                if p == 0 and ub != 0:
                    psi_unique = False
    return TheoremReport(phi=phi, psi=psi, phi_unique=phi_unique,
                         psi_unique=psi_unique, compliance=compliance)


def verify_consistent_batch(spec: PhaseSpec, assignments: np.ndarray) -> bool:
    """Vectorized uniqueness check over a batch of rank-per-task vectors."""
    A = np.asarray(assignments, dtype=int)
    B, K = A.shape
    I = spec.rank_count
    X = (A[:, None, :] == np.arange(I)[None, :, None])  # B x I x K
    u = block_membership(spec).astype(bool)
    sums = np.einsum("bik,kn->bin", X.astype(np.int32), u.astype(np.int32))
    phi = sums > 0
    # 1-entries need a witness product (sums >= 1 by construction), and
    # 0-entries need the whole upper bound to vanish; both reduce to the
    # statement that sums == 0 exactly where phi == 0.
    if not np.array_equal(sums == 0, ~phi):
        return False
    comms = positive_comms(spec)
    if comms:
        recv = np.array([c.dst for c in comms])
        sent = np.array([c.src for c in comms])
        Xi = X[:, :, recv]  # B x I x M: receiver task on rank i
        Xj = X[:, :, sent]  # B x I x M: sender task on rank j
        psi = Xi[:, :, None, :] & Xj[:, None, :, :]
        lb = (Xi[:, :, None, :].astype(np.int8)
              + Xj[:, None, :, :].astype(np.int8) - 1)
        ub = np.minimum(Xi[:, :, None, :].astype(np.int8),
                        Xj[:, None, :, :].astype(np.int8))
        if not (np.all(lb[psi] == 1) and np.all(ub[~psi] == 0)):
            return False
    return True


def count_consistent_chi(I: int, K: int) -> int:
    """Binary I x K matrices whose columns each sum to one."""
    count = 0
    for bits in range(2 ** (I * K)):
        mat = [(bits >> (i * K + k)) & 1 for i in range(I) for k in range(K)]
        ok = all(sum(mat[i * K + k] for i in range(I)) == 1 for k in range(K))
        count += ok
    return count


def gap(w_int: float, w_lower: float) -> float:
    """Relative distance of an integral solution from a lower bound."""
    if w_lower <= 0:
        raise DomainError("gap needs a positive lower bound")
    return (w_int - w_lower) / w_lower


# ---------------------------------------------------------------------------
# LP text export
# ---------------------------------------------------------------------------


def _coef(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _terms(row: np.ndarray, names: list[str]) -> str:
    parts = []
    for idx in np.nonzero(row)[0]:
        val = row[idx]
        sign = "-" if val < 0 else "+"
        mag = abs(float(val))
        parts.append(f"{sign} {_coef(mag)} {names[idx]}")
    return " ".join(parts) if parts else "+ 0 " + names[0]


def export_lp(instance: MilpInstance, path: str | Path,
              sidecar: str | Path | None = None) -> dict:
    """Write the instance as LP text; returns (and optionally writes) metadata."""
    names = instance.var_names
    lines = ["Minimize", " obj: + 1 w_max", "Subject To"]
    for name, row in zip(instance.eq_names, instance.eq_matrix):
        lines.append(f" {name}: {_terms(row, names)} = 1")
    for name, row, off in zip(instance.ineq_names, instance.ineq_matrix,
                              instance.ineq_offset):
        lines.append(f" {name}: {_terms(row, names)} >= {_coef(-off)}")
    lines.append("Bounds")
    lines.append(" w_max >= 0")
    lines.append("Binaries")
    for chunk_start in range(0, len(instance.binaries), 8):
        lines.append(" " + " ".join(instance.binaries[chunk_start:chunk_start + 8]))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = instance.metadata()
    if sidecar is not None:
        import json

        with open(sidecar, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return meta
