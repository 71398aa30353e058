"""Work-model based task placement: model, balancer simulation, exact programs.

The package models per-rank "work" as a calibrated mix of compute load,
communication volumes, and shared-block homing bytes under per-rank memory
bounds; simulates the fully distributed gossip-and-lock balancing protocol
deterministically; and emits/solves the equivalent integer programs so
heuristic placements can be gap-checked against provable optima on small
instances.
"""

from .assignment import Assignment, imbalance, memory_feasible, recompute_aggregates
from .clustering import Cluster, build_clusters, summarize_cluster
from .engine import (
    BalanceResult,
    LockProtocol,
    LockTable,
    TransferCandidate,
    TransferTrace,
    ccm_lb,
    cycle_avoid,
    find_best_ccm,
    try_lock,
    try_transfer,
    work_key_for_tasks,
)
from .errors import (
    CcmlbError,
    ConfigError,
    DomainError,
    InfeasibleError,
    PreconditionError,
    ProtocolError,
    SpecFormatError,
)
from .exact import ExactResult, evaluate_assignment, solve_exact
from .gossip import GossipResult, PeerKnowledge, RankInfo, build_peer_network, refresh_info
from .milp import (
    MilpInstance,
    TheoremReport,
    boolean_phi,
    boolean_psi,
    build_comcp,
    build_fwmp,
    export_lp,
    gap,
    verify_theorems,
)
from .datared import (
    SampleTable,
    dynamic_data_reduce,
    load_table,
    save_table,
    under_penalized_rmse,
)
from .phase import (
    Communication,
    PhaseSpec,
    SharedBlock,
    Task,
    WorkCoefficients,
    load_phase,
    phase_from_json,
    phase_to_json,
    save_phase,
)
from .state import BalancerState
from .synth import random_phase

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BalanceResult",
    "BalancerState",
    "CcmlbError",
    "Cluster",
    "Communication",
    "ConfigError",
    "DomainError",
    "ExactResult",
    "GossipResult",
    "InfeasibleError",
    "LockProtocol",
    "LockTable",
    "MilpInstance",
    "PeerKnowledge",
    "PhaseSpec",
    "PreconditionError",
    "ProtocolError",
    "RankInfo",
    "SampleTable",
    "SharedBlock",
    "SpecFormatError",
    "Task",
    "TheoremReport",
    "TransferCandidate",
    "TransferTrace",
    "WorkCoefficients",
    "boolean_phi",
    "boolean_psi",
    "build_clusters",
    "build_comcp",
    "build_fwmp",
    "build_peer_network",
    "ccm_lb",
    "cycle_avoid",
    "dynamic_data_reduce",
    "evaluate_assignment",
    "export_lp",
    "find_best_ccm",
    "gap",
    "imbalance",
    "load_phase",
    "load_table",
    "memory_feasible",
    "phase_from_json",
    "phase_to_json",
    "random_phase",
    "recompute_aggregates",
    "refresh_info",
    "save_phase",
    "save_table",
    "solve_exact",
    "summarize_cluster",
    "try_lock",
    "try_transfer",
    "under_penalized_rmse",
    "verify_theorems",
    "work_key_for_tasks",
]
