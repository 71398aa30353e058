"""Command-line front end.

Subcommands: simulate, export-milp, solve-exact, compare, sweep-delta,
datared, loss, verify-theorems. Every artifact embeds the resolved run
configuration and a format version; exit codes are 0 on success, 2 for
configuration errors, 3 for input-format errors, 4 for refusals.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import Assignment
from .datared import load_table, save_table, dynamic_data_reduce, under_penalized_rmse
from .engine import ccm_lb
from .errors import (
    CcmlbError,
    ConfigError,
    DomainError,
    InfeasibleError,
    SpecFormatError,
)
from .exact import solve_exact
from .gossip import build_peer_network  # noqa: F401  (re-exported for scripts)
from .milp import build_instance, export_lp, gap, verify_theorems
from .phase import PhaseSpec, WorkCoefficients, load_phase

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_REFUSED = 4


def _add_coeff_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=int, default=1, help="include compute load (0 or 1)")
    p.add_argument("--beta", type=float, default=0.0,
                   help="seconds per off-rank byte")
    p.add_argument("--gamma", type=float, default=0.0,
                   help="seconds per on-rank byte")
    p.add_argument("--delta", type=float, default=0.0,
                   help="seconds per off-home byte")
    p.add_argument("--enforce-memory", action="store_true",
                   help="treat the per-rank memory bound as a hard constraint")


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", type=int, default=8, help="balancing iterations")
    p.add_argument("--rounds", type=int, default=2, help="gossip rounds per iteration")
    p.add_argument("--fanout", type=int, default=4, help="gossip fanout")
    p.add_argument("--seed", type=int, default=0, help="simulation seed")
    p.add_argument("--comm-threshold", type=float, default=0.0,
                   help="minimum edge bytes that merge two tasks into a cluster")


def _coeffs(args) -> WorkCoefficients:
    try:
        return WorkCoefficients(alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                                delta=args.delta, enforce_memory=args.enforce_memory)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _config_dict(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _artifact(args, body: dict) -> dict:
    return {"format_version": FORMAT_VERSION, "tool_version": __version__,
            "config": _config_dict(args), **body}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _spearman(xs, ys) -> float:
    """Spearman rank correlation; 0 when either side is constant."""
    from scipy import stats

    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return 0.0
    rho = stats.spearmanr(xs, ys).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def off_home_residencies(spec: PhaseSpec, assignment: Assignment) -> int:
    """Count of (rank, block) pairs where a resident block is off its home."""
    return sum(
        1
        for r in range(spec.rank_count)
        for b in assignment.resident_blocks(r)
        if spec.blocks[b].home != r
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = load_phase(args.spec)
    coeffs = _coeffs(args)
    result = ccm_lb(spec, coeffs, n_iter=args.iters, k_rounds=args.rounds,
                    fanout=args.fanout, seed=args.seed,
                    comm_threshold=args.comm_threshold,
                    verbose_gossip=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats_doc = _artifact(args, result.stats.document())
    _write_json(out / "stats.json", stats_doc)
    header = {"format_version": FORMAT_VERSION, "config": _config_dict(args)}
    result.trace.write(out / "trace.log", header=header)
    _write_json(out / "assignment.json", _artifact(args, {
        "assignment": list(result.assignment.rank_of_task),
    }))
    print(f"wrote {out / 'stats.json'} and {out / 'trace.log'}")
    return EXIT_OK


def cmd_export_milp(args) -> int:
    spec = load_phase(args.spec)
    coeffs = _coeffs(args)
    instance = build_instance(spec, coeffs, args.kind)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = export_lp(instance, out)
    _write_json(Path(str(out) + ".meta.json"), _artifact(args, meta))
    print(f"wrote {out} ({meta['rows_eq']} equalities, {meta['rows_ineq']} "
          f"inequalities, {meta['binaries']} binaries)")
    return EXIT_OK


def cmd_solve_exact(args) -> int:
    spec = load_phase(args.spec)
    coeffs = _coeffs(args)
    result = solve_exact(spec, coeffs, max_enumeration=args.max_enum)
    doc = _artifact(args, result.to_json())
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(doc["w_max_s"] if args.quiet else doc, sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    spec = load_phase(args.spec)
    coeffs = _coeffs(args)
    exact = solve_exact(spec, coeffs, max_enumeration=args.max_enum)
    runs = []
    for i in range(args.repeats):
        seed = args.seed + i
        res = ccm_lb(spec, coeffs, n_iter=args.iters, k_rounds=args.rounds,
                     fanout=args.fanout, seed=seed,
                     comm_threshold=args.comm_threshold)
        w = max(res.assignment.works(coeffs))
        entry = {"seed": seed, "w_max_s": w if math.isfinite(w) else None,
                 "transfers": sum(s["transfers"] for s in res.stats.per_iteration)}
        if math.isfinite(exact.w_max) and math.isfinite(w):
            if w < exact.w_max - 1e-9 * max(1.0, exact.w_max):
                raise CcmlbError(
                    f"internal error: heuristic {w} beat the exact optimum "
                    f"{exact.w_max}"
                )
            entry["gap"] = gap(w, exact.w_max)
            entry["dw_max_pct"] = 100.0 * entry["gap"]
        runs.append(entry)
    gaps = [r["gap"] for r in runs if "gap" in r]
    body = {
        "reference": "exact-optimum",
        "exact": exact.to_json(),
        "runs": runs,
        "gap_min": min(gaps) if gaps else None,
        "gap_max": max(gaps) if gaps else None,
    }
    doc = _artifact(args, body)
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps({"gap_min": body["gap_min"], "gap_max": body["gap_max"]},
                     sort_keys=True))
    return EXIT_OK


def cmd_sweep_delta(args) -> int:
    spec = load_phase(args.spec)
    deltas = [float(x) for x in args.deltas.split(",") if x != ""]
    if not deltas:
        raise ConfigError("--deltas needs at least one value")
    per_seed = []
    for s in range(args.sweep_seeds):
        seed = args.seed + s
        counts = []
        for d in deltas:
            coeffs = WorkCoefficients(alpha=args.alpha, beta=args.beta,
                                      gamma=args.gamma, delta=d,
                                      enforce_memory=args.enforce_memory)
            res = ccm_lb(spec, coeffs, n_iter=args.iters, k_rounds=args.rounds,
                         fanout=args.fanout, seed=seed,
                         comm_threshold=args.comm_threshold)
            counts.append(off_home_residencies(spec, res.assignment))
        per_seed.append({
            "seed": seed,
            "n_off": counts,
            "spearman": _spearman(deltas, counts),
        })
    body = {"deltas": deltas, "per_seed": per_seed,
            "nonpositive_trend_seeds": sum(1 for e in per_seed
                                           if e["spearman"] <= 0)}
    doc = _artifact(args, body)
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps({"nonpositive_trend_seeds": body["nonpositive_trend_seeds"],
                      "seeds": args.sweep_seeds}, sort_keys=True))
    return EXIT_OK


def cmd_datared(args) -> int:
    table = load_table(args.csv)
    reduced, log = dynamic_data_reduce(table, n_bins=args.bins, theta=args.theta,
                                       n_target=args.target, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_table(reduced, out)
    _write_json(Path(str(out) + ".meta.json"), _artifact(args, {
        "rows_in": table.n_rows,
        "rows_out": reduced.n_rows,
        "removals": [
            {"bin": step.bin_index, "removed": step.removed,
             "bin_size_before": step.bin_size_before}
            for step in log
        ],
    }))
    print(f"wrote {out} ({reduced.n_rows} rows)")
    return EXIT_OK


def cmd_loss(args) -> int:
    table = load_table(args.csv)
    if table.features.shape[1] != 1:
        raise DomainError(
            "loss expects a two-column CSV: prediction, then truth"
        )
    predictions = table.features[:, 0]
    truths = table.targets
    value = under_penalized_rmse(predictions, truths, args.alpha)
    if args.out:
        _write_json(Path(args.out), _artifact(args, {"loss_s": value}))
    print(repr(value))
    return EXIT_OK


def cmd_verify_theorems(args) -> int:
    spec = load_phase(args.spec)
    if args.all_assignments:
        total = spec.rank_count ** spec.task_count
        if total > args.max_enum:
            raise InfeasibleError(
                f"verifying all {total} assignments is above the limit"
            )
        place = spec.rank_count ** (spec.task_count - 1 - np.arange(spec.task_count))
        vectors = (np.arange(total)[:, None] // place[None, :]) % spec.rank_count
    else:
        vectors = np.asarray([spec.initial_assignment])
    failures = 0
    for vec in vectors:
        report = verify_theorems(spec, vec)
        if not report.ok:
            failures += 1
    body = {"assignments_checked": int(len(vectors)), "failures": failures}
    doc = _artifact(args, body)
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(body, sort_keys=True))
    return EXIT_OK if failures == 0 else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccmlb",
        description="Work-model task placement: simulate the distributed "
                    "balancer, export integer programs, gap-check against "
                    "exact optima, and prepare timing datasets.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the distributed balancer")
    p.add_argument("--spec", required=True, help="phase description JSON")
    _add_coeff_flags(p)
    _add_engine_flags(p)
    p.add_argument("--verbose", action="store_true",
                   help="log one trace line per gossip message")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-milp", help="write an LP file for a phase")
    p.add_argument("--spec", required=True)
    p.add_argument("--kind", choices=["comcp", "fwmp"], default="fwmp")
    _add_coeff_flags(p)
    p.add_argument("--out", required=True, help="output .lp path")
    p.set_defaults(func=cmd_export_milp)

    p = sub.add_parser("solve-exact", help="brute-force the optimal placement")
    p.add_argument("--spec", required=True)
    _add_coeff_flags(p)
    p.add_argument("--max-enum", type=int, default=10 ** 7)
    p.add_argument("--quiet", action="store_true", help="print only w_max")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("compare", help="heuristic vs exact optimum gap report")
    p.add_argument("--spec", required=True)
    _add_coeff_flags(p)
    _add_engine_flags(p)
    p.add_argument("--repeats", type=int, default=5,
                   help="independent heuristic runs")
    p.add_argument("--max-enum", type=int, default=10 ** 7)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-delta", help="off-home block counts across delta")
    p.add_argument("--spec", required=True)
    _add_coeff_flags(p)
    _add_engine_flags(p)
    p.add_argument("--deltas", default="0,1e-12,1e-11,1e-10,1e-9",
                   help="comma-separated delta values")
    p.add_argument("--sweep-seeds", type=int, default=10,
                   help="number of seeds per delta")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep_delta)

    p = sub.add_parser("datared", help="histogram-based dataset downsampling")
    p.add_argument("--csv", required=True, help="input CSV, last column duration")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--target", type=int, required=True, help="target row count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datared)

    p = sub.add_parser("loss", help="under-penalized RMSE of predictions")
    p.add_argument("--csv", required=True,
                   help="two-column CSV with header: prediction, truth")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="under-prediction penalty scale")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("verify-theorems",
                       help="check the linear rows pin phi/psi to the boolean products")
    p.add_argument("--spec", required=True)
    p.add_argument("--all-assignments", action="store_true",
                   help="check every consistent assignment, not just the initial one")
    p.add_argument("--max-enum", type=int, default=10 ** 6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify_theorems)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which matches our convention
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpecFormatError as exc:
        print(f"input format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except InfeasibleError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except DomainError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CcmlbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
