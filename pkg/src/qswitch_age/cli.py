"""Command-line front end: closed-form analysis, parameter optimization,
simulation, and the memory / request-set sweep experiments.

Subcommands: analyze, optimize, simulate, sweep-memory, sweep-requests,
enumerate-subsets.  Every output file embeds the fully resolved
configuration and seed, so re-running from that embedded block reproduces
the file byte for byte.  Exit codes: 0 success, 2 validation error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path
from typing import Mapping, Sequence

from .analytics import mma_age_report, ssr_average_age
from .model import (
    Instance,
    ValidationError,
    instance_from_json,
    instance_to_json,
)
from .optimize import (
    SolverError,
    enumerate_maximal_subsets,
    gamma_search,
    mma_weights,
    service_success_prob,
)
from .policies import (
    MMAParams,
    POLICY_NAMES,
    SMWParams,
    SSRParams,
    make_policy,
    optimal_mma_params,
    optimal_ssr_params,
)
from .sampling import MarginalVector, RngStream
from .simulator import run_replications, simulate

DEFAULT_SLOTS = 1_000_000
DEFAULT_BURN_IN = 10_000
DEFAULT_REPS = 10
DEFAULT_SEED = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------

def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc


def resolve_config(doc: Mapping, args: argparse.Namespace) -> dict:
    """Merge config-file fields with command-line overrides into the single
    document that gets embedded in every output."""
    resolved = dict(doc)
    if getattr(args, "seed", None) is not None:
        resolved["seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        resolved["slots"] = args.slots
    if getattr(args, "burn_in", None) is not None:
        resolved["burn_in"] = args.burn_in
    if getattr(args, "reps", None) is not None:
        resolved["reps"] = args.reps
    if getattr(args, "stream", None) is not None:
        resolved["stream"] = args.stream
    if getattr(args, "policy", None):
        resolved["policies"] = [p.strip() for p in args.policy.split(",") if p.strip()]
    resolved.setdefault("seed", DEFAULT_SEED)
    resolved.setdefault("stream", 0)
    resolved.setdefault("slots", DEFAULT_SLOTS)
    resolved.setdefault("burn_in", DEFAULT_BURN_IN)
    resolved.setdefault("reps", DEFAULT_REPS)
    resolved.setdefault("policies", list(POLICY_NAMES))
    for name in resolved["policies"]:
        if name not in POLICY_NAMES:
            raise ValidationError(f"unknown policy {name!r}")
    return resolved


def params_from_json(name: str, doc: Mapping, inst: Instance):
    """Parse an explicit policy-parameter block against an instance."""
    try:
        if name == "ssr":
            mu0 = {int(k): float(v) for k, v in doc["mu0"].items()}
            marginals = {}
            for lam_s, probs in doc["marginals"].items():
                lam = int(lam_s)
                if lam not in inst.classes:
                    raise ValidationError(f"no requests of cardinality {lam}")
                items = tuple(
                    (rid, float(probs[str(rid)])) for rid in inst.classes[lam]
                )
                marginals[lam] = MarginalVector(
                    items=items, k=inst.per_class_budget[lam]
                )
            return SSRParams(mu0=mu0, marginals=marginals)
        if name == "smw":
            return SMWParams(
                mu0={int(k): float(v) for k, v in doc["mu0"].items()},
                weight_denoms={
                    int(k): float(v) for k, v in doc["weight_denoms"].items()
                },
            )
        if name == "mma":
            return MMAParams(
                subsets=tuple(tuple(sorted(s)) for s in doc["subsets"]),
                phi=tuple(float(x) for x in doc["phi"]),
            )
    except KeyError as exc:
        raise ValidationError(f"{name} parameter block missing key {exc}") from exc
    raise ValidationError(f"unknown policy {name!r}")


def build_policy(name: str, inst: Instance, config: Mapping):
    blocks = config.get("policy_params", {})
    params = None
    if name in blocks:
        params = params_from_json(name, blocks[name], inst)
    return make_policy(name, inst, params)


def closed_form_report(name: str, policy, inst: Instance):
    if name == "ssr":
        return ssr_average_age(policy.params, inst)
    if name == "mma":
        return mma_age_report(policy.params, inst)
    return None


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, config: Mapping, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[col]) for col in header) + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _out_dir(args) -> Path:
    return Path(args.out if getattr(args, "out", None) else ".")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    raw = load_config(args.config)
    config = resolve_config(raw, args)
    if args.policy is None and "policies" not in raw:
        config["policies"] = ["ssr", "mma"]  # smw has no closed form
    inst = instance_from_json(config)
    out = _out_dir(args)
    exit_code = EXIT_OK
    for name in config["policies"]:
        if name == "smw":
            raise ValidationError(
                "no closed form exists for smw; simulate it instead"
            )
        policy = build_policy(name, inst, config)
        report = closed_form_report(name, policy, inst)
        payload = {
            "config": config,
            "policy": name,
            "report": {
                "overall": report.overall,
                "source": report.source,
                "per_request": {str(k): v for k, v in report.per_request.items()},
                "infinite": list(report.infinite),
            },
        }
        _write_json(out / f"analyze_{name}.json", payload)
        rows = [
            {
                "request": rid,
                "cardinality": inst.requests[rid].cardinality,
                "average_age": report.per_request[rid],
                "source": report.source,
            }
            for rid in sorted(report.per_request)
        ]
        _write_csv(
            out / f"analyze_{name}.csv", config,
            ["request", "cardinality", "average_age", "source"], rows,
        )
        line = f"analyze {name}: overall={report.overall!r}"
        if report.infinite:
            line += f" infinite_requests={list(report.infinite)}"
            exit_code = EXIT_VALIDATION
        print(line)
    return exit_code


def cmd_optimize(args) -> int:
    config = resolve_config(load_config(args.config), args)
    inst = instance_from_json(config)
    ssr = optimal_ssr_params(inst)
    mma = optimal_mma_params(inst)
    gammas = {}
    for lam in inst.lambdas:
        if inst.per_class_budget[lam] == len(inst.classes[lam]):
            gammas[str(lam)] = None
        else:
            v = [
                service_success_prob(inst.requests[rid], inst.network)
                for rid in inst.classes[lam]
            ]
            gammas[str(lam)] = gamma_search(v, inst.per_class_budget[lam]).gamma
    payload = {
        "config": config,
        "cardinality_dist": {str(k): v for k, v in sorted(ssr.mu0.items())},
        "marginals": {
            str(lam): {str(rid): prob for rid, prob in mv.items}
            for lam, mv in sorted(ssr.marginals.items())
        },
        "gamma": gammas,
        "maximal_subsets": [list(s) for s in mma.subsets],
        "subset_weights": {str(k): v for k, v in sorted(mma_weights(inst).items())},
        "subset_dist": list(mma.phi),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if getattr(args, "out", None):
        _write_json(_out_dir(args) / "optimize.json", payload)
    return EXIT_OK


def cmd_enumerate_subsets(args) -> int:
    config = resolve_config(load_config(args.config), args)
    inst = instance_from_json(config)
    subsets = enumerate_maximal_subsets(inst.lambdas, inst.memory)
    payload = {
        "lambdas": list(inst.lambdas),
        "memory": inst.memory,
        "maximal_subsets": [list(s) for s in subsets],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = resolve_config(load_config(args.config), args)
    inst = instance_from_json(config)
    out = _out_dir(args)
    for name in config["policies"]:
        policy = build_policy(name, inst, config)
        stats = run_replications(
            policy, inst, config["slots"], config["burn_in"],
            config["reps"], config["seed"], base_stream=config["stream"],
        )
        payload = {
            "config": config,
            "policy": name,
            "overall_mean": stats.overall_mean,
            "overall_se": stats.overall_se,
            "ci95": list(stats.ci95),
            "zero_width": stats.zero_width,
            "per_request_mean": {
                str(r.id): stats.per_request_mean[r.id] for r in inst.requests
            },
            "replication_overalls": [r.overall for r in stats.results],
        }
        _write_json(out / f"simulate_{name}.json", payload)
        rows = [
            {
                "request": r.id,
                "cardinality": r.cardinality,
                "average_age": float(stats.per_request_mean[r.id]),
                "source": "simulation",
            }
            for r in inst.requests
        ]
        _write_csv(
            out / f"simulate_{name}.csv", config,
            ["request", "cardinality", "average_age", "source"], rows,
        )
        print(
            f"simulate {name}: mean={stats.overall_mean!r} se={stats.overall_se!r}"
        )
        if args.trace:
            _write_trace(out / f"trace_{name}.csv", config, name, inst)
    return EXIT_OK


def _write_trace(path: Path, config: Mapping, name: str, inst: Instance) -> None:
    policy = build_policy(name, inst, config)
    result = simulate(
        policy, inst, config["slots"], config["burn_in"],
        RngStream(config["seed"], config["stream"]), engine="python", trace=True,
    )
    rows = []
    for t, outcome in enumerate(result.trace, start=1):
        for r in inst.requests:
            rows.append({
                "slot": t,
                "request": r.id,
                "u": int(outcome.u[r.id]),
                "c": int(outcome.c[r.id]),
                "d": int(outcome.d[r.id]),
                "h": int(outcome.h[r.id]),
            })
    _write_csv(path, config, ["slot", "request", "u", "c", "d", "h"], rows)


def _sweep_point(payload: dict) -> list[dict]:
    """One sweep point: closed forms plus simulation for every policy.
    Top-level so worker processes can unpickle it."""
    config = payload["config"]
    inst = instance_from_json(payload["instance"])
    label = payload["label"]
    rows = []
    for name in config["policies"]:
        policy = build_policy(name, inst, config)
        report = closed_form_report(name, policy, inst)
        stats = run_replications(
            policy, inst, config["slots"], config["burn_in"],
            config["reps"], config["seed"], base_stream=config.get("stream", 0),
        )
        rows.append({
            **label,
            "policy": name,
            "n_requests": inst.n_requests,
            "closed_form_age": None if report is None else report.overall,
            "sim_age_mean": stats.overall_mean,
            "sim_age_se": stats.overall_se,
            "sim_ci_low": stats.ci95[0],
            "sim_ci_high": stats.ci95[1],
            "reps": config["reps"],
            "slots": config["slots"],
            "burn_in": config["burn_in"],
            "seed": config["seed"],
        })
    return rows


def _run_sweep(points: list[dict], workers: int) -> list[dict]:
    if workers <= 1:
        results = [_sweep_point(p) for p in points]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, points))
    return [row for point_rows in results for row in point_rows]


def _sweep_range(spec, lo_default: int, hi_default: int, what: str) -> range:
    if spec is None:
        return range(lo_default, hi_default + 1)
    if isinstance(spec, Mapping):
        return range(int(spec["min"]), int(spec["max"]) + 1)
    if isinstance(spec, Sequence) and len(spec) == 2:
        return range(int(spec[0]), int(spec[1]) + 1)
    raise ValidationError(f"malformed {what} range {spec!r}")


def cmd_sweep_memory(args) -> int:
    config = resolve_config(load_config(args.config), args)
    base = instance_from_json(config)
    max_card = max(r.cardinality for r in base.requests)
    mem_range = _sweep_range(
        config.get("sweep_memory"), base.memory, base.memory, "memory"
    )
    for memory in mem_range:
        if memory < max_card:
            raise ValidationError(
                f"sweep memory {memory} below largest request ({max_card})"
            )
    points = []
    for memory in mem_range:
        inst_doc = dict(instance_to_json(base))
        inst_doc["memory"] = memory
        points.append({
            "config": config,
            "instance": inst_doc,
            "label": {"memory": memory},
        })
    rows = _run_sweep(points, args.workers)
    header = [
        "memory", "policy", "n_requests", "closed_form_age", "sim_age_mean",
        "sim_age_se", "sim_ci_low", "sim_ci_high", "reps", "slots",
        "burn_in", "seed",
    ]
    path = _out_dir(args) / "sweep_memory.csv"
    _write_csv(path, config, header, rows)
    print(f"sweep-memory: {len(rows)} rows -> {path}")
    return EXIT_OK


def cmd_sweep_requests(args) -> int:
    config = resolve_config(load_config(args.config), args)
    n_users = int(config["n_users"])
    k_range = _sweep_range(
        config.get("sweep_max_cardinality"), 2, n_users, "max cardinality"
    )
    if k_range.start < 2 or k_range.stop - 1 > n_users:
        raise ValidationError(
            f"max cardinality range {list(k_range)} outside [2, {n_users}]"
        )
    points = []
    for k in k_range:
        inst_doc = {
            "n_users": n_users,
            "p": config["p"],
            "q": {
                lam: ql for lam, ql in config["q"].items() if int(lam) <= k
            },
            "memory": config["memory"],
            "requests": {"mode": "up_to", "k": k},
        }
        points.append({
            "config": config,
            "instance": inst_doc,
            "label": {"max_cardinality": k},
        })
    rows = _run_sweep(points, args.workers)
    header = [
        "max_cardinality", "policy", "n_requests", "closed_form_age",
        "sim_age_mean", "sim_age_se", "sim_ci_low", "sim_ci_high", "reps",
        "slots", "burn_in", "seed",
    ]
    path = _out_dir(args) / "sweep_requests.csv"
    _write_csv(path, config, header, rows)
    print(f"sweep-requests: {len(rows)} rows -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub, sim_flags: bool = False, workers: bool = False):
    sub.add_argument("--config", required=True, help="JSON config path")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--policy", default=None, help="comma-separated policy names")
    sub.add_argument("--seed", type=int, default=None)
    if sim_flags:
        sub.add_argument("--slots", type=int, default=None)
        sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)
        sub.add_argument("--reps", type=int, default=None)
        sub.add_argument(
            "--stream", type=int, default=None,
            help="base stream id (replication k uses stream base+k)",
        )
    if workers:
        sub.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qswitch-age",
        description="Age-based scheduling tools for a memory-constrained "
        "entanglement switch",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("analyze", help="closed-form average ages")
    _add_common(sub)
    sub.set_defaults(func=cmd_analyze)

    sub = subs.add_parser("optimize", help="optimal policy parameters as JSON")
    _add_common(sub)
    sub.set_defaults(func=cmd_optimize)

    sub = subs.add_parser("simulate", help="Monte-Carlo simulation")
    _add_common(sub, sim_flags=True)
    sub.add_argument("--trace", action="store_true", help="write per-slot trace CSV")
    sub.set_defaults(func=cmd_simulate)

    sub = subs.add_parser("sweep-memory", help="average age vs memory size")
    _add_common(sub, sim_flags=True, workers=True)
    sub.set_defaults(func=cmd_sweep_memory)

    sub = subs.add_parser("sweep-requests", help="average age vs request-set size")
    _add_common(sub, sim_flags=True, workers=True)
    sub.set_defaults(func=cmd_sweep_requests)

    sub = subs.add_parser("enumerate-subsets", help="maximal cardinality subsets")
    _add_common(sub)
    sub.set_defaults(func=cmd_enumerate_subsets)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
